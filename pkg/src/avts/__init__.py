"""Long-form audio-visual target-speaker ASR with gated visual fusion, and
LLM-scored conversation-group clustering."""

__version__ = "0.1.0"
