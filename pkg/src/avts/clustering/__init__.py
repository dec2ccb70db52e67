from .ahc import ahc
from .llm import (
    JOINT_CLUSTERING,
    PAIRWISE_SIMILARITY,
    TOPIC_DETECTION,
    HTTPBackend,
    LLMBackend,
    LLMBackendError,
    MockBackend,
    build_prompt,
    make_backend,
    parse_reply,
)
from .overlap import overlap_ratio
from .pipeline import (
    ClusterAssignment,
    SimilarityMatrix,
    cluster_conversations,
    cluster_session,
    detect_topic,
    fallback_assign,
    joint_cluster,
    pairwise_similarity,
    similarity_matrix,
)

__all__ = [
    "JOINT_CLUSTERING",
    "PAIRWISE_SIMILARITY",
    "TOPIC_DETECTION",
    "ClusterAssignment",
    "HTTPBackend",
    "LLMBackend",
    "LLMBackendError",
    "MockBackend",
    "SimilarityMatrix",
    "ahc",
    "build_prompt",
    "cluster_conversations",
    "cluster_session",
    "detect_topic",
    "fallback_assign",
    "joint_cluster",
    "make_backend",
    "overlap_ratio",
    "pairwise_similarity",
    "parse_reply",
    "similarity_matrix",
]
