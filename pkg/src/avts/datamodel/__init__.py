from .features import FeatureFileError, decode_features, encode_features, read_features, write_features
from .manifest import ManifestError, load_manifest, save_manifest
from .synthetic import (
    SyntheticCorpus,
    SyntheticCorpusConfig,
    SyntheticWorld,
    Utterance,
    generate_conversation_session,
    generate_synthetic_corpus,
    sample_cocktail_session,
)
from .types import (
    ACOUSTIC_RATE_HZ,
    VISUAL_RATE_HZ,
    FeatureSequence,
    Session,
    SpeakerRecord,
    TargetSpeakerExample,
    VideoTrack,
)

__all__ = [
    "ACOUSTIC_RATE_HZ",
    "VISUAL_RATE_HZ",
    "FeatureFileError",
    "FeatureSequence",
    "ManifestError",
    "Session",
    "SpeakerRecord",
    "SyntheticCorpus",
    "SyntheticCorpusConfig",
    "SyntheticWorld",
    "TargetSpeakerExample",
    "Utterance",
    "VideoTrack",
    "generate_conversation_session",
    "generate_synthetic_corpus",
    "load_manifest",
    "decode_features",
    "encode_features",
    "read_features",
    "sample_cocktail_session",
    "save_manifest",
    "write_features",
]
