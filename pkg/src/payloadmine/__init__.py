"""Android malware clustering by mining shared payloads from n-gram bit-vector fingerprints."""
from .clustering import ClusteringConfig, PayloadClusterSet, cluster_fingerprint, hac
from .corpus_ir import (
    AppIR,
    FeatureTuple,
    InstructionRecord,
    IRParseError,
    MethodIR,
    NGramFeature,
    extract_ngram_features,
    instruction_token,
    namespaces_present,
    parse_app_ir,
    serialize_app_ir,
)
from .fingerprint import (
    BitFingerprint,
    FingerprintConfig,
    WidthMismatch,
    and_not,
    bit_index,
    build_fingerprint,
    containment,
    djb2,
    intersect,
    jaccard,
    popcount,
    union,
)
from .libstrip import LibraryProfile, build_library_profile, removal_metrics, strip_libraries
from .mining import MiningConfig, MiningResult, group_apps, mine, refine_cluster
from .payload_extract import CandidatePayload, extract_candidates
from .reconstruct import locate_features, stitch
from .scale import (
    MinHashConfig,
    MinHashSignature,
    PrototypeConfig,
    minhash_signature,
    prototype_cluster,
    signature_similarity,
)

__version__ = "0.1.0"
