"""Training-set racial composition experiments for face verification.

The package covers the full pipeline at desk scale: enumerate race-mix
design points, draw synthetic or cataloged corpora, train small embedding
models under four loss heads, evaluate fold-validated pair matching per
race, measure embedding-space race clustering, inject patch-blur noise, and
orchestrate the experiment designs into CSV tables and SVG simplex plots.
"""

from .augment import (
    NoiseConfig,
    PixelImage,
    augment_features,
    face_ratio,
    gaussian_kernel,
    inject_patch_blur,
    load_png,
    ratio_curve,
    save_png,
)
from .clusteranalysis import (
    ClusterConfig,
    ClusterReport,
    cluster_report,
    intra_race_cosine,
    knn_membership,
)
from .corpus import (
    DatasetManifest,
    FeatureStore,
    ImageRecord,
    SubjectPool,
    SynthConfig,
    build_subject_pool,
    grow_manifest,
    growth_base_manifest,
    read_catalog,
    read_manifest,
    sample_manifest,
    single_race_manifest,
    synth_corpus,
    write_catalog,
    write_manifest,
)
from .distributions import (
    EDGE_TS,
    NEST_LEVELS,
    RACES,
    UNIFORM_MIX,
    NetMarker,
    Race,
    RaceMix,
    SubjectCounts,
    enumerate_simplex_points,
    mix_to_counts,
    net_layout,
)
from .embednet import (
    ArcFace,
    CenterLoss,
    EmbeddingModel,
    SoftmaxCE,
    SphereFace,
    TrainConfig,
    center_update,
    embed_all,
    forward,
    head_from_spec,
    init_model,
    load_model,
    loss_and_grad,
    save_model,
    train,
)
from .evalproto import (
    REPORT_COLUMNS,
    EvalReport,
    Pair,
    PairSet,
    cosine_similarity,
    evaluate,
    fairness_report,
    make_pairs,
    pair_accuracy,
    read_pairs,
    write_pairs,
)
from .harness import (
    ExperimentConfig,
    FixtureReport,
    ResultsTable,
    config_from_json,
    emit_simplex_svg,
    run_distribution_sweep,
    run_experiment,
    run_growth_study,
    run_noise_study,
    run_single_race,
    verify_fixtures,
)
from .seeds import derive_seed, stream

__version__ = "1.0.0"

__all__ = [
    "ArcFace",
    "CenterLoss",
    "ClusterConfig",
    "ClusterReport",
    "DatasetManifest",
    "EDGE_TS",
    "EmbeddingModel",
    "EvalReport",
    "ExperimentConfig",
    "FeatureStore",
    "FixtureReport",
    "ImageRecord",
    "NEST_LEVELS",
    "NetMarker",
    "NoiseConfig",
    "Pair",
    "PairSet",
    "PixelImage",
    "RACES",
    "REPORT_COLUMNS",
    "Race",
    "RaceMix",
    "ResultsTable",
    "SoftmaxCE",
    "SphereFace",
    "SubjectCounts",
    "SubjectPool",
    "SynthConfig",
    "TrainConfig",
    "UNIFORM_MIX",
    "augment_features",
    "build_subject_pool",
    "center_update",
    "cluster_report",
    "config_from_json",
    "cosine_similarity",
    "derive_seed",
    "embed_all",
    "emit_simplex_svg",
    "enumerate_simplex_points",
    "evaluate",
    "face_ratio",
    "fairness_report",
    "forward",
    "gaussian_kernel",
    "grow_manifest",
    "growth_base_manifest",
    "head_from_spec",
    "init_model",
    "inject_patch_blur",
    "intra_race_cosine",
    "knn_membership",
    "load_model",
    "load_png",
    "loss_and_grad",
    "make_pairs",
    "mix_to_counts",
    "net_layout",
    "pair_accuracy",
    "ratio_curve",
    "read_catalog",
    "read_manifest",
    "read_pairs",
    "run_distribution_sweep",
    "run_experiment",
    "run_growth_study",
    "run_noise_study",
    "run_single_race",
    "sample_manifest",
    "save_model",
    "save_png",
    "single_race_manifest",
    "stream",
    "synth_corpus",
    "train",
    "verify_fixtures",
    "write_catalog",
    "write_manifest",
    "write_pairs",
]
