"""Global-descriptor image instance retrieval toolkit.

Fisher vector encoding over dense SIFT, database-side rotation/scale
invariance pooling, descriptor fusion, and evaluation harnesses, with a
portable binary descriptor format so externally computed features (for
example CNN activations) participate in every experiment.
"""

from .store import (
    DatasetManifest,
    DescriptorSet,
    FormatError,
    LocalDescriptorSet,
    Metric,
    QuerySpec,
    ValidationError,
    parse_manifest,
    read_descriptor_file,
    write_descriptor_file,
)
from .image import (
    DEFAULT_FILL,
    GrayImage,
    circular_center_crop,
    downscale,
    load_grayscale,
    resize_max_side,
    rotate,
    rotation_query_protocol,
)
from .densesift import (
    DenseSiftParams,
    MULTISCALE_SCALES,
    extract_dense_sift,
    extract_multiscale,
)
from .fisher import (
    FisherVector,
    GmmModel,
    PcaModel,
    apply_pca,
    encode_fv,
    normalize_fv,
    posteriors,
    read_gmm_file,
    read_pca_file,
    train_gmm,
    train_pca,
    write_gmm_file,
    write_pca_file,
)
from .pooling import (
    SCALE_RATIOS,
    EntryMode,
    GridKind,
    IndexEntry,
    Strategy,
    TransformGrid,
    build_entry,
    entry_distance,
    pooled_database,
    pwl_step_subsample,
    read_index_file,
    write_index_file,
)
from .retrieval import (
    EvalReport,
    FusionConfig,
    RankedList,
    average_precision,
    evaluate,
    four_times_recall_at_4,
    fused_rank,
    rank,
)
from .pipeline import (
    CANONICAL_MAX_SIDE,
    EncodePipeline,
    build_index,
    evaluate_index,
    rank_all,
    rotation_database_sets,
    scale_database_sets,
    sweep_rotation,
    sweep_scale,
)

__version__ = "0.1.0"
