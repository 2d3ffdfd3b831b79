"""Cross-modal alignment and retrieval over onomatopoeic-image and audio embeddings.

Trains small modality-specific projection heads on top of frozen encoder
embeddings, retrieves bidirectionally by cosine similarity in the learned
joint space, and evaluates with class-level mAP, Recall@k and MRR.
"""

from .embstore import (
    EmbeddingPack,
    EmbeddingRecord,
    PackError,
    PairedEmbeddings,
    SyntheticSpec,
    assign_random_splits,
    generate_synthetic,
    load_pack,
    load_split_manifest,
    make_pack,
    make_pairs,
    save_pack,
    split_by_illustrator,
    splits_from_pairs,
    subset_by_split,
)
from .metrics import (
    ExperimentReport,
    MetricError,
    aggregate_seeds,
    average_precision,
    build_report,
    centroid_dispersion,
    evaluate,
    per_class_report,
    reciprocal_rank,
    recall_at_k,
)
from .model import (
    AlignmentModel,
    CheckpointError,
    ModelDims,
    TrainConfig,
    TrainReport,
    batch_loss,
    classify,
    init_model,
    load_checkpoint,
    project_audio,
    project_image,
    save_checkpoint,
    train,
)
from .nncore import RngStream
from .retrieval import (
    A2I,
    I2A,
    RankedCandidate,
    RankedList,
    RetrievalError,
    cosine_similarity,
    rank_candidates,
    retrieve,
    zero_shot_retrieve,
)

__version__ = "0.1.0"
