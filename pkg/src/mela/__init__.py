"""Few-shot meta-learning with inferred global labels on vector data."""

from .augmentation import augment_rotations, rotate90
from .label_inference import (
    ClusterState,
    InferenceConfig,
    LabelAssignment,
    class_mean,
    clustering_accuracy,
    infer_domains,
    kmeans_baseline,
    label_dataset,
    learn_labeler,
    match_class,
    prune_threshold,
    update_centroid,
)
from .learners import (
    EvalConfig,
    GlobalClassifier,
    RidgeConfig,
    TaskClassifier,
    TrainConfig,
    ce_loss,
    evaluate_task,
    gls_select,
    ridge_fit,
    softmax_train,
)
from .representation import (
    LinearEmbedding,
    MetaTrainConfig,
    ResidualEmbedding,
    meta_finetune_residual,
    meta_grad,
    meta_loss,
    meta_train_sim,
    normalize,
)
from .taskgen import (
    FlatDataset,
    MetaDistribution,
    Task,
    flatten,
    gfsl_partition,
    make_meta_distribution,
    sample_meta_training_set,
    sample_task,
)
from .theory_eval import (
    RiskEstimate,
    estimate_gls_risk,
    estimate_pretrain_risk,
    meta_test,
    rate_study,
    verify_theorem1,
)

__version__ = "0.1.0"
