"""Explanation-guided pruning for multivariate temporal regression.

Train a regressor on [0, 1]-scaled time x feature arrays, attribute its
predictions with KernelSHAP or LIME, average the per-sample heatmaps into a
global importance map, prune weak features and high-residual samples,
retrain and compare accuracy, size and training time.
"""

__version__ = "0.1.0"

from .dataset import (  # noqa: E402
    FeatureSpec,
    NormalizationSpec,
    Sample,
    SyntheticConfig,
    TemporalDataset,
    denormalize,
    generate_synthetic,
    load_csv,
    load_dataset,
    make_schema,
    normalize,
    save_csv,
    save_dataset,
    split,
)
from .errors import ConfigError, DataError, NumericError, PruneXAIError  # noqa: E402
from .explain import (  # noqa: E402
    AttributionMap,
    ExplainConfig,
    GlobalImportance,
    exact_shapley,
    explain_dataset,
    global_heatmap,
    kernel_shap,
    lime_explain,
    rank_features,
)
from .model import (  # noqa: E402
    MetricSet,
    RegressorConfig,
    TrainedModel,
    TrainReport,
    flatten,
    improvement_percent,
    metrics,
    predict,
    train,
    unflatten,
    weighted_least_squares,
)
from .pipeline import (  # noqa: E402
    ExperimentReport,
    PipelineConfig,
    build_relationship_report,
    emit_report,
    run_baseline,
    run_pipeline,
)
from .prune import (  # noqa: E402
    FeaturePruneConfig,
    PrunePlan,
    SamplePruneConfig,
    apply,
    plan_feature_prune,
    plan_sample_prune,
    score_samples,
    size_percent,
)
