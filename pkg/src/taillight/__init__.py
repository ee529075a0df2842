"""Long-tail class-incremental learning on frozen embeddings.

The engine trains a linear adapter over precomputed visual features,
guided by a layered tree of LLM-generated class descriptions: per-class
simplex-constrained layer weights pick which granularity of text to trust,
and a semantic-visual alignment term plus Gaussian prototype replay keep
earlier tasks from being forgotten. Inference compares decision margins
across every class's weight profile.
"""

from .adaptive import (
    FrequencyPrior,
    LayerWeights,
    aggregate_logits,
    entropy_regularizer,
    freq_regularizer,
    frequency_prior,
    update_alpha,
    weight_center,
)
from .alignment import (
    BalancedBatch,
    ClassStatistics,
    MemoryBank,
    alignment_loss,
    build_balanced_batch,
    distillation_loss,
    semantic_similarity,
    update_statistics,
    visual_similarity,
)
from .config import ExperimentConfig, config_hash, load_config, save_config
from .evaluation import (
    AccuracyMatrix,
    a_last,
    decision_margin,
    f_avg,
    head_tail_breakdown,
    predict_batch,
    zero_shot_predictions,
)
from .experiment import (
    ABLATION_STAGES,
    BENCHMARK_SEEDS,
    apply_stage,
    prepare_assets,
    reference_benchmark_config,
    run_experiment,
)
from .numerics import (
    cosine_similarity,
    finite_difference_gradient,
    normalize,
    project_to_simplex,
    row_softmax,
    sample_gaussian,
    symmetric_kl,
)
from .sltree import (
    FixtureLlmClient,
    HttpLlmClient,
    SLTree,
    class_text_representation,
    confusion_cluster,
    generate_tree,
    layer_text_features,
    merge_trees,
    postprocess_response,
    render_prompt,
)
from .store import (
    EmbeddingBundle,
    TaskSplit,
    TextEmbeddingStore,
    generate_synthetic_bundle,
    load_bundle,
    make_longtail_counts,
    make_task_split,
    pseudo_text_encoder,
    save_bundle,
)
from .trainer import Adapter, TaskState, TrainingConfig, total_objective, train_task

__version__ = "0.1.0"
