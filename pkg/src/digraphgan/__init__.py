"""Adversarial directed-graph embeddings with a direction-aware evaluation suite."""

__version__ = "0.1.0"

from .graph import (  # noqa: F401
    DirectedGraph,
    LabeledPair,
    LabeledPairSet,
    NodeIdMap,
    build_test_set,
    load_edge_list,
    load_labels,
    sample_edge_batch,
    split_link_prediction,
)
from .model import (  # noqa: F401
    DiscriminatorParams,
    FakeNeighbor,
    GeneratorParams,
    MlpParams,
    discriminate,
    discriminator_loss_and_grads,
    generate_fake,
    generator_loss_and_grads,
    init_params,
    load_checkpoint,
    mlp_forward,
    sample_latent,
    save_checkpoint,
)
from .trainer import (  # noqa: F401
    OptimizerState,
    TrainConfig,
    TrainReport,
    measure_epoch_scaling,
    optimizer_step,
    train,
)
from .evaluate import (  # noqa: F401
    ClassifierParams,
    ScoredPairSet,
    auc,
    f1_scores,
    precision_at_k,
    run_link_prediction,
    run_sparsity_sweep,
    score_pair,
    train_logreg,
)
from .seeding import named_stream  # noqa: F401
