"""Causality-enhanced knowledge graph embedding in numpy."""

from .data import (
    Dataset,
    FilterIndex,
    NegativeBatch,
    Triple,
    TripleSet,
    Vocab,
    build_filter_index,
    corrupt_dataset,
    generate_synthetic_kg,
    load_dataset,
    load_triples,
    negative_sample,
    save_dataset,
    write_triples,
)
from .evaluation import EvalReport, evaluate, rank_query, score_separation
from .objectives import (
    LossBreakdown,
    aux_contrast_loss,
    cause_objective,
    conf_mse_loss,
    self_adv_weights,
    sigmoid_margin_loss,
)
from .scoring import (
    EmbeddingTable,
    InterventionOp,
    ScoreModel,
    energy,
    energy_grad,
    init_embeddings,
    intervene,
    triple_energy,
)
from .train import AdamState, TrainConfig, adam_step, batch_loss, train

__version__ = "0.1.0"
