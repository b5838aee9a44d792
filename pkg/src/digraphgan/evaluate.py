"""Evaluation protocols: direction-aware link prediction, graph
reconstruction by ranking, node classification, and the sparsity sweep.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from . import trainer
from .graph import DirectedGraph, LabeledPairSet, build_test_set, split_link_prediction
from .model import DiscriminatorParams, GeneratorParams
from .seeding import named_stream

logger = logging.getLogger(__name__)


def score_pair(disc: DiscriminatorParams, u: int, v: int) -> float:
    """Raw directed score s_u . t_v; monotone in the edge probability."""
    return float(np.dot(disc.source[u], disc.target[v]))


@dataclass(frozen=True)
class ScoredPairSet:
    """Evaluation pairs with their raw scores, split by label."""

    us: np.ndarray
    vs: np.ndarray
    labels: np.ndarray  # bool, True = positive
    scores: np.ndarray

    def __post_init__(self):
        if not (self.us.shape == self.vs.shape == self.labels.shape == self.scores.shape):
            raise ValueError("parallel arrays must share one shape")
        if not np.isfinite(self.scores).all():
            raise ValueError("scores must be finite")

    @property
    def positive_scores(self) -> np.ndarray:
        return self.scores[self.labels]

    @property
    def negative_scores(self) -> np.ndarray:
        return self.scores[~self.labels]


def score_pair_set(disc: DiscriminatorParams, pair_set: LabeledPairSet) -> ScoredPairSet:
    us = np.array([p.u for p in pair_set.pairs], dtype=np.int64)
    vs = np.array([p.v for p in pair_set.pairs], dtype=np.int64)
    labels = np.array([p.positive for p in pair_set.pairs], dtype=bool)
    scores = np.einsum("ij,ij->i", disc.source[us], disc.target[vs])
    return ScoredPairSet(us, vs, labels, scores)


def auc(scores_pos: Sequence[float], scores_neg: Sequence[float]) -> float:
    """Rank-based AUC: P(pos > neg) with ties counted half.

    Identical to brute-force pair counting; average ranks keep the tie
    arithmetic exact.
    """
    pos = np.asarray(scores_pos, dtype=np.float64)
    neg = np.asarray(scores_neg, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("both score lists must be nonempty")
    if not (np.isfinite(pos).all() and np.isfinite(neg).all()):
        raise ValueError("scores must be finite")
    ranks = rankdata(np.concatenate([pos, neg]), method="average")
    rank_sum = ranks[: pos.size].sum()
    u_stat = rank_sum - pos.size * (pos.size + 1) / 2.0
    return float(u_stat / (pos.size * neg.size))


def precision_at_k(
    disc: DiscriminatorParams,
    full_graph: DirectedGraph,
    sampled_sources: Sequence[int],
    k_values: Sequence[int],
) -> dict[int, float]:
    """Mean reconstruction precision over sampled sources for each k.

    For a source u every other node is ranked by s_u . t_v descending, ties
    broken by ascending node id; precision@k is the fraction of the top k
    that are true out-neighbors in the full graph. The denominator is k even
    when u has fewer than k out-neighbors.
    """
    sources = list(sampled_sources)
    if not sources:
        raise ValueError("sampled_sources must be nonempty")
    n = full_graph.node_count
    ks = sorted(set(int(k) for k in k_values))
    if ks[0] < 1:
        raise ValueError("k values must be >= 1")
    if ks[-1] > n - 1:
        raise ValueError(f"k={ks[-1]} exceeds node_count-1={n - 1}")
    totals = {k: 0.0 for k in ks}
    k_max = ks[-1]
    for u in sources:
        if full_graph.out_degrees[u] == 0:
            raise ValueError(f"source {u} has out-degree 0; exclude it before calling")
        scores = disc.source[u] @ disc.target.T
        scores[u] = -np.inf  # self is never a candidate
        # stable sort on -scores: equal scores stay in ascending-id order
        top = np.argsort(-scores, kind="stable")[:k_max]
        is_neighbor = np.isin(top, full_graph.out_adj[u])
        hits = np.cumsum(is_neighbor)
        for k in ks:
            totals[k] += hits[k - 1] / k
    return {k: totals[k] / len(sources) for k in ks}


@dataclass(frozen=True)
class ClassifierParams:
    """One-vs-rest logistic regression over concatenated [s; t] features."""

    classes: tuple[str, ...]
    weights: np.ndarray  # (n_classes, n_features)
    bias: np.ndarray  # (n_classes,)
    l2: float


def _logreg_loss_and_grad(
    weights: np.ndarray, bias: np.ndarray, features: np.ndarray, onehot: np.ndarray, l2: float
) -> tuple[float, np.ndarray, np.ndarray]:
    """Summed per-class mean log-loss plus l2/2 * ||W||^2; bias unpenalized."""
    n = features.shape[0]
    scores = features @ weights.T + bias
    # mean over rows of softplus-form binary cross-entropy per class
    loss = float(np.mean(np.logaddexp(0.0, scores) - onehot * scores) * onehot.shape[1])
    loss += 0.5 * l2 * float(np.sum(weights * weights))
    probs = expit(scores)
    grad_w = (probs - onehot).T @ features / n + l2 * weights
    grad_b = (probs - onehot).mean(axis=0)
    return loss, grad_w, grad_b


def train_logreg(
    features: np.ndarray,
    labels: Sequence[str],
    l2: float = 1e-4,
    iters: int = 500,
    lr: float = 0.1,
) -> ClassifierParams:
    """Fit one binary logistic regression per class by full-batch gradient descent."""
    labels = list(labels)
    classes = tuple(sorted(set(labels)))
    if len(classes) < 2:
        raise ValueError("need at least 2 classes to train a classifier")
    index = {c: i for i, c in enumerate(classes)}
    onehot = np.zeros((len(labels), len(classes)))
    onehot[np.arange(len(labels)), [index[c] for c in labels]] = 1.0
    weights = np.zeros((len(classes), features.shape[1]))
    bias = np.zeros(len(classes))
    for _ in range(iters):
        _, grad_w, grad_b = _logreg_loss_and_grad(weights, bias, features, onehot, l2)
        weights -= lr * grad_w
        bias -= lr * grad_b
    return ClassifierParams(classes, weights, bias, l2)


def predict_classes(params: ClassifierParams, features: np.ndarray) -> list[str]:
    scores = features @ params.weights.T + params.bias
    return [params.classes[i] for i in scores.argmax(axis=1)]


def f1_scores(predicted: Sequence[str], truth: Sequence[str]) -> tuple[float, float]:
    """(micro_f1, macro_f1) from one-vs-rest confusion counts.

    Macro averages over the union of classes seen in truth or predictions,
    so spurious predicted classes drag it down.
    """
    if len(predicted) != len(truth):
        raise ValueError("predicted and truth must have equal length")
    if not truth:
        raise ValueError("inputs must be nonempty")
    classes = sorted(set(truth) | set(predicted))
    tp_total = fp_total = fn_total = 0
    per_class_f1 = []
    for c in classes:
        tp = sum(1 for p, t in zip(predicted, truth) if p == c and t == c)
        fp = sum(1 for p, t in zip(predicted, truth) if p == c and t != c)
        fn = sum(1 for p, t in zip(predicted, truth) if p != c and t == c)
        tp_total += tp
        fp_total += fp
        fn_total += fn
        denom = 2 * tp + fp + fn
        per_class_f1.append(2 * tp / denom if denom else 0.0)
    micro_denom = 2 * tp_total + fp_total + fn_total
    micro = 2 * tp_total / micro_denom if micro_denom else 0.0
    macro = float(np.mean(per_class_f1))
    return micro, macro


def concat_features(disc: DiscriminatorParams, nodes: Sequence[int]) -> np.ndarray:
    """Per-node classification features: source row and target row concatenated."""
    idx = np.asarray(nodes, dtype=np.int64)
    return np.concatenate([disc.source[idx], disc.target[idx]], axis=1)


@dataclass(frozen=True)
class LinkPredictionResult:
    aucs: dict[float, float]
    train_graph: DirectedGraph
    held_out: list[tuple[int, int]]
    test_sets: dict[float, LabeledPairSet]
    disc: DiscriminatorParams
    gen: GeneratorParams
    report: trainer.TrainReport


def run_link_prediction(
    graph: DirectedGraph,
    config: trainer.TrainConfig,
    removal_fraction: float,
    reversed_fractions: Sequence[float],
    seed: int,
) -> LinkPredictionResult:
    """Split once, train once, then score one test set per reversed fraction."""
    cfg = replace(config, seed=seed)
    train_graph, held_out = split_link_prediction(graph, removal_fraction, seed)
    disc, gen, report = trainer.train(train_graph, cfg)
    aucs: dict[float, float] = {}
    test_sets: dict[float, LabeledPairSet] = {}
    for rf in reversed_fractions:
        rf = float(rf)
        pair_set = build_test_set(held_out, graph, rf, seed)
        scored = score_pair_set(disc, pair_set)
        aucs[rf] = auc(scored.positive_scores, scored.negative_scores)
        test_sets[rf] = pair_set
    return LinkPredictionResult(aucs, train_graph, held_out, test_sets, disc, gen, report)


def run_sparsity_sweep(
    graph: DirectedGraph,
    config: trainer.TrainConfig,
    train_edge_ratios: Sequence[float],
    seed: int,
    removal_fraction: float = 0.5,
) -> dict[float, float]:
    """Retrain on sparsified training graphs; AUC at reversed fraction 0.5.

    Ratio 1.0 trains on the untouched training split, so its AUC matches
    run_link_prediction at reversed=0.5 for the same seed and config.
    """
    ratios = [float(r) for r in train_edge_ratios]
    if not ratios:
        raise ValueError("train_edge_ratios must be nonempty")
    for r in ratios:
        if not 0.0 < r <= 1.0:
            raise ValueError("ratios must be in (0, 1]")
    cfg = replace(config, seed=seed)
    train_graph, held_out = split_link_prediction(graph, removal_fraction, seed)
    pair_set = build_test_set(held_out, graph, 0.5, seed)
    results: dict[float, float] = {}
    for r in ratios:
        if r == 1.0:
            sub_graph = train_graph
        else:
            # same seed: sparser subsamples nest inside denser ones
            sub_graph, _ = split_link_prediction(train_graph, 1.0 - r, seed)
        disc, _, _ = trainer.train(sub_graph, cfg)
        scored = score_pair_set(disc, pair_set)
        results[r] = auc(scored.positive_scores, scored.negative_scores)
        logger.info("sparsity %.2f: kept %d edges, auc %.4f", r, sub_graph.edge_count, results[r])
    return results
