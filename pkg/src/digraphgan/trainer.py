"""Alternating adversarial training: discriminator iterations then generator
iterations each epoch, with a first-order optimizer over both parameter sets.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import model
from .graph import DirectedGraph, random_directed_graph, sample_edge_batch
from .seeding import named_stream

logger = logging.getLogger(__name__)

OPTIMIZERS = ("adam", "sgd")


@dataclass(frozen=True)
class TrainConfig:
    """All hyperparameters of one training run.

    `batch_size=None` means full coverage: every discriminator iteration
    visits all edges and every generator iteration visits all nodes, which is
    the configuration whose epoch cost is linear in the edge count.
    """

    dim: int = 128
    n_epoch: int = 100
    n_d: int = 15  # discriminator iterations per epoch
    n_g: int = 5  # generator iterations per epoch
    n_s: int = 5  # fake draws per anchor node
    batch_size: int | None = 1024
    lr_d: float = 1e-3
    lr_g: float = 1e-3
    sigma: float = 1.0
    seed: int = 0
    single_generator: bool = False
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    deterministic: bool = False
    mlp_source_hidden: tuple[int, ...] | None = None  # None -> one hidden layer of width dim
    mlp_target_hidden: tuple[int, ...] | None = None
    mlp_activation: str = "leaky_relu"

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.n_epoch < 0:
            raise ValueError("n_epoch must be >= 0")
        for name in ("n_d", "n_g", "n_s"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1 or None for full coverage")
        if self.lr_d <= 0 or self.lr_g <= 0:
            raise ValueError("learning rates must be > 0")
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.mlp_activation not in model.ACTIVATIONS:
            raise ValueError(f"unknown activation {self.mlp_activation!r}")
        if self.single_generator and self.mlp_source_hidden is not None:
            raise ValueError("single_generator excludes a source MLP configuration")


@dataclass
class OptimizerState:
    """Per-tensor moment accumulators; empty for plain sgd."""

    kind: str
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_tensors(cls, config: TrainConfig, tensors: list[np.ndarray]) -> "OptimizerState":
        state = cls(config.optimizer, config.adam_beta1, config.adam_beta2, config.adam_eps)
        if config.optimizer == "adam":
            state.first_moment = [np.zeros_like(t) for t in tensors]
            state.second_moment = [np.zeros_like(t) for t in tensors]
        return state


def optimizer_step(
    tensors: list[np.ndarray],
    grads: list[np.ndarray],
    state: OptimizerState,
    lr: float,
) -> OptimizerState:
    """Update tensors in place; sgd step or bias-corrected adam step."""
    if len(tensors) != len(grads):
        raise ValueError("tensors and grads differ in length")
    for t, g in zip(tensors, grads):
        if t.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter shape {t.shape}")
        if not np.isfinite(g.sum()):
            raise FloatingPointError("non-finite gradient")
    state.step_count += 1
    if state.kind == "sgd":
        for t, g in zip(tensors, grads):
            t -= lr * g
        return state
    b1, b2 = state.beta1, state.beta2
    correct1 = 1.0 - b1**state.step_count
    correct2 = 1.0 - b2**state.step_count
    for t, g, m, v in zip(tensors, grads, state.first_moment, state.second_moment):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        t -= lr * (m / correct1) / (np.sqrt(v / correct2) + state.eps)
    return state


@dataclass(frozen=True)
class IterationRecord:
    epoch: int
    phase: str  # "D" or "G"
    iteration: int
    loss: float
    seconds: float


@dataclass
class TrainReport:
    """Every iteration's loss and wall-clock, in execution order."""

    records: list[IterationRecord] = field(default_factory=list)

    def append(self, epoch: int, phase: str, iteration: int, loss: float, seconds: float) -> None:
        self.records.append(IterationRecord(epoch, phase, iteration, loss, seconds))

    def losses(self, phase: str) -> list[float]:
        return [r.loss for r in self.records if r.phase == phase]

    def epoch_seconds(self, epoch: int) -> float:
        return sum(r.seconds for r in self.records if r.epoch == epoch)

    def to_csv(self, path: str | Path, deterministic: bool = False) -> None:
        # Deterministic mode zeroes the timing column so re-runs are byte-equal.
        with Path(path).open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "phase", "iter", "loss", "seconds"])
            for r in self.records:
                secs = 0.0 if deterministic else r.seconds
                writer.writerow([r.epoch, r.phase, r.iteration, f"{r.loss:.12g}", f"{secs:.6f}"])


def _discriminator_iteration(
    g: DirectedGraph,
    disc: model.DiscriminatorParams,
    gen: model.GeneratorParams,
    config: TrainConfig,
    rng: np.random.Generator,
    opt: OptimizerState,
) -> float:
    """One step on the discriminator objective. Generator parameters frozen."""
    if config.batch_size is None:
        edges = g.edges
    else:
        edges = sample_edge_batch(g, config.batch_size, rng)
    anchors = np.concatenate([edges[:, 0], edges[:, 1]])  # fakes for both endpoints
    rep, fake_src, fake_tgt = model.sample_fake_batch(gen, anchors, config.n_s, rng)
    if fake_src is None:
        empty = np.empty((0, disc.dim))
        loss, grads = model._discriminator_core(
            disc, edges[:, 0], edges[:, 1], empty, np.empty(0, dtype=np.int64), fake_tgt, rep
        )
    else:
        loss, grads = model._discriminator_core(
            disc, edges[:, 0], edges[:, 1], fake_src, rep, fake_tgt, rep
        )
    optimizer_step(disc.tensors(), grads.as_list(), opt, config.lr_d)
    return loss


def _generator_iteration(
    g: DirectedGraph,
    disc: model.DiscriminatorParams,
    gen: model.GeneratorParams,
    config: TrainConfig,
    rng: np.random.Generator,
    opt: OptimizerState,
) -> float:
    """One step on the generator objective. Discriminator parameters frozen."""
    if config.batch_size is None:
        nodes = np.arange(g.node_count, dtype=np.int64)
    else:
        nodes = rng.integers(0, g.node_count, size=config.batch_size)
    loss, grads = model.generator_loss_and_grads(disc, gen, nodes, rng, n_samples=config.n_s)
    optimizer_step(gen.tensors(), grads.as_list(), opt, config.lr_g)
    return loss


def train(
    g: DirectedGraph,
    config: TrainConfig,
    checkpoint_path: str | Path | None = None,
    checkpoint_every: int = 0,
) -> tuple[model.DiscriminatorParams, model.GeneratorParams, TrainReport]:
    """Run the alternating schedule: n_d discriminator iterations then n_g
    generator iterations per epoch, n_epoch times.

    With n_epoch=0 the freshly initialized parameters are returned untouched.
    When checkpoint_path is set and checkpoint_every > 0, a checkpoint is
    written after every checkpoint_every-th epoch.
    """
    rng_init = named_stream(config.seed, "init")
    disc, gen = model.init_params(g.node_count, config.dim, config, rng_init)
    report = TrainReport()
    rng_train = named_stream(config.seed, "train")
    opt_d = OptimizerState.for_tensors(config, disc.tensors())
    opt_g = OptimizerState.for_tensors(config, gen.tensors())

    for epoch in range(config.n_epoch):
        for it in range(config.n_d):
            t0 = time.perf_counter()
            try:
                loss = _discriminator_iteration(g, disc, gen, config, rng_train, opt_d)
            except (model.NonFiniteLossError, FloatingPointError) as exc:
                raise RuntimeError(f"epoch {epoch} D-iteration {it}: {exc}") from exc
            report.append(epoch, "D", it, loss, time.perf_counter() - t0)
        for it in range(config.n_g):
            t0 = time.perf_counter()
            try:
                loss = _generator_iteration(g, disc, gen, config, rng_train, opt_g)
            except (model.NonFiniteLossError, FloatingPointError) as exc:
                raise RuntimeError(f"epoch {epoch} G-iteration {it}: {exc}") from exc
            report.append(epoch, "G", it, loss, time.perf_counter() - t0)
        if checkpoint_path is not None and checkpoint_every > 0 and (epoch + 1) % checkpoint_every == 0:
            model.save_checkpoint(checkpoint_path, disc, gen)
    return disc, gen, report


@dataclass(frozen=True)
class ScalingRow:
    node_count: int
    edge_count: int
    seconds_per_epoch: float


def measure_epoch_scaling(sizes: list[tuple[int, int]], config: TrainConfig) -> list[ScalingRow]:
    """Time full-coverage epochs on synthetic graphs of the given sizes.

    Each size is (node_count, edge_count). A small warmup run absorbs one-off
    library start-up costs; per size, three epochs run and the fastest is
    kept, which shields the table from scheduler noise.
    """
    if len(sizes) < 3:
        raise ValueError("need at least 3 sizes for a scaling measurement")
    warmup = random_directed_graph(64, 256, named_stream(config.seed, "scaling/warmup"))
    train(warmup, replace(config, batch_size=None, n_epoch=1))
    rows = []
    for i, (node_count, edge_count) in enumerate(sizes):
        graph = random_directed_graph(node_count, edge_count, named_stream(config.seed, f"scaling/{i}"))
        cfg = replace(config, batch_size=None, n_epoch=3)
        _, _, report = train(graph, cfg)
        seconds = min(report.epoch_seconds(e) for e in range(cfg.n_epoch))
        rows.append(ScalingRow(node_count, edge_count, seconds))
        logger.info("scaling: |V|=%d |E|=%d -> %.4f s/epoch", node_count, edge_count, seconds)
    return rows
