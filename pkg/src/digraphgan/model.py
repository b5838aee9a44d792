"""Adversarial embedding model: parameters, forward passes, losses, exact gradients.

The discriminator scores a directed pair (u, v) as sigmoid(s_u . t_v) where
s and t are per-node source-role and target-role vectors. Two small MLPs map
a shared noisy per-node latent draw to a fake source neighbor and a fake
target neighbor; fakes enter the discriminator as constants and enter the
generator loss through exact pathwise (reparameterized) gradients.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Sequence

import numpy as np
from scipy.special import expit

if TYPE_CHECKING:
    from .graph import NodeIdMap
    from .trainer import TrainConfig

LEAKY_SLOPE = 0.2

CHECKPOINT_MAGIC = b"DGEMBED1"
CHECKPOINT_VERSION = 1


class NonFiniteLossError(RuntimeError):
    """A loss or score became non-finite; carries the offending pair."""

    def __init__(self, message: str, pair: tuple[object, object] | None = None):
        super().__init__(message)
        self.pair = pair


def _leaky(a):
    return np.where(a > 0, a, LEAKY_SLOPE * a)


def _leaky_deriv(a):
    return np.where(a > 0, 1.0, LEAKY_SLOPE)


def _relu(a):
    return np.maximum(a, 0.0)


def _relu_deriv(a):
    return (a > 0).astype(a.dtype)


def _tanh_deriv(a):
    t = np.tanh(a)
    return 1.0 - t * t


ACTIVATIONS = {
    "leaky_relu": (_leaky, _leaky_deriv),
    "relu": (_relu, _relu_deriv),
    "tanh": (np.tanh, _tanh_deriv),
}


@dataclass
class MlpParams:
    """Affine layers applied as x @ W + b; hidden activation, linear output."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "leaky_relu"

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("weights and biases must be nonempty parallel lists")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        for w, b in zip(self.weights, self.biases):
            if w.shape[1] != b.shape[0]:
                raise ValueError("bias shape does not match weight columns")
        for prev, nxt in zip(self.weights, self.weights[1:]):
            if prev.shape[1] != nxt.shape[0]:
                raise ValueError("consecutive layer dimensions do not chain")

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def tensors(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out


@dataclass
class DiscriminatorParams:
    """Real-role embeddings: row u of `source` is s_u, row u of `target` is t_u."""

    source: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        if self.source.shape != self.target.shape or self.source.ndim != 2:
            raise ValueError("source and target must be matrices of identical shape")

    @property
    def node_count(self) -> int:
        return self.source.shape[0]

    @property
    def dim(self) -> int:
        return self.source.shape[1]

    def tensors(self) -> list[np.ndarray]:
        return [self.source, self.target]


@dataclass
class GeneratorParams:
    """Per-node latent means, a fixed noise scale, and the neighbor MLPs.

    `mlp_source` is None in single-generator mode, in which case no fake
    source neighbors are ever produced.
    """

    latent: np.ndarray
    sigma: float
    mlp_source: MlpParams | None
    mlp_target: MlpParams

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")

    @property
    def single_generator(self) -> bool:
        return self.mlp_source is None

    @property
    def node_count(self) -> int:
        return self.latent.shape[0]

    @property
    def dim(self) -> int:
        return self.latent.shape[1]

    def tensors(self) -> list[np.ndarray]:
        out = [self.latent]
        if self.mlp_source is not None:
            out.extend(self.mlp_source.tensors())
        out.extend(self.mlp_target.tensors())
        return out


@dataclass(frozen=True)
class FakeNeighbor:
    """A generated neighbor embedding for `owner`, in the given role."""

    owner: int
    role: str  # "source" or "target"
    embedding: np.ndarray
    latent: np.ndarray


def init_mlp(dims: Sequence[int], activation: str, rng: np.random.Generator) -> MlpParams:
    """Fan-in scaled uniform weights, zero biases."""
    weights = []
    biases = []
    for fan_in, fan_out in zip(dims, dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases, activation)


def init_params(
    node_count: int, d: int, config: "TrainConfig", rng: np.random.Generator
) -> tuple[DiscriminatorParams, GeneratorParams]:
    """Fresh parameters; embedding entries uniform in [-0.5/d, 0.5/d].

    The range keeps initial inner products O(1/d)-small so the discriminator
    starts near 0.5. Draw order is fixed (source, target, latent, MLPs) so a
    seed pins every tensor.
    """
    if d < 1:
        raise ValueError("embedding dimension must be >= 1")
    bound = 0.5 / d
    source = rng.uniform(-bound, bound, size=(node_count, d))
    target = rng.uniform(-bound, bound, size=(node_count, d))
    latent = rng.uniform(-bound, bound, size=(node_count, d))
    hidden_s = config.mlp_source_hidden if config.mlp_source_hidden is not None else (d,)
    hidden_t = config.mlp_target_hidden if config.mlp_target_hidden is not None else (d,)
    mlp_source = None
    if not config.single_generator:
        mlp_source = init_mlp([d, *hidden_s, d], config.mlp_activation, rng)
    mlp_target = init_mlp([d, *hidden_t, d], config.mlp_activation, rng)
    disc = DiscriminatorParams(source, target)
    gen = GeneratorParams(latent, config.sigma, mlp_source, mlp_target)
    return disc, gen


def sample_latent(gen: GeneratorParams, u: int, rng: np.random.Generator) -> np.ndarray:
    """One draw z_u + sigma * eps with eps standard normal per coordinate."""
    return gen.latent[u] + gen.sigma * rng.standard_normal(gen.dim)


def mlp_forward(mlp: MlpParams, z: np.ndarray) -> np.ndarray:
    """Evaluate the MLP on a vector or a batch of row vectors."""
    act, _ = ACTIVATIONS[mlp.activation]
    h = z
    last = len(mlp.weights) - 1
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        h = h @ w + b
        if i < last:
            h = act(h)
    return h


def _mlp_forward_cached(mlp: MlpParams, z: np.ndarray):
    act, _ = ACTIVATIONS[mlp.activation]
    inputs = []
    preacts = []
    h = z
    last = len(mlp.weights) - 1
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        inputs.append(h)
        a = h @ w + b
        preacts.append(a)
        h = act(a) if i < last else a
    return h, (inputs, preacts)


def _mlp_backward(mlp: MlpParams, cache, grad_out: np.ndarray):
    """Backprop grad_out through the cached forward pass.

    Returns (weight_grads, bias_grads, grad_input).
    """
    _, deriv = ACTIVATIONS[mlp.activation]
    inputs, preacts = cache
    n_layers = len(mlp.weights)
    weight_grads: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    bias_grads: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    delta = grad_out
    for i in reversed(range(n_layers)):
        weight_grads[i] = inputs[i].T @ delta
        bias_grads[i] = delta.sum(axis=0)
        grad_input = delta @ mlp.weights[i].T
        if i > 0:
            delta = grad_input * deriv(preacts[i - 1])
    return weight_grads, bias_grads, grad_input


def generate_fake(
    gen: GeneratorParams, u: int, rng: np.random.Generator
) -> tuple[FakeNeighbor | None, FakeNeighbor]:
    """Generate (fake source neighbor, fake target neighbor) for node u.

    A single latent draw feeds both MLPs; the shared draw is what couples
    the two generators. In single-generator mode the source fake is None.
    """
    z = sample_latent(gen, u, rng)
    source_fake = None
    if gen.mlp_source is not None:
        source_fake = FakeNeighbor(u, "source", mlp_forward(gen.mlp_source, z), z)
    target_fake = FakeNeighbor(u, "target", mlp_forward(gen.mlp_target, z), z)
    return source_fake, target_fake


def inner_score(s: np.ndarray, t: np.ndarray) -> float:
    """Raw pair score s . t, the ranking quantity behind the probability."""
    return float(np.dot(s, t))


def discriminate(s: np.ndarray, t: np.ndarray) -> float:
    """Probability in (0, 1) that the pair is a real directed edge."""
    return float(expit(inner_score(s, t)))


def _softplus(x: np.ndarray) -> np.ndarray:
    # log(1 + exp(x)) without overflow; equals -log(1 - sigmoid(x)).
    return np.logaddexp(0.0, x)


def _row_dots(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->i", a, b)


def _scatter_add_rows(out: np.ndarray, rows: np.ndarray, vals: np.ndarray) -> None:
    """out[rows] += vals with repeated row ids, deterministically."""
    if rows.size == 0:
        return
    order = np.argsort(rows, kind="stable")
    r = rows[order]
    v = vals[order]
    starts = np.flatnonzero(np.r_[True, r[1:] != r[:-1]])
    out[r[starts]] += np.add.reduceat(v, starts, axis=0)


def _check_finite(x: np.ndarray, us, vs, what: str) -> None:
    if np.isfinite(x).all():
        return
    i = int(np.flatnonzero(~np.isfinite(x))[0])
    pair = (int(us[i]) if us is not None else None, int(vs[i]) if vs is not None else None)
    raise NonFiniteLossError(f"non-finite {what} at pair {pair}", pair)


@dataclass
class DiscriminatorGrads:
    source: np.ndarray
    target: np.ndarray

    def as_list(self) -> list[np.ndarray]:
        return [self.source, self.target]


@dataclass
class MlpGrads:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def as_list(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out


@dataclass
class GeneratorGrads:
    latent: np.ndarray
    mlp_source: MlpGrads | None
    mlp_target: MlpGrads

    def as_list(self) -> list[np.ndarray]:
        out = [self.latent]
        if self.mlp_source is not None:
            out.extend(self.mlp_source.as_list())
        out.extend(self.mlp_target.as_list())
        return out


def _discriminator_core(
    disc: DiscriminatorParams,
    pos_u: np.ndarray,
    pos_v: np.ndarray,
    fake_src_emb: np.ndarray,
    fake_src_anchor: np.ndarray,
    fake_tgt_emb: np.ndarray,
    fake_tgt_anchor: np.ndarray,
) -> tuple[float, DiscriminatorGrads]:
    """Array form of the discriminator objective and its exact gradients.

    A fake source neighbor of anchor w scores against t_w; a fake target
    neighbor scores against s_w. Fake embeddings are constants: gradient
    reaches only rows of the real source/target matrices.
    """
    n_pos = pos_u.size
    n_fake = fake_src_anchor.size + fake_tgt_anchor.size
    if n_pos == 0 and n_fake == 0:
        raise ValueError("need at least one positive or fake pair")
    grad_source = np.zeros_like(disc.source)
    grad_target = np.zeros_like(disc.target)
    loss = 0.0

    if n_pos:
        s_rows = disc.source[pos_u]
        t_rows = disc.target[pos_v]
        x = _row_dots(s_rows, t_rows)
        _check_finite(x, pos_u, pos_v, "positive-pair score")
        loss += float(_softplus(-x).mean())  # -log D
        coef = -expit(-x) / n_pos  # -(1 - D) / n
        _scatter_add_rows(grad_source, pos_u, coef[:, None] * t_rows)
        _scatter_add_rows(grad_target, pos_v, coef[:, None] * s_rows)

    if n_fake:
        fake_loss = 0.0
        if fake_src_anchor.size:
            t_rows = disc.target[fake_src_anchor]
            x = _row_dots(fake_src_emb, t_rows)
            _check_finite(x, None, fake_src_anchor, "fake-source score")
            fake_loss += float(_softplus(x).sum())  # -log(1 - D)
            coef = expit(x) / n_fake  # D / n
            _scatter_add_rows(grad_target, fake_src_anchor, coef[:, None] * fake_src_emb)
        if fake_tgt_anchor.size:
            s_rows = disc.source[fake_tgt_anchor]
            x = _row_dots(s_rows, fake_tgt_emb)
            _check_finite(x, fake_tgt_anchor, None, "fake-target score")
            fake_loss += float(_softplus(x).sum())
            coef = expit(x) / n_fake
            _scatter_add_rows(grad_source, fake_tgt_anchor, coef[:, None] * fake_tgt_emb)
        loss += fake_loss / n_fake

    if not np.isfinite(loss):
        raise NonFiniteLossError("discriminator loss is non-finite", None)
    return loss, DiscriminatorGrads(grad_source, grad_target)


def discriminator_loss_and_grads(
    disc: DiscriminatorParams,
    positive_batch: Sequence[tuple[int, int]] | np.ndarray,
    fakes: Sequence[tuple[FakeNeighbor, int]],
) -> tuple[float, DiscriminatorGrads]:
    """Mean -log D over real edges plus mean -log(1-D) over fake pairs.

    `fakes` holds (neighbor, anchor node) entries; the anchor contributes the
    real-role vector of the pair. Both terms use the numerically stable
    softplus form.
    """
    pos = np.asarray(positive_batch, dtype=np.int64).reshape(-1, 2)
    src_emb, src_anchor, tgt_emb, tgt_anchor = [], [], [], []
    for fake, anchor in fakes:
        if fake.role == "source":
            src_emb.append(fake.embedding)
            src_anchor.append(anchor)
        elif fake.role == "target":
            tgt_emb.append(fake.embedding)
            tgt_anchor.append(anchor)
        else:
            raise ValueError(f"unknown fake role {fake.role!r}")
    d = disc.dim
    return _discriminator_core(
        disc,
        pos[:, 0],
        pos[:, 1],
        np.asarray(src_emb).reshape(-1, d),
        np.asarray(src_anchor, dtype=np.int64),
        np.asarray(tgt_emb).reshape(-1, d),
        np.asarray(tgt_anchor, dtype=np.int64),
    )


def generator_loss_and_grads(
    disc: DiscriminatorParams,
    gen: GeneratorParams,
    node_batch: Sequence[int] | np.ndarray,
    rng: np.random.Generator,
    n_samples: int = 1,
) -> tuple[float, GeneratorGrads]:
    """Mean log(1-D) over fake pairs for a node batch, with exact gradients.

    Per node, n_samples latent draws are taken; each draw feeds both MLPs so
    the latent row receives gradient through the source and target paths.
    The discriminator is frozen: its matrices get no gradient. Gradients are
    pathwise, with the noise fixed per draw.
    """
    nodes = np.asarray(node_batch, dtype=np.int64)
    if nodes.size == 0:
        raise ValueError("node_batch must be nonempty")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rep = np.repeat(nodes, n_samples)
    m = rep.size
    eps = rng.standard_normal((m, gen.dim))
    z = gen.latent[rep] + gen.sigma * eps

    loss = 0.0
    grad_latent = np.zeros_like(gen.latent)
    dz = np.zeros_like(z)

    mlp_source_grads = None
    if gen.mlp_source is not None:
        fake_s, cache_s = _mlp_forward_cached(gen.mlp_source, z)
        t_rows = disc.target[rep]
        x_s = _row_dots(fake_s, t_rows)
        _check_finite(x_s, rep, rep, "fake-source score")
        loss += float(-_softplus(x_s).sum()) / m  # log(1 - D)
        d_fake_s = (-expit(x_s) / m)[:, None] * t_rows
        wg, bg, dz_s = _mlp_backward(gen.mlp_source, cache_s, d_fake_s)
        mlp_source_grads = MlpGrads(wg, bg)
        dz += dz_s

    fake_t, cache_t = _mlp_forward_cached(gen.mlp_target, z)
    s_rows = disc.source[rep]
    x_t = _row_dots(s_rows, fake_t)
    _check_finite(x_t, rep, rep, "fake-target score")
    loss += float(-_softplus(x_t).sum()) / m
    d_fake_t = (-expit(x_t) / m)[:, None] * s_rows
    wg, bg, dz_t = _mlp_backward(gen.mlp_target, cache_t, d_fake_t)
    mlp_target_grads = MlpGrads(wg, bg)
    dz += dz_t

    _scatter_add_rows(grad_latent, rep, dz)  # d z / d z_u = I under reparameterization
    if not np.isfinite(loss):
        raise NonFiniteLossError("generator loss is non-finite", None)
    return loss, GeneratorGrads(grad_latent, mlp_source_grads, mlp_target_grads)


def sample_fake_batch(
    gen: GeneratorParams, anchors: np.ndarray, n_samples: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray | None, np.ndarray]:
    """Batched fake generation with the generator frozen.

    Returns (anchor_per_draw, fake_source_embs or None, fake_target_embs);
    each anchor gets n_samples draws, one shared latent per draw.
    """
    rep = np.repeat(np.asarray(anchors, dtype=np.int64), n_samples)
    eps = rng.standard_normal((rep.size, gen.dim))
    z = gen.latent[rep] + gen.sigma * eps
    fake_src = None if gen.mlp_source is None else mlp_forward(gen.mlp_source, z)
    fake_tgt = mlp_forward(gen.mlp_target, z)
    return rep, fake_src, fake_tgt


# --- checkpoint and embedding export -------------------------------------

def save_checkpoint(path: str | Path, disc: DiscriminatorParams, gen: GeneratorParams) -> None:
    """Binary checkpoint: fixed header then row-major little-endian float64 tensors."""
    path = Path(path)
    mlps = ([] if gen.mlp_source is None else [gen.mlp_source]) + [gen.mlp_target]
    act = gen.mlp_target.activation.encode("ascii")
    with path.open("wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQId?", CHECKPOINT_VERSION, disc.node_count, disc.dim, gen.sigma,
                             gen.single_generator))
        fh.write(struct.pack("<B", len(act)))
        fh.write(act)
        fh.write(struct.pack("<B", len(mlps)))
        for mlp in mlps:
            dims = mlp.dims
            fh.write(struct.pack("<I", len(mlp.weights)))
            fh.write(struct.pack(f"<{len(dims)}I", *dims))
        for tensor in [disc.source, disc.target, gen.latent]:
            fh.write(np.ascontiguousarray(tensor, dtype="<f8").tobytes())
        for mlp in mlps:
            for tensor in mlp.tensors():
                fh.write(np.ascontiguousarray(tensor, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[DiscriminatorParams, GeneratorParams]:
    path = Path(path)
    with path.open("rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        version, node_count, d, sigma, single = struct.unpack("<IQId?", fh.read(struct.calcsize("<IQId?")))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (act_len,) = struct.unpack("<B", fh.read(1))
        activation = fh.read(act_len).decode("ascii")
        (n_mlps,) = struct.unpack("<B", fh.read(1))
        mlp_dims = []
        for _ in range(n_mlps):
            (n_layers,) = struct.unpack("<I", fh.read(4))
            dims = struct.unpack(f"<{n_layers + 1}I", fh.read(4 * (n_layers + 1)))
            mlp_dims.append(list(dims))

        def read_matrix(rows, cols):
            data = np.frombuffer(fh.read(8 * rows * cols), dtype="<f8").astype(np.float64)
            return data.reshape(rows, cols)

        source = read_matrix(node_count, d)
        target = read_matrix(node_count, d)
        latent = read_matrix(node_count, d)
        mlps = []
        for dims in mlp_dims:
            weights, biases = [], []
            for fan_in, fan_out in zip(dims, dims[1:]):
                weights.append(read_matrix(fan_in, fan_out))
                biases.append(read_matrix(1, fan_out).reshape(fan_out))
            mlps.append(MlpParams(weights, biases, activation))
    if single:
        if len(mlps) != 1:
            raise ValueError(f"{path}: single-generator checkpoint must hold one MLP")
        mlp_source, mlp_target = None, mlps[0]
    else:
        if len(mlps) != 2:
            raise ValueError(f"{path}: expected two MLPs")
        mlp_source, mlp_target = mlps
    disc = DiscriminatorParams(source, target)
    gen = GeneratorParams(latent, sigma, mlp_source, mlp_target)
    return disc, gen


def export_embeddings(path: str | Path, disc: DiscriminatorParams, id_map: "NodeIdMap") -> None:
    """Text export: header `node_count d`, then label, source row, target row."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{disc.node_count} {disc.dim}\n")
        for u in range(disc.node_count):
            s = " ".join(f"{x:.9g}" for x in disc.source[u])
            t = " ".join(f"{x:.9g}" for x in disc.target[u])
            fh.write(f"{id_map.label_of(u)}\t{s}\t{t}\n")
