"""Central finite-difference checking of the analytic gradients.

The generator loss is stochastic, so every evaluation recreates its noise
stream from the same seed; with the draws pinned, the loss is a smooth
deterministic function of the parameters and central differences apply.
"""

import numpy as np

from digraphgan import model
from digraphgan.graph import random_directed_graph
from digraphgan.model import DiscriminatorParams, GeneratorParams, MlpParams
from digraphgan.seeding import named_stream

FD_STEP = 1e-5
REL_TOL = 1e-4


def rel_errors(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    return np.abs(analytic - numeric) / scale


def central_diff(loss_fn, tensor: np.ndarray) -> np.ndarray:
    """Finite-difference gradient of loss_fn with respect to every entry."""
    grad = np.zeros_like(tensor)
    it = np.nditer(tensor, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = tensor[idx]
        tensor[idx] = orig + FD_STEP
        hi = loss_fn()
        tensor[idx] = orig - FD_STEP
        lo = loss_fn()
        tensor[idx] = orig
        grad[idx] = (hi - lo) / (2 * FD_STEP)
    return grad


def random_instance(seed: int, node_count: int = 20, d: int = 8, single: bool = False):
    """A random small model plus batches, sized for exhaustive FD sweeps."""
    rng = named_stream(seed, "gradcheck-params")
    disc = DiscriminatorParams(
        rng.normal(0, 0.6, (node_count, d)), rng.normal(0, 0.6, (node_count, d))
    )

    def mlp():
        return MlpParams(
            [rng.normal(0, 0.6, (d, d)), rng.normal(0, 0.6, (d, d))],
            [rng.normal(0, 0.3, d), rng.normal(0, 0.3, d)],
            "leaky_relu",
        )

    gen = GeneratorParams(
        rng.normal(0, 0.6, (node_count, d)), 1.0, None if single else mlp(), mlp()
    )
    graph = random_directed_graph(node_count, 3 * node_count, named_stream(seed, "gradcheck-graph"))
    edge_batch = graph.edges[named_stream(seed, "gradcheck-batch").integers(0, graph.edge_count, 8)]
    node_batch = named_stream(seed, "gradcheck-nodes").integers(0, node_count, 6)
    return disc, gen, edge_batch, node_batch


def check_discriminator_grads(seed: int) -> float:
    """Max relative FD error over every entry of both embedding matrices."""
    disc, gen, edge_batch, _ = random_instance(seed)
    fakes = []
    fake_rng = named_stream(seed, "gradcheck-fakes")
    for u, v in edge_batch:
        for anchor in (int(u), int(v)):
            for _ in range(2):  # two draws per anchor
                src, tgt = model.generate_fake(gen, anchor, fake_rng)
                fakes.append((src, anchor))
                fakes.append((tgt, anchor))

    def loss_fn():
        return model.discriminator_loss_and_grads(disc, edge_batch, fakes)[0]

    _, grads = model.discriminator_loss_and_grads(disc, edge_batch, fakes)
    worst = 0.0
    for tensor, analytic in zip(disc.tensors(), grads.as_list()):
        numeric = central_diff(loss_fn, tensor)
        worst = max(worst, float(rel_errors(analytic, numeric).max()))
    return worst


def check_generator_grads(seed: int, single: bool = False, n_samples: int = 2) -> float:
    """Max relative FD error over the latent matrix and every MLP tensor."""
    disc, gen, _, node_batch = random_instance(seed, single=single)

    def loss_fn():
        rng = named_stream(seed, "gradcheck-eps")
        return model.generator_loss_and_grads(disc, gen, node_batch, rng, n_samples)[0]

    rng = named_stream(seed, "gradcheck-eps")
    _, grads = model.generator_loss_and_grads(disc, gen, node_batch, rng, n_samples)
    worst = 0.0
    for tensor, analytic in zip(gen.tensors(), grads.as_list()):
        numeric = central_diff(loss_fn, tensor)
        worst = max(worst, float(rel_errors(analytic, numeric).max()))
    return worst
