import math

import numpy as np
import pytest

from digraphgan import model
from digraphgan.graph import DirectedGraph, random_directed_graph
from digraphgan.model import (
    DiscriminatorParams,
    FakeNeighbor,
    GeneratorParams,
    MlpParams,
    NonFiniteLossError,
    discriminate,
    discriminator_loss_and_grads,
    export_embeddings,
    generate_fake,
    generator_loss_and_grads,
    init_params,
    inner_score,
    load_checkpoint,
    mlp_forward,
    sample_latent,
    save_checkpoint,
)
from digraphgan.graph import NodeIdMap
from digraphgan.seeding import named_stream
from digraphgan.trainer import TrainConfig

LN2 = math.log(2.0)


def small_config(**kw):
    defaults = dict(dim=8, n_epoch=1, n_d=1, n_g=1, n_s=1, batch_size=4, seed=0)
    defaults.update(kw)
    return TrainConfig(**defaults)


def random_params(node_count=20, d=8, seed=0, single=False, scale=0.7):
    """Random dense parameters, larger than init so scores are O(1)."""
    rng = named_stream(seed, "params")
    disc = DiscriminatorParams(
        rng.normal(0, scale, (node_count, d)), rng.normal(0, scale, (node_count, d))
    )
    def mlp():
        return MlpParams(
            [rng.normal(0, scale, (d, d)), rng.normal(0, scale, (d, d))],
            [rng.normal(0, scale, d), rng.normal(0, scale, d)],
            "leaky_relu",
        )
    gen = GeneratorParams(rng.normal(0, scale, (node_count, d)), 1.0,
                          None if single else mlp(), mlp())
    return disc, gen


class TestInitParams:
    def test_shapes_and_ranges(self):
        disc, gen = init_params(20, 8, small_config(), named_stream(0, "init"))
        for m in (disc.source, disc.target, gen.latent):
            assert m.shape == (20, 8)
            assert np.all(np.abs(m) <= 0.0625)
        assert gen.mlp_source is not None
        assert gen.mlp_target.dims == [8, 8, 8]
        assert all(np.all(b == 0) for b in gen.mlp_target.biases)

    def test_fixed_seed_bit_identical(self):
        a = init_params(10, 4, small_config(), named_stream(5, "init"))
        b = init_params(10, 4, small_config(), named_stream(5, "init"))
        assert np.array_equal(a[0].source, b[0].source)
        assert np.array_equal(a[1].latent, b[1].latent)
        for wa, wb in zip(a[1].mlp_target.weights, b[1].mlp_target.weights):
            assert np.array_equal(wa, wb)

    def test_different_seeds_differ(self):
        a = init_params(10, 4, small_config(), named_stream(1, "init"))
        b = init_params(10, 4, small_config(), named_stream(2, "init"))
        assert not np.array_equal(a[0].source, b[0].source)

    def test_single_generator_has_no_source_mlp(self):
        disc, gen = init_params(10, 4, small_config(single_generator=True),
                                named_stream(0, "init"))
        assert gen.mlp_source is None
        assert gen.single_generator


class TestSampleLatent:
    def test_sigma_zero_returns_mean(self):
        _, gen = random_params()
        gen = GeneratorParams(gen.latent, 0.0, gen.mlp_source, gen.mlp_target)
        z = sample_latent(gen, 3, named_stream(0, "z"))
        assert np.array_equal(z, gen.latent[3])

    def test_monte_carlo_mean_and_variance(self):
        # concentration oracle: mean within 4*sigma/sqrt(n), variance within 10%
        _, gen = random_params(d=8)
        sigma = gen.sigma
        rng = named_stream(9, "z")
        draws = np.array([sample_latent(gen, 0, rng) for _ in range(10_000)])
        err = draws.mean(axis=0) - gen.latent[0]
        assert np.all(np.abs(err) <= 4 * sigma / math.sqrt(10_000))
        assert np.all(np.abs(draws.var(axis=0) - sigma**2) <= 0.1 * sigma**2)


class TestMlpForward:
    def test_zero_weights_zero_output(self):
        mlp = MlpParams([np.zeros((4, 4)), np.zeros((4, 4))],
                        [np.zeros(4), np.zeros(4)])
        assert np.array_equal(mlp_forward(mlp, np.ones(4)), np.zeros(4))

    def test_single_linear_layer_identity_plus_bias(self):
        b = np.array([1.0, -2.0, 0.5])
        mlp = MlpParams([np.eye(3)], [b])
        z = np.array([0.3, 0.7, -1.1])
        assert np.allclose(mlp_forward(mlp, z), z + b)

    def test_matches_straight_line_oracle(self):
        # independent re-implementation: explicit two-layer evaluation
        rng = named_stream(3, "mlp")
        w0, w1 = rng.normal(size=(5, 7)), rng.normal(size=(7, 5))
        b0, b1 = rng.normal(size=7), rng.normal(size=5)
        mlp = MlpParams([w0, w1], [b0, b1], "leaky_relu")
        z = rng.normal(size=5)
        pre = z @ w0 + b0
        hidden = np.where(pre > 0, pre, 0.2 * pre)
        expected = hidden @ w1 + b1
        assert np.allclose(mlp_forward(mlp, z), expected, rtol=1e-12)

    def test_batch_matches_per_row(self):
        _, gen = random_params()
        zs = named_stream(4, "z").normal(size=(6, 8))
        batch = mlp_forward(gen.mlp_target, zs)
        for i in range(6):
            assert np.allclose(batch[i], mlp_forward(gen.mlp_target, zs[i]))


class TestGenerateFake:
    def test_shared_latent_feeds_both(self):
        _, gen = random_params()
        src, tgt = generate_fake(gen, 2, named_stream(0, "g"))
        assert np.array_equal(src.latent, tgt.latent)
        assert np.allclose(src.embedding, mlp_forward(gen.mlp_source, src.latent))
        assert np.allclose(tgt.embedding, mlp_forward(gen.mlp_target, tgt.latent))

    def test_zero_weights_sigma_zero_gives_final_bias(self):
        d = 4
        final_bias = np.array([0.1, 0.2, 0.3, 0.4])
        mlp = MlpParams([np.zeros((d, d)), np.zeros((d, d))],
                        [np.zeros(d), final_bias.copy()])
        gen = GeneratorParams(np.zeros((3, d)), 0.0, mlp, mlp)
        src, tgt = generate_fake(gen, 0, named_stream(0, "g"))
        assert np.array_equal(src.embedding, final_bias)
        assert np.array_equal(tgt.embedding, final_bias)

    def test_single_generator_mode_omits_source(self):
        _, gen = random_params(single=True)
        src, tgt = generate_fake(gen, 1, named_stream(0, "g"))
        assert src is None
        assert tgt.role == "target"


class TestDiscriminate:
    def test_zero_score_gives_half(self):
        assert discriminate(np.zeros(4), np.ones(4)) == 0.5

    def test_log3_gives_three_quarters(self):
        # sigmoid(ln 3) = 1 / (1 + 1/3) = 0.75 exactly
        s = np.array([math.log(3.0), 0.0])
        t = np.array([1.0, 5.0 * 0.0])
        assert discriminate(s, t) == pytest.approx(0.75, abs=1e-15)

    def test_antisymmetry(self):
        rng = named_stream(7, "d")
        for _ in range(20):
            s, t = rng.normal(size=4), rng.normal(size=4)
            assert discriminate(s, t) + discriminate(-s, t) == pytest.approx(1.0, abs=1e-12)

    def test_raw_score_bilinear(self):
        rng = named_stream(8, "d")
        s, t = rng.normal(size=6), rng.normal(size=6)
        for alpha in (-2.0, 0.5, 3.0):
            assert inner_score(alpha * s, t) == pytest.approx(alpha * inner_score(s, t))


def make_fakes(gen, anchors, rng):
    fakes = []
    for u in anchors:
        src, tgt = generate_fake(gen, u, rng)
        if src is not None:
            fakes.append((src, u))
        fakes.append((tgt, u))
    return fakes


class TestDiscriminatorLoss:
    def test_closed_form_at_zero_params(self):
        # all inner products 0 => both mean terms equal ln 2
        d = 6
        disc = DiscriminatorParams(np.zeros((4, d)), np.zeros((4, d)))
        fakes = [
            (FakeNeighbor(0, "source", np.zeros(d), np.zeros(d)), 0),
            (FakeNeighbor(1, "target", np.zeros(d), np.zeros(d)), 1),
        ]
        loss, grads = discriminator_loss_and_grads(disc, [(0, 1), (2, 3)], fakes)
        assert loss == pytest.approx(2 * LN2, abs=1e-12)

    def test_positive_gradient_formula(self):
        # symbolic oracle: d(-log D(s_u, t_v)) / d s_u = -(1 - D) t_v
        disc, gen = random_params(node_count=6, d=5, seed=2)
        u, v = 1, 4
        loss, grads = discriminator_loss_and_grads(disc, [(u, v)], [])
        d_prob = discriminate(disc.source[u], disc.target[v])
        assert np.allclose(grads.source[u], -(1 - d_prob) * disc.target[v], rtol=1e-12)
        assert np.allclose(grads.target[v], -(1 - d_prob) * disc.source[u], rtol=1e-12)

    def test_fake_gradient_targets_only_real_rows(self):
        disc, gen = random_params(node_count=6, d=5, seed=3)
        rng = named_stream(0, "f")
        fakes = make_fakes(gen, [2], rng)
        loss, grads = discriminator_loss_and_grads(disc, [(0, 1)], fakes)
        touched_source = set(np.flatnonzero(np.any(grads.source != 0, axis=1)))
        touched_target = set(np.flatnonzero(np.any(grads.target != 0, axis=1)))
        # positives touch s_0, t_1; fakes of anchor 2 touch s_2 and t_2
        assert touched_source == {0, 2}
        assert touched_target == {1, 2}

    def test_perturbing_fake_changes_loss_not_grad_structure(self):
        # stop-gradient contract: fakes are data, not parameters
        disc, gen = random_params(node_count=6, d=5, seed=4)
        fakes = make_fakes(gen, [2, 3], named_stream(1, "f"))
        loss_a, grads_a = discriminator_loss_and_grads(disc, [(0, 1)], fakes)
        bumped = [(FakeNeighbor(f.owner, f.role, f.embedding + 0.25, f.latent), a)
                  for f, a in fakes]
        loss_b, grads_b = discriminator_loss_and_grads(disc, [(0, 1)], bumped)
        assert loss_a != loss_b
        nz_a = [set(np.flatnonzero(np.any(g != 0, axis=1))) for g in grads_a.as_list()]
        nz_b = [set(np.flatnonzero(np.any(g != 0, axis=1))) for g in grads_b.as_list()]
        assert nz_a == nz_b

    def test_softplus_matches_naive_form(self):
        disc, gen = random_params(node_count=10, d=6, seed=5)
        edges = [(0, 1), (2, 3), (4, 5)]
        fakes = make_fakes(gen, [6, 7], named_stream(2, "f"))
        loss, _ = discriminator_loss_and_grads(disc, edges, fakes)
        # naive -log sigmoid form, finite here because scores are moderate
        naive = 0.0
        probs = [discriminate(disc.source[u], disc.target[v]) for u, v in edges]
        naive += float(np.mean([-math.log(p) for p in probs]))
        fake_terms = []
        for f, anchor in fakes:
            if f.role == "source":
                p = discriminate(f.embedding, disc.target[anchor])
            else:
                p = discriminate(disc.source[anchor], f.embedding)
            fake_terms.append(-math.log(1 - p))
        naive += float(np.mean(fake_terms))
        assert loss == pytest.approx(naive, abs=1e-12)

    def test_non_finite_input_raises(self):
        disc, _ = random_params(node_count=4, d=3, seed=6)
        disc.source[0, 0] = np.nan
        with pytest.raises(NonFiniteLossError):
            discriminator_loss_and_grads(disc, [(0, 1)], [])

    def test_minimizing_on_positives_drives_d_up_monotonically(self):
        disc, _ = random_params(node_count=4, d=6, seed=7, scale=0.1)
        probs = []
        for _ in range(400):
            _, grads = discriminator_loss_and_grads(disc, [(0, 1)], [])
            disc.source -= 0.05 * grads.source
            disc.target -= 0.05 * grads.target
            probs.append(discriminate(disc.source[0], disc.target[1]))
        assert all(b > a for a, b in zip(probs, probs[1:]))
        assert probs[-1] > 0.9


class TestGeneratorLoss:
    def test_closed_form_at_zero_params(self):
        d = 5
        disc = DiscriminatorParams(np.zeros((3, d)), np.zeros((3, d)))
        mlp = MlpParams([np.zeros((d, d))], [np.zeros(d)])
        gen = GeneratorParams(np.zeros((3, d)), 1.0, mlp, mlp)
        loss, _ = generator_loss_and_grads(disc, gen, [0, 1], named_stream(0, "g"))
        assert loss == pytest.approx(-2 * LN2, abs=1e-12)

    def test_closed_form_single_generator(self):
        d = 5
        disc = DiscriminatorParams(np.zeros((3, d)), np.zeros((3, d)))
        mlp = MlpParams([np.zeros((d, d))], [np.zeros(d)])
        gen = GeneratorParams(np.zeros((3, d)), 1.0, None, mlp)
        loss, grads = generator_loss_and_grads(disc, gen, [0, 1], named_stream(0, "g"))
        assert loss == pytest.approx(-LN2, abs=1e-12)
        assert grads.mlp_source is None

    def test_fake_target_gradient_formula(self):
        # symbolic oracle: d log(1 - D(s_u, t_f)) / d t_f = -D s_u
        d = 4
        rng = named_stream(11, "p")
        disc = DiscriminatorParams(rng.normal(size=(3, d)), rng.normal(size=(3, d)))
        # identity "MLP": fake embedding equals the latent draw
        mlp = MlpParams([np.eye(d)], [np.zeros(d)])
        gen = GeneratorParams(rng.normal(size=(3, d)), 0.0, None, mlp)
        u = 1
        loss, grads = generator_loss_and_grads(disc, gen, [u], named_stream(0, "g"))
        fake_t = gen.latent[u]  # sigma 0, identity map
        d_prob = discriminate(disc.source[u], fake_t)
        # latent grad IS the fake-embedding grad here because the map is identity
        assert np.allclose(grads.latent[u], -d_prob * disc.source[u], rtol=1e-12)

    def test_latent_grad_sums_both_paths(self):
        # shared draw: z_u grad equals the sum of per-MLP contributions
        disc, gen = random_params(node_count=5, d=6, seed=12)
        u = 2
        seed_rng = lambda: named_stream(33, "eps")
        loss_both, grads_both = generator_loss_and_grads(disc, gen, [u], seed_rng())
        gen_only_t = GeneratorParams(gen.latent, gen.sigma, None, gen.mlp_target)
        _, grads_t = generator_loss_and_grads(disc, gen_only_t, [u], seed_rng())
        gen_only_s = GeneratorParams(gen.latent, gen.sigma, None, gen.mlp_source)
        # score the source path alone: swap roles by scoring fake against target rows
        # (cheap check: both-path latent grad minus target-path grad must be the
        # source-path contribution, which is nonzero)
        residual = grads_both.latent[u] - grads_t.latent[u]
        assert np.linalg.norm(residual) > 1e-8

    def test_discriminator_receives_no_gradient(self):
        disc, gen = random_params(node_count=5, d=6, seed=13)
        before = (disc.source.copy(), disc.target.copy())
        loss, grads = generator_loss_and_grads(disc, gen, [0, 1], named_stream(0, "g"))
        assert np.array_equal(disc.source, before[0])
        assert np.array_equal(disc.target, before[1])
        assert not hasattr(grads, "source")

    def test_node_batch_must_be_nonempty(self):
        disc, gen = random_params()
        with pytest.raises(ValueError):
            generator_loss_and_grads(disc, gen, [], named_stream(0, "g"))


class TestCheckpointRoundTrip:
    def test_save_load_bit_identical(self, tmp_path):
        disc, gen = random_params(node_count=7, d=4, seed=20)
        path = tmp_path / "model.bin"
        save_checkpoint(path, disc, gen)
        disc2, gen2 = load_checkpoint(path)
        assert np.array_equal(disc.source, disc2.source)
        assert np.array_equal(disc.target, disc2.target)
        assert np.array_equal(gen.latent, gen2.latent)
        assert gen2.sigma == gen.sigma
        for a, b in zip(gen.mlp_source.tensors(), gen2.mlp_source.tensors()):
            assert np.array_equal(a, b)
        assert gen2.mlp_target.activation == "leaky_relu"

    def test_single_generator_flag_round_trips(self, tmp_path):
        disc, gen = random_params(node_count=5, d=3, seed=21, single=True)
        path = tmp_path / "model.bin"
        save_checkpoint(path, disc, gen)
        _, gen2 = load_checkpoint(path)
        assert gen2.single_generator

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOTACKPT" + b"\x00" * 64)
        with pytest.raises(ValueError, match="not a checkpoint"):
            load_checkpoint(path)


class TestEmbeddingExport:
    def test_header_and_row_format(self, tmp_path):
        disc, _ = random_params(node_count=3, d=2, seed=22)
        id_map = NodeIdMap(("a", "b", "c"))
        path = tmp_path / "emb.tsv"
        export_embeddings(path, disc, id_map)
        lines = path.read_text().splitlines()
        assert lines[0] == "3 2"
        fields = lines[1].split("\t")
        assert fields[0] == "a"
        s_vals = [float(x) for x in fields[1].split()]
        assert np.allclose(s_vals, disc.source[0], rtol=1e-8)
