import numpy as np
import pytest

from pgnn.diagnostics import (
    cka_linear,
    correction_load,
    grad_norm_total,
    hidden_activations,
    jacobian_spectrum_batch,
    layerwise_gap,
    sov,
)
from pgnn.errors import DegradedRankError, NotApplicableError, UndefinedMetricError
from pgnn.linalg import qr_orthonormal, svd
from pgnn.network import NetworkSpec, forward, init_params, parameters
from pgnn.rng import make_rng


def gram_form_cka(h, z):
    """Direct centered-Gram evaluation; the quadratic-cost reference."""
    n = h.shape[0]
    c = np.eye(n) - np.ones((n, n)) / n
    kh = c @ (h @ h.T) @ c
    kz = c @ (z @ z.T) @ c
    return float(np.sum(kh * kz) / (np.linalg.norm(kh) * np.linalg.norm(kz)))


class TestCka:
    def test_self_similarity_is_one(self, rng):
        h = rng.standard_normal((20, 5))
        assert cka_linear(h, h) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal_and_scale_invariance(self, rng):
        h = rng.standard_normal((30, 6))
        q = qr_orthonormal(rng.standard_normal((6, 6)))
        z = rng.standard_normal((30, 4))
        base = cka_linear(h, z)
        assert cka_linear(h @ q, z) == pytest.approx(base, abs=1e-10)
        assert cka_linear(3.7 * h, z) == pytest.approx(base, abs=1e-10)

    def test_matches_gram_form(self, rng):
        h = rng.standard_normal((6, 2))
        z = rng.standard_normal((6, 3))
        assert cka_linear(h, z) == pytest.approx(gram_form_cka(h, z), abs=1e-12)

    def test_symmetry(self, rng):
        h = rng.standard_normal((15, 3))
        z = rng.standard_normal((15, 5))
        assert cka_linear(h, z) == pytest.approx(cka_linear(z, h), abs=1e-12)

    def test_range(self, rng):
        for _ in range(20):
            h = rng.standard_normal((12, 4))
            z = rng.standard_normal((12, 3))
            v = cka_linear(h, z)
            assert -1e-9 <= v <= 1.0 + 1e-9

    def test_constant_features_rejected(self, rng):
        h = np.full((10, 3), 2.0)
        with pytest.raises(UndefinedMetricError):
            cka_linear(h, rng.standard_normal((10, 2)))


class TestSov:
    def test_self_overlap_is_one(self, rng):
        h = rng.standard_normal((50, 10))
        assert sov(h, h, k=4) == pytest.approx(1.0, abs=1e-10)

    def test_disjoint_supports_give_zero(self, rng):
        # first set varies only on coords 0..3, second only on 4..7
        a = np.zeros((40, 8))
        b = np.zeros((40, 8))
        a[:, :4] = rng.standard_normal((40, 4))
        b[:, 4:] = rng.standard_normal((40, 4))
        assert sov(a, b, k=4) == pytest.approx(0.0, abs=1e-12)

    def test_rotation_of_both_preserves_overlap(self, rng):
        h1 = rng.standard_normal((60, 8))
        h2 = rng.standard_normal((60, 8))
        q = qr_orthonormal(rng.standard_normal((8, 8)))
        base = sov(h1, h2, k=3)
        assert sov(h1 @ q, h2 @ q, k=3) == pytest.approx(base, abs=1e-9)

    def test_symmetry_and_range(self, rng):
        h1 = rng.standard_normal((40, 6))
        h2 = rng.standard_normal((40, 6))
        v = sov(h1, h2, k=3)
        assert v == pytest.approx(sov(h2, h1, k=3), abs=1e-10)
        assert 0.0 <= v <= 1.0 + 1e-9

    def test_against_principal_angle_oracle(self, rng):
        from scipy.linalg import subspace_angles

        h1 = rng.standard_normal((80, 7))
        h2 = rng.standard_normal((80, 7))
        k = 3
        angles = subspace_angles(
            np.linalg.svd(h1 - h1.mean(0), full_matrices=False)[2][:k].T,
            np.linalg.svd(h2 - h2.mean(0), full_matrices=False)[2][:k].T,
        )
        expected = float(np.mean(np.cos(angles) ** 2))
        assert sov(h1, h2, k=k) == pytest.approx(expected, abs=1e-10)

    def test_rank_deficiency_reports_achievable_rank(self, rng):
        h = np.outer(rng.standard_normal(30), rng.standard_normal(5))  # rank 1 before centering
        with pytest.raises(DegradedRankError) as exc:
            sov(h, rng.standard_normal((30, 5)), k=4)
        assert exc.value.achievable_rank < 4


class TestJacobianSpectrum:
    def test_linear_network_equals_weight_product_svd(self, rng):
        spec = NetworkSpec(6, (5,), 3, arch="pgnn", correction_scale=0.0)
        net = init_params(spec, seed=0)
        for layer in net.layers:
            layer.b[...] = 0.0
        x = rng.standard_normal((6, 8))
        got = jacobian_spectrum_batch(net, x, samples=8)
        _, s, _ = svd(net.head.W @ net.layers[0].W)
        assert np.allclose(got, s, atol=1e-8)

    def test_zero_network(self):
        net = init_params(NetworkSpec(4, (3,), 2, arch="mlp"), seed=0)
        for p in parameters(net).values():
            p[...] = 0.0
        got = jacobian_spectrum_batch(net, np.ones((4, 5)), samples=5)
        assert np.all(got == 0)

    def test_sorted_descending_nonnegative(self, rng):
        net = init_params(NetworkSpec(5, (7,), 4, arch="mlp"), seed=1)
        got = jacobian_spectrum_batch(net, rng.standard_normal((5, 6)), samples=6)
        assert np.all(got >= 0) and np.all(np.diff(got) <= 1e-12)

    def test_sample_count_enforced(self, rng):
        net = init_params(NetworkSpec(5, (7,), 4, arch="mlp"), seed=1)
        with pytest.raises(Exception, match="32"):
            jacobian_spectrum_batch(net, rng.standard_normal((5, 6)), samples=32)


class TestLayerwiseGap:
    def test_identical_batches_give_zero(self, rng):
        net = init_params(NetworkSpec(6, (5, 4), 2, arch="mlp"), seed=0)
        x = rng.standard_normal((6, 32))
        assert layerwise_gap(net, x, x) == [0.0, 0.0]

    def test_shrinks_with_sample_size(self):
        net = init_params(NetworkSpec(6, (5,), 2, arch="mlp"), seed=0)
        small, large = [], []
        for seed in range(10):
            r = make_rng("gap", seed)
            small.append(layerwise_gap(net, r.standard_normal((6, 256)), r.standard_normal((6, 256)))[0])
            large.append(layerwise_gap(net, r.standard_normal((6, 1024)), r.standard_normal((6, 1024)))[0])
        assert np.mean(large) < np.mean(small)

    def test_nonnegative(self, rng):
        net = init_params(NetworkSpec(6, (5, 3), 2, arch="pgnn"), seed=0)
        gaps = layerwise_gap(net, rng.standard_normal((6, 64)), rng.standard_normal((6, 64)))
        assert all(g >= 0 for g in gaps)


class TestCorrectionLoad:
    def test_zero_scale_gives_zero_load(self, rng):
        net = init_params(NetworkSpec(5, (4,), 2, arch="pgnn", correction_scale=0.0), seed=0)
        loads = correction_load(forward(net, rng.standard_normal((5, 8))))
        assert loads == [0.0]

    def test_zero_structured_gives_load_near_one(self, rng):
        net = init_params(NetworkSpec(5, (4,), 2, arch="pgnn"), seed=0)
        net.layers[0].W[...] = 0.0
        net.layers[0].b[...] = 0.0
        loads = correction_load(forward(net, rng.standard_normal((5, 8))))
        assert loads[0] == pytest.approx(1.0, abs=1e-6)

    def test_in_unit_interval(self, rng):
        net = init_params(NetworkSpec(5, (4, 4), 2, arch="pgnn"), seed=2)
        loads = correction_load(forward(net, rng.standard_normal((5, 16))))
        assert all(0.0 <= v <= 1.0 for v in loads)

    def test_mlp_not_applicable(self, rng):
        net = init_params(NetworkSpec(5, (4,), 2, arch="mlp"), seed=0)
        with pytest.raises(NotApplicableError):
            correction_load(forward(net, rng.standard_normal((5, 8))))


class TestGradNormTotal:
    def test_zero(self):
        assert grad_norm_total({"a": np.zeros((3, 3)), "b": np.zeros(2)}) == 0.0

    def test_single_vector(self):
        assert grad_norm_total({"a": np.array([3.0, 4.0])}) == pytest.approx(5.0)

    def test_against_two_pass_oracle(self, rng):
        grads = {f"p{i}": rng.standard_normal((3, i + 1)) for i in range(4)}
        per_tensor = [np.linalg.norm(g) for g in grads.values()]
        expected = np.sqrt(np.sum(np.square(per_tensor)))
        assert grad_norm_total(grads) == pytest.approx(expected, abs=1e-12)


class TestHiddenActivations:
    def test_rows_are_samples(self, rng):
        net = init_params(NetworkSpec(5, (7, 3), 2, arch="mlp"), seed=0)
        acts = hidden_activations(net, rng.standard_normal((5, 11)))
        assert [a.shape for a in acts] == [(11, 7), (11, 3)]
