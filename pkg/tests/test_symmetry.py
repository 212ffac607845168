import numpy as np
import pytest

from styleval.symmetry import (
    LinearLayerMap,
    SymmetryError,
    apply_affine,
    apply_element,
    compose_affine,
    construct_element,
    cross_deviation_prediction,
    cross_gram_op,
    gram_op,
    psi_vector,
    random_element,
    stack_windows,
    tiled_homogeneous_map,
    verify_cross_breaks,
    verify_within_invariance,
    whiten,
)


def whitened_data(n=500, c=6, seed=0):
    return whiten(np.random.default_rng(seed).standard_normal((n, c)))


class TestWhiten:
    def test_invariants_hold(self):
        x = whitened_data()
        np.testing.assert_allclose(x.mean(axis=0), 0.0, atol=1e-10)
        np.testing.assert_allclose(gram_op(x), np.eye(6), atol=1e-8)

    def test_already_white_unchanged(self):
        x = whitened_data(200, 4, seed=1)
        np.testing.assert_allclose(whiten(x), x, atol=1e-9)

    def test_small_sample_rejected(self):
        with pytest.raises(SymmetryError):
            whiten(np.random.default_rng(2).standard_normal((3, 4)))

    def test_singular_covariance_rejected(self):
        base = np.random.default_rng(3).standard_normal((50, 1))
        x = np.hstack([base, base])  # rank 1
        with pytest.raises(SymmetryError):
            whiten(x)


class TestConstructElement:
    def test_identity_element(self):
        g = construct_element(np.zeros(3), np.eye(3))
        np.testing.assert_array_equal(g.a, np.eye(3))

    def test_hand_cholesky_case(self):
        g = construct_element(np.array([0.6, 0.0]), np.eye(2))
        np.testing.assert_allclose(g.a @ g.a.T, [[0.64, 0.0], [0.0, 1.0]], atol=1e-12)
        resid = g.a @ g.a.T + np.outer(g.b, g.b) - np.eye(2)
        assert np.max(np.abs(resid)) < 1e-12

    def test_unit_b_rejected(self):
        with pytest.raises(SymmetryError):
            construct_element(np.array([1.0, 0.0]), np.eye(2))

    def test_long_b_rejected(self):
        with pytest.raises(SymmetryError):
            construct_element(np.array([0.9, 0.9]), np.eye(2))

    def test_non_orthonormal_u_rejected(self):
        with pytest.raises(SymmetryError):
            construct_element(np.zeros(2), np.array([[1.0, 0.0], [1.0, 1.0]]))

    def test_hundred_random_elements_satisfy_constraint(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            g = random_element(6, rng)
            resid = g.a @ g.a.T + np.outer(g.b, g.b) - np.eye(6)
            assert np.max(np.abs(resid)) < 1e-8


class TestApplyAndInvariance:
    def test_identity_element_fixes_data(self):
        x = whitened_data(100, 4, seed=5)
        g = construct_element(np.zeros(4), np.eye(4))
        np.testing.assert_array_equal(apply_element(x, g), x)
        assert verify_within_invariance(x, g) == 0.0

    def test_rotation_preserves_gram_but_moves_data(self):
        x = whitened_data(100, 4, seed=6)
        q, _ = np.linalg.qr(np.random.default_rng(7).standard_normal((4, 4)))
        g = construct_element(np.zeros(4), q)
        assert verify_within_invariance(x, g) < 1e-10
        assert np.max(np.abs(apply_element(x, g) - x)) > 0.1

    def test_action_matches_direct_arithmetic(self):
        x = whitened_data(50, 3, seed=8)
        g = random_element(3, np.random.default_rng(9))
        want = np.array([g.a @ row + g.b for row in x])
        np.testing.assert_allclose(apply_element(x, g), want, rtol=1e-12)

    def test_hundred_random_elements_preserve_whitened_gram(self):
        x = whitened_data(500, 6, seed=10)
        rng = np.random.default_rng(11)
        for _ in range(100):
            g = random_element(6, rng)
            assert verify_within_invariance(x, g) < 1e-8

    def test_invalid_element_breaks_gram(self):
        # bypass the constructor check with a scaled A
        x = whitened_data(300, 4, seed=12)
        g = random_element(4, np.random.default_rng(13))
        object.__setattr__(g, "a", g.a * 1.05)
        assert verify_within_invariance(x, g) > 1e-3


class TestComposition:
    def test_composition_with_rotation_stays_symmetry(self):
        x = whitened_data(400, 5, seed=14)
        rng = np.random.default_rng(15)
        g = random_element(5, rng)
        q, _ = np.linalg.qr(rng.standard_normal((5, 5)))
        rot = construct_element(np.zeros(5), q)
        for first, second in ((g, rot), (rot, g)):
            a, b = compose_affine(first, second)
            dev = np.max(np.abs(gram_op(apply_affine(x, a, b)) - gram_op(x)))
            assert dev < 1e-8

    def test_generic_composition_deviation_matches_closed_form(self):
        # two shifts compose outside the set: the deviation is exactly
        # A2 b1 b2^T + b2 (A2 b1)^T, nonzero for generic pairs
        x = whitened_data(400, 5, seed=16)
        rng = np.random.default_rng(17)
        g1 = random_element(5, rng, b_scale=0.9)
        g2 = random_element(5, rng, b_scale=0.9)
        a, b = compose_affine(g1, g2)
        got = gram_op(apply_affine(x, a, b)) - gram_op(x)
        t = g2.a @ g1.b
        want = np.outer(t, g2.b) + np.outer(g2.b, t)
        np.testing.assert_allclose(got, want, atol=1e-8)
        assert np.max(np.abs(want)) > 1e-3


def kernel_vector(m: np.ndarray, rng, scale=0.5):
    """Unit-scaled vector in ker(m)."""
    _, _, vt = np.linalg.svd(m)
    null = vt[m.shape[0] :]
    coef = rng.standard_normal(null.shape[0])
    v = coef @ null
    return scale * v / np.linalg.norm(v)


class TestCrossLayerPointSample:
    def setup_case(self, seed, c_in=6, c_out=4):
        rng = np.random.default_rng(seed)
        x = whitened_data(600, c_in, seed=seed + 1)
        m = rng.standard_normal((c_out, c_in))
        n = rng.standard_normal(c_out)
        return rng, x, LinearLayerMap(m=m, n=n, r=1)

    def test_identity_element_changes_nothing(self):
        _, x, layer = self.setup_case(18)
        g = construct_element(np.zeros(6), np.eye(6))
        within, cross = verify_cross_breaks(x, layer, g)
        assert within == 0.0 and cross == 0.0

    def test_kernel_b_preserves_within_but_breaks_cross(self):
        rng, x, layer = self.setup_case(19)
        b = kernel_vector(layer.m, rng)
        q, _ = np.linalg.qr(rng.standard_normal((6, 6)))
        g = construct_element(b, q)
        within, cross = verify_cross_breaks(x, layer, g)
        assert within < 1e-8
        assert cross > 1e-3
        got = cross_gram_op(apply_element(x, g), layer_output_after(x, layer, g)) - cross_gram_op(
            x, x @ layer.m.T + layer.n
        )
        np.testing.assert_allclose(got, cross_deviation_prediction(g, layer), atol=1e-6)

    def test_generic_nonzero_b_breaks_cross(self):
        rng, x, layer = self.setup_case(20)
        g = random_element(6, rng, b_scale=0.8)
        within, cross = verify_cross_breaks(x, layer, g)
        assert cross > 1e-3

    def test_rotation_preserves_both(self):
        rng, x, layer = self.setup_case(21)
        q, _ = np.linalg.qr(rng.standard_normal((6, 6)))
        g = construct_element(np.zeros(6), q)
        within, cross = verify_cross_breaks(x, layer, g)
        assert within < 1e-10 and cross < 1e-10

    def test_cross_deviation_equals_bn_pattern(self):
        rng, x, layer = self.setup_case(22)
        b = kernel_vector(layer.m, rng)
        g = construct_element(b, np.eye(6))
        _, cross = verify_cross_breaks(x, layer, g)
        assert abs(cross - np.max(np.abs(np.outer(b, layer.n)))) < 1e-6


def layer_output_after(x, layer, g):
    return apply_element(x, g) @ layer.m.T + layer.n


class TestStackWindows:
    def test_r1_is_identity_reshape(self):
        x = np.random.default_rng(23).random((4, 5, 2))
        np.testing.assert_array_equal(stack_windows(x, 1), x.reshape(20, 2))

    def test_ramp_center_window(self):
        ramp = np.arange(9.0).reshape(3, 3, 1)
        got = stack_windows(ramp, 3)
        assert got.shape == (1, 9)
        np.testing.assert_array_equal(got[0], np.arange(9.0))

    def test_column_count_is_r_squared_c(self):
        x = np.random.default_rng(24).random((8, 8, 3))
        assert stack_windows(x, 3).shape[1] == 27

    def test_interior_positions_only(self):
        x = np.random.default_rng(25).random((6, 7, 2))
        assert stack_windows(x, 3).shape[0] == 4 * 5


class TestCrossLayerHomogeneous:
    def setup_case(self, seed, c_in=4, c_out=3, r=3, tiles=12):
        rng = np.random.default_rng(seed)
        x = tiled_homogeneous_map(tiles, r, c_in, seed=seed + 1)
        m = rng.standard_normal((c_out, r * r * c_in))
        n = rng.standard_normal(c_out)
        return rng, x, LinearLayerMap(m=m, n=n, r=r)

    def test_psi_kernel_b_preserves_within(self):
        rng, x, layer = self.setup_case(26)
        # choose b with M psi(b) = 0: psi(b) must lie in ker(M) intersected
        # with the tiled subspace {psi(v)}; build via least squares on the
        # stacked map S: S v = M psi(v) = 0
        s = sum(layer.m[:, k * 4 : (k + 1) * 4] for k in range(9))
        b = kernel_vector(s, rng, scale=0.4)
        assert np.max(np.abs(layer.m @ psi_vector(b, 3))) < 1e-10
        q, _ = np.linalg.qr(rng.standard_normal((4, 4)))
        g = construct_element(b, q)
        within, cross = verify_cross_breaks(x, layer, g)
        assert within < 1e-8
        assert cross > 1e-3  # n != 0 still breaks the cross statistic

    def test_cross_deviation_equals_bn_pattern(self):
        rng, x, layer = self.setup_case(27)
        g = random_element(4, rng, b_scale=0.7)
        half = 1
        centers = x[half::3, half::3, :].reshape(-1, 4)
        stacked = stack_windows(x, 3, stride=3)
        y = stacked @ layer.m.T + layer.n
        xg = apply_element(x.reshape(-1, 4), g).reshape(x.shape)
        centers_g = xg[half::3, half::3, :].reshape(-1, 4)
        stacked_g = stack_windows(xg, 3, stride=3)
        y_g = stacked_g @ layer.m.T + layer.n
        got = cross_gram_op(centers_g, y_g) - cross_gram_op(centers, y)
        np.testing.assert_allclose(got, cross_deviation_prediction(g, layer), atol=1e-8)

    def test_generic_b_breaks_within_when_psi_not_in_kernel(self):
        rng, x, layer = self.setup_case(28)
        g = random_element(4, rng, b_scale=0.8)
        if np.max(np.abs(layer.m @ psi_vector(g.b, 3))) < 1e-6:
            pytest.skip("b accidentally in kernel")
        within, cross = verify_cross_breaks(x, layer, g)
        assert within > 1e-3

    def test_tiled_map_satisfies_assumption_exactly(self):
        x = tiled_homogeneous_map(10, 3, 4, seed=29)
        centers = x[1::3, 1::3, :].reshape(-1, 4)
        np.testing.assert_allclose(gram_op(centers), np.eye(4), atol=1e-10)
        stacked = stack_windows(x, 3, stride=3)
        q = stacked.T @ stacked / stacked.shape[0]
        for bi in range(9):
            for bj in range(9):
                block = q[bi * 4 : (bi + 1) * 4, bj * 4 : (bj + 1) * 4]
                np.testing.assert_allclose(block, np.eye(4), atol=1e-10)


class TestVarianceExperiment:
    def test_single_trial_zero_variance(self):
        from styleval.nncore import desk_net
        from styleval.symmetry import variance_experiment

        net = desk_net(seed=0, widths=(4, 4, 4, 4, 4))
        rng = np.random.default_rng(30)
        style = rng.random((32, 32, 3))
        content = rng.random((32, 32, 3))
        out = variance_experiment(
            style, content, net, ["Gatys"], trials=1, seed=0,
            config_kwargs={"iterations": 3, "working_width": 32},
        )
        assert all(v == 0.0 for v in out["Gatys"].values())

    def test_deterministic_given_seed(self):
        from styleval.nncore import desk_net
        from styleval.symmetry import variance_experiment

        net = desk_net(seed=0, widths=(4, 4, 4, 4, 4))
        rng = np.random.default_rng(31)
        style = rng.random((32, 32, 3))
        content = rng.random((32, 32, 3))
        kwargs = {"iterations": 3, "working_width": 32}
        a = variance_experiment(style, content, net, ["XL"], trials=2, seed=5, config_kwargs=kwargs)
        b = variance_experiment(style, content, net, ["XL"], trials=2, seed=5, config_kwargs=kwargs)
        assert a == b
