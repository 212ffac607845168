import numpy as np
import pytest
from helpers import assert_grad_matches

from styleval.nncore import CONTENT_TAP, STYLE_TAPS, FeatureMap, desk_net, forward, input_gradient
from styleval.transfer import (
    ContentTerm,
    CrossLayerStyleTerm,
    GramStyleTerm,
    HistogramStyleTerm,
    LossError,
    MeanStyleTerm,
    build_method_loss,
    layerwise_factor_weights,
)


def fmap(data, tap):
    return FeatureMap(tap=tap, data=np.asarray(data, dtype=np.float64))


def rand_features(seed, taps=STYLE_TAPS, size=8, channels=3):
    """Feature dict shaped like the pairwise-descending tap pyramid."""
    rng = np.random.default_rng(seed)
    out = {}
    h = size
    for tap in taps:
        out[tap] = fmap(rng.standard_normal((h, h, channels)), tap)
        h = max(2, h // 2)
    return out


class TestContentTerm:
    def test_identical_maps_zero(self):
        target = fmap(np.random.default_rng(0).random((4, 4, 3)), CONTENT_TAP)
        term = ContentTerm(target)
        grads = {}
        assert term.evaluate({CONTENT_TAP: target}, grads) == 0.0
        assert np.all(grads[CONTENT_TAP] == 0.0)

    def test_single_entry_delta(self):
        base = np.zeros((2, 2, 1))
        target = fmap(base, CONTENT_TAP)
        moved = base.copy()
        moved[0, 1, 0] = 0.3
        term = ContentTerm(target)
        val = term.evaluate({CONTENT_TAP: fmap(moved, CONTENT_TAP)}, {})
        assert val == pytest.approx(0.5 * 0.3**2, rel=1e-15)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(1)
        a, b = rng.random((3, 3, 2)), rng.random((3, 3, 2))
        term = ContentTerm(fmap(b, CONTENT_TAP))
        val = term.evaluate({CONTENT_TAP: fmap(a, CONTENT_TAP)}, {})
        want = 0.5 * sum((a.ravel()[i] - b.ravel()[i]) ** 2 for i in range(a.size))
        assert val == pytest.approx(want, rel=1e-12)

    def test_shape_mismatch_rejected(self):
        term = ContentTerm(fmap(np.zeros((2, 2, 1)), CONTENT_TAP))
        with pytest.raises(LossError):
            term.evaluate({CONTENT_TAP: fmap(np.zeros((3, 3, 1)), CONTENT_TAP)}, {})


class TestGramStyleTerm:
    def test_same_features_zero(self):
        feats = rand_features(2)
        term = GramStyleTerm(feats, {})
        assert term.evaluate(feats, {}) == 0.0

    def test_single_tap_constant_maps_hand_value(self):
        # C=1, constant values v vs u over P positions: w/(4P^2) (P v^2 - P u^2)^2
        v, u, p, w = 0.7, 0.2, 9, 2.0
        style = {"R11": fmap(np.full((3, 3, 1), u), "R11")}
        term = GramStyleTerm(style, {"R11": w}, taps=("R11",))
        val = term.evaluate({"R11": fmap(np.full((3, 3, 1), v), "R11")}, {})
        want = w / (4 * p * p) * (p * v * v - p * u * u) ** 2
        assert val == pytest.approx(want, rel=1e-12)

    def test_spatial_permutation_invariance(self):
        feats = rand_features(3)
        style = rand_features(4)
        term = GramStyleTerm(style, {})
        base = term.evaluate(feats, {})
        rng = np.random.default_rng(5)
        shuffled = {}
        for tap, fm in feats.items():
            h, w, c = fm.data.shape
            perm = rng.permutation(h * w)
            shuffled[tap] = fmap(fm.data.reshape(h * w, c)[perm].reshape(h, w, c), tap)
        assert term.evaluate(shuffled, {}) == pytest.approx(base, rel=1e-12)

    def test_covariance_variant_kills_channel_shift(self):
        feats = rand_features(6)
        shifted = {t: fmap(fm.data + 1.3, t) for t, fm in feats.items()}
        cov_term = GramStyleTerm(feats, {}, use_covariance=True)
        gram_term = GramStyleTerm(feats, {})
        assert cov_term.evaluate(shifted, {}) == pytest.approx(0.0, abs=1e-18)
        assert gram_term.evaluate(shifted, {}) > 0.0


class TestMeanTerm:
    def test_identical_zero(self):
        feats = rand_features(7)
        assert MeanStyleTerm(feats).evaluate(feats, {}) == 0.0

    def test_single_channel_constant_maps(self):
        style = {"R11": fmap(np.full((2, 2, 1), 0.25), "R11")}
        term = MeanStyleTerm(style, taps=("R11",))
        val = term.evaluate({"R11": fmap(np.full((2, 2, 1), 0.75), "R11")}, {})
        assert val == pytest.approx(0.25, rel=1e-12)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(8)
        a = rng.random((4, 4, 3))
        b = rng.random((4, 4, 3))
        term = MeanStyleTerm({"R11": fmap(b, "R11")}, taps=("R11",))
        val = term.evaluate({"R11": fmap(a, "R11")}, {})
        want = sum(
            (a[:, :, k].mean() - b[:, :, k].mean()) ** 2 for k in range(3)
        )
        assert val == pytest.approx(want, rel=1e-12)


class TestCrossLayerTerm:
    def test_same_features_zero(self):
        feats = rand_features(9)
        term = CrossLayerStyleTerm(feats, {})
        assert term.evaluate(feats, {}) == 0.0

    def test_pair_decomposition_nonnegative(self):
        style = rand_features(10)
        probe = rand_features(11)
        total = CrossLayerStyleTerm(style, {}).evaluate(probe, {})
        parts = []
        for pair in (("R41", "R51"), ("R31", "R41"), ("R21", "R31"), ("R11", "R21")):
            t = CrossLayerStyleTerm(style, {}, pairs=(pair,))
            v = t.evaluate(probe, {})
            assert v >= 0.0
            parts.append(v)
        assert total == pytest.approx(sum(parts), rel=1e-12)

    def test_zeroed_coarse_map_matches_loop_oracle(self):
        style = rand_features(12)
        probe = {t: fmap(fm.data.copy(), t) for t, fm in style.items()}
        probe["R21"] = fmap(np.zeros_like(probe["R21"].data), "R21")
        term = CrossLayerStyleTerm(style, {}, pairs=(("R11", "R21"),))
        got = term.evaluate(probe, {})
        # oracle: value computed with explicit upsample + double loop
        f11 = probe["R11"].data
        h, w, c1 = f11.shape
        hc, wc, c2 = style["R21"].data.shape
        g_probe = np.zeros((c1, c2))
        g_style = np.zeros((c1, c2))
        s11, s21 = style["R11"].data, style["R21"].data
        for i in range(h):
            for j in range(w):
                for a in range(c1):
                    for b in range(c2):
                        g_probe[a, b] += f11[i, j, a] * 0.0
                        g_style[a, b] += s11[i, j, a] * s21[(i * hc) // h, (j * wc) // w, b]
        norm = 1.0 / (4.0 * c1 * c2 * (h * w) ** 2)
        want = norm * np.sum((g_probe - g_style) ** 2)
        assert got == pytest.approx(want, rel=1e-10)

    def test_joint_permutation_invariance_but_not_independent(self):
        # permuting fine positions jointly with the upsampled coarse grid
        # preserves the loss; permuting the fine map alone does not
        style = rand_features(13)
        term = CrossLayerStyleTerm(style, {}, pairs=(("R11", "R21"),))
        probe = rand_features(14)
        base = term.evaluate(probe, {})

        f = probe["R11"].data
        h, w, c = f.shape
        rng = np.random.default_rng(15)
        # block-preserving permutation: swap 2x2 blocks so the implied
        # coarse alignment moves with the fine positions
        bh, bw = h // 2, w // 2
        perm = rng.permutation(bh * bw)
        fine_blocks = f.reshape(bh, 2, bw, 2, c).transpose(0, 2, 1, 3, 4).reshape(bh * bw, 2, 2, c)
        coarse = probe["R21"].data.reshape(bh * bw, -1)
        fine_p = fine_blocks[perm].reshape(bh, bw, 2, 2, c).transpose(0, 2, 1, 3, 4).reshape(h, w, c)
        coarse_p = coarse[perm].reshape(probe["R21"].data.shape)
        joint = dict(probe)
        joint["R11"] = fmap(fine_p, "R11")
        joint["R21"] = fmap(coarse_p, "R21")
        assert term.evaluate(joint, {}) == pytest.approx(base, rel=1e-10)

        alone = dict(probe)
        flat_perm = rng.permutation(h * w)
        alone["R11"] = fmap(f.reshape(h * w, c)[flat_perm].reshape(h, w, c), "R11")
        assert term.evaluate(alone, {}) != pytest.approx(base, rel=1e-6)

    def test_covariance_variant_matches_cross_covariance(self):
        from styleval.stats import cross_covariance

        style = rand_features(16)
        probe = rand_features(17)
        term = CrossLayerStyleTerm(style, {}, use_covariance=True, pairs=(("R11", "R21"),))
        got = term.evaluate(probe, {})
        d = cross_covariance(probe["R11"], probe["R21"]) - cross_covariance(
            style["R11"], style["R21"]
        )
        c1, c2 = d.shape
        m = probe["R11"].positions
        want = np.sum(d * d) / (4.0 * c1 * c2 * m * m)
        assert got == pytest.approx(want, rel=1e-12)


class TestVariantDispatch:
    def test_gatysc_kills_shift_where_gatys_does_not(self):
        style = rand_features(18)
        shifted = {t: fmap(fm.data + 0.9, t) for t, fm in style.items()}
        content = fmap(np.random.default_rng(19).random((2, 2, 4)), CONTENT_TAP)
        lc = build_method_loss("GatysC", style, content, alpha=1.0)
        lg = build_method_loss("Gatys", style, content, alpha=1.0)
        feats = dict(shifted)
        feats[CONTENT_TAP] = content
        _, _ = lc(feats), lg(feats)
        assert lc.components["style"] == pytest.approx(0.0, abs=1e-15)
        assert lg.components["style"] > 0.0

    def test_xm_product_annihilator(self):
        style = rand_features(20)
        content = fmap(np.random.default_rng(21).random((2, 2, 4)), CONTENT_TAP)
        loss = build_method_loss("XM", style, content, alpha=1.0)
        feats = rand_features(22)
        feats[CONTENT_TAP] = content  # content term exactly zero
        value, _ = loss(feats)
        assert value == 0.0
        assert loss.components["style"] > 0.0

    def test_xm_total_is_exact_product(self):
        style = rand_features(23)
        content = fmap(np.random.default_rng(24).random((2, 2, 4)), CONTENT_TAP)
        loss = build_method_loss("XM", style, content, alpha=1.0)
        feats = rand_features(25)
        feats[CONTENT_TAP] = fmap(content.data + 0.1, CONTENT_TAP)
        value, _ = loss(feats)
        assert value == pytest.approx(
            loss.components["content"] * loss.components["style"], rel=1e-12
        )

    def test_layerwise_factors_follow_width_rule(self):
        net = desk_net(seed=0)  # widths 8/16/32/64/64
        img = np.random.default_rng(26).random((32, 32, 3))
        feats = forward(img, net, STYLE_TAPS)
        factors = layerwise_factor_weights(feats)
        assert factors == {
            "R11": 8.0**-2,
            "R21": 16.0**-2,
            "R31": 32.0**-2,
            "R41": 64.0**-2,
            "R51": 64.0**-2,
        }

    def test_unknown_method_rejected(self):
        style = rand_features(27)
        content = fmap(np.zeros((2, 2, 4)), CONTENT_TAP)
        with pytest.raises(LossError):
            build_method_loss("Mystery", style, content, alpha=1.0)


GRAD_NET = desk_net(seed=5, widths=(4, 4, 4, 4, 4), pools=(True, True, False, False))


def method_fd_check(method, seed, alpha=2.0):
    rng = np.random.default_rng(seed)
    style_img = rng.random((8, 8, 3))
    content_img = rng.random((8, 8, 3))
    img = rng.random((8, 8, 3))
    style_features = forward(style_img, GRAD_NET, STYLE_TAPS)
    content_target = forward(content_img, GRAD_NET, [CONTENT_TAP])[CONTENT_TAP]
    loss = build_method_loss(method, style_features, content_target, alpha=alpha)
    value, g = input_gradient(img, GRAD_NET, loss, loss.taps)

    def value_only(x):
        feats = forward(x, GRAD_NET, loss.taps)
        return loss(feats)[0]

    assert np.isfinite(value)
    assert_grad_matches(value_only, img, g)


@pytest.mark.parametrize(
    "method", ["Gatys", "GatysL", "GatysM", "GatysC", "GatysCM", "GatysH", "XL", "XLC", "XLCM", "XM"]
)
def test_method_gradient_matches_finite_differences(method):
    method_fd_check(method, seed=31)
