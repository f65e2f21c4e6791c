import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from avatarsplat import quaternion as quat
from avatarsplat.prior import (FEATURE_DIM, HEADS, OUT_DIM, TRUNK_DEPTH, DecoderMLP, decode, decode_avatar,
                               decode_backward, decode_with_code, feature_matrix, init_prior)
from avatarsplat.renderer.gaussians import FIELDS, WIDTHS, LocalGaussianSet
from conftest import central_diff


def busy_decoder(d_z=5, hidden=7, seed=0):
    """Decoder with non-zero heads and biases so every path carries signal."""
    rng = np.random.default_rng(seed)
    dec = DecoderMLP.init(d_z, hidden, rng)
    for k, v in dec.params.items():
        if k.endswith(".g") or k.endswith(".b"):
            v[:] = rng.uniform(0.2, 1.0, v.shape) if k.endswith(".g") else rng.normal(0, 0.3, v.shape)
    return dec


def loop_decode(dec: DecoderMLP, feature, code):
    """Straight-line single-Gaussian decoder with explicit loops, independent of the vectorized path."""
    p = dec.params

    def affine(name, x, relu):
        v, g, b = p[name + ".v"], p[name + ".g"], p[name + ".b"]
        out = []
        for r in range(v.shape[0]):
            norm = sum(e * e for e in v[r]) ** 0.5
            s = sum(g[r] * v[r, c] / norm * x[c] for c in range(len(x))) + b[r]
            out.append(max(s, 0.0) if relu else s)
        return out

    h = list(feature) + list(code)
    for i in range(TRUNK_DEPTH):
        h = affine(f"trunk{i}", h, True)
    res = []
    for hd in HEADS:
        res += affine(hd + ".out", affine(hd + ".hidden", h, True), False)
    return np.array(res)


def test_architecture_layout():
    dec = DecoderMLP.init(32, 64, np.random.default_rng(0))
    assert OUT_DIM == 14
    assert [WIDTHS[h] for h in HEADS] == [3, 3, 4, 3, 1]
    assert dec.params["trunk0.v"].shape == (64, FEATURE_DIM + 32)
    for i in range(1, TRUNK_DEPTH):
        assert dec.params[f"trunk{i}.v"].shape == (64, 64)
    for h in HEADS:
        assert dec.params[h + ".out.v"].shape == (WIDTHS[h], 64)
    assert len(DecoderMLP.layer_names()) == TRUNK_DEPTH + 2 * len(HEADS)


def test_fresh_prior_decodes_to_template():
    pr = init_prior(50, 4, d_z=6, hidden=10, seed=1)
    for j in range(4):
        out = decode_avatar(pr, j)
        for f in FIELDS:
            np.testing.assert_array_equal(getattr(out, f), getattr(pr.template, f))


def test_decode_single_gaussian_zero_heads():
    pr = init_prior(3, 1, d_z=4, hidden=8)
    np.testing.assert_array_equal(decode(pr.features[0], pr.codes[0], pr.decoder), np.zeros(14))


@pytest.mark.parametrize("seed", range(3))
def test_vectorized_decoder_matches_loop_oracle(seed):
    dec = busy_decoder(seed=seed)
    rng = np.random.default_rng(100 + seed)
    feats = rng.normal(size=(4, FEATURE_DIM))
    code = rng.normal(size=5)
    out, _ = dec.forward(feats, code)
    for i in range(4):
        np.testing.assert_allclose(out[i], loop_decode(dec, feats[i], code), rtol=1e-12, atol=1e-12)


def test_per_row_codes_match_shared_code():
    dec = busy_decoder()
    rng = np.random.default_rng(3)
    feats, code = rng.normal(size=(6, FEATURE_DIM)), rng.normal(size=5)
    a, _ = dec.forward(feats, code)
    b, _ = dec.forward(feats, np.tile(code, (6, 1)))
    np.testing.assert_allclose(a, b, rtol=1e-14, atol=1e-14)


@given(st.floats(0.01, 100.0), st.integers(0, 1000))
def test_direction_scale_does_not_change_output(c, seed):
    dec = busy_decoder(seed=seed % 7)
    rng = np.random.default_rng(seed)
    feats, code = rng.normal(size=(5, FEATURE_DIM)), rng.normal(size=5)
    ref, _ = dec.forward(feats, code)
    scaled = dec.copy()
    for k in scaled.params:
        if k.endswith(".v"):
            scaled.params[k] *= c
    out, _ = scaled.forward(feats, code)
    np.testing.assert_allclose(out, ref, rtol=1e-10, atol=1e-12)


def test_decoder_gradients_match_finite_differences():
    dec = busy_decoder(d_z=3, hidden=5, seed=4)
    rng = np.random.default_rng(9)
    feats, code = rng.normal(size=(3, FEATURE_DIM)), rng.normal(size=3)
    up = rng.normal(size=(3, OUT_DIM))

    def loss():
        return float(np.sum(dec.forward(feats, code)[0] * up))

    _, cache = dec.forward(feats, code)
    grads, d_feat, d_code = dec.backward(cache, up)
    for k, arr in dec.params.items():
        num = central_diff(loss, arr, 1e-6)
        scale = max(np.abs(num).max(), 1e-8)
        assert np.abs(grads[k] - num).max() / scale <= 1e-4, k
    np.testing.assert_allclose(d_feat, central_diff(loss, feats, 1e-6), atol=1e-6)
    np.testing.assert_allclose(d_code, central_diff(loss, code, 1e-6), atol=1e-6)


def test_decode_backward_through_rotation_renormalization():
    pr = init_prior(6, 2, d_z=3, hidden=5, seed=2)
    pr.decoder = busy_decoder(d_z=3, hidden=5, seed=5)
    rng = np.random.default_rng(1)
    pr.template.rot[:] = quat.normalize(rng.normal(size=(6, 4)))
    ups = LocalGaussianSet(*(rng.normal(size=getattr(pr.template, f).shape) for f in FIELDS))
    code = rng.normal(size=3)

    def loss():
        av, _ = decode_with_code(pr, code)
        return sum(float(np.sum(getattr(av, f) * getattr(ups, f))) for f in FIELDS)

    _, state = decode_with_code(pr, code)
    d_template, grads, d_feat, d_code = decode_backward(state, ups)
    for f in FIELDS:
        np.testing.assert_allclose(getattr(d_template, f), central_diff(loss, getattr(pr.template, f), 1e-6),
                                   atol=2e-6)
    np.testing.assert_allclose(d_code, central_diff(loss, code, 1e-6), atol=2e-6)
    np.testing.assert_allclose(d_feat, central_diff(loss, pr.features, 1e-6), atol=2e-6)


def test_backward_requires_forward_state():
    dec = busy_decoder()
    with pytest.raises(ValueError):
        dec.backward(None, np.zeros((1, OUT_DIM)))
    with pytest.raises(ValueError):
        decode_backward(None, LocalGaussianSet.zeros(1))


def test_initialization_statistics():
    pr = init_prior(20_000, 2_000, d_z=32, hidden=64, seed=0)
    assert abs(pr.features.std() - 0.01) < 3e-4
    assert abs(pr.codes.std() - 0.01) < 3e-4
    v = pr.decoder.params["trunk1.v"]
    assert abs(v.std() - np.sqrt(2 / 64)) < 0.01
    for h in HEADS:
        assert np.all(pr.decoder.params[h + ".out.g"] == 0)


def test_initialization_is_seeded():
    a, b = init_prior(30, 3, seed=7), init_prior(30, 3, seed=7)
    np.testing.assert_array_equal(a.features, b.features)
    np.testing.assert_array_equal(a.codes, b.codes)
    for k in a.decoder.params:
        np.testing.assert_array_equal(a.decoder.params[k], b.decoder.params[k])
    c = init_prior(30, 3, seed=8)
    assert not np.array_equal(a.codes, c.codes)


def test_invalid_arguments():
    pr = init_prior(4, 2, d_z=3, hidden=4)
    with pytest.raises(IndexError):
        decode_avatar(pr, 2)
    with pytest.raises(ValueError):
        decode(np.zeros(5), pr.codes[0], pr.decoder)
    with pytest.raises(ValueError):
        pr.decoder.forward(pr.features, np.zeros(4))
    with pytest.raises(ValueError):
        init_prior(0, 1)


def test_feature_view_is_read_only():
    pr = init_prior(4, 1, d_z=2, hidden=3)
    view = feature_matrix(pr)
    assert view.shape == (4, FEATURE_DIM)
    with pytest.raises(ValueError):
        view[0, 0] = 1.0
