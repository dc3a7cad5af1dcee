import math

import numpy as np
import pytest

from tt3d.autodiff import Tape, grad_check, softplus
from tt3d.errors import StructuralError
from tt3d.fields import (EnvMapParams, NerfHeadParams, density_bias, envmap_eval,
                         nerf_eval, posenc, radiance_nodes)

FEAT = 6


def zero_head(feature_dim=FEAT, hidden=32):
    return NerfHeadParams(w1=np.zeros((feature_dim, hidden)), b1=np.zeros(hidden),
                          w2=np.zeros((hidden, 4)), b2=np.zeros(4))


def test_density_bias_values():
    assert density_bias(np.zeros(3)) == pytest.approx(10.0, abs=1e-12)
    assert density_bias(np.array([0.5, 0.0, 0.0])) == pytest.approx(0.0, abs=1e-12)
    assert density_bias(np.array([0.0, 0.0, 2.0])) == pytest.approx(-30.0, abs=1e-12)


def test_nerf_eval_zero_params_origin():
    out = nerf_eval(np.zeros(FEAT), np.zeros(3), zero_head())
    # oracle: log1p(exp(10)) evaluated directly
    assert out.sigma == pytest.approx(math.log1p(math.exp(10.0)), rel=1e-12)
    assert out.sigma == pytest.approx(10.000045398899218, abs=1e-9)
    np.testing.assert_allclose(out.rgb, 0.5, atol=1e-12)


def test_nerf_eval_zero_params_half_radius():
    out = nerf_eval(np.zeros(FEAT), np.array([0.5, 0.0, 0.0]), zero_head())
    assert out.sigma == pytest.approx(math.log(2.0), abs=1e-12)


def test_nerf_eval_activation_ranges():
    rng = np.random.default_rng(0)
    head = NerfHeadParams(w1=rng.standard_normal((FEAT, 32)), b1=rng.standard_normal(32),
                          w2=rng.standard_normal((32, 4)), b2=rng.standard_normal(4))
    for _ in range(20):
        out = nerf_eval(rng.standard_normal(FEAT), rng.uniform(-2, 2, 3), head)
        assert out.sigma >= 0
        assert (out.rgb > 0).all() and (out.rgb < 1).all()


def test_nerf_eval_shape_mismatch():
    with pytest.raises(StructuralError):
        nerf_eval(np.zeros(FEAT + 1), np.zeros(3), zero_head())


def test_initial_density_decreases_with_radius():
    head = zero_head()
    radii = np.linspace(0.0, 1.9, 12)
    sig = [nerf_eval(np.zeros(FEAT), np.array([r, 0.0, 0.0]), head).sigma for r in radii]
    assert all(a > b for a, b in zip(sig, sig[1:]))


def test_posenc_zero_direction():
    enc = posenc(np.zeros(3))
    assert enc.shape == (48,)
    ang = np.zeros(3)[None, :] * (2.0 ** np.arange(8))[:, None]
    np.testing.assert_array_equal(enc.reshape(8, 6)[:, :3], np.sin(ang))
    np.testing.assert_array_equal(enc.reshape(8, 6)[:, 3:], np.cos(ang))


def test_posenc_first_frequency_sine():
    enc = posenc(np.array([math.pi / 2, 0.0, 0.0]))
    assert enc.reshape(8, 6)[0, 0] == pytest.approx(1.0, abs=1e-12)


def test_posenc_components_bounded():
    rng = np.random.default_rng(1)
    d = rng.standard_normal((50, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    enc = posenc(d)
    assert enc.shape == (50, 48)
    assert (np.abs(enc) <= 1.0).all()


def _env_params(rng=None, v_dim=4):
    n_in = 48 + v_dim
    if rng is None:
        w = np.zeros((n_in, 3))
    else:
        w = rng.standard_normal((n_in, 3))
    return EnvMapParams(w=w, b=np.zeros(3), u=np.array([1.0, 0.0, 0.0]))


def test_envmap_zero_weights_is_mid_gray():
    out = envmap_eval(np.array([0.0, 0.0, 1.0]), np.zeros(4), _env_params())
    np.testing.assert_allclose(out, 0.5, atol=1e-12)


def test_envmap_output_in_unit_cube():
    rng = np.random.default_rng(2)
    params = _env_params(rng)
    d = rng.standard_normal((20, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    out = envmap_eval(d, rng.standard_normal(4), params)
    assert (out > 0).all() and (out < 1).all()


def test_envmap_responds_to_modulation():
    rng = np.random.default_rng(3)
    params = _env_params(rng)
    d = np.array([0.0, 0.0, 1.0])
    a = envmap_eval(d, rng.standard_normal(4), params)
    b = envmap_eval(d, rng.standard_normal(4), params)
    assert np.abs(a - b).max() > 1e-6


def test_envmap_dimension_mismatch():
    with pytest.raises(StructuralError):
        envmap_eval(np.array([0.0, 0.0, 1.0]), np.zeros(5), _env_params(v_dim=4))


def test_radiance_gradients_match_fd():
    rng = np.random.default_rng(4)
    feats = rng.standard_normal((2, FEAT))
    w1 = rng.standard_normal((FEAT, 8)) * 0.5
    b1 = rng.standard_normal(8) * 0.1
    w2 = rng.standard_normal((8, 4)) * 0.5
    b2 = rng.standard_normal(4) * 0.1
    bias = np.array([0.7, -0.3])
    coeff_s = np.array([1.3, -0.4])
    coeff_c = rng.standard_normal((2, 3))

    def f(tape, fn, w1n, b1n, w2n, b2n):
        head = {"head.w1": w1n, "head.b1": b1n, "head.w2": w2n, "head.b2": b2n}
        sigma, rgb = radiance_nodes(tape, fn, tape.constant(bias), head)
        return tape.add(tape.sum(tape.mul(sigma, tape.constant(coeff_s))),
                        tape.sum(tape.mul(rgb, tape.constant(coeff_c))))

    report = grad_check(f, [feats, w1, b1, w2, b2], step=1e-6)
    assert report.ok(1e-6), report
