import math

import numpy as np
import pytest

from tt3d.errors import ConfigError, ContractError, InputError, StructuralError
from tt3d.guidance import (AnalyticTeacher, Conditioning, NoiseSchedule, TeacherContext,
                           add_noise, alpha_bar, analytic_eps, cfg_combine,
                           guidance_interp, sds_pixel_gradient)
from tt3d.rendering import CameraSample


def _cam(az=0.4):
    return CameraSample(distance=2.5, azimuth=az, elevation=0.3, focal=1.0,
                        light_pos=np.array([0.0, 0.0, 3.0]))


# -- schedule -----------------------------------------------------------------


def test_alpha_bar_limits():
    assert alpha_bar(1e-9) == pytest.approx(1.0, abs=1e-12)
    assert alpha_bar(1.0) <= 1e-30
    assert alpha_bar(0.5) == pytest.approx(0.5, abs=1e-12)


def test_alpha_bar_strictly_decreasing_in_range():
    ts = np.linspace(0.002, 1.0, 200)
    vals = alpha_bar(ts)
    assert (np.diff(vals) < 0).all()
    assert (vals[:-1] > 0).all() and (vals[:-1] < 1).all()


def test_alpha_bar_domain():
    with pytest.raises(InputError):
        alpha_bar(0.0)
    with pytest.raises(InputError):
        alpha_bar(1.5)


def test_schedule_config_validation():
    with pytest.raises(ConfigError):
        NoiseSchedule(t_min=0.0)
    with pytest.raises(ConfigError):
        NoiseSchedule(weight_mode="cubed")
    sched = NoiseSchedule(weight_mode="snr_balanced")
    ab = alpha_bar(0.3)
    assert sched.weight(0.3) == pytest.approx(math.sqrt((1 - ab) / ab), rel=1e-12)
    assert NoiseSchedule().weight(0.3) == 1.0


# -- noising --------------------------------------------------------------------


def test_add_noise_near_zero_t_is_identity():
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 1, size=(4, 4, 3))
    eps = rng.standard_normal(x.shape)
    np.testing.assert_allclose(add_noise(x, eps, 1e-7), x, atol=1e-5)


def test_add_noise_at_t_one_is_noise():
    rng = np.random.default_rng(1)
    x = rng.uniform(0, 1, size=(4, 4, 3))
    eps = rng.standard_normal(x.shape)
    np.testing.assert_allclose(add_noise(x, eps, 1.0), eps, atol=1e-15)


def test_add_noise_monte_carlo_mean():
    rng = np.random.default_rng(2)
    x = np.full((2, 2, 3), 0.6)
    t = 0.4
    n = 10_000
    acc = np.zeros_like(x)
    for _ in range(n):
        acc += add_noise(x, rng.standard_normal(x.shape), t)
    mean = acc / n
    expect = math.sqrt(alpha_bar(t)) * x
    tol = 3.0 * math.sqrt(1.0 - alpha_bar(t)) / math.sqrt(n)
    assert np.abs(mean - expect).max() < tol


def test_add_noise_shape_mismatch():
    with pytest.raises(StructuralError):
        add_noise(np.zeros((2, 2)), np.zeros((3, 3)), 0.5)


# -- analytic denoiser -------------------------------------------------------------


def test_analytic_eps_cancellation_at_target():
    rng = np.random.default_rng(3)
    x = rng.uniform(0, 1, size=(3, 3, 3))
    eps = rng.standard_normal(x.shape)
    t = 0.37
    eps_hat = analytic_eps(add_noise(x, eps, t), t, x)
    np.testing.assert_allclose(eps_hat - eps, 0.0, atol=1e-12)


def test_analytic_eps_unit_offset():
    # alpha_bar = 0.5 at t = 0.5: residual scale sqrt(0.5/0.5) = 1
    rng = np.random.default_rng(4)
    target = rng.uniform(0, 1, size=(2, 2, 3))
    x = target + 1.0
    eps = rng.standard_normal(x.shape)
    eps_hat = analytic_eps(add_noise(x, eps, 0.5), 0.5, target)
    np.testing.assert_allclose(eps_hat - eps, 1.0, atol=1e-12)


def test_analytic_eps_invariant_to_drawn_noise():
    rng = np.random.default_rng(5)
    x = rng.uniform(0, 1, size=(4, 4, 3))
    target = rng.uniform(0, 1, size=x.shape)
    for t in (0.01, 0.31, 0.97):
        e1 = rng.standard_normal(x.shape)
        e2 = rng.standard_normal(x.shape)
        r1 = analytic_eps(add_noise(x, e1, t), t, target) - e1
        r2 = analytic_eps(add_noise(x, e2, t), t, target) - e2
        np.testing.assert_allclose(r1, r2, atol=1e-12)


def test_analytic_eps_closed_form():
    rng = np.random.default_rng(6)
    x = rng.uniform(0, 1, size=(4, 4, 3))
    target = rng.uniform(0, 1, size=x.shape)
    for t in (0.002, 0.2, 0.5, 0.9, 1.0 - 1e-9):
        eps = rng.standard_normal(x.shape)
        got = analytic_eps(add_noise(x, eps, t), t, target) - eps
        ab = alpha_bar(t)
        expect = math.sqrt(ab / (1.0 - ab)) * (x - target)
        np.testing.assert_allclose(got, expect, atol=1e-12 * max(1.0, math.sqrt(ab / (1 - ab))))


# -- guidance ---------------------------------------------------------------------------


def test_cfg_combine_endpoints():
    rng = np.random.default_rng(7)
    u = rng.standard_normal((2, 2, 3))
    c = rng.standard_normal((2, 2, 3))
    np.testing.assert_array_equal(cfg_combine(u, c, 1.0), c)
    np.testing.assert_array_equal(cfg_combine(u, c, 0.0), u)
    np.testing.assert_allclose(cfg_combine(u, u, 100.0), u, atol=1e-12)


def test_guidance_interp_endpoint_formulas_exact():
    rng = np.random.default_rng(8)
    u = rng.standard_normal((3, 3))
    e1 = rng.standard_normal((3, 3))
    e2 = rng.standard_normal((3, 3))
    np.testing.assert_array_equal(guidance_interp(u, e1, e2, 7.0, 3.0, 0.0), u + 7.0 * e1)
    np.testing.assert_array_equal(guidance_interp(u, e1, e2, 7.0, 3.0, 1.0), u + 3.0 * e2)
    np.testing.assert_array_equal(guidance_interp(u, e1, e2, 0.0, 0.0, 0.4), u)
    with pytest.raises(InputError):
        guidance_interp(u, e1, e2, 1.0, 1.0, 1.2)


def test_guidance_interp_endpoints_match_single_prompt_cfg_bitwise():
    rng = np.random.default_rng(9)
    u = rng.standard_normal((4, 4, 3))
    c1 = rng.standard_normal(u.shape)
    omega = 5.0
    e1 = c1 - u  # conditional-minus-unconditional residual
    via_interp = guidance_interp(u, e1, rng.standard_normal(u.shape) - u, omega, omega, 0.0)
    via_cfg = cfg_combine(u, c1, omega)
    assert (via_interp == via_cfg).all()


# -- analytic teacher ------------------------------------------------------------------


def test_teacher_deterministic_and_bounded(corpus16, teacher16):
    cam = _cam()
    p = corpus16.prompts[0]
    a = teacher16.target_image(p, cam, (16, 16))
    b = teacher16.target_image(p, cam, (16, 16))
    assert (a == b).all()
    assert a.min() >= 0.0 and a.max() <= 1.0


def test_teacher_targets_differ_between_prompts_and_views(corpus16, teacher16):
    cam = _cam()
    t1 = teacher16.target_image(corpus16.prompts[0], cam, (16, 16))
    t2 = teacher16.target_image(corpus16.prompts[5], cam, (16, 16))
    assert np.abs(t1 - t2).max() > 0.05
    t3 = teacher16.target_image(corpus16.prompts[0], _cam(az=0.4 + math.pi), (16, 16))
    assert np.abs(t1 - t3).max() > 0.01  # scenes are azimuth-asymmetric


def test_teacher_unconditional_is_corpus_mean(corpus16, teacher16):
    cam = _cam()
    mean = np.mean([teacher16.target_image(p, cam, (8, 8)) for p in corpus16.prompts], axis=0)
    np.testing.assert_allclose(teacher16.unconditional_target(cam, (8, 8)), mean, atol=1e-12)


def test_teacher_prompts_share_fragment_parts(corpus16, teacher16):
    # same slot value -> identical body color region from the same view
    cam = _cam()
    combos = [corpus16.combo(p) for p in corpus16.prompts]
    p0 = corpus16.prompts[0]
    partner = next(p for p, c in zip(corpus16.prompts, combos)
                   if c[0] == combos[0][0] and p != p0)
    t0 = teacher16.target_image(p0, cam, (24, 24))
    t1 = teacher16.target_image(partner, cam, (24, 24))
    # body occupies the lower center; those pixels agree exactly
    assert (t0[16:, 8:16] == t1[16:, 8:16]).mean() > 0.6


def test_teacher_rejects_unknown_prompt(teacher16):
    with pytest.raises(ContractError):
        teacher16.target_image("a unicorn on a beach", _cam(), (8, 8))


# -- SDS seed -------------------------------------------------------------------------


def test_sds_zero_at_target(corpus16, teacher16):
    cam = _cam()
    p = corpus16.prompts[3]
    target = teacher16.target_image(p, cam, (12, 12))
    ctx = TeacherContext(t=0.4, cond=Conditioning("prompt", p), camera=cam, hw=(12, 12), omega=1.0)
    seed, _ = sds_pixel_gradient(target, ctx, np.random.default_rng(0), teacher16, NoiseSchedule(omega=1.0))
    np.testing.assert_allclose(seed, 0.0, atol=1e-12)


def test_sds_direction_is_scaled_residual(corpus16, teacher16):
    cam = _cam()
    p = corpus16.prompts[3]
    target = teacher16.target_image(p, cam, (12, 12))
    rendered = np.clip(target + 0.25, 0, 1)
    t = 0.45
    ctx = TeacherContext(t=t, cond=Conditioning("prompt", p), camera=cam, hw=(12, 12), omega=1.0)
    seed, _ = sds_pixel_gradient(rendered, ctx, np.random.default_rng(1), teacher16, NoiseSchedule(omega=1.0))
    ab = alpha_bar(t)
    expect = math.sqrt(ab / (1 - ab)) * (rendered - target)
    np.testing.assert_allclose(seed, expect, atol=1e-10)


def test_sds_guided_residual_linear_in_omega(corpus16, teacher16):
    cam = _cam()
    p = corpus16.prompts[2]
    rendered = np.full((10, 10, 3), 0.5)
    t = 0.5
    rng_seed = 7

    def guided(omega):
        ctx = TeacherContext(t=t, cond=Conditioning("prompt", p), camera=cam,
                             hw=(10, 10), omega=omega)
        seed, _ = sds_pixel_gradient(rendered, ctx, np.random.default_rng(rng_seed),
                                     teacher16, NoiseSchedule(omega=omega))
        return seed

    g1, g2, g0 = guided(2.0), guided(4.0), guided(0.0)
    # (guided(omega) - uncond) is linear in omega
    np.testing.assert_allclose(g2 - g0, 2.0 * (g1 - g0), atol=1e-9)


def test_sds_descent_on_direct_pixel_model(corpus16, teacher16):
    """One gradient step on raw pixels decreases distance to the target."""
    cam = _cam()
    p = corpus16.prompts[1]
    target = teacher16.target_image(p, cam, (8, 8))
    rng = np.random.default_rng(2)
    x = np.clip(target + 0.3 * rng.standard_normal(target.shape), 0, 1)
    ctx = TeacherContext(t=0.6, cond=Conditioning("prompt", p), camera=cam, hw=(8, 8), omega=1.0)
    seed, _ = sds_pixel_gradient(x, ctx, rng, teacher16, NoiseSchedule(omega=1.0))
    before = ((x - target) ** 2).sum()
    after = ((x - 1e-3 * seed - target) ** 2).sum()
    assert after < before


def test_sds_teacher_stays_outside_gradient(corpus16, teacher16):
    """The seed is data: gradients equal a hand-seeded constant injection."""
    from tt3d.autodiff import Tape
    cam = _cam()
    p = corpus16.prompts[0]
    rng = np.random.default_rng(3)
    x = rng.uniform(0, 1, size=(6, 6, 3))
    ctx = TeacherContext(t=0.3, cond=Conditioning("prompt", p), camera=cam, hw=(6, 6), omega=1.0)
    seed, _ = sds_pixel_gradient(x, ctx, np.random.default_rng(4), teacher16, NoiseSchedule(omega=1.0))

    def grad_with(seed_arr):
        tape = Tape()
        leaf = tape.leaf(x.copy())
        loss = tape.sum(tape.mul(leaf, tape.constant(seed_arr)))
        tape.backward(loss)
        return tape.grad(leaf)

    np.testing.assert_array_equal(grad_with(seed), seed)
    # perturbing the teacher's output changes only the constant, not the VJP structure
    np.testing.assert_array_equal(grad_with(seed + 1.0), seed + 1.0)


def test_sds_timestep_outside_schedule_rejected(corpus16, teacher16):
    cam = _cam()
    ctx = TeacherContext(t=0.0001, cond=Conditioning("prompt", corpus16.prompts[0]),
                         camera=cam, hw=(4, 4), omega=1.0)
    with pytest.raises(ContractError):
        sds_pixel_gradient(np.zeros((4, 4, 3)), ctx, np.random.default_rng(0),
                           teacher16, NoiseSchedule())


def test_latent_conditioning_blends_targets(corpus16, teacher16):
    cam = _cam()
    p1, p2 = corpus16.prompts[0], corpus16.prompts[9]
    t1 = teacher16.target_image(p1, cam, (8, 8))
    t2 = teacher16.target_image(p2, cam, (8, 8))
    blend = teacher16.conditional_target(Conditioning("latent", p1, p2, 0.25), cam, (8, 8))
    np.testing.assert_allclose(blend, 0.75 * t1 + 0.25 * t2, atol=1e-12)
