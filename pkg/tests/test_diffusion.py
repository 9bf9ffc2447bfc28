import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from seine.diffusion import (
    build_schedule,
    default_schedule,
    ddim_invert_step,
    ddim_step,
    ddim_timesteps,
    ddpm_step,
    forward_corrupt,
    training_loss,
)


def test_two_step_schedule_matches_direct_product():
    s = build_schedule(2, 0.1, 0.2)
    np.testing.assert_allclose(s.beta, [0.1, 0.2])
    # 0.9 and 0.9 * 0.8
    np.testing.assert_allclose(s.alphabar, [0.9, 0.72], rtol=0, atol=1e-15)


def test_constant_ramp():
    s = build_schedule(7, 0.05, 0.05)
    assert np.all(s.beta == 0.05)


@pytest.mark.parametrize("T,lo,hi", [(0, 1e-4, 0.02), (10, 0.0, 0.02), (10, 0.03, 0.02), (10, 1e-4, 1.0)])
def test_schedule_rejects_bad_arguments(T, lo, hi):
    with pytest.raises(ValueError):
        build_schedule(T, lo, hi)


@given(
    T=st.integers(1, 400),
    lo=st.floats(1e-5, 0.5),
    span=st.floats(0.0, 0.49),
)
def test_schedule_invariants(T, lo, span):
    hi = min(lo + span, 0.99)
    s = build_schedule(T, lo, hi)
    assert np.all((s.beta > 0) & (s.beta < 1))
    assert np.array_equal(s.alpha, 1.0 - s.beta)
    prev = np.concatenate([[1.0], s.alphabar[:-1]])
    np.testing.assert_allclose(s.alphabar, prev * s.alpha, rtol=1e-12)
    assert np.all(np.diff(s.alphabar) < 0)
    assert np.all((s.alphabar > 0) & (s.alphabar <= 1))
    assert s.abar(0) == 1.0
    if T > 1:
        assert s.alphabar[-1] < s.alphabar[0]


def test_forward_corrupt_boundaries(sched, rng):
    z0 = rng.standard_normal((4, 3, 5, 5))
    eps = rng.standard_normal(z0.shape)
    assert np.array_equal(forward_corrupt(z0, 0, eps, sched), z0)
    t = 37
    np.testing.assert_array_equal(
        forward_corrupt(np.zeros_like(z0), t, eps, sched), np.sqrt(1 - sched.abar(t)) * eps
    )
    with pytest.raises(ValueError):
        forward_corrupt(z0, 3, eps[:2], sched)


def test_forward_corrupt_batched_matches_scalar(sched, rng):
    z0 = rng.standard_normal((3, 2, 1, 4, 4))
    eps = rng.standard_normal(z0.shape)
    ts = np.array([1, 100, 200])
    batched = forward_corrupt(z0, ts, eps, sched)
    for i, t in enumerate(ts):
        np.testing.assert_allclose(batched[i], forward_corrupt(z0[i], int(t), eps[i], sched), rtol=1e-15)


def test_forward_corrupt_works_on_torch(sched):
    z0 = torch.randn(2, 3, 4, 4)
    eps = torch.randn(2, 3, 4, 4)
    out = forward_corrupt(z0, 50, eps, sched)
    ref = forward_corrupt(z0.numpy(), 50, eps.numpy(), sched)
    np.testing.assert_allclose(out.numpy(), ref, rtol=1e-6)


@given(a=st.floats(-10, 10), t=st.integers(0, 200), seed=st.integers(0, 2**16))
@settings(max_examples=50)
def test_forward_corrupt_is_linear(a, t, seed):
    sched = default_schedule()
    r = np.random.default_rng(seed)
    z0, eps = r.standard_normal((2, 3, 4, 4)), r.standard_normal((2, 3, 4, 4))
    np.testing.assert_allclose(
        forward_corrupt(a * z0, t, a * eps, sched), a * forward_corrupt(z0, t, eps, sched), rtol=1e-12, atol=1e-12
    )


def corrupt_moments(sched, t, draws=10_000, seed=0):
    r = np.random.default_rng(seed)
    z0 = r.uniform(0.2, 1.0, size=(2, 3, 4, 4))
    eps = r.standard_normal((draws,) + z0.shape)
    samples = forward_corrupt(np.broadcast_to(z0, eps.shape), t, eps, sched)
    return z0, samples


@pytest.mark.parametrize("t", [50, 100, 200])
def test_forward_moments_monte_carlo(sched, t):
    z0, samples = corrupt_moments(sched, t)
    ab = sched.abar(t)
    # grid-pooled moments within 2% relative
    assert abs(samples.mean() - np.sqrt(ab) * z0.mean()) / (np.sqrt(ab) * z0.mean()) < 0.02
    var = samples.var(axis=0, ddof=1).mean()
    assert abs(var - (1 - ab)) / (1 - ab) < 0.02
    # per element: sample mean within 5 standard errors
    se = np.sqrt((1 - ab) / samples.shape[0])
    assert np.abs(samples.mean(axis=0) - np.sqrt(ab) * z0).max() < 5 * se


def test_training_loss_examples(rng):
    eps = rng.standard_normal((16, 3, 8, 8))
    assert training_loss(eps, eps) == 0.0
    np.testing.assert_allclose(training_loss(eps, -eps), 4 * np.mean(eps**2), rtol=1e-12)
    with pytest.raises(ValueError):
        training_loss(eps, eps[:2])


def test_training_loss_of_zero_predictor_is_unit_variance():
    r = np.random.default_rng(0)
    losses = [training_loss(e, np.zeros_like(e)) for e in r.standard_normal((10_000, 1, 1, 2, 2))]
    assert abs(np.mean(losses) - 1.0) < 0.05


@pytest.mark.parametrize("t", [1, 2, 17, 100, 199, 200])
def test_ddim_recovers_z0_with_exact_noise(sched, rng, t):
    z0 = rng.uniform(-1, 1, size=(4, 3, 6, 6))
    eps = rng.standard_normal(z0.shape)
    zt = forward_corrupt(z0, t, eps, sched)
    out = ddim_step(zt, eps, t, 0, sched, eta=0.0)
    assert np.linalg.norm(out - z0) / np.linalg.norm(z0) <= 1e-5


def test_ddim_is_deterministic_and_validates(sched, rng):
    z = rng.standard_normal((2, 3, 4, 4))
    e = rng.standard_normal(z.shape)
    a = ddim_step(z, e, 120, 80, sched)
    b = ddim_step(z, e, 120, 80, sched)
    assert np.array_equal(a, b)
    with pytest.raises(ValueError):
        ddim_step(z, e, 80, 80, sched)
    with pytest.raises(ValueError):
        ddim_step(z, e, 80, 90, sched)
    with pytest.raises(ValueError):
        ddim_step(z, e, 80, 40, sched, eta=1.0)  # stochastic step needs noise


def test_ddim_with_eta_uses_noise(sched, rng):
    z = rng.standard_normal((2, 3, 4, 4))
    e = rng.standard_normal(z.shape)
    n1, n2 = rng.standard_normal(z.shape), rng.standard_normal(z.shape)
    assert not np.allclose(ddim_step(z, e, 100, 50, sched, 1.0, n1), ddim_step(z, e, 100, 50, sched, 1.0, n2))


def test_ddim_inversion_is_exact_with_exact_noise(sched, rng):
    z0 = rng.uniform(-1, 1, size=(1, 3, 4, 4))
    eps = rng.standard_normal(z0.shape)
    z = ddim_invert_step(z0, eps, 0, 150, sched)
    np.testing.assert_allclose(z, forward_corrupt(z0, 150, eps, sched), rtol=1e-12)
    back = ddim_step(z, eps, 150, 0, sched)
    np.testing.assert_allclose(back, z0, rtol=1e-10, atol=1e-12)


def test_ddpm_single_step_round_trip(rng):
    s = build_schedule(1, 0.02, 0.02)
    z0 = rng.uniform(-1, 1, size=(3, 3, 4, 4))
    eps = rng.standard_normal(z0.shape)
    z1 = forward_corrupt(z0, 1, eps, s)
    out = ddpm_step(z1, eps, 1, s, np.zeros_like(z0))
    assert np.linalg.norm(out - z0) / np.linalg.norm(z0) <= 1e-5


def test_ddpm_zero_noise_is_posterior_mean(sched, rng):
    z = rng.standard_normal((2, 3, 4, 4))
    e = rng.standard_normal(z.shape)
    t = 60
    mean = (z - sched.beta[t - 1] / np.sqrt(1 - sched.abar(t)) * e) / np.sqrt(sched.alpha[t - 1])
    np.testing.assert_allclose(ddpm_step(z, e, t, sched, np.zeros_like(z)), mean, rtol=1e-14)
    zero = np.zeros_like(z)
    assert np.array_equal(ddpm_step(zero, zero, t, sched, zero), zero)


def test_ddpm_noise_scale(sched, rng):
    z = rng.standard_normal((2, 3, 4, 4))
    e = rng.standard_normal(z.shape)
    noise = rng.standard_normal(z.shape)
    t = 90
    bt = (1 - sched.abar(t - 1)) / (1 - sched.abar(t)) * sched.beta[t - 1]
    diff = ddpm_step(z, e, t, sched, noise) - ddpm_step(z, e, t, sched, np.zeros_like(z))
    np.testing.assert_allclose(diff, np.sqrt(bt) * noise, rtol=1e-10)


def test_ddpm_validation(sched, rng):
    z = rng.standard_normal((2, 3, 4, 4))
    with pytest.raises(ValueError):
        ddpm_step(z, z, 0, sched, np.zeros_like(z))
    with pytest.raises(ValueError):
        ddpm_step(z, z, 201, sched, np.zeros_like(z))
    with pytest.raises(ValueError):
        ddpm_step(z, z, 1, sched, np.ones_like(z))


def test_ddim_timesteps_grid(sched):
    ts = ddim_timesteps(sched, 50)
    assert len(ts) == 50 and ts[0] == 1 and ts[-1] == 200
    assert all(b > a for a, b in zip(ts, ts[1:]))
    assert ddim_timesteps(sched, 1000) == list(range(1, 201))


def test_full_ddim_chain_is_deterministic(sched, rng):
    def denoiser(z, t):
        return np.tanh(z) * (t / 200)

    def chain(z):
        ts = ddim_timesteps(sched, 20)
        for t, tp in zip(ts[::-1], ts[::-1][1:] + [0]):
            z = ddim_step(z, denoiser(z, t), t, tp, sched)
        return z

    z_T = rng.standard_normal((4, 3, 4, 4))
    assert np.array_equal(chain(z_T), chain(z_T))


def test_terminal_rescale():
    plain = build_schedule(200, 5e-4, 0.05)
    s = build_schedule(200, 5e-4, 0.05, terminal_abar=1e-6)
    assert s.abar(1) == pytest.approx(plain.abar(1), rel=1e-12)
    assert s.abar(200) == pytest.approx(1e-6, rel=1e-9)
    # sqrt(abar) is an affine image of the plain curve
    a, b = np.sqrt(plain.alphabar), np.sqrt(s.alphabar)
    slope = (b[0] - b[-1]) / (a[0] - a[-1])
    np.testing.assert_allclose(b, b[-1] + slope * (a - a[-1]), rtol=1e-9)
    assert np.all((s.beta > 0) & (s.beta < 1)) and np.all(np.diff(s.alphabar) < 0)
    np.testing.assert_allclose(s.alphabar, np.cumprod(s.alpha), rtol=1e-12)
    with pytest.raises(ValueError):
        build_schedule(200, 5e-4, 0.05, terminal_abar=0.9999)
    with pytest.raises(ValueError):
        build_schedule(1, 0.02, 0.02, terminal_abar=1e-6)


def test_default_schedule_values():
    s = default_schedule()
    assert s.T == 200 and s.abar(200) == pytest.approx(1e-6)
