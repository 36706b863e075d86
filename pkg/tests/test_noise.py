import math

import numpy as np

from ksdk import noise
from ksdk import spectral as sp


def test_increment_conjugate_symmetry_is_bitexact():
    dw = noise.sample_increment(seed=1, trajectory=3, step=7, M=6, dt=1e-3)
    assert dw.shape == (2, 13, 13)
    flipped = np.conj(dw[..., ::-1, ::-1])
    assert np.array_equal(dw, flipped)


def test_zero_mode_is_exactly_real():
    M = 5
    for step in range(20):
        dw = noise.sample_increment(0, 0, step, M, 2e-3)
        assert dw[0, M, M].imag == 0.0
        assert dw[1, M, M].imag == 0.0


def test_reproducibility_and_stream_separation():
    a = noise.sample_increment(42, 5, 11, 4, 1e-3)
    b = noise.sample_increment(42, 5, 11, 4, 1e-3)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, noise.sample_increment(42, 5, 12, 4, 1e-3))
    assert not np.array_equal(a, noise.sample_increment(42, 6, 11, 4, 1e-3))
    assert not np.array_equal(a, noise.sample_increment(43, 5, 11, 4, 1e-3))


def test_increment_moments():
    M, dt, n = 3, 4e-3, 6000
    draws = np.stack(
        [noise.sample_increment(9, t, 0, M, dt) for t in range(n)]
    )  # (n, 2, L, L)
    # off-center mode: Re and Im each of variance dt/2, uncorrelated
    re = draws[:, 0, M + 1, M].real
    im = draws[:, 0, M + 1, M].imag
    se = dt / 2 * math.sqrt(2.0 / n)
    assert abs(np.var(re) - dt / 2) < 4 * se
    assert abs(np.var(im) - dt / 2) < 4 * se
    assert abs(np.mean(re * im)) < 4 * (dt / 2) / math.sqrt(n)
    # center mode: real variance dt
    z = draws[:, 1, M, M].real
    assert abs(np.var(z) - dt) < 4 * dt * math.sqrt(2.0 / n)
    # independence across components and across unrelated modes
    other = draws[:, 1, M + 1, M].real
    assert abs(np.mean(re * other)) < 4 * (dt / 2) / math.sqrt(n)
    far = draws[:, 0, M - 2, M + 1].real
    assert abs(np.mean(re * far)) < 4 * (dt / 2) / math.sqrt(n)


def test_cutoff_profile_frozen_values():
    assert noise.cutoff_profile(np.array(0.0)) == 1.0
    # even, compactly supported, value at 1/2 is exp(-1/3)
    assert abs(noise.cutoff_profile(np.array(0.5)) - math.exp(-1.0 / 3.0)) < 1e-15
    assert noise.cutoff_profile(np.array(-0.5)) == noise.cutoff_profile(np.array(0.5))
    for r in (1.0, 1.5, 37.0):
        assert noise.cutoff_profile(np.array(r)) == 0.0


def test_cutoff_symbol_support_and_center():
    M, delta = 8, 0.3  # modes with |w| >= 1/0.3 = 3.33 are cut
    sym = noise.cutoff_symbol(M, delta)
    assert sym[M, M] == 1.0
    W1, W2 = sp.mode_vectors(M)
    r = np.sqrt(W1**2 + W2**2)
    assert np.all(sym[r >= 1.0 / delta] == 0.0)
    assert np.all(sym[r < 1.0 / delta] > 0.0)
    # delta = 0 disables the cutoff
    assert np.all(noise.cutoff_symbol(M, 0.0) == 1.0)


def test_noise_divergence_matches_direct_symbol_at_unit_amplitude():
    # with sigma identically one the grid round trip is the identity, so the
    # result must equal the dealiased divergence symbol applied directly
    M, dt, delta = 6, 1e-3, 0.2
    n = sp.grid_size(M)
    dw = noise.sample_increment(3, 0, 0, M, dt)
    fld = noise.mollified_noise_field(dw, M, delta, dt)
    got = noise.noise_divergence(fld, np.ones((n, n)), M)
    W1, W2 = sp.mode_vectors(M)
    direct = sp.TWO_PI * 1j * (W1 * fld[0] + W2 * fld[1]) * sp.dealias_mask(M)
    assert np.max(np.abs(got - direct)) < 1e-12 * np.max(np.abs(direct))
    assert got[M, M] == 0.0


def test_convolution_step_single_step_weight():
    M, dt = 4, 1e-3
    n = sp.grid_size(M)
    dw = noise.sample_increment(8, 1, 0, M, dt)
    fld = noise.mollified_noise_field(dw, M, 0.1, dt)
    zero = np.zeros((2 * M + 1, 2 * M + 1), dtype=np.complex128)
    out = noise.convolution_step(zero, M, dt, np.ones((n, n)), fld)
    expected = sp.etd_weight(M, dt) * noise.noise_divergence(fld, np.ones((n, n)), M)
    assert np.array_equal(out, expected)


def test_ito_isometry_per_mode_variance():
    # Monte Carlo check of E|ti(t, w)|^2 against the closed form
    #   cutoff(delta |w|)^2 (1 - exp(-2 t |2 pi w|^2)) / 2
    # written out independently below.
    M, dt, delta, T, B = 4, 1e-3, 0.3, 0.05, 800
    L = 2 * M + 1
    n = sp.grid_size(M)
    steps = round(T / dt)
    sigma = np.ones((n, n))
    state = np.zeros((B, L, L), dtype=np.complex128)
    trajs = np.arange(B)
    for s in range(steps):
        dw = noise.sample_increment_batch(1234, trajs, s, M, dt)
        fld = noise.mollified_noise_field(dw, M, delta, dt)
        state = noise.convolution_step(state, M, dt, sigma, fld)

    def oracle(w1, w2):
        r = delta * math.hypot(w1, w2)
        phi = math.exp(1.0 - 1.0 / (1.0 - r * r)) if r < 1.0 else 0.0
        lam = (2 * math.pi) ** 2 * (w1 * w1 + w2 * w2)
        return phi * phi * (1.0 - math.exp(-2.0 * T * lam)) / 2.0

    for w in [(1, 0), (0, 1), (1, 1), (2, 0), (2, 1)]:
        sample = np.abs(state[:, M + w[0], M + w[1]]) ** 2
        est = float(np.mean(sample))
        se = float(np.std(sample)) / math.sqrt(B)
        v = oracle(*w)
        assert abs(est - v) < 4 * se, (w, est, v, se)
    # the convolution is mean-free: zero mode never charged
    assert np.max(np.abs(state[:, M, M])) == 0.0
