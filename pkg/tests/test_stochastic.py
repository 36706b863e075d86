import numpy as np
import pytest
from conftest import random_real_field

from ksdk.deterministic import (
    EvolutionParams,
    advection_raw,
    build_baseline,
    solve,
)
from ksdk.noise import convolution_field_step, sample_increment
from ksdk.spectral import FourierField, grid_size, lattice_size
from ksdk.stochastic import (
    EnhancementState,
    enhancement_from_control,
    enhancement_products,
    evolve_enhancement,
    linearized_drift,
    negative_part_l2,
    rate_functional,
    skeleton_solve,
    solve_ou,
    solve_spde,
)


def bumpy(M: int) -> FourierField:
    f = FourierField.constant(M, 1.0)
    f.coeffs += FourierField.harmonic(M, (1, 0), 0.2).coeffs
    f.coeffs += FourierField.harmonic(M, (2, 1), 0.1).coeffs
    return f


def test_eps_zero_reduces_to_deterministic_bitwise():
    params = EvolutionParams(M=6, dt=2e-3, horizon=0.02, chi=1.3)
    rho0 = bumpy(6)
    det = solve(rho0, params)
    base = build_baseline(rho0, params)
    path = solve_spde(rho0, params, eps=0.0, delta=0.1, baseline=base, seed=7)
    assert np.array_equal(path.final.coeffs, det.stored_fields[-1].coeffs)
    assert path.sup_gap == 0.0
    assert not path.crossed


def test_skeleton_without_control_is_deterministic_bitwise():
    params = EvolutionParams(M=6, dt=2e-3, horizon=0.02, chi=1.3)
    rho0 = bumpy(6)
    det = solve(rho0, params)
    base = build_baseline(rho0, params)
    out = skeleton_solve(rho0, params, base, control=None)
    assert np.array_equal(out.coeffs, det.stored_fields[-1].coeffs)


def test_spde_conserves_mass_exactly():
    params = EvolutionParams(M=5, dt=1e-3, horizon=0.03, chi=0.7)
    rho0 = bumpy(5)
    base = build_baseline(rho0, params)
    path = solve_spde(rho0, params, eps=0.3, delta=0.2, baseline=base, seed=3)
    assert np.all(path.mass_path == path.mass_path[0])


def test_spde_reproducible_and_streams_separate():
    params = EvolutionParams(M=4, dt=1e-3, horizon=0.01, chi=0.0)
    rho0 = bumpy(4)
    base = build_baseline(rho0, params)
    a = solve_spde(rho0, params, eps=0.2, delta=0.1, baseline=base, seed=5)
    b = solve_spde(rho0, params, eps=0.2, delta=0.1, baseline=base, seed=5)
    c = solve_spde(
        rho0, params, eps=0.2, delta=0.1, baseline=base, seed=5, trajectory=1
    )
    assert np.array_equal(a.final.coeffs, b.final.coeffs)
    assert not np.array_equal(a.final.coeffs, c.final.coeffs)
    assert a.sup_gap > 0.0


def test_spde_stops_at_level_and_freezes():
    params = EvolutionParams(M=4, dt=1e-3, horizon=0.05, chi=0.0)
    rho0 = FourierField.constant(4, 1.0)
    rho0.coeffs += FourierField.harmonic(4, (1, 0), 0.3).coeffs
    base = build_baseline(rho0, params)
    level = float(np.sqrt(np.sum(np.abs(rho0.coeffs) ** 2))) + 0.01
    path = solve_spde(
        rho0, params, eps=4.0, delta=0.0, baseline=base, seed=2, level=level
    )
    assert path.crossed
    assert path.stopped_at < params.horizon
    k = int(round(path.stopped_at / params.dt))
    assert path.l2_path[k] > level
    assert np.all(path.l2_path[k:] == path.l2_path[k])
    assert np.all(path.neg_l2_path >= 0.0)


def test_negative_part_l2_values():
    vals = np.array([[1.0, -2.0], [0.0, 2.0]])
    assert np.isclose(negative_part_l2(vals), 1.0)
    assert negative_part_l2(np.abs(vals)) == 0.0


def test_skeleton_superposition_without_advection():
    M = 5
    params = EvolutionParams(M=M, dt=1e-3, horizon=0.01, chi=0.0)
    rho0 = FourierField.constant(M, 1.0)
    base = build_baseline(rho0, params)
    rng = np.random.default_rng(0)
    h1 = random_real_field(M, rng, components=2, scale=0.5).coeffs
    h2 = random_real_field(M, rng, components=2, scale=0.5).coeffs

    def run(h):
        return skeleton_solve(rho0, params, base, control=lambda s: h).coeffs

    lhs = run(h1 + h2)
    rhs = run(h1) + run(h2) - run(np.zeros_like(h1))
    assert np.allclose(lhs, rhs, atol=1e-10)


def test_skeleton_control_changes_solution():
    M = 4
    params = EvolutionParams(M=M, dt=1e-3, horizon=0.01, chi=1.0)
    rho0 = bumpy(M)
    base = build_baseline(rho0, params)
    h = random_real_field(M, np.random.default_rng(1), components=2).coeffs
    forced = skeleton_solve(rho0, params, base, control=lambda s: h)
    free = skeleton_solve(rho0, params, base, control=None)
    assert not np.allclose(forced.coeffs, free.coeffs, atol=1e-12)
    # mass is untouched by the control
    assert forced.coeffs[M, M] == free.coeffs[M, M]


def test_rate_functional_frozen_value_and_homogeneity():
    M = 4
    L = lattice_size(M)
    h = np.zeros((2, L, L), dtype=np.complex128)
    h[0] = FourierField.harmonic(M, (1, 0), 0.6).coeffs
    # sum of squared moduli is 2 * 0.3^2 = 0.18, constant over [0, 0.25]
    rate = rate_functional(lambda s: h, n_steps=25, dt=0.01)
    assert np.isclose(rate, 0.5 * 0.18 * 0.25, rtol=1e-13)

    lam = 1.7
    scaled = rate_functional(lambda s: lam * h, n_steps=25, dt=0.01)
    assert np.isclose(scaled, lam**2 * rate, rtol=1e-12)


def test_linearized_drift_matches_derivative_of_advection():
    # the advection term is quadratic, so its derivative at rho applied
    # to rho itself must give exactly twice the advection term
    M = 6
    chi = 0.8
    rho0 = bumpy(M)
    params = EvolutionParams(M=M, dt=1e-3, horizon=1e-3, chi=chi)
    base = build_baseline(rho0, params, need_drift=True)
    lin = linearized_drift(rho0.coeffs, M, chi, base, 0)
    adv = advection_raw(rho0.coeffs, M, chi)
    assert np.allclose(lin, 2.0 * adv, atol=1e-12)


def test_linearized_drift_requires_grids():
    M = 4
    rho0 = bumpy(M)
    params = EvolutionParams(M=M, dt=1e-3, horizon=1e-3, chi=1.0)
    base = build_baseline(rho0, params, need_drift=False)
    with pytest.raises(ValueError):
        linearized_drift(rho0.coeffs, M, 1.0, base, 0)


def test_ou_flat_state_matches_closed_form_second_moment():
    # around the flat baseline with chi=0 the linearization is a heat
    # equation driven by the uncut noise divergence, so each mode is an
    # independent complex Ornstein-Uhlenbeck variable with stationary
    # variance 1/2 and relaxation rate |2 pi w|^2
    M = 3
    T = 0.03
    dt = 1e-3
    B = 500
    params = EvolutionParams(M=M, dt=dt, horizon=T, chi=0.0)
    base = build_baseline(FourierField.constant(M, 1.0), params)
    probes = [(1, 0), (1, 1), (0, 2)]
    samples = np.zeros((B, len(probes)), dtype=np.complex128)
    for b in range(B):
        v = solve_ou(params, base, seed=90, trajectory=b)
        for j, (w1, w2) in enumerate(probes):
            samples[b, j] = v.coeffs[M + w1, M + w2]
    for j, (w1, w2) in enumerate(probes):
        lam = (2 * np.pi) ** 2 * (w1**2 + w2**2)
        target = (1.0 - np.exp(-2 * T * lam)) / 2.0
        est = np.mean(np.abs(samples[:, j]) ** 2)
        se = target / np.sqrt(B)
        assert abs(est - target) < 4 * se, (w1, w2, est, target)
        mean_se = np.sqrt(target / (2 * B))
        assert abs(np.mean(samples[:, j].real)) < 4 * mean_se
        assert abs(np.mean(samples[:, j].imag)) < 4 * mean_se


def test_enhancement_convolution_matches_single_field_steps():
    M = 4
    dt = 1e-3
    delta = 0.25
    n = grid_size(M)
    sigma = np.ones((n, n))
    state, _ = evolve_enhancement(
        M, dt, n_steps=5, delta=delta, seed=11, batch=2
    )
    for b in range(2):
        ti = FourierField.zeros(M)
        for s in range(5):
            inc = sample_increment(11, b, s, M, dt)
            ti = convolution_field_step(ti, dt, sigma, inc, delta)
        assert np.array_equal(state.ti[b], ti.coeffs)


def test_enhancement_zero_amplitude_stays_zero():
    n = grid_size(4)
    state, _ = evolve_enhancement(
        4, 1e-3, n_steps=4, delta=0.2, seed=1, batch=1,
        sigma_vals=np.zeros((n, n)),
    )
    for arr in (state.ti, state.ty, state.anti, state.anti_phi):
        assert not np.any(arr)


def test_enhancement_product_shapes_and_measure_steps():
    M = 4
    L = lattice_size(M)
    rng = np.random.default_rng(4)
    h = random_real_field(M, rng, components=2).coeffs[None]
    state, measured = enhancement_from_control(
        M, 1e-3, n_steps=6, control=lambda s: h, measure_steps=(3, 6)
    )
    assert sorted(measured) == [3, 6]
    assert state.ti.shape == (1, L, L)
    prod = measured[6]
    assert prod.trans.shape == (1, 2, L, L)
    assert prod.cross.shape == (1, 2, 2, L, L)
    assert np.any(prod.trans)


def test_enhancement_homogeneity_under_control_scaling():
    # scaling the control by c scales the four evolved components by
    # (c, c^2, c, c) and the two resonant products by (c^3, c^2)
    M = 4
    dt = 1e-3
    rng = np.random.default_rng(8)
    h = random_real_field(M, rng, components=2).coeffs

    def control(scale):
        return lambda s: scale * (1.0 + 0.5 * np.cos(0.3 * s)) * h

    st1, m1 = enhancement_from_control(
        M, dt, n_steps=8, control=control(1.0), measure_steps=(8,)
    )
    st2, m2 = enhancement_from_control(
        M, dt, n_steps=8, control=control(2.0), measure_steps=(8,)
    )
    kw = dict(rtol=1e-12, atol=1e-14)
    assert np.allclose(st2.ti, 2.0 * st1.ti, **kw)
    assert np.allclose(st2.ty, 4.0 * st1.ty, **kw)
    assert np.allclose(st2.anti, 2.0 * st1.anti, **kw)
    assert np.allclose(st2.anti_phi, 2.0 * st1.anti_phi, **kw)
    assert np.allclose(m2[8].trans, 8.0 * m1[8].trans, **kw)
    assert np.allclose(m2[8].cross, 4.0 * m1[8].cross, **kw)


def test_enhancement_state_zeros_shapes():
    st = EnhancementState.zeros(5, 3)
    L = lattice_size(5)
    assert st.ti.shape == (3, L, L)
    prod = enhancement_products(st)
    assert not np.any(prod.trans) and not np.any(prod.cross)
