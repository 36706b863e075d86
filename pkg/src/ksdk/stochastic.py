"""Stochastic and controlled mild-form dynamics around a deterministic baseline.

Every equation here is advanced by the same exponential-integrator step as
the deterministic solver; variants differ only in which drift and forcing
they feed it:

  * solve_spde: nonlinear dynamics with conservative noise of strength
    sqrt(eps), frequency cutoff delta, and amplitude sqrt(baseline density).
  * solve_ou: the linearization around the baseline, driven by uncut noise.
  * skeleton_solve: the deterministic dynamics forced by a control field in
    place of the noise.
  * evolve_enhancement / enhancement_from_control: the stochastic
    convolution together with its quadratic and cubic companions.

Setting eps to zero or passing no control reproduces the deterministic step
bit-for-bit because the forcing slot of the stepper is simply never touched.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ksdk.deterministic import (
    Baseline,
    EvolutionParams,
    advection_raw,
    etd_advance_raw,
)
from ksdk.noise import (
    mollified_noise_field,
    noise_divergence,
    sample_increment,
    sample_increment_batch,
)
from ksdk.spectral import (
    FourierField,
    TWO_PI,
    dealias_mask,
    from_grid_raw,
    inverse_laplacian_symbol,
    lattice_size,
    mode_vectors,
    resonant,
    to_grid_raw,
)


def negative_part_l2(grid_vals: np.ndarray) -> float:
    """L2 quadrature norm of min(u, 0) from grid values."""
    neg = np.minimum(grid_vals, 0.0)
    return float(np.sqrt(np.mean(neg**2)))


@dataclass
class StoppedPath:
    """Diagnostics of one stochastic trajectory with L2 stopping.

    The path runs until min(horizon, level, first time the L2 norm exceeds
    level); stopped_at records that time.  After stopping, the series are
    frozen at the stopped state.  sup_gap is the running supremum up to the
    stop of the L2 distance to the baseline (0 when the baseline kept no
    coefficient history).
    """

    params: EvolutionParams
    eps: float
    delta: float
    level: float
    times: np.ndarray
    l2_path: np.ndarray
    min_path: np.ndarray
    neg_l2_path: np.ndarray
    mass_path: np.ndarray
    stopped_at: float
    crossed: bool
    sup_gap: float
    final: FourierField
    stored_times: list = field(default_factory=list)
    stored_fields: list = field(default_factory=list)


def spde_step(
    coeffs: np.ndarray,
    M: int,
    dt: float,
    chi: float,
    eps: float,
    delta: float,
    sigma_vals: np.ndarray,
    increment: np.ndarray | None,
) -> np.ndarray:
    """One step of the nonlinear stochastic dynamics on raw coefficients.

    With eps = 0 the forcing slot stays untouched and the result is
    bit-identical to the deterministic step (the drift is computed
    unconditionally, exactly as the deterministic loop does).
    """
    drift = advection_raw(coeffs, M, chi)
    forcing = None
    if eps != 0.0:
        noise = mollified_noise_field(increment, M, delta, dt)
        forcing = -np.sqrt(eps) * noise_divergence(noise, sigma_vals, M)
    return etd_advance_raw(coeffs, M, dt, drift=drift, forcing=forcing)


def solve_spde(
    rho0: FourierField,
    params: EvolutionParams,
    eps: float,
    delta: float,
    baseline: Baseline,
    seed: int,
    trajectory: int = 0,
    level: float | None = None,
) -> StoppedPath:
    """Integrate one noise realization and track stopping diagnostics."""
    M = params.M
    if rho0.M != M or baseline.params.M != M:
        raise ValueError("lattice sizes disagree")
    S = params.n_steps
    level = params.blowup_threshold if level is None else level
    times = np.arange(S + 1) * params.dt
    l2 = np.zeros(S + 1)
    mn = np.zeros(S + 1)
    neg = np.zeros(S + 1)
    mass = np.zeros(S + 1)
    c = rho0.coeffs.copy()
    track_gap = baseline.coeffs is not None
    sup_gap = 0.0

    def record(s: int) -> None:
        vals = to_grid_raw(c, M).real
        l2[s] = np.sqrt(np.sum(np.abs(c) ** 2))
        mn[s] = np.min(vals)
        neg[s] = negative_part_l2(vals)
        mass[s] = c[M, M].real

    record(0)
    stopped_at = float(min(params.horizon, level))
    crossed = False
    stride = params.store_stride
    stored_times = [0.0]
    stored_fields = [FourierField(M, c.copy())]
    for s in range(1, S + 1):
        if times[s - 1] >= level:
            # the stopping rule caps the time at the level itself
            l2[s:] = l2[s - 1]
            mn[s:] = mn[s - 1]
            neg[s:] = neg[s - 1]
            mass[s:] = mass[s - 1]
            break
        inc = (
            sample_increment(seed, trajectory, s - 1, M, params.dt)
            if eps != 0.0
            else None
        )
        c = spde_step(
            c, M, params.dt, params.chi, eps, delta,
            baseline.sigma_at(s - 1), inc,
        )
        record(s)
        if track_gap:
            gap = float(np.sqrt(np.sum(np.abs(c - baseline.coeffs_at(s)) ** 2)))
            sup_gap = max(sup_gap, gap)
        if stride and s % stride == 0 and s != S:
            stored_times.append(float(times[s]))
            stored_fields.append(FourierField(M, c.copy()))
        if l2[s] > level:
            stopped_at = float(times[s])
            crossed = True
            l2[s + 1 :] = l2[s]
            mn[s + 1 :] = mn[s]
            neg[s + 1 :] = neg[s]
            mass[s + 1 :] = mass[s]
            break
    stored_times.append(float(min(stopped_at, times[-1])))
    stored_fields.append(FourierField(M, c.copy()))
    return StoppedPath(
        params=params,
        eps=eps,
        delta=delta,
        level=level,
        times=times,
        l2_path=l2,
        min_path=mn,
        neg_l2_path=neg,
        mass_path=mass,
        stopped_at=stopped_at,
        crossed=crossed,
        sup_gap=sup_gap,
        final=FourierField(M, c.copy()),
        stored_times=stored_times,
        stored_fields=stored_fields,
    )


# ---------------------------------------------------------------------------
# Linearization around the baseline


def linearized_drift(
    coeffs: np.ndarray, M: int, chi: float, baseline: Baseline, s: int
) -> np.ndarray | None:
    """Drift of the linearization: the advection operator differentiated
    at the baseline and applied to the perturbation v.

    -chi [ div(v grad potential(rho_det)) + div(rho_det grad potential(v)) ],
    both fluxes dealiased like the nonlinear term.  Needs the baseline grids
    cached with need_drift; broadcasts over leading batch axes of coeffs.
    """
    if chi == 0.0:
        return None
    if baseline.rho_grid is None or baseline.grad_phi is None:
        raise ValueError("baseline was built without drift grids")
    i = baseline.idx(s)
    inv = inverse_laplacian_symbol(M)
    W1, W2 = mode_vectors(M)
    v_vals = to_grid_raw(coeffs, M).real
    flux = v_vals[..., None, :, :] * baseline.grad_phi[i]
    phi = coeffs * inv
    grad_v = np.stack(
        [TWO_PI * 1j * W1 * phi, TWO_PI * 1j * W2 * phi], axis=-3
    )
    flux = flux + baseline.rho_grid[i][..., None, :, :] * to_grid_raw(grad_v, M).real
    flux_hat = from_grid_raw(flux, M) * dealias_mask(M)
    div = TWO_PI * 1j * (
        W1 * flux_hat[..., 0, :, :] + W2 * flux_hat[..., 1, :, :]
    )
    return -chi * div


def ou_step(
    coeffs: np.ndarray,
    M: int,
    dt: float,
    chi: float,
    baseline: Baseline,
    s: int,
    increment: np.ndarray,
) -> np.ndarray:
    """One step of the linearized dynamics driven by uncut noise."""
    drift = linearized_drift(coeffs, M, chi, baseline, s)
    forcing = -noise_divergence(increment / dt, baseline.sigma_at(s), M)
    return etd_advance_raw(coeffs, M, dt, drift=drift, forcing=forcing)


def solve_ou(
    params: EvolutionParams,
    baseline: Baseline,
    seed: int,
    trajectory: int = 0,
) -> FourierField:
    """Linearized solution at the horizon, started from zero."""
    M = params.M
    L = lattice_size(M)
    c = np.zeros((L, L), dtype=np.complex128)
    for s in range(params.n_steps):
        inc = sample_increment(seed, trajectory, s, M, params.dt)
        c = ou_step(c, M, params.dt, params.chi, baseline, s, inc)
    return FourierField(M, c)


def fluctuation(rho: np.ndarray, rho_det: np.ndarray, eps: float) -> np.ndarray:
    """Rescaled deviation (rho - rho_det) / sqrt(eps) on coefficients."""
    return (rho - rho_det) / np.sqrt(eps)


# ---------------------------------------------------------------------------
# Controlled dynamics and quadratic cost


def skeleton_solve(
    rho0: FourierField,
    params: EvolutionParams,
    baseline: Baseline,
    control=None,
) -> FourierField:
    """Deterministic dynamics forced by a control vector field.

    control is a callable step -> (2, L, L) coefficient array (the value of
    the control on [s dt, (s+1) dt)); None means no forcing, which
    reproduces the unforced deterministic solution bit for bit.  The forcing
    assembled from h is -div(dealias(sigma (x) h)), the deterministic twin
    of the noise term.
    """
    M = params.M
    c = rho0.coeffs.copy()
    for s in range(params.n_steps):
        drift = advection_raw(c, M, params.chi)
        forcing = None
        if control is not None:
            forcing = -noise_divergence(control(s), baseline.sigma_at(s), M)
        c = etd_advance_raw(c, M, params.dt, drift=drift, forcing=forcing)
    return FourierField(M, c)


def rate_functional(control, n_steps: int, dt: float) -> float:
    """Half the time integral of the squared L2 norm of the control.

    The spatial norm is the coefficient sum (Parseval); time integration is
    the trapezoid rule on the step grid, evaluating the control at every
    node 0..n_steps.
    """
    sq = np.empty(n_steps + 1)
    for s in range(n_steps + 1):
        h = control(s)
        sq[s] = np.sum(np.abs(h) ** 2)
    return 0.5 * float(np.trapezoid(sq, dx=dt))


# ---------------------------------------------------------------------------
# The stochastic convolution and its companions


@dataclass
class EnhancementState:
    """Co-evolved batch of the convolution hierarchy at one time.

    ti: the stochastic convolution itself (divergence form).
    ty: mild solution driven by div(dealias(ti grad potential(ti))).
    anti: time-smoothed ti (mild solution with drift ti).
    anti_phi: time-smoothed potential of ti (mild solution with drift
        potential(ti)).
    All arrays are (B, L, L) raw coefficients over a batch of B draws.
    """

    M: int
    ti: np.ndarray
    ty: np.ndarray
    anti: np.ndarray
    anti_phi: np.ndarray

    @classmethod
    def zeros(cls, M: int, batch: int) -> "EnhancementState":
        L = lattice_size(M)
        shape = (batch, L, L)
        return cls(
            M=M,
            ti=np.zeros(shape, dtype=np.complex128),
            ty=np.zeros(shape, dtype=np.complex128),
            anti=np.zeros(shape, dtype=np.complex128),
            anti_phi=np.zeros(shape, dtype=np.complex128),
        )


def _self_transport(ti: np.ndarray, M: int) -> np.ndarray:
    """div(dealias(ti (x) grad potential(ti))), the drift of ty."""
    inv = inverse_laplacian_symbol(M)
    W1, W2 = mode_vectors(M)
    phi = ti * inv
    grad_phi = np.stack(
        [TWO_PI * 1j * W1 * phi, TWO_PI * 1j * W2 * phi], axis=-3
    )
    vals = to_grid_raw(ti, M).real
    flux = vals[..., None, :, :] * to_grid_raw(grad_phi, M).real
    flux_hat = from_grid_raw(flux, M) * dealias_mask(M)
    return TWO_PI * 1j * (
        W1 * flux_hat[..., 0, :, :] + W2 * flux_hat[..., 1, :, :]
    )


def enhancement_step(
    state: EnhancementState,
    dt: float,
    forcing_ti: np.ndarray,
) -> EnhancementState:
    """Advance the hierarchy one step; forcing_ti already includes sigma.

    forcing_ti is div(dealias(sigma (x) w)) with w the (mollified) noise
    density of this step, or its deterministic control twin.  All drifts are
    evaluated at the left endpoint before any component moves.
    """
    M = state.M
    inv = inverse_laplacian_symbol(M)
    drift_ty = _self_transport(state.ti, M)
    ti_next = etd_advance_raw(state.ti, M, dt, forcing=forcing_ti)
    ty_next = etd_advance_raw(state.ty, M, dt, drift=drift_ty)
    anti_next = etd_advance_raw(state.anti, M, dt, drift=state.ti)
    anti_phi_next = etd_advance_raw(state.anti_phi, M, dt, drift=state.ti * inv)
    return EnhancementState(
        M=M, ti=ti_next, ty=ty_next, anti=anti_next, anti_phi=anti_phi_next
    )


def _sigma_lookup(sigma_vals, M: int):
    """Normalize an amplitude argument to a per-step callable of grid values."""
    if sigma_vals is None:
        n = lattice_size(M) + 1
        flat = np.ones((n, n))
        return lambda s: flat
    if callable(sigma_vals):
        return sigma_vals
    arr = np.asarray(sigma_vals)
    return lambda s: arr


def evolve_enhancement(
    M: int,
    dt: float,
    n_steps: int,
    delta: float,
    seed: int,
    batch: int,
    sigma_vals=None,
    measure_steps: tuple[int, ...] = (),
    increments=None,
) -> tuple[EnhancementState, dict[int, "EnhancementProducts"]]:
    """Drive the hierarchy with exactly sampled noise for n_steps.

    sigma_vals is the noise amplitude on the grid: an array (static), a
    callable step -> grid values (time varying), or None for the
    constant-one amplitude (linearization around the flat state).
    measure_steps asks for the resonant products to be assembled after
    those steps (key: step index, 1-based).  increments, if given, is a
    callable step -> (B, 2, L, L) replacing the built-in sampler; the
    sampler draws trajectories 0..batch-1 of the seed's stream.
    """
    sigma_at = _sigma_lookup(sigma_vals, M)
    state = EnhancementState.zeros(M, batch)
    measured: dict[int, EnhancementProducts] = {}
    want = set(measure_steps)
    for s in range(n_steps):
        if increments is None:
            inc = sample_increment_batch(seed, range(batch), s, M, dt)
        else:
            inc = increments(s)
        noise = mollified_noise_field(inc, M, delta, dt)
        forcing = noise_divergence(noise, sigma_at(s), M)
        state = enhancement_step(state, dt, forcing)
        if (s + 1) in want:
            measured[s + 1] = enhancement_products(state)
    return state, measured


@dataclass
class EnhancementProducts:
    """Resonant products completing the hierarchy at one time.

    trans: (B, 2, L, L), component j is
        ty (.) d_j potential(ti) + d_j potential(ty) (.) ti
    cross: (B, 2, 2, L, L), entry (i, j) is
        d_i anti (.) d_j potential(ti) + d_i d_j anti_phi (.) ti
    where (.) is the resonant part of the product.
    """

    M: int
    trans: np.ndarray
    cross: np.ndarray


def enhancement_products(state: EnhancementState) -> EnhancementProducts:
    M = state.M
    inv = inverse_laplacian_symbol(M)
    W1, W2 = mode_vectors(M)
    d = (TWO_PI * 1j * W1, TWO_PI * 1j * W2)

    def res(a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return resonant(FourierField(M, a), FourierField(M, b)).coeffs

    phi_ti = state.ti * inv
    phi_ty = state.ty * inv
    trans = np.stack(
        [
            res(state.ty, d[j] * phi_ti) + res(d[j] * phi_ty, state.ti)
            for j in range(2)
        ],
        axis=-3,
    )
    cross_rows = []
    for i in range(2):
        row = [
            res(d[i] * state.anti, d[j] * phi_ti)
            + res(d[i] * d[j] * state.anti_phi, state.ti)
            for j in range(2)
        ]
        cross_rows.append(np.stack(row, axis=-3))
    cross = np.stack(cross_rows, axis=-4)
    return EnhancementProducts(M=M, trans=trans, cross=cross)


def enhancement_from_control(
    M: int,
    dt: float,
    n_steps: int,
    control,
    sigma_vals=None,
    measure_steps: tuple[int, ...] = (),
) -> tuple[EnhancementState, dict[int, EnhancementProducts]]:
    """Deterministic twin of evolve_enhancement driven by a control field.

    control is a callable step -> (..., 2, L, L) coefficients; the forcing
    of ti is +div(dealias(sigma (x) h)).  Scaling the control by c scales
    (ti, ty, anti, anti_phi) by (c, c^2, c, c), the transport product by
    c^3 and the cross product by c^2.
    """
    sigma_at = _sigma_lookup(sigma_vals, M)
    h0 = np.asarray(control(0))
    batch = 1 if h0.ndim == 3 else h0.shape[0]
    state = EnhancementState.zeros(M, batch)
    measured: dict[int, EnhancementProducts] = {}
    want = set(measure_steps)
    for s in range(n_steps):
        h = np.asarray(control(s))
        forcing = noise_divergence(h, sigma_at(s), M)
        state = enhancement_step(state, dt, forcing)
        if (s + 1) in want:
            measured[s + 1] = enhancement_products(state)
    return state, measured
