"""Deterministic aggregation-diffusion dynamics on the torus.

The evolution in mild form is

    d/dt rho = Laplacian(rho) - chi * div(rho * grad(potential(rho)))

where potential(rho) is the mean-free inverse Laplacian.  Time stepping is a
first-order exponential integrator: the heat factor is applied exactly and
the advection term, evaluated at the left endpoint, is weighted per mode by
the exact integral of the heat factor over one step.  The zero mode of the
advection vanishes identically, so the mean is conserved to the bit.

The same stepper advances every mild-form equation in this package; the
stochastic and controlled variants supply an extra forcing slot.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ksdk.spectral import (
    FourierField,
    TWO_PI,
    dealias_mask,
    etd_weight,
    from_grid_raw,
    grid_size,
    heat_factor,
    inverse_laplacian_symbol,
    laplacian_symbol,
    lattice_size,
    mode_vectors,
    sobolev_norm,
    to_grid_raw,
)


@dataclass(frozen=True)
class EvolutionParams:
    """Lattice size, step, horizon and model constants for one solve."""

    M: int
    dt: float
    horizon: float
    chi: float = 0.0
    blowup_threshold: float = 1.0e3
    positivity_floor: float = 1.0e-8
    store_stride: int = 0  # 0: store only the initial and final fields

    def __post_init__(self) -> None:
        if self.M < 1:
            raise ValueError("M must be at least 1")
        if self.dt <= 0 or self.horizon <= 0:
            raise ValueError("dt and horizon must be positive")
        if self.blowup_threshold <= 0:
            raise ValueError("blowup_threshold must be positive")
        n = round(self.horizon / self.dt)
        if n < 1 or abs(n * self.dt - self.horizon) > 1e-9 * max(1.0, self.horizon):
            raise ValueError("horizon must be an integer number of steps")

    @property
    def n_steps(self) -> int:
        return round(self.horizon / self.dt)


@dataclass
class Trajectory:
    """Diagnostics of a single deterministic solve.

    Scalar series cover every step; fields are kept at the configured
    stride.  After a blow-up the state is frozen: the remaining entries of
    every series repeat the value at the stopping step (cemetery state).
    """

    params: EvolutionParams
    times: np.ndarray
    l2_path: np.ndarray
    mass_path: np.ndarray
    min_path: np.ndarray
    grad_sq_path: np.ndarray
    cube_path: np.ndarray
    stored_times: list = field(default_factory=list)
    stored_fields: list = field(default_factory=list)
    blew_up_at: float | None = None


def advection_raw(coeffs: np.ndarray, M: int, chi: float) -> np.ndarray:
    """-chi * div(dealias(rho (x) grad(potential(rho)))) on raw coefficients.

    Broadcasts over any leading batch axes.  Inputs are assumed to carry the
    conjugate-mirror symmetry; grids are taken real.
    """
    inv = inverse_laplacian_symbol(M)
    W1, W2 = mode_vectors(M)
    phi = coeffs * inv
    grad = np.stack([TWO_PI * 1j * W1 * phi, TWO_PI * 1j * W2 * phi])
    rho_vals = to_grid_raw(coeffs, M).real
    grad_vals = to_grid_raw(grad, M).real
    flux = from_grid_raw(rho_vals[None, ...] * grad_vals, M)
    flux *= dealias_mask(M)
    div = TWO_PI * 1j * (W1 * flux[0] + W2 * flux[1])
    return -chi * div


def advection(rho: FourierField, chi: float) -> FourierField:
    return FourierField(rho.M, advection_raw(rho.coeffs, rho.M, chi), rho.is_real)


def etd_advance_raw(
    coeffs: np.ndarray,
    M: int,
    dt: float,
    drift: np.ndarray | None = None,
    forcing: np.ndarray | None = None,
) -> np.ndarray:
    """One exponential-integrator step.

    drift and forcing are both weighted by the exact per-mode step integral;
    they are separate slots so that callers can drop either one without
    perturbing the floating-point stream of the other.
    """
    out = heat_factor(M, dt) * coeffs
    w = etd_weight(M, dt)
    if drift is not None:
        out += w * drift
    if forcing is not None:
        out += w * forcing
    return out


def det_step(rho: FourierField, params: EvolutionParams) -> FourierField:
    drift = advection_raw(rho.coeffs, rho.M, params.chi)
    return FourierField(
        rho.M, etd_advance_raw(rho.coeffs, rho.M, params.dt, drift=drift), rho.is_real
    )


def is_uniform(rho: FourierField) -> bool:
    """True when every mode except the mean vanishes exactly."""
    M = rho.M
    c = rho.coeffs.copy()
    c[..., M, M] = 0.0
    return bool(np.all(c == 0.0))


def _diagnostics(coeffs: np.ndarray, M: int) -> tuple[float, float, float, float, float]:
    vals = to_grid_raw(coeffs, M).real
    l2 = float(np.sqrt(np.sum(np.abs(coeffs) ** 2)))
    mass = float(coeffs[M, M].real)
    mn = float(np.min(vals))
    grad_sq = float(np.sum(laplacian_symbol(M) * np.abs(coeffs) ** 2))
    cube = float(np.mean(vals**3))
    return l2, mass, mn, grad_sq, cube


def solve(rho0: FourierField, params: EvolutionParams) -> Trajectory:
    """Integrate to the horizon, stopping at the L2 blow-up threshold."""
    if params.M != rho0.M:
        raise ValueError("initial field does not match params.M")
    if params.blowup_threshold <= sobolev_norm(rho0, 0.0):
        raise ValueError("blow-up threshold must exceed the initial L2 norm")
    S = params.n_steps
    times = np.arange(S + 1) * params.dt
    series = np.zeros((5, S + 1))
    traj = Trajectory(
        params=params,
        times=times,
        l2_path=series[0],
        mass_path=series[1],
        min_path=series[2],
        grad_sq_path=series[3],
        cube_path=series[4],
    )
    c = rho0.coeffs.copy()
    series[:, 0] = _diagnostics(c, params.M)
    traj.stored_times.append(0.0)
    traj.stored_fields.append(FourierField(params.M, c.copy()))
    stride = params.store_stride
    for s in range(1, S + 1):
        drift = advection_raw(c, params.M, params.chi)
        c = etd_advance_raw(c, params.M, params.dt, drift=drift)
        series[:, s] = _diagnostics(c, params.M)
        if stride and s % stride == 0 and s != S:
            traj.stored_times.append(times[s])
            traj.stored_fields.append(FourierField(params.M, c.copy()))
        if series[0, s] > params.blowup_threshold:
            traj.blew_up_at = float(times[s])
            series[:, s + 1 :] = series[:, s : s + 1]
            break
    traj.stored_times.append(float(times[min(s, S)]))
    traj.stored_fields.append(FourierField(params.M, c.copy()))
    return traj


def energy_residual(traj: Trajectory) -> np.ndarray:
    """Cumulative defect of the L2 energy balance along the discrete path.

    The balance reads, with m the conserved mean,

        l2(t)^2 - l2(0)^2
          + 2 int_0^t |grad|^2 - chi int_0^t int(rho^3) + chi m int_0^t l2^2

    and the time integrals are evaluated by the trapezoid rule on the step
    grid.  Returns the residual at every step time (zero at t = 0).
    """
    chi = traj.params.chi
    dt = traj.params.dt
    m = traj.mass_path[0]

    def cum_trapz(y: np.ndarray) -> np.ndarray:
        out = np.zeros_like(y)
        out[1:] = np.cumsum(0.5 * dt * (y[1:] + y[:-1]))
        return out

    return (
        traj.l2_path**2
        - traj.l2_path[0] ** 2
        + 2.0 * cum_trapz(traj.grad_sq_path)
        - chi * cum_trapz(traj.cube_path)
        + chi * m * cum_trapz(traj.l2_path**2)
    )


def sqrt_field(coeffs: np.ndarray, M: int, floor: float) -> np.ndarray:
    """Grid values of sqrt(max(rho, floor)); the noise amplitude."""
    vals = to_grid_raw(coeffs, M).real
    return np.sqrt(np.maximum(vals, floor))


@dataclass
class Baseline:
    """Deterministic solution resampled for the stochastic drivers.

    sigma holds sqrt(rho) grid values per step; rho_grid and grad_phi are
    kept only when the linearized drift is requested.  For a uniform initial
    state the dynamics fix the constant exactly, so a single slice is stored
    and uniform is set.
    """

    params: EvolutionParams
    times: np.ndarray
    sigma: np.ndarray
    coeffs: np.ndarray | None = None
    rho_grid: np.ndarray | None = None
    grad_phi: np.ndarray | None = None
    uniform: bool = False

    def idx(self, s: int) -> int:
        return 0 if self.uniform else s

    def coeffs_at(self, s: int) -> np.ndarray:
        return self.coeffs[self.idx(s)]

    def sigma_at(self, s: int) -> np.ndarray:
        return self.sigma[self.idx(s)]


def build_baseline(
    rho0: FourierField,
    params: EvolutionParams,
    need_drift: bool = False,
    keep_coeffs: bool = True,
) -> Baseline:
    """Solve the deterministic equation and cache per-step grid data."""
    M = params.M
    S = params.n_steps
    n = grid_size(M)
    L = lattice_size(M)
    times = np.arange(S + 1) * params.dt
    floor = params.positivity_floor

    if is_uniform(rho0):
        mass = float(rho0.coeffs[M, M].real)
        sigma = np.full((1, n, n), np.sqrt(max(mass, floor)))
        base = Baseline(params, times, sigma, uniform=True)
        if keep_coeffs:
            base.coeffs = rho0.coeffs[None, :, :].copy()
        if need_drift:
            base.rho_grid = np.full((1, n, n), mass)
            base.grad_phi = np.zeros((1, 2, n, n))
        return base

    inv = inverse_laplacian_symbol(M)
    W1, W2 = mode_vectors(M)
    sigma = np.empty((S + 1, n, n))
    coeffs = np.empty((S + 1, L, L), dtype=np.complex128) if keep_coeffs else None
    rho_grid = np.empty((S + 1, n, n)) if need_drift else None
    grad_phi = np.empty((S + 1, 2, n, n)) if need_drift else None

    c = rho0.coeffs.copy()
    for s in range(S + 1):
        vals = to_grid_raw(c, M).real
        sigma[s] = np.sqrt(np.maximum(vals, floor))
        if keep_coeffs:
            coeffs[s] = c
        if need_drift:
            rho_grid[s] = vals
            phi = c * inv
            grad_phi[s] = to_grid_raw(
                np.stack([TWO_PI * 1j * W1 * phi, TWO_PI * 1j * W2 * phi]), M
            ).real
        if s < S:
            drift = advection_raw(c, M, params.chi)
            c = etd_advance_raw(c, M, params.dt, drift=drift)
    return Baseline(params, times, sigma, coeffs, rho_grid, grad_phi, uniform=False)
