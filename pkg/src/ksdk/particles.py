"""Interacting Brownian particles on the unit torus.

N particles follow

    dX_i = (chi / N) sum_j F(X_i - X_j) dt + sqrt(2) dB_i   (mod 1)

where F is the gradient of the zero-mean periodic interaction potential
with mode multiplier 1 / |2 pi w|^2, the same potential the field solver
inverts.  F is tabulated once from its truncated mode series on a fine
periodic mesh and bilinearly interpolated; the table is forced to be
exactly odd under negation, so the self-interaction term vanishes at the
node x = 0 and can simply stay in the sum.

Empirical densities are formed by direct evaluation of the mode sums via
one complex matrix product, which keeps the zero mode at exactly one.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from ksdk.noise import _philox, cutoff_symbol
from ksdk.spectral import (
    FourierField,
    TWO_PI,
    inverse_laplacian_symbol,
    lattice_size,
    mode_vectors,
    render_grid,
    sobolev_norm,
)


@lru_cache(maxsize=8)
def force_table(kernel_modes: int = 32, table_size: int = 256) -> np.ndarray:
    """Gradient of the interaction potential on a periodic mesh, (2, n, n).

    Entry [j, a, b] is F_j(a / n, b / n) from the mode series truncated at
    kernel_modes.  Oddness F(-x) = -F(x) is enforced exactly on the nodes.
    """
    M = kernel_modes
    W1, W2 = mode_vectors(M)
    inv = inverse_laplacian_symbol(M)
    coeffs = np.stack([TWO_PI * 1j * W1 * inv, TWO_PI * 1j * W2 * inv])
    vals = render_grid(FourierField(M, coeffs), table_size)
    mirrored = vals[:, ::-1, ::-1]
    mirrored = np.roll(mirrored, 1, axis=(1, 2))  # index a -> (-a) mod n
    return 0.5 * (vals - mirrored)


def interp_periodic(table: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Bilinear interpolation of (C, n, n) tables at points (..., 2) in [0,1)."""
    n = table.shape[-1]
    u = points * n
    i0 = np.floor(u).astype(np.int64)
    t = u - i0
    i0 %= n
    i1 = (i0 + 1) % n
    a0, b0 = i0[..., 0], i0[..., 1]
    a1, b1 = i1[..., 0], i1[..., 1]
    ta, tb = t[..., 0], t[..., 1]
    out = (
        table[:, a0, b0] * (1 - ta) * (1 - tb)
        + table[:, a1, b0] * ta * (1 - tb)
        + table[:, a0, b1] * (1 - ta) * tb
        + table[:, a1, b1] * ta * tb
    )
    return np.moveaxis(out, 0, -1)


def pair_forces(
    positions: np.ndarray, table: np.ndarray, chunk: int = 256
) -> np.ndarray:
    """Mean interaction force on every particle, shape (N, 2).

    (1 / N) sum_j F(X_i - X_j); the diagonal contributes F(0) = 0.
    """
    N = positions.shape[0]
    out = np.empty((N, 2))
    for lo in range(0, N, chunk):
        hi = min(lo + chunk, N)
        diff = (positions[lo:hi, None, :] - positions[None, :, :]) % 1.0
        out[lo:hi] = interp_periodic(table, diff).sum(axis=1) / N
    return out


def particle_step(
    positions: np.ndarray,
    dt: float,
    chi: float,
    table: np.ndarray | None,
    noise: np.ndarray,
) -> np.ndarray:
    """One Euler-Maruyama step; noise is (N, 2) standard normal."""
    drift = 0.0
    if chi != 0.0:
        drift = chi * dt * pair_forces(positions, table)
    return (positions + drift + np.sqrt(2.0 * dt) * noise) % 1.0


def simulate_particles(
    positions: np.ndarray,
    dt: float,
    n_steps: int,
    chi: float,
    seed: int,
    trajectory: int = 0,
    kernel_modes: int = 32,
    table_size: int = 256,
    store_stride: int = 0,
) -> tuple[np.ndarray, list[tuple[float, np.ndarray]]]:
    """Evolve a particle cloud; returns final positions and stored snapshots.

    The Gaussian increments come from the same counter-keyed streams as the
    field noise (key: seed, trajectory, step), so runs are reproducible and
    trajectories are independent.
    """
    x = np.asarray(positions, dtype=np.float64) % 1.0
    table = force_table(kernel_modes, table_size) if chi != 0.0 else None
    stored: list[tuple[float, np.ndarray]] = [(0.0, x.copy())] if store_stride else []
    for s in range(n_steps):
        z = _philox(seed, trajectory, s).standard_normal(x.shape)
        x = particle_step(x, dt, chi, table, z)
        if store_stride and (s + 1) % store_stride == 0:
            stored.append(((s + 1) * dt, x.copy()))
    return x, stored


def uniform_cloud(n: int, seed: int, trajectory: int = 0) -> np.ndarray:
    """n independent uniform positions; stream separated from the step noise."""
    # step counters start at 0, so reserve a counter far outside the horizon
    return _philox(seed, trajectory, 2**31 - 1).random((n, 2))


def cosine_cloud(
    n: int,
    amplitude: float,
    seed: int,
    trajectory: int = 0,
    wave: int = 1,
    axis: int = 0,
) -> np.ndarray:
    """n independent draws from 1 + amplitude cos(2 pi wave x_axis).

    Inverse-CDF sampling along the modulated axis: the CDF is
    F(x) = x + amplitude sin(2 pi wave x) / (2 pi wave), strictly
    increasing on [0, 1], inverted by bisection.  The other coordinate
    stays uniform.  Requires |amplitude| < 1.
    """
    if not abs(amplitude) < 1.0:
        raise ValueError("density must stay positive")
    pts = _philox(seed, trajectory, 2**31 - 1).random((n, 2))
    u = pts[:, axis]
    k = TWO_PI * wave
    lo = np.zeros_like(u)
    hi = np.ones_like(u)
    for _ in range(55):
        mid = 0.5 * (lo + hi)
        below = mid + amplitude * np.sin(k * mid) / k < u
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    pts[:, axis] = 0.5 * (lo + hi)
    return pts


def empirical_density(
    positions: np.ndarray, M: int, delta: float = 0.0
) -> FourierField:
    """Mollified mode coefficients of the empirical measure, zero mode 1.

    coeff(w) = cutoff(delta w) (1 / N) sum_k exp(-2 pi i <w, X_k>),
    assembled as one rank-(2M+1) complex matrix product.  Particles are
    brought into lexicographic order first, so the summation order (and
    hence every output bit) is invariant under relabeling.
    """
    order = np.lexsort((positions[:, 1], positions[:, 0]))
    pos = positions[order]
    N = pos.shape[0]
    modes = np.arange(-M, M + 1)
    A = np.exp(-TWO_PI * 1j * np.outer(modes, pos[:, 0]))
    B = np.exp(-TWO_PI * 1j * np.outer(modes, pos[:, 1]))
    coeffs = (A @ B.T) / N
    if delta > 0.0:
        coeffs = coeffs * cutoff_symbol(M, delta)
    return FourierField(M, coeffs)


def mean_field_gap(
    positions: np.ndarray,
    reference: FourierField,
    delta: float = 0.0,
    gamma: float = -1.0,
) -> float:
    """Sobolev distance between the mollified cloud and a reference field."""
    emp = empirical_density(positions, reference.M, delta)
    diff = FourierField(reference.M, emp.coeffs - reference.coeffs)
    return sobolev_norm(diff, gamma)
