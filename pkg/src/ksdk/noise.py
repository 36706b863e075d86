"""Exactly sampled Fourier-mode noise and its smooth frequency cutoff.

Space-time white vector noise restricted to the mode lattice is sampled per
time step as a pair of complex increment arrays dW^j(w), j in {1, 2}, with

  * dW^j(-w) = conj(dW^j(w)) bit-exactly,
  * for w != 0: independent real and imaginary parts of variance dt/2,
  * at w = 0 (the only self-conjugate mode on the centered lattice): a real
    Gaussian of variance dt,
  * independence across components, steps and trajectories.

Streams are counter-based: a Philox generator is keyed by (seed, trajectory,
step) and the lattice is filled by one vectorized draw whose layout fixes the
(mode, component) assignment.  Draws therefore do not depend on ensemble
size, sampling order, or scheduling, and any (trajectory, step) slice can be
regenerated in isolation.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from ksdk.spectral import (
    FourierField,
    TWO_PI,
    dealias_mask,
    etd_weight,
    from_grid_raw,
    heat_factor,
    lattice_size,
    mode_vectors,
    to_grid_raw,
)

_MASK32 = (1 << 32) - 1


def _philox(seed: int, trajectory: int, step: int) -> np.random.Generator:
    if not (0 <= trajectory <= _MASK32 and 0 <= step <= _MASK32):
        raise ValueError("trajectory and step must fit in 32 bits")
    key = np.array(
        [np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64((trajectory << 32) | step)],
        dtype=np.uint64,
    )
    return np.random.Generator(np.random.Philox(key=key))


def sample_increment(
    seed: int, trajectory: int, step: int, M: int, dt: float
) -> np.ndarray:
    """One step of mode noise, shape (2, 2M+1, 2M+1) complex.

    Component j of the returned array is dW^j on the centered lattice.  The
    conjugate-mirror symmetry is enforced by averaging a full i.i.d. complex
    draw with its reflected conjugate, which reproduces the target law
    exactly and makes the symmetry hold to the bit.
    """
    L = lattice_size(M)
    rng = _philox(seed, trajectory, step)
    z = rng.standard_normal((2, L, L, 2))
    a = np.sqrt(dt / 2.0) * (z[..., 0] + 1j * z[..., 1])
    return (a + np.conj(a[..., ::-1, ::-1])) / np.sqrt(2.0)


def sample_increment_batch(
    seed: int, trajectories: np.ndarray, step: int, M: int, dt: float
) -> np.ndarray:
    """Stack of increments for several trajectories, shape (B, 2, L, L)."""
    return np.stack([sample_increment(seed, int(t), step, M, dt) for t in trajectories])


# ---------------------------------------------------------------------------
# Frequency cutoff


def cutoff_profile(r: np.ndarray) -> np.ndarray:
    """Smooth even bump: exp(1 - 1/(1 - r^2)) inside |r| < 1, zero outside."""
    r = np.asarray(r, dtype=float)
    inside = np.abs(r) < 1.0
    r2 = np.where(inside, r * r, 0.0)
    with np.errstate(divide="ignore", over="ignore"):
        vals = np.exp(1.0 - 1.0 / (1.0 - r2))
    return np.where(inside, vals, 0.0)


@lru_cache(maxsize=256)
def cutoff_symbol(M: int, delta: float) -> np.ndarray:
    """Lattice values of the cutoff at radius delta * |w|; equals 1 at w = 0.

    delta = 0 means no cutoff (the symbol is identically one).
    """
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    L = lattice_size(M)
    if delta == 0.0:
        sym = np.ones((L, L))
    else:
        W1, W2 = mode_vectors(M)
        r = delta * np.sqrt(W1.astype(float) ** 2 + W2.astype(float) ** 2)
        sym = cutoff_profile(r)
    sym.setflags(write=False)
    return sym


def mollified_noise_field(
    increment: np.ndarray, M: int, delta: float, dt: float
) -> np.ndarray:
    """Vector noise field at increment density: cutoff(delta w) dW^j(w) / dt."""
    return increment * (cutoff_symbol(M, delta) / dt)


# ---------------------------------------------------------------------------
# Divergence assembly shared by every stochastic stepper


def noise_divergence(
    noise_coeffs: np.ndarray, sigma_vals: np.ndarray, M: int
) -> np.ndarray:
    """div(dealias(sigma (x) noise)) for a vector field at increment density.

    noise_coeffs has shape (..., 2, L, L); sigma_vals are grid values of the
    amplitude, broadcastable against (..., n, n).  The amplitude multiplies
    each component on the collocation grid; the product is dealiased and hit
    with the divergence symbol.  The zero mode of the result vanishes
    identically, so the forcing is exactly conservative.
    """
    vals = to_grid_raw(noise_coeffs, M).real
    flux = from_grid_raw(sigma_vals[..., None, :, :] * vals, M)
    flux = flux * dealias_mask(M)
    W1, W2 = mode_vectors(M)
    return TWO_PI * 1j * (W1 * flux[..., 0, :, :] + W2 * flux[..., 1, :, :])


def convolution_step(
    ti_coeffs: np.ndarray,
    M: int,
    dt: float,
    sigma_vals: np.ndarray,
    noise_coeffs: np.ndarray,
) -> np.ndarray:
    """Advance the stochastic heat convolution driven by amplitude * noise.

    ti <- heat_factor * ti + etd_weight * div(dealias(sigma (x) noise)).
    """
    forcing = noise_divergence(noise_coeffs, sigma_vals, M)
    return heat_factor(M, dt) * ti_coeffs + etd_weight(M, dt) * forcing


def convolution_field_step(
    ti: FourierField,
    dt: float,
    sigma_vals: np.ndarray,
    increment: np.ndarray,
    delta: float,
) -> FourierField:
    """Single-field wrapper over convolution_step at increment density."""
    noise = mollified_noise_field(increment, ti.M, delta, dt)
    return FourierField(
        ti.M, convolution_step(ti.coeffs, ti.M, dt, sigma_vals, noise), ti.is_real
    )
