"""Shared test helpers."""

from __future__ import annotations

import numpy as np

from ksdk.spectral import FourierField, lattice_size


def random_real_field(M: int, rng: np.random.Generator,
                      components: int | None = None,
                      scale: float = 1.0) -> FourierField:
    """Random band-limited real field via conjugate-mirror symmetrization."""
    L = lattice_size(M)
    shape = (L, L) if components is None else (components, L, L)
    a = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    c = 0.5 * scale * (a + np.conj(a[..., ::-1, ::-1]))
    return FourierField(M, c, is_real=True)
