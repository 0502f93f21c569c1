"""Free-space dipole coupling kernel and bare emitter response.

Conventions used throughout the package:

* lengths are measured in units of the resonant wavelength, so the
  wavenumber is the fixed constant ``K0 = 2*pi``;
* rates, frequencies and detunings are measured in units of the radiative
  linewidth of a single emitter;
* every emitter carries the same linear polarization along ``x``, so all
  pairwise couplings reduce to the xx tensor component of the free-space
  field propagator.

With that normalization the coupling returned by :func:`coupling_xx` feeds
directly into the linear response system

    (1 / polarizability) * q_i - sum_{j != i} coupling_xx(r_i - r_j) * q_j = u_i

where ``q_i`` is the dimensionless dipole amplitude of emitter ``i`` and
``u_i`` is the drive field (in units of the incident amplitude) at its
position.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["K0", "EmitterRates", "coupling_xx", "bare_polarizability"]

K0 = 2.0 * np.pi
"""Resonant wavenumber in wavelength units."""


@dataclass(frozen=True)
class EmitterRates:
    """Decay rates of a single emitter.

    Attributes
    ----------
    gamma0:
        Radiative linewidth.  This is the unit of all rates in the package,
        so it defaults to 1 and should normally be left there.
    gamma_prime:
        Additional non-radiative (or inhomogeneous) broadening, in units of
        ``gamma0``.  Must be non-negative.
    """

    gamma0: float = 1.0
    gamma_prime: float = 0.0

    def __post_init__(self) -> None:
        if not np.isfinite(self.gamma0) or self.gamma0 <= 0.0:
            raise ValueError(f"gamma0 must be positive and finite, got {self.gamma0}")
        if not np.isfinite(self.gamma_prime) or self.gamma_prime < 0.0:
            raise ValueError(
                f"gamma_prime must be non-negative and finite, got {self.gamma_prime}"
            )


def coupling_xx(dx, dy, dz):
    """xx component of the dimensionless dipole-dipole coupling.

    Parameters
    ----------
    dx, dy, dz:
        Cartesian components of the displacement between two emitters, in
        wavelength units.  Scalars or broadcastable arrays.

    Returns
    -------
    complex or ndarray
        Dimensionless coupling.  Its imaginary part tends to 1/2 as the
        separation goes to zero, and for purely axial separations ``z`` the
        far field behaves as ``(3 / (4 K0 z)) * exp(i K0 z)``.

    Raises
    ------
    ValueError
        If any displacement is exactly zero ("self-coupling requested").
    """
    dx = np.asarray(dx, dtype=float)
    dy = np.asarray(dy, dtype=float)
    dz = np.asarray(dz, dtype=float)
    r2 = dx * dx + dy * dy + dz * dz
    if np.any(r2 == 0.0):
        raise ValueError("self-coupling requested: zero displacement has no finite coupling")
    r = np.sqrt(r2)
    rho = K0 * r
    inv = 1.0 / rho
    cos2 = (dx * dx) / r2  # squared projection of the displacement on x
    phase = np.exp(1j * rho) * inv
    transverse = 1.0 + 1j * inv - inv * inv
    longitudinal = 1.0 + 3j * inv - 3.0 * inv * inv
    val = 0.75 * phase * (transverse - longitudinal * cos2)
    if np.ndim(val) == 0:
        return complex(val)
    return val


def bare_polarizability(delta, rates: EmitterRates | None = None):
    """Dimensionless polarizability of an isolated driven emitter.

    Parameters
    ----------
    delta:
        Drive detuning from the bare resonance, in linewidth units.
        Scalar or array.
    rates:
        Emitter linewidths; defaults to a purely radiative emitter.

    Returns
    -------
    complex or ndarray
        ``-gamma0 / (delta + i (gamma0 + gamma_prime) / 2)``.  At zero
        detuning and no extra broadening this equals ``2i``.
    """
    if rates is None:
        rates = EmitterRates()
    delta = np.asarray(delta, dtype=float)
    val = -rates.gamma0 / (delta + 0.5j * (rates.gamma0 + rates.gamma_prime))
    if np.ndim(val) == 0:
        return complex(val)
    return val
