"""Collective response of a single rectangular sub-wavelength emitter array.

A two-dimensional lattice of x-polarized emitters with both lattice
constants below one wavelength scatters only into the specular channel, so
its response to a normally incident plane wave is captured by two numbers:

* the cooperative linewidth ``gamma_coop = 3 / (4 pi dx dy)``, fixed by the
  emitter density, and
* the cooperative resonance shift ``omega_coop``, obtained from the lattice
  sum of the in-plane couplings.

The lattice sum is conditionally convergent and is evaluated with a smooth
radial window (flat center, raised-cosine taper).  The exact identity

    Im(sum) = (gamma_coop - 1) / 2

holds for the infinite lattice and is used as a built-in accuracy check:
the window radius is enlarged until the identity is met, and the result is
memoized per lattice.
"""
from __future__ import annotations

import threading
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .greens import coupling_xx

__all__ = [
    "LatticeConstants",
    "CollectiveResponse",
    "cooperative_decay",
    "cooperative_shift",
    "in_plane_sum",
    "collective_response",
    "single_layer_tr",
]


@dataclass(frozen=True)
class LatticeConstants:
    """In-plane lattice constants of a rectangular array, in wavelength units."""

    dx: float
    dy: float

    def __post_init__(self) -> None:
        for name, value in (("dx", self.dx), ("dy", self.dy)):
            if not np.isfinite(value) or value <= 0.0:
                raise ValueError(f"{name} must be positive and finite, got {value}")


@dataclass(frozen=True)
class CollectiveResponse:
    """Cooperative shift and linewidth of one infinite array, in linewidth units."""

    omega_coop: float
    gamma_coop: float


def cooperative_decay(lat: LatticeConstants) -> float:
    """Cooperative linewidth ``3 / (4 pi dx dy)`` of a sub-wavelength array.

    Raises
    ------
    ValueError
        If either lattice constant is >= 1 wavelength ("not subwavelength"):
        diffraction orders would then carry light out of the specular
        channel and the single-channel description used here breaks down.
    """
    if lat.dx >= 1.0 or lat.dy >= 1.0:
        raise ValueError(
            f"not subwavelength: lattice constants ({lat.dx}, {lat.dy}) must both be < 1"
        )
    return 3.0 / (4.0 * np.pi * lat.dx * lat.dy)


# Window radii tried in turn until the imaginary-part identity is satisfied,
# paired with an empirical model of the identity error relative to the
# cooperative linewidth (used only to pick a starting rung; every rung is
# still validated against the exact identity before being accepted).  The
# windowed-sum error is not monotone in the radius, so each rung is checked
# independently and the best one is kept as a fallback.
_RADIUS_LADDER = ((12.0, 7e-5), (16.0, 4e-5), (27.0, 1e-7), (44.0, 1e-7), (70.0, 1e-7))
_CHUNK_POINTS = 4_000_000

_memo: dict[tuple[float, float], tuple[complex, float]] = {}  # value, residual
_memo_lock = threading.Lock()


def _windowed_sum(dx: float, dy: float, r_window: float) -> complex:
    """Sum of in-plane couplings over the lattice with a raised-cosine window.

    The window is 1 out to ``r_window / 2``, falls as a half-cosine, and
    reaches 0 at ``3 * r_window``.  The sum excludes the origin and is
    evaluated in column chunks to bound peak memory.
    """
    r_cut = 3.0 * r_window
    r_flat = 0.5 * r_window
    n_max = int(np.floor(r_cut / dx))
    m_max = int(np.floor(r_cut / dy))
    ys = np.arange(-m_max, m_max + 1) * dy
    chunk_cols = max(1, _CHUNK_POINTS // (2 * m_max + 1))
    total = 0.0 + 0.0j
    for n0 in range(-n_max, n_max + 1, chunk_cols):
        xs = np.arange(n0, min(n0 + chunk_cols, n_max + 1)) * dx
        x = xs[:, None]
        y = ys[None, :]
        r = np.hypot(x, y)
        mask = (r > 0.0) & (r <= r_cut)
        xm = np.broadcast_to(x, r.shape)[mask]
        ym = np.broadcast_to(y, r.shape)[mask]
        rm = r[mask]
        window = np.ones_like(rm)
        taper = rm > r_flat
        window[taper] = 0.5 * (1.0 + np.cos(np.pi * (rm[taper] - r_flat) / (r_cut - r_flat)))
        total += np.sum(coupling_xx(xm, ym, 0.0) * window)
    return complex(total)


def in_plane_sum(lat: LatticeConstants, tol: float = 1e-4) -> complex:
    """Windowed lattice sum of in-plane couplings, excluding the origin.

    The real part equals ``-omega_coop`` and the imaginary part equals
    ``(gamma_coop - 1) / 2``; the latter identity is exact and serves as
    the convergence criterion.

    Parameters
    ----------
    lat:
        Lattice constants (both must be sub-wavelength).
    tol:
        Absolute accuracy target, in linewidth units.  Window radii from an
        internal ladder are tried until the imaginary-part identity is met
        to ``tol / 2``.  If no rung meets it but the best rung is within
        ``100 * tol``, that value is returned with a warning; otherwise a
        :class:`~atomlens.errors.NumericalError` reports the residual.

    Notes
    -----
    Results are memoized per lattice (constants rounded to 1e-6), and the
    memo is thread-safe.
    """
    gamma_c = cooperative_decay(lat)
    key = (round(lat.dx, 6), round(lat.dy, 6))
    with _memo_lock:
        if key in _memo:
            value, residual = _memo[key]
            if residual < 0.5 * tol:
                return value
    target_im = 0.5 * (gamma_c - 1.0)
    # start at the first rung whose modeled error is expected to pass
    start = next(
        (i for i, (_, c_err) in enumerate(_RADIUS_LADDER) if c_err * gamma_c < 0.5 * tol),
        2,
    )
    best: complex | None = None
    best_err = np.inf
    for r_window, _ in _RADIUS_LADDER[start:]:
        value = _windowed_sum(lat.dx, lat.dy, r_window)
        err = abs(value.imag - target_im)
        if err < best_err:
            best, best_err = value, err
        if err < 0.5 * tol:
            break
    else:
        if best_err < 100.0 * tol:
            warnings.warn(
                f"lattice sum for ({lat.dx:.6g}, {lat.dy:.6g}) converged only to "
                f"residual {best_err:.2e} (target {tol:.1e})",
                stacklevel=2,
            )
        else:
            raise NumericalError(
                f"lattice sum for ({lat.dx:.6g}, {lat.dy:.6g}) did not converge: "
                f"best residual estimate {best_err:.2e} exceeds {100.0 * tol:.1e}"
            )
    assert best is not None
    with _memo_lock:
        stored = _memo.get(key)
        if stored is None or stored[1] > best_err:
            _memo[key] = (best, best_err)
        return _memo[key][0]


def cooperative_shift(lat: LatticeConstants, tol: float = 1e-4) -> float:
    """Cooperative resonance shift of the array, ``-Re`` of the lattice sum."""
    return -in_plane_sum(lat, tol=tol).real


def collective_response(lat: LatticeConstants, tol: float = 1e-4) -> CollectiveResponse:
    """Bundle the cooperative shift and linewidth of one array.

    The linewidth uses the exact closed form rather than the numerical sum.
    """
    return CollectiveResponse(
        omega_coop=cooperative_shift(lat, tol=tol),
        gamma_coop=cooperative_decay(lat),
    )


def single_layer_tr(delta, resp: CollectiveResponse, gamma_prime: float = 0.0):
    """Transmission and reflection amplitudes of one infinite array.

    Parameters
    ----------
    delta:
        Drive detuning from the bare single-emitter resonance, in linewidth
        units.  Scalar or array.
    resp:
        Collective response of the array.
    gamma_prime:
        Extra single-emitter broadening.

    Returns
    -------
    (t, r):
        Transmission and reflection amplitudes for normal incidence.  They
        satisfy ``r = t - 1`` always, and ``|t|^2 + |r|^2 = 1`` when
        ``gamma_prime = 0``.
    """
    if gamma_prime < 0.0:
        raise ValueError(f"gamma_prime must be non-negative, got {gamma_prime}")
    delta = np.asarray(delta, dtype=float)
    denom = delta - resp.omega_coop + 0.5j * (resp.gamma_coop + gamma_prime)
    t = 1.0 - 0.5j * resp.gamma_coop / denom
    r = t - 1.0
    if np.ndim(t) == 0:
        return complex(t), complex(r)
    return t, r
