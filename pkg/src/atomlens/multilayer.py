"""Stacks of identical sub-wavelength arrays: response, dispersion, design.

A stack of ``M`` identical arrays spaced by ``dz`` couples through the
specular plane-wave channel (plus, optionally, near-field corrections that
decay between layers).  Working in units of the cooperative linewidth of a
single array, the stack reduces to an ``M``-site one-dimensional scattering
problem whose transmission has a closed form in terms of the Bloch
propagation constant of the infinite stack.

The design half of the module inverts that relation: for each admissible
pair of lattice constants it finds the spacing at which the stack is
exactly transparent, tabulates the transmission phase picked up there, and
lets callers look up lattice constants that realize a requested phase.
"""
from __future__ import annotations

import csv
import threading
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import bisect

from .errors import ConfigError, NumericalError
from .greens import K0
from .collective2d import (
    CollectiveResponse,
    LatticeConstants,
    collective_response,
    cooperative_decay,
    single_layer_tr,
)

__all__ = [
    "DEFAULT_D_MIN",
    "StackSpec",
    "StackResponse",
    "DesignTriple",
    "EMPTY_RING",
    "PhaseTable",
    "is_empty_triple",
    "evanescent_coupling",
    "stack_response",
    "dispersion_k",
    "closed_form_t",
    "transparency_dz",
    "build_phase_table",
    "lattice_for_phase",
    "phase_in_gap",
    "nearest_row",
    "table_transmission",
    "table_to_csv",
]

DEFAULT_D_MIN = 0.03256
"""Default smallest admissible lattice constant, in wavelength units."""


@dataclass(frozen=True)
class StackSpec:
    """Geometry of a stack of identical arrays.

    Attributes
    ----------
    m_layers:
        Number of layers (>= 1).
    lat:
        In-plane lattice constants shared by all layers.
    dz:
        Layer spacing in wavelength units (> 0).
    """

    m_layers: int
    lat: LatticeConstants
    dz: float

    def __post_init__(self) -> None:
        if int(self.m_layers) != self.m_layers or self.m_layers < 1:
            raise ValueError(f"m_layers must be a positive integer, got {self.m_layers}")
        if not np.isfinite(self.dz) or self.dz <= 0.0:
            raise ValueError(f"dz must be positive and finite, got {self.dz}")

    @property
    def z_positions(self) -> np.ndarray:
        """Layer coordinates ``(n - (M+1)/2) * dz`` for ``n = 1..M`` (centered)."""
        n = np.arange(1, self.m_layers + 1, dtype=float)
        return (n - 0.5 * (self.m_layers + 1)) * self.dz


@dataclass(frozen=True)
class StackResponse:
    """Normal-incidence response of a stack at one detuning."""

    t: complex
    r: complex
    phase: float
    dipoles: np.ndarray


@dataclass(frozen=True)
class DesignTriple:
    """One realizable design point: lattice constants, spacing, and its phase."""

    dx: float
    dy: float
    dz: float
    phase: float
    transmittance: float


EMPTY_RING = DesignTriple(np.nan, np.nan, np.nan, np.nan, 0.0)
"""Sentinel returned when a requested phase falls in the unreachable band."""


def is_empty_triple(triple: DesignTriple) -> bool:
    """True for the sentinel marking an unrealizable phase."""
    return bool(np.isnan(triple.dx))


# ---------------------------------------------------------------------------
# Inter-layer couplings
# ---------------------------------------------------------------------------

_EV_GUARD = 0.95  # lattice constants at or above this are too close to resonance


def _xi(kx: float, ky: float) -> float:
    """Decay length of one evanescent order with transverse wavevector (kx, ky)."""
    k2 = kx * kx + ky * ky
    return 1.0 / np.sqrt(k2 - K0 * K0)


def evanescent_order_term(a: int, b: int, lat: LatticeConstants, separation: float) -> float:
    """Contribution of one evanescent diffraction order to the layer coupling.

    Parameters
    ----------
    a, b:
        Order indices; ``(0, 0)`` is the propagating specular channel and is
        not allowed here.
    lat:
        In-plane lattice constants.
    separation:
        Absolute layer separation ``|z_m - z_n|``.

    Returns
    -------
    float
        Real coupling contribution, in units of the cooperative linewidth
        (the same scaling in which the propagating channel contributes
        ``(i/2) exp(i K0 |z|)``).
    """
    if a == 0 and b == 0:
        raise ValueError("order (0, 0) is the propagating channel, not evanescent")
    kx = 2.0 * np.pi * a / lat.dx
    ky = 2.0 * np.pi * b / lat.dy
    if kx * kx + ky * ky <= K0 * K0:
        raise NumericalError(f"order ({a}, {b}) is not evanescent for lattice {lat}")
    xi = _xi(kx, ky)
    return float(xi / (2.0 * K0) * (K0 * K0 - kx * kx) * np.exp(-abs(separation) / xi))


def evanescent_coupling(n: int, m: int, spec: StackSpec, truncation: int = 60) -> float:
    """Near-field (evanescent) coupling between layers ``n`` and ``m``.

    Sums the contributions of all non-propagating diffraction orders with
    indices up to ``truncation`` in each direction.  The result is real and
    decays exponentially with the layer separation; it is in the same
    cooperative-linewidth units as the propagating coupling
    ``(i/2) exp(i K0 |z_m - z_n|)``.

    Parameters
    ----------
    n, m:
        One-based layer indices; must differ.
    spec:
        Stack geometry.
    truncation:
        Largest order index retained per direction.

    Raises
    ------
    ConfigError
        If either lattice constant is >= 0.95 wavelengths, where the first
        evanescent order approaches the light line and the sum becomes
        near-divergent ("near-divergent regime excluded").
    """
    mm = spec.m_layers
    if not (1 <= n <= mm and 1 <= m <= mm):
        raise ConfigError(f"layer indices ({n}, {m}) out of range 1..{mm}")
    if n == m:
        raise ConfigError("evanescent coupling is defined between distinct layers")
    if int(truncation) < 1:
        raise ConfigError(f"truncation must be >= 1, got {truncation}")
    lat = spec.lat
    if lat.dx >= _EV_GUARD or lat.dy >= _EV_GUARD:
        raise ConfigError(
            f"near-divergent regime excluded: lattice constants ({lat.dx}, {lat.dy}) "
            f"must be < {_EV_GUARD} for the evanescent sum"
        )
    z = spec.z_positions
    sep = abs(z[n - 1] - z[m - 1])
    t = int(truncation)
    a = np.arange(-t, t + 1)
    aa, bb = np.meshgrid(a, a, indexing="ij")
    mask = (aa != 0) | (bb != 0)
    kx = 2.0 * np.pi * aa[mask] / lat.dx
    ky = 2.0 * np.pi * bb[mask] / lat.dy
    k2 = kx * kx + ky * ky
    if np.any(k2 <= K0 * K0):
        raise NumericalError(f"a retained order is not evanescent for lattice {lat}")
    xi = 1.0 / np.sqrt(k2 - K0 * K0)
    terms = xi / (2.0 * K0) * (K0 * K0 - kx * kx) * np.exp(-sep / xi)
    return float(np.sum(terms))


# ---------------------------------------------------------------------------
# Stack response
# ---------------------------------------------------------------------------


def stack_response(
    spec: StackSpec,
    delta: float,
    gamma_prime: float = 0.0,
    include_evanescent: bool = False,
) -> StackResponse:
    """Solve the layer amplitudes of a stack and form its t and r.

    Parameters
    ----------
    spec:
        Stack geometry.
    delta:
        Detuning from the bare single-emitter resonance, in single-emitter
        linewidth units.
    gamma_prime:
        Extra single-emitter broadening, same units.
    include_evanescent:
        Also include the near-field inter-layer couplings (they matter only
        for spacings comparable to the lattice constants).

    Returns
    -------
    StackResponse
        With ``r = t - 1 + ...`` in general; for ``gamma_prime = 0`` the
        response is unitary: ``|t|^2 + |r|^2 = 1``.
    """
    if gamma_prime < 0.0:
        raise ValueError(f"gamma_prime must be non-negative, got {gamma_prime}")
    resp = collective_response(spec.lat)
    return _stack_response_from_resp(resp, spec, delta, gamma_prime, include_evanescent)


def _stack_response_from_resp(
    resp: CollectiveResponse,
    spec: StackSpec,
    delta: float,
    gamma_prime: float,
    include_evanescent: bool = False,
) -> StackResponse:
    """Stack solve reusing an already-computed collective response."""
    gc = resp.gamma_coop
    dh = (float(delta) - resp.omega_coop) / gc
    g = gamma_prime / gc
    alpha_c = -1.0 / (dh + 0.5j * (1.0 + g))
    z = spec.z_positions
    sep = np.abs(z[:, None] - z[None, :])
    gmat = 0.5j * np.exp(1j * K0 * sep)
    np.fill_diagonal(gmat, 0.0)
    if include_evanescent:
        mm = spec.m_layers
        ev = np.zeros((mm, mm))
        for i in range(mm):
            for j in range(i + 1, mm):
                ev[i, j] = ev[j, i] = evanescent_coupling(i + 1, j + 1, spec)
        gmat = gmat + ev
    a_mat = np.diag(np.full(spec.m_layers, 1.0 / alpha_c)) - gmat
    u = np.exp(1j * K0 * z)
    try:
        q = np.linalg.solve(a_mat, u)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"singular stack system: {exc}") from exc
    t = 1.0 + 0.5j * np.sum(q * np.exp(-1j * K0 * z))
    r = 0.5j * np.sum(q * np.exp(1j * K0 * z))
    return StackResponse(t=complex(t), r=complex(r), phase=float(np.angle(t)), dipoles=q)


# ---------------------------------------------------------------------------
# Bloch dispersion and closed-form transmission
# ---------------------------------------------------------------------------


def dispersion_k(
    resp: CollectiveResponse,
    dz: float,
    delta: float = 0.0,
    gamma_prime: float = 0.0,
) -> complex:
    """Bloch propagation constant of the infinite periodic stack.

    Builds the single-cell transfer matrix (one array plus one free
    propagation segment of length ``dz``) and extracts ``k`` from its
    eigenvalues ``exp(+-i k dz)``.  The branch with ``Im k >= 0`` (decaying
    forward) is returned, with ``Re(k dz)`` reduced to ``[0, pi]`` whenever
    that is compatible.

    A warning is issued near band edges, where the two eigenvalues become
    degenerate and the numerical branch choice loses accuracy.
    """
    if dz <= 0.0:
        raise ValueError(f"dz must be positive, got {dz}")
    t1, r1 = single_layer_tr(delta, resp, gamma_prime)
    if abs(t1) < 1e-14:
        raise NumericalError("layer is fully reflecting at this detuning; "
                             "the propagation constant is undefined")
    theta = K0 * dz
    ep = np.exp(1j * theta)
    em = np.exp(-1j * theta)
    cell = np.array(
        [
            [(t1 * t1 - r1 * r1) * ep / t1, r1 * em / t1],
            [-r1 * ep / t1, em / t1],
        ]
    )
    lam = np.linalg.eigvals(cell)
    if abs(lam[0] - lam[1]) < 1e-8 * max(1.0, abs(lam[0])):
        warnings.warn("band edge: propagation constant nearly degenerate", stacklevel=2)
    # Each eigenvalue exp(i k dz) determines k dz up to 2 pi; collect both
    # principal values and their shifts, keep the decaying-forward ones, and
    # prefer Re(k dz) in [0, pi] whenever that is compatible.
    candidates = []
    for val in -1j * np.log(lam):
        candidates.extend([val, val + 2.0 * np.pi])
    # tolerances sized to eigensolver noise at degenerate (band-edge) points
    feasible = [c for c in candidates if c.imag >= -1e-7]
    if not feasible:
        feasible = [max(candidates, key=lambda c: c.imag)]

    def rank(c: complex) -> tuple[int, float]:
        in_window = 0 if -1e-7 <= c.real <= np.pi + 1e-7 else 1
        return (in_window, float(c.real))

    best = min(feasible, key=rank)
    return complex(best / dz)


def _cheb_u(m: int, x: complex) -> complex:
    """``sin(m x) / sin(x)`` with a stable limit at the zeros of ``sin(x)``."""
    s = np.sin(x)
    if abs(s) < 1e-8:
        return complex(m * np.cos(m * x) / np.cos(x))
    return complex(np.sin(m * x) / s)


def closed_form_t(spec: StackSpec, delta: float, gamma_prime: float = 0.0) -> complex:
    """Transmission of an ``M``-layer stack from the Bloch propagation constant.

    Equals the direct layer-by-layer solve (without near-field corrections)
    to numerical precision for any detuning and loss.
    """
    resp = collective_response(spec.lat)
    return _closed_form_t(resp, spec.m_layers, spec.dz, delta, gamma_prime)


def _closed_form_t(
    resp: CollectiveResponse, m_layers: int, dz: float, delta: float, gamma_prime: float
) -> complex:
    t1, _ = single_layer_tr(delta, resp, gamma_prime)
    if abs(t1) < 1e-12:
        return 0.0 + 0.0j
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        k = dispersion_k(resp, dz, delta, gamma_prime)
    x = k * dz
    um = _cheb_u(m_layers, x)
    um1 = _cheb_u(m_layers - 1, x)
    theta = K0 * dz
    denom = um - um1 * np.exp(1j * theta) * t1
    return complex(np.exp(1j * (1 - m_layers) * theta) * t1 / denom)


# ---------------------------------------------------------------------------
# Transparency spacings and the phase design table
# ---------------------------------------------------------------------------


def _branch_index(omega_coop: float) -> int:
    """Bloch-phase multiple used for the transparency condition.

    Arrays with a positive cooperative shift realize full transparency of a
    three-layer stack at ``k dz = 2 pi / 3`` within the admissible spacing
    window; arrays with a negative shift realize it at ``k dz = pi / 3``.
    """
    return 2 if omega_coop > 0.0 else 1


def _root_dz(
    resp: CollectiveResponse, a: int, m_layers: int, dz_min: float = DEFAULT_D_MIN
) -> float:
    """Spacing at which ``Re(k) dz = a pi / M`` on resonance, by bisection."""
    if a < 1 or a >= m_layers:
        raise ConfigError(f"branch index a={a} must satisfy 1 <= a < M={m_layers}")
    target = a * np.pi / m_layers

    def objective(dz: float) -> float:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            k = dispersion_k(resp, dz, 0.0, 0.0)
        return k.real * dz - target

    lo, hi = dz_min, 0.5
    f_lo, f_hi = objective(lo), objective(hi)
    if f_lo == 0.0:
        return lo
    if f_hi == 0.0:
        return hi
    if np.sign(f_lo) == np.sign(f_hi):
        raise NumericalError(
            f"transparency condition a={a}, M={m_layers} unreachable in "
            f"[{dz_min}, 0.5] for omega/gamma = {resp.omega_coop / resp.gamma_coop:.4g}"
        )
    return float(bisect(objective, lo, hi, xtol=1e-10))


def transparency_dz(
    lat: LatticeConstants, a: int, m_layers: int, dz_min: float = DEFAULT_D_MIN
) -> float:
    """Layer spacing making an ``M``-layer stack of this lattice transparent.

    The returned spacing satisfies ``Re(k) dz = a pi / M`` on resonance, at
    which point ``|t| = 1`` exactly for a lossless stack.
    """
    resp = collective_response(lat)
    return _root_dz(resp, a, m_layers, dz_min=dz_min)


_DZ_LO = 1.0 / 6.0
_DZ_HI = 1.0 / 3.0
_DZ_TOL = 1e-9


@dataclass(frozen=True)
class _Row:
    """One evaluated design point on a scan line."""

    coord: float
    dx: float
    dy: float
    dz: float
    phase: float
    transmittance: float
    gamma_coop: float
    omega_coop: float
    line: int  # 0: dx varies (dy = d_min); 1: dy varies (dx = d_min)
    segment: int = 0


@dataclass(frozen=True)
class PhaseTable:
    """Tabulated map from transmission phase to realizable design triples.

    Rows are sorted by phase.  ``gap`` is the largest phase interval not
    covered by any design (the unreachable band, straddling zero phase for
    lossless three-layer designs).
    """

    d_min: float
    resolution: int
    gamma_prime: float
    phases: np.ndarray
    dx: np.ndarray
    dy: np.ndarray
    dz: np.ndarray
    transmittance: np.ndarray
    gamma_coop: np.ndarray
    omega_coop: np.ndarray
    line: np.ndarray
    gap: tuple[float, float]
    rows_by_line: tuple[tuple[_Row, ...], tuple[_Row, ...]] = field(repr=False, default=((), ()))

    def __len__(self) -> int:
        return len(self.phases)

    def triple(self, i: int) -> DesignTriple:
        """Design triple of row ``i``."""
        return DesignTriple(
            dx=float(self.dx[i]),
            dy=float(self.dy[i]),
            dz=float(self.dz[i]),
            phase=float(self.phases[i]),
            transmittance=float(self.transmittance[i]),
        )


def _lat_on_line(line: int, d_min: float, coord: float) -> LatticeConstants:
    if line == 0:
        return LatticeConstants(dx=coord, dy=d_min)
    return LatticeConstants(dx=d_min, dy=coord)


def _evaluate_point(
    line: int, d_min: float, coord: float, gamma_prime: float
) -> _Row | None:
    """Design row at one scan coordinate, or None where no admissible root exists."""
    lat = _lat_on_line(line, d_min, coord)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        # the tabulated phase only needs the lattice sum to ~1e-4 relative
        # to the cooperative linewidth; the memo upgrades automatically if a
        # caller later asks for a tighter absolute tolerance
        tol_eff = 2e-4 * max(1.0, cooperative_decay(lat))
        resp = collective_response(lat, tol=tol_eff)
    if resp.omega_coop == 0.0:
        return None
    a = _branch_index(resp.omega_coop)
    try:
        dz = _root_dz(resp, a, 3, dz_min=min(d_min, 0.9 * _DZ_LO))
    except NumericalError:
        return None
    if not (_DZ_LO - _DZ_TOL <= dz <= _DZ_HI + _DZ_TOL):
        return None
    spec3 = StackSpec(3, lat, dz)
    lossless = _stack_response_from_resp(resp, spec3, 0.0, 0.0)
    if gamma_prime > 0.0:
        trans = abs(_stack_response_from_resp(resp, spec3, 0.0, gamma_prime).t) ** 2
    else:
        trans = abs(lossless.t) ** 2
    return _Row(
        coord=coord,
        dx=lat.dx,
        dy=lat.dy,
        dz=dz,
        phase=lossless.phase,
        transmittance=trans,
        gamma_coop=resp.gamma_coop,
        omega_coop=resp.omega_coop,
        line=line,
    )


_PHASE_GUARD = 0.05  # target max phase spacing (rad) between adjacent rows
_COORD_FLOOR = 1e-6  # stop refining below this coordinate spacing


def _wrapped_diff(p1: float, p0: float) -> float:
    """Signed phase difference wrapped into (-pi, pi]."""
    d = (p1 - p0 + np.pi) % (2.0 * np.pi) - np.pi
    return d if d != -np.pi else np.pi


def _scan_line(line: int, d_min: float, resolution: int, gamma_prime: float) -> list[_Row]:
    """Evaluate one scan line with adaptive refinement near sparse or dead spots."""
    coords = np.linspace(d_min, _EV_GUARD, resolution, endpoint=False)
    evaluated: dict[float, _Row | None] = {}

    def ev(c: float) -> _Row | None:
        c = float(c)
        if c not in evaluated:
            evaluated[c] = _evaluate_point(line, d_min, c, gamma_prime)
        return evaluated[c]

    for c in coords:
        ev(c)
    stack = [(float(coords[i]), float(coords[i + 1])) for i in range(len(coords) - 1)]
    while stack:
        c0, c1 = stack.pop()
        r0, r1 = ev(c0), ev(c1)
        if r0 is None and r1 is None:
            continue
        if r0 is not None and r1 is not None:
            if abs(_wrapped_diff(r1.phase, r0.phase)) <= _PHASE_GUARD:
                continue
            if c1 - c0 <= 10.0 * _COORD_FLOOR:
                continue
        elif c1 - c0 <= _COORD_FLOOR:
            continue
        mid = 0.5 * (c0 + c1)
        ev(mid)
        stack.append((c0, mid))
        stack.append((mid, c1))
    # assign contiguity segments: a dead evaluation between two rows splits them
    rows: list[_Row] = []
    segment = 0
    previous_dead = False
    for c in sorted(evaluated):
        row = evaluated[c]
        if row is None:
            previous_dead = bool(rows)
            continue
        if previous_dead:
            segment += 1
            previous_dead = False
        rows.append(replace(row, segment=segment))
    return rows


_table_cache: dict[tuple[float, int, float], PhaseTable] = {}
_table_lock = threading.Lock()


def build_phase_table(
    d_min: float = DEFAULT_D_MIN, resolution: int = 120, gamma_prime: float = 0.0
) -> PhaseTable:
    """Tabulate realizable transmission phases of transparent 3-layer stacks.

    Scans two lines through the admissible lattice-constant plane (one
    constant pinned at ``d_min``, the other swept up to 0.95), solves the
    transparency spacing at every point, and records the on-resonance
    lossless phase together with the transmittance at ``gamma_prime``.
    Sparse stretches and the edges of the dead zone (where the admissible
    spacing window cannot be met) are refined adaptively so the tabulated
    phases have no spurious holes.

    Parameters
    ----------
    d_min:
        Smallest admissible lattice constant.
    resolution:
        Initial scan points per line (>= 100).
    gamma_prime:
        Broadening at which the transmittance column is evaluated; the
        geometry itself always comes from the lossless problem.

    Returns
    -------
    PhaseTable
        Rows sorted by phase; results are cached per argument triple.
    """
    if not 0.0 < d_min < _EV_GUARD:
        raise ConfigError(f"d_min must be in (0, {_EV_GUARD}), got {d_min}")
    if resolution < 100:
        raise ConfigError(f"resolution must be >= 100 per scan line, got {resolution}")
    if gamma_prime < 0.0:
        raise ConfigError(f"gamma_prime must be non-negative, got {gamma_prime}")
    key = (round(d_min, 9), int(resolution), round(gamma_prime, 9))
    with _table_lock:
        if key in _table_cache:
            return _table_cache[key]
    line0 = _scan_line(0, d_min, resolution, gamma_prime)
    line1 = _scan_line(1, d_min, resolution, gamma_prime)
    rows = line0 + line1
    if not rows:
        raise NumericalError(f"no admissible designs found for d_min={d_min}")
    rows.sort(key=lambda r: r.phase)
    # drop coincident phases (e.g. the shared corner point), keeping higher gamma_coop
    dedup: list[_Row] = []
    for row in rows:
        if dedup and abs(row.phase - dedup[-1].phase) < 1e-9:
            if row.gamma_coop > dedup[-1].gamma_coop:
                dedup[-1] = row
        else:
            dedup.append(row)
    phases = np.array([r.phase for r in dedup])
    diffs = np.diff(phases)
    wrap_gap = phases[0] + 2.0 * np.pi - phases[-1]
    i_max = int(np.argmax(diffs)) if diffs.size else 0
    if diffs.size and diffs[i_max] >= wrap_gap:
        gap = (float(phases[i_max]), float(phases[i_max + 1]))
    else:
        gap = (float(phases[-1]), float(phases[0] + 2.0 * np.pi))
    table = PhaseTable(
        d_min=d_min,
        resolution=int(resolution),
        gamma_prime=gamma_prime,
        phases=phases,
        dx=np.array([r.dx for r in dedup]),
        dy=np.array([r.dy for r in dedup]),
        dz=np.array([r.dz for r in dedup]),
        transmittance=np.array([r.transmittance for r in dedup]),
        gamma_coop=np.array([r.gamma_coop for r in dedup]),
        omega_coop=np.array([r.omega_coop for r in dedup]),
        line=np.array([r.line for r in dedup], dtype=int),
        gap=gap,
        rows_by_line=(tuple(line0), tuple(line1)),
    )
    with _table_lock:
        _table_cache.setdefault(key, table)
        return _table_cache[key]


def _in_gap(phi: float, gap: tuple[float, float]) -> bool:
    lo, hi = gap
    if hi > np.pi:  # gap wraps through +-pi
        return phi > lo or phi < hi - 2.0 * np.pi
    return lo < phi < hi


def _refine_on_line(
    table: PhaseTable, r0: _Row, r1: _Row, phi: float, tol: float = 5e-4
) -> DesignTriple | None:
    """Regula-falsi search of the scan line between two bracketing rows."""
    c0, p0 = r0.coord, r0.phase
    c1, p1 = r1.coord, r1.phase
    f0, f1 = p0 - phi, p1 - phi
    if f0 == 0.0:
        return table_row_triple(r0)
    if f1 == 0.0:
        return table_row_triple(r1)
    if np.sign(f0) == np.sign(f1):
        return None
    best: _Row | None = None
    for _ in range(12):
        c = c0 + (c1 - c0) * (-f0) / (f1 - f0)
        c = min(max(c, min(c0, c1) + 1e-12), max(c0, c1) - 1e-12)
        row = _evaluate_point(r0.line, table.d_min, c, table.gamma_prime)
        if row is None:
            return None
        best = row
        f = row.phase - phi
        if abs(f) <= tol:
            break
        if np.sign(f) == np.sign(f0):
            c0, f0 = c, f
        else:
            c1, f1 = c, f
    return table_row_triple(best) if best is not None else None


def table_row_triple(row: _Row) -> DesignTriple:
    """Design triple stored in one scan row."""
    return DesignTriple(
        dx=row.dx, dy=row.dy, dz=row.dz, phase=row.phase, transmittance=row.transmittance
    )


def phase_in_gap(phi: float, table: PhaseTable) -> bool:
    """True when a transmission phase falls in the table's unreachable band."""
    phi = float((phi + np.pi) % (2.0 * np.pi) - np.pi)
    if phi == -np.pi:
        phi = np.pi
    return _in_gap(phi, table.gap)


def nearest_row(phi: float, table: PhaseTable) -> int:
    """Index of the tabulated row whose phase is closest to ``phi`` (wrapped)."""
    diffs = (table.phases - float(phi) + np.pi) % (2.0 * np.pi) - np.pi
    return int(np.argmin(np.abs(diffs)))


def table_transmission(
    table: PhaseTable, row: int, delta: float = 0.0, gamma_prime: float = 0.0
) -> complex:
    """Complex three-layer transmission of one tabulated design at a detuning.

    Reuses the collective response stored with the row, so no lattice sum is
    recomputed; the model is the same propagating-channel stack solve that
    produced the tabulated phase.
    """
    resp = CollectiveResponse(
        omega_coop=float(table.omega_coop[row]), gamma_coop=float(table.gamma_coop[row])
    )
    lat = LatticeConstants(float(table.dx[row]), float(table.dy[row]))
    spec = StackSpec(3, lat, float(table.dz[row]))
    return _stack_response_from_resp(resp, spec, float(delta), float(gamma_prime)).t


def lattice_for_phase(phi: float, table: PhaseTable) -> DesignTriple:
    """Design triple realizing a requested transmission phase.

    The requested phase is wrapped into ``(-pi, pi]``.  Phases inside the
    unreachable band return the :data:`EMPTY_RING` sentinel.  Otherwise the
    two tabulated rows bracketing the phase are refined by a local root
    search along their scan line, so the returned triple reproduces the
    request to a few times 1e-4 radians; if no clean bracket exists the
    nearest tabulated row is returned as-is.
    """
    phi = float((phi + np.pi) % (2.0 * np.pi) - np.pi)
    if phi == -np.pi:
        phi = np.pi
    if _in_gap(phi, table.gap):
        return EMPTY_RING
    nearest = int(np.argmin(np.abs([_wrapped_diff(p, phi) for p in table.phases])))
    if abs(_wrapped_diff(float(table.phases[nearest]), phi)) < 1e-9:
        return table.triple(nearest)
    # look for a bracketing consecutive pair within one contiguous segment
    for line_rows in table.rows_by_line:
        for r0, r1 in zip(line_rows, line_rows[1:]):
            if r0.segment != r1.segment:
                continue
            lo, hi = sorted((r0.phase, r1.phase))
            if hi - lo < np.pi and lo <= phi <= hi:
                refined = _refine_on_line(table, r0, r1, phi)
                if refined is not None:
                    return refined
    return table.triple(nearest)


def table_to_csv(table: PhaseTable, path) -> None:
    """Write the phase table as CSV with a one-line unit header."""
    with open(path, "w", newline="") as fh:
        fh.write(
            "# lengths in wavelength units; rates and shifts in single-emitter "
            "linewidth units; phase in radians\n"
        )
        writer = csv.writer(fh)
        writer.writerow(
            ["phase", "dx", "dy", "dz", "transmittance", "gamma_coop", "omega_coop"]
        )
        for i in range(len(table)):
            writer.writerow(
                [
                    f"{table.phases[i]:.12g}",
                    f"{table.dx[i]:.12g}",
                    f"{table.dy[i]:.12g}",
                    f"{table.dz[i]:.12g}",
                    f"{table.transmittance[i]:.12g}",
                    f"{table.gamma_coop[i]:.12g}",
                    f"{table.omega_coop[i]:.12g}",
                ]
            )
