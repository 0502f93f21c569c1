"""Dense coupled-dipole solver for finite emitter ensembles.

Solves the linear response of ``N`` x-polarized emitters to a scalar drive:
``(1/polarizability_i) q_i - sum_{j != i} G_ij q_j = u_i`` with ``G_ij`` the
pairwise coupling kernel and ``u_i`` the drive amplitude at emitter ``i``
relative to its peak value.  The solution amplitudes ``q_i`` feed every
downstream field and mode-projection computation.

Ensembles that are closed under the mirrors ``x -> -x`` and ``y -> -y`` and
driven by a field even under both can be reduced to one unknown per mirror
orbit (roughly a quarter of the atoms), with couplings summed over the
distinct mirror images of each source atom.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
import psutil
import scipy.linalg
from scipy.spatial import cKDTree

from .errors import ConfigError, MemoryBudgetError, NumericalError
from .greens import K0, EmitterRates, bare_polarizability, coupling_xx
from .metalens import EmitterEnsemble

__all__ = [
    "DipoleSolution",
    "DriveField",
    "FieldMap",
    "field_map",
    "memory_estimate",
    "plane_wave",
    "save_field_map",
    "scattered_field",
    "solve_dipoles",
]

_DTYPES = {"double": np.complex128, "single": np.complex64}
_RESIDUAL_LIMITS = {"double": 1e-6, "single": 1e-3}
_BLOCK_ELEMENTS = 2_000_000
_AXIS_TOL = 1e-9
_POINT_CLEARANCE = 1e-6


@dataclass(frozen=True)
class DriveField:
    """Scalar drive field evaluated at arbitrary points.

    Parameters
    ----------
    evaluate:
        Callable ``(x, y, z) -> complex`` returning the drive amplitude
        relative to its peak value; must accept same-shape arrays.
    even_xy:
        True when the field is even under both ``x -> -x`` and ``y -> -y``,
        enabling the mirror-symmetry reduction of the solve.
    """

    evaluate: Callable[..., np.ndarray]
    even_xy: bool = False


def plane_wave() -> DriveField:
    """Unit-amplitude plane wave travelling along ``+z``."""
    return DriveField(evaluate=lambda x, y, z: np.exp(1j * K0 * np.asarray(z)),
                      even_xy=True)


@dataclass(frozen=True, eq=False)
class DipoleSolution:
    """Result of a coupled-dipole solve.

    Attributes
    ----------
    amplitudes:
        Complex dipole amplitudes in full ensemble order, shape ``(N,)``.
    precision:
        ``"double"`` or ``"single"`` — the precision the system was solved in.
    reduced_size:
        Number of unknowns actually factorized (``< N`` when the mirror
        reduction was used).
    residual:
        Relative residual of the full-accuracy equations at the returned
        amplitudes.
    drive:
        The drive field used for the solve.
    delta:
        Drive detuning from the bare emitter resonance.
    """

    amplitudes: np.ndarray
    precision: str
    reduced_size: int
    residual: float
    drive: DriveField
    delta: float


def memory_estimate(n_unknowns: int, precision: str = "double") -> int:
    """Bytes needed for the dense system matrix, with 10% overhead.

    Parameters
    ----------
    n_unknowns:
        Size of the linear system (after any symmetry reduction).
    precision:
        ``"double"`` (16-byte complex) or ``"single"`` (8-byte complex).
    """
    if precision not in _DTYPES:
        raise ConfigError(f"unknown precision {precision!r}; expected 'single' or 'double'")
    n = int(n_unknowns)
    if n < 0:
        raise ConfigError("n_unknowns must be non-negative")
    itemsize = np.dtype(_DTYPES[precision]).itemsize
    return int(np.ceil(n * n * itemsize * 1.1))


def _mirror_orbits(positions: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Group positions into mirror orbits under ``x -> -x``, ``y -> -y``.

    Returns ``(rep_positions, orbit_of_atom, rep_atom)`` where
    ``rep_positions`` holds one representative per orbit with
    ``x >= 0, y >= 0``, ``orbit_of_atom`` maps each atom to its orbit index
    and ``rep_atom`` is the index of each orbit's representative.  Raises
    :class:`ConfigError` if the ensemble is not reflection-closed.
    """
    x, y, z = positions.T
    keys = np.round(np.column_stack([np.abs(x), np.abs(y), z]), 9)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)

    pattern = 2 * (x < -_AXIS_TOL).astype(np.int64) + (y < -_AXIS_TOL)
    if np.unique(inverse * 4 + pattern).size != len(positions):
        raise ConfigError("ensemble is not reflection-closed: duplicated mirror image")
    expected = np.where(uniq[:, 0] > _AXIS_TOL, 2, 1) * np.where(uniq[:, 1] > _AXIS_TOL, 2, 1)
    counts = np.bincount(inverse, minlength=len(uniq))
    if not np.array_equal(counts, expected):
        raise ConfigError("ensemble is not reflection-closed: missing mirror image")

    first_quadrant = np.flatnonzero(pattern == 0)
    rep_atom = np.full(len(uniq), -1, dtype=np.int64)
    rep_atom[inverse[first_quadrant]] = first_quadrant
    rep_pos = np.column_stack([np.abs(x), np.abs(y), z])[rep_atom]
    return rep_pos, inverse, rep_atom


def _system_blocks(rep_pos: np.ndarray, reduced: bool):
    """Yield ``(row_start, row_stop, block)`` of the system's coupling part.

    ``block`` holds ``-sum_images coupling_xx`` in complex128 for the given
    row range against all columns; the caller adds the diagonal
    ``1/polarizability`` terms.  With ``reduced`` the image sum runs over the
    distinct mirror copies of each source (columns fixed by a mirror are
    skipped for that mirror), else over the identity only.
    """
    n = len(rep_pos)
    signs = ((1, 1), (-1, 1), (1, -1), (-1, -1)) if reduced else ((1, 1),)
    row_block = max(1, _BLOCK_ELEMENTS // max(n, 1))
    for r0 in range(0, n, row_block):
        r1 = min(n, r0 + row_block)
        rows = rep_pos[r0:r1]
        block = np.zeros((r1 - r0, n), dtype=np.complex128)
        for sx, sy in signs:
            if (sx, sy) == (1, 1):
                valid = slice(None)
                cols = rep_pos
            else:
                mask = np.ones(n, dtype=bool)
                if sx == -1:
                    mask &= rep_pos[:, 0] > _AXIS_TOL
                if sy == -1:
                    mask &= rep_pos[:, 1] > _AXIS_TOL
                valid = np.flatnonzero(mask)
                if valid.size == 0:
                    continue
                cols = rep_pos[valid] * np.array([sx, sy, 1.0])
            dx = rows[:, 0, None] - cols[None, :, 0]
            dy = rows[:, 1, None] - cols[None, :, 1]
            dz = rows[:, 2, None] - cols[None, :, 2]
            if (sx, sy) == (1, 1):
                # Self terms sit exactly on the (global) diagonal; mask them
                # with a dummy displacement and zero them after the call.
                diag = np.arange(r0, r1)
                dx[diag - r0, diag] = 1.0
                contrib = coupling_xx(dx, dy, dz)
                contrib[diag - r0, diag] = 0.0
                block -= contrib
            else:
                block[:, valid] -= coupling_xx(dx, dy, dz)
        yield r0, r1, block


def _check_even(values: np.ndarray, inverse: np.ndarray, rep_values: np.ndarray,
                what: str) -> None:
    scale = max(float(np.max(np.abs(values), initial=0.0)), 1e-300)
    err = float(np.max(np.abs(values - rep_values[inverse]), initial=0.0))
    if err > 1e-9 * scale:
        raise ConfigError(f"{what} is not even under the ensemble mirror symmetries "
                          f"(orbit mismatch {err:.2e})")


def solve_dipoles(ens: EmitterEnsemble,
                  drive: Optional[DriveField] = None,
                  delta: float = 0.0,
                  use_symmetry: Optional[bool] = None,
                  precision: str = "double",
                  budget_fraction: float = 0.75,
                  rates: Optional[EmitterRates] = None,
                  shifts: Optional[np.ndarray] = None) -> DipoleSolution:
    """Solve the coupled-dipole system for an ensemble under a drive.

    Parameters
    ----------
    ens:
        Emitter ensemble (positions and rates).
    drive:
        Drive field; defaults to a unit plane wave along ``+z``.
    delta:
        Drive detuning from the bare emitter resonance.
    use_symmetry:
        Force the mirror-orbit reduction on or off.  ``None`` enables it
        automatically when the ensemble is flagged reflection-closed, the
        drive is even in ``x`` and ``y``, and no per-emitter shifts are set.
    precision:
        ``"double"`` or ``"single"`` working precision of the factorization.
    budget_fraction:
        Refuse the solve if the estimated matrix memory exceeds this fraction
        of physical memory.
    rates:
        Override the ensemble's emitter rates (e.g. to sweep the
        non-radiative width without rebuilding the ensemble).
    shifts:
        Optional per-emitter resonance shifts, shape ``(N,)``; emitter ``i``
        responds at detuning ``delta - shifts[i]``.

    Returns
    -------
    DipoleSolution
        Amplitudes in full ensemble order plus solve metadata.
    """
    if precision not in _DTYPES:
        raise ConfigError(f"unknown precision {precision!r}; expected 'single' or 'double'")
    if drive is None:
        drive = plane_wave()
    rates = ens.rates if rates is None else rates
    positions = np.asarray(ens.positions, dtype=float)
    n_atoms = len(positions)
    if n_atoms == 0:
        return DipoleSolution(amplitudes=np.zeros(0, dtype=np.complex128),
                              precision=precision, reduced_size=0, residual=0.0,
                              drive=drive, delta=float(delta))
    if shifts is not None:
        shifts = np.asarray(shifts, dtype=float)
        if shifts.shape != (n_atoms,):
            raise ConfigError(f"shifts must have shape ({n_atoms},), got {shifts.shape}")

    u_full = np.asarray(drive.evaluate(positions[:, 0], positions[:, 1], positions[:, 2]),
                        dtype=np.complex128)
    if u_full.shape != (n_atoms,):
        u_full = np.broadcast_to(u_full, (n_atoms,)).astype(np.complex128)
    if not np.all(np.isfinite(u_full)):
        raise ConfigError("drive is not finite at every emitter position")

    if use_symmetry is None:
        use_symmetry = bool(ens.symmetric) and drive.even_xy and shifts is None

    if use_symmetry:
        rep_pos, inverse, rep_atom = _mirror_orbits(positions)
        u = u_full[rep_atom]
        _check_even(u_full, inverse, u, "drive")
        if shifts is not None:
            _check_even(shifts, inverse, shifts[rep_atom], "shift set")
            shifts_solve = shifts[rep_atom]
        else:
            shifts_solve = None
        solve_pos = rep_pos
    else:
        solve_pos = positions
        inverse = np.arange(n_atoms)
        u = u_full
        shifts_solve = shifts

    n_solve = len(solve_pos)
    estimate = memory_estimate(n_solve, precision)
    budget = budget_fraction * psutil.virtual_memory().total
    if estimate > budget:
        raise MemoryBudgetError(
            f"estimated matrix memory {estimate / 1e9:.2f} GB for {n_solve} unknowns "
            f"({precision}) exceeds {budget_fraction:.0%} of physical memory "
            f"({budget / 1e9:.2f} GB)")

    dtype = _DTYPES[precision]
    detunings = delta - shifts_solve if shifts_solve is not None else delta
    diagonal = 1.0 / bare_polarizability(detunings, rates)
    diagonal = np.broadcast_to(np.asarray(diagonal, dtype=np.complex128), (n_solve,))

    # The coupling blocks already carry the couplings to a source's own mirror
    # images on the diagonal; the inverse polarizability adds on top of those.
    matrix = np.empty((n_solve, n_solve), dtype=dtype)
    for r0, r1, block in _system_blocks(solve_pos, reduced=use_symmetry):
        matrix[r0:r1, :] = block
    idx = np.arange(n_solve)
    matrix[idx, idx] += diagonal.astype(dtype)

    anorm = float(np.abs(matrix).sum(axis=0).max())
    lu, piv = scipy.linalg.lu_factor(matrix, overwrite_a=True, check_finite=False)
    gecon = scipy.linalg.get_lapack_funcs("gecon", (lu,))
    rcond, info = gecon(lu, anorm)
    eps = float(np.finfo(dtype).eps)
    if info != 0 or not np.isfinite(rcond) or rcond < 10.0 * eps:
        raise NumericalError(
            f"ill-conditioned coupled-dipole matrix: reciprocal condition estimate "
            f"{float(rcond):.2e} at {precision} precision")
    q = scipy.linalg.lu_solve((lu, piv), u.astype(dtype), check_finite=False)
    q = np.asarray(q, dtype=np.complex128)

    # Residual of the full-accuracy equations at the returned amplitudes,
    # via a re-assembled block matvec (the factored matrix was overwritten).
    residual_vec = diagonal * q - u
    for r0, r1, block in _system_blocks(solve_pos, reduced=use_symmetry):
        residual_vec[r0:r1] += block @ q
    rel_residual = float(np.linalg.norm(residual_vec) / np.linalg.norm(u))
    limit = _RESIDUAL_LIMITS[precision]
    if rel_residual > limit:
        raise NumericalError(
            f"solve residual {rel_residual:.2e} exceeds the {precision}-precision "
            f"limit {limit:.0e}")

    return DipoleSolution(amplitudes=q[inverse].copy(), precision=precision,
                          reduced_size=n_solve, residual=rel_residual,
                          drive=drive, delta=float(delta))


def _scattered_sum(points: np.ndarray, positions: np.ndarray,
                   amplitudes: np.ndarray) -> np.ndarray:
    """Re-scattered field at ``points`` (no drive term), blocked over atoms."""
    total = np.zeros(len(points), dtype=np.complex128)
    if len(positions) == 0:
        return total
    row_block = max(1, _BLOCK_ELEMENTS // len(positions))
    for p0 in range(0, len(points), row_block):
        p1 = min(len(points), p0 + row_block)
        chunk = points[p0:p1]
        dx = chunk[:, 0, None] - positions[None, :, 0]
        dy = chunk[:, 1, None] - positions[None, :, 1]
        dz = chunk[:, 2, None] - positions[None, :, 2]
        total[p0:p1] = coupling_xx(dx, dy, dz) @ amplitudes
    return total


def scattered_field(ens: EmitterEnsemble, sol: DipoleSolution,
                    point: Union[Sequence[float], np.ndarray]) -> Union[complex, np.ndarray]:
    """Total relative field (drive plus re-scattered) at one or more points.

    Parameters
    ----------
    ens, sol:
        Ensemble and its dipole solution.
    point:
        Coordinates ``(x, y, z)`` or an ``(P, 3)`` array of points.

    Returns
    -------
    complex or ndarray
        ``E_x / E_peak`` at the requested point(s).

    Raises
    ------
    ValueError
        If any point lies within ``1e-6`` of an emitter, where the
        near-field kernel is not a meaningful observable.
    """
    pts = np.asarray(point, dtype=float)
    scalar = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[1] != 3:
        raise ConfigError(f"points must have shape (3,) or (P, 3), got {pts.shape}")
    positions = np.asarray(ens.positions, dtype=float)
    if len(positions):
        nearest, _ = cKDTree(positions).query(pts, k=1)
        if np.any(nearest < _POINT_CLEARANCE):
            raise ValueError(
                f"field point within {_POINT_CLEARANCE:g} of an emitter "
                f"(closest approach {float(np.min(nearest)):.2e})")
    values = sol.drive.evaluate(pts[:, 0], pts[:, 1], pts[:, 2]) \
        + _scattered_sum(pts, positions, sol.amplitudes)
    return complex(values[0]) if scalar else values


@dataclass(frozen=True, eq=False)
class FieldMap:
    """Complex field sampled on a regular planar grid.

    ``field[i, j]`` is the value at in-plane coordinates ``(u[i], v[j])``;
    ``flagged`` marks grid points that fell within the emitter clearance and
    carry NaN.  For plane ``"y=0"`` the axes are ``(u, v) = (x, z)``, for
    ``"x=0"`` they are ``(y, z)`` and for ``"z=<const>"`` they are ``(x, y)``.
    """

    plane: str
    u: np.ndarray
    v: np.ndarray
    field: np.ndarray
    flagged: np.ndarray

    @property
    def intensity(self) -> np.ndarray:
        """Relative intensity ``|E / E_peak|**2`` (NaN at flagged points)."""
        return np.abs(self.field) ** 2


def _parse_plane(plane: str) -> Tuple[int, int, int, float]:
    """Return (u_axis, v_axis, fixed_axis, fixed_value) for a plane spec."""
    text = plane.replace(" ", "")
    if text == "y=0":
        return 0, 2, 1, 0.0
    if text == "x=0":
        return 1, 2, 0, 0.0
    if text.startswith("z="):
        try:
            value = float(text[2:])
        except ValueError as exc:
            raise ConfigError(f"invalid plane {plane!r}") from exc
        return 0, 1, 2, value
    raise ConfigError(f"invalid plane {plane!r}; expected 'y=0', 'x=0' or 'z=<value>'")


def _axis_coords(extent, spacing: float) -> np.ndarray:
    lo, hi = (-float(extent), float(extent)) if np.isscalar(extent) else map(float, extent)
    if hi <= lo:
        raise ConfigError(f"empty axis extent ({lo}, {hi})")
    n = int(round((hi - lo) / spacing)) + 1
    return lo + spacing * np.arange(n)


def field_map(ens: EmitterEnsemble, sol: DipoleSolution, plane: str,
              extent, spacing: float = 0.125) -> FieldMap:
    """Sample the total field on a regular grid in a coordinate plane.

    Parameters
    ----------
    plane:
        ``"y=0"``, ``"x=0"`` or ``"z=<value>"``.
    extent:
        Half-width of both in-plane axes, or a pair
        ``((u_min, u_max), (v_min, v_max))``.
    spacing:
        Grid step along both axes.

    Grid points within the emitter clearance are flagged and set to NaN
    rather than evaluated.
    """
    if spacing <= 0:
        raise ConfigError("spacing must be positive")
    u_axis, v_axis, fixed_axis, fixed_value = _parse_plane(plane)
    if np.isscalar(extent):
        u_extent = v_extent = extent
    else:
        u_extent, v_extent = extent
    u = _axis_coords(u_extent, spacing)
    v = _axis_coords(v_extent, spacing)

    grid_u, grid_v = np.meshgrid(u, v, indexing="ij")
    points = np.empty((grid_u.size, 3), dtype=float)
    points[:, u_axis] = grid_u.ravel()
    points[:, v_axis] = grid_v.ravel()
    points[:, fixed_axis] = fixed_value

    positions = np.asarray(ens.positions, dtype=float)
    if len(positions):
        nearest, _ = cKDTree(positions).query(points, k=1)
        flagged = nearest < _POINT_CLEARANCE
    else:
        flagged = np.zeros(len(points), dtype=bool)

    values = np.full(len(points), np.nan + 0j, dtype=np.complex128)
    good = ~flagged
    if np.any(good):
        pts = points[good]
        values[good] = sol.drive.evaluate(pts[:, 0], pts[:, 1], pts[:, 2]) \
            + _scattered_sum(pts, positions, sol.amplitudes)
    return FieldMap(plane=plane, u=u, v=v,
                    field=values.reshape(grid_u.shape),
                    flagged=flagged.reshape(grid_u.shape))


def save_field_map(directory: Union[str, os.PathLike], name: str,
                   fmap: FieldMap) -> Tuple[str, str]:
    """Write a field map as CSV plus a JSON sidecar describing the grid.

    Returns the paths ``(csv_path, json_path)``.
    """
    os.makedirs(directory, exist_ok=True)
    csv_path = os.path.join(directory, f"{name}.csv")
    json_path = os.path.join(directory, f"{name}.json")

    grid_u = np.repeat(fmap.u, len(fmap.v))
    grid_v = np.tile(fmap.v, len(fmap.u))
    flat = fmap.field.ravel()
    table = np.column_stack([grid_u, grid_v, flat.real, flat.imag,
                             np.abs(flat) ** 2])
    header = ("lengths in wavelength units; field relative to the incident peak amplitude\n"
              "u,v,re_e,im_e,intensity")
    np.savetxt(csv_path, table, delimiter=",", header=header, fmt="%.9g")

    du = float(fmap.u[1] - fmap.u[0]) if len(fmap.u) > 1 else 0.0
    dv = float(fmap.v[1] - fmap.v[0]) if len(fmap.v) > 1 else 0.0
    sidecar = {
        "plane": fmap.plane,
        "u_min": float(fmap.u[0]), "u_max": float(fmap.u[-1]), "n_u": len(fmap.u),
        "v_min": float(fmap.v[0]), "v_max": float(fmap.v[-1]), "n_v": len(fmap.v),
        "spacing_u": du, "spacing_v": dv,
        "n_flagged": int(fmap.flagged.sum()),
        "columns": ["u", "v", "re_e", "im_e", "intensity"],
    }
    with open(json_path, "w", encoding="utf-8") as handle:
        json.dump(sidecar, handle, indent=2, sort_keys=True)
        handle.write("\n")
    return csv_path, json_path
