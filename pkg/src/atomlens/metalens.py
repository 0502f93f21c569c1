"""Assembly of a flat lens from concentric rings of emitter-array stacks.

Each ring of the lens is a three-layer stack whose lattice constants and
spacing are chosen (via the phase design table) so the ring is transparent
on resonance while imprinting the local value of an ideal lens phase
profile.  Rings are populated on their own rectangular lattices anchored to
the global origin; optional buffer corridors stitch adjacent rings together
so that no emitter pair ends up closer than the hard-sphere limit.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigError, NumericalError
from .greens import K0, EmitterRates
from .collective2d import LatticeConstants
from .multilayer import (
    DEFAULT_D_MIN,
    DesignTriple,
    PhaseTable,
    build_phase_table,
    is_empty_triple,
    lattice_for_phase,
)

__all__ = [
    "MetalensParams",
    "RingSpec",
    "EmitterEnsemble",
    "ideal_phase",
    "wrap_phase",
    "build_rings",
    "populate_ring",
    "build_buffer",
    "assemble_metalens",
    "save_design",
    "load_design",
]

_TOL = 1e-9  # coordinate tolerance for deduplication and column grouping


def wrap_phase(phi):
    """Wrap angles into ``(-pi, pi]`` (scalar or array)."""
    phi = np.asarray(phi, dtype=float)
    wrapped = (phi + np.pi) % (2.0 * np.pi) - np.pi
    wrapped = np.where(wrapped == -np.pi, np.pi, wrapped)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True)
class MetalensParams:
    """Design parameters of a ring lens.

    Attributes
    ----------
    f:
        Focal length, wavelength units.
    r_lens:
        Lens radius.
    delta_r:
        Nominal ring width.
    phi0:
        Global phase offset of the lens profile, radians.
    alpha:
        Buffer fraction: each ring from the second onward reserves the
        innermost ``alpha * delta_r`` of its width for the stitching buffer.
    d_min:
        Smallest admissible lattice constant (hard-sphere limit).
    gamma_prime:
        Extra single-emitter broadening used when simulating the lens.
    """

    f: float
    r_lens: float
    delta_r: float
    phi0: float
    alpha: float
    d_min: float = DEFAULT_D_MIN
    gamma_prime: float = 0.0

    def __post_init__(self) -> None:
        if not np.isfinite(self.f) or self.f <= 0.0:
            raise ConfigError(f"focal length must be positive, got {self.f}")
        if not np.isfinite(self.r_lens) or self.r_lens <= 0.0:
            raise ConfigError(f"lens radius must be positive, got {self.r_lens}")
        if not np.isfinite(self.delta_r) or self.delta_r <= 0.0:
            raise ConfigError(f"ring width must be positive, got {self.delta_r}")
        if not np.isfinite(self.phi0):
            raise ConfigError(f"phase offset must be finite, got {self.phi0}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"buffer fraction must be in [0, 1], got {self.alpha}")
        if not np.isfinite(self.d_min) or self.d_min <= 0.0:
            raise ConfigError(f"d_min must be positive, got {self.d_min}")
        if self.gamma_prime < 0.0:
            raise ConfigError(f"gamma_prime must be non-negative, got {self.gamma_prime}")


@dataclass(frozen=True)
class RingSpec:
    """One ring of the lens: geometry, target phase, and realizing design."""

    index: int
    r_inner: float
    r_outer: float
    phi: float
    triple: DesignTriple


@dataclass
class EmitterEnsemble:
    """A concrete arrangement of emitters ready for the coupled-dipole solver.

    Attributes
    ----------
    positions:
        ``(N, 3)`` emitter coordinates, wavelength units.
    rates:
        Linewidths shared by all emitters.
    symmetric:
        True when the ensemble is closed under the mirrors
        ``x -> -x`` and ``y -> -y`` (enables the reduced solve).
    d_min:
        Hard-sphere limit the arrangement was built with.
    buffer_mask:
        Boolean flag per emitter marking buffer (stitching) atoms.
    min_pair_distance:
        Smallest pairwise distance found during the assembly audit, if run.
    """

    positions: np.ndarray
    rates: EmitterRates = field(default_factory=EmitterRates)
    symmetric: bool = False
    d_min: float = DEFAULT_D_MIN
    buffer_mask: np.ndarray | None = None
    min_pair_distance: float | None = None

    def __post_init__(self) -> None:
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        if self.buffer_mask is None:
            self.buffer_mask = np.zeros(len(self.positions), dtype=bool)

    @property
    def n_atoms(self) -> int:
        return len(self.positions)


def ideal_phase(r, f: float, phi0: float = 0.0):
    """Ideal thin-lens phase profile at radius ``r``, wrapped to ``(-pi, pi]``.

    ``wrap(K0 * (f - sqrt(r^2 + f^2)) + phi0)``: flat wavefronts acquire
    the spherical curvature that converges at distance ``f`` behind the lens.
    """
    r = np.asarray(r, dtype=float)
    return wrap_phase(K0 * (f - np.sqrt(r * r + f * f)) + phi0)


def ring_layout(params: MetalensParams) -> list[tuple[float, float, float]]:
    """Radial extents and target phase of each ring of the lens partition.

    Ring ``j`` spans ``[(j-1) delta_r, min(j delta_r, r_lens))``; its target
    phase is the ideal profile evaluated at the radial midpoint of the
    clipped extent.  Returns ``(r_inner, r_outer, phi)`` per ring.
    """
    layout: list[tuple[float, float, float]] = []
    j = 1
    while (j - 1) * params.delta_r < params.r_lens - 1e-12:
        r_in = (j - 1) * params.delta_r
        r_out = min(j * params.delta_r, params.r_lens)
        phi_j = float(ideal_phase(0.5 * (r_in + r_out), params.f, params.phi0))
        layout.append((r_in, r_out, phi_j))
        j += 1
    return layout


def build_rings(params: MetalensParams, table: PhaseTable | None = None) -> list[RingSpec]:
    """Partition the lens into rings and pick a design triple for each.

    Phases inside the unreachable band yield the empty-ring sentinel.

    Passing a prebuilt ``table`` avoids rebuilding it; the design geometry
    depends only on the lossless problem, so a table built at any broadening
    gives identical rings.
    """
    if table is None:
        table = build_phase_table(d_min=params.d_min, gamma_prime=params.gamma_prime)
    if abs(table.d_min - params.d_min) > 1e-12:
        raise ConfigError(
            f"table d_min {table.d_min} does not match lens d_min {params.d_min}"
        )
    rings: list[RingSpec] = []
    for j, (r_in, r_out, phi_j) in enumerate(ring_layout(params), start=1):
        triple = lattice_for_phase(phi_j, table)
        rings.append(RingSpec(index=j, r_inner=r_in, r_outer=r_out, phi=phi_j, triple=triple))
    return rings


def _annulus_nodes(lat: LatticeConstants, r_lo: float, r_hi: float) -> np.ndarray:
    """Lattice nodes ``(n dx, m dy)`` with radius in ``[r_lo, r_hi)``."""
    if r_hi <= r_lo:
        return np.zeros((0, 2))
    nx = int(np.floor(r_hi / lat.dx)) + 1
    ny = int(np.floor(r_hi / lat.dy)) + 1
    xs = np.arange(-nx, nx + 1) * lat.dx
    ys = np.arange(-ny, ny + 1) * lat.dy
    x = xs[:, None]
    y = ys[None, :]
    rr = np.hypot(x, y)
    mask = (rr >= r_lo) & (rr < r_hi)
    return np.column_stack(
        [np.broadcast_to(x, rr.shape)[mask], np.broadcast_to(y, rr.shape)[mask]]
    )


def populate_ring(ring: RingSpec, r_start: float | None = None) -> np.ndarray:
    """In-plane emitter positions of one ring body.

    Nodes sit at integer multiples of the ring's lattice constants (so a
    full disk includes a node at the origin) and keep radii in
    ``[r_start, r_outer)``, where ``r_start`` defaults to the ring's inner
    radius and is raised when a buffer corridor occupies the inner edge.

    Returns an ``(n, 2)`` array of xy coordinates (the three stack layers
    are added during assembly).
    """
    if is_empty_triple(ring.triple):
        return np.zeros((0, 2))
    lat = LatticeConstants(ring.triple.dx, ring.triple.dy)
    lo = ring.r_inner if r_start is None else r_start
    return _annulus_nodes(lat, lo, ring.r_outer)


def _columns(points_uv: np.ndarray) -> dict[float, np.ndarray]:
    """Group quadrant points by their (rounded) transverse coordinate ``u``."""
    cols: dict[float, list[float]] = {}
    for u, v in points_uv:
        cols.setdefault(round(u, 9), []).append(v)
    return {u: np.sort(np.asarray(vs)) for u, vs in cols.items()}


def _orbit_images(u: float, v: float) -> np.ndarray:
    """Distinct mirror images of an in-plane point under the two sign flips."""
    images = [(u, v)]
    if abs(u) > _TOL:
        images.append((-u, v))
    if abs(v) > _TOL:
        images.append((u, -v))
    if abs(u) > _TOL and abs(v) > _TOL:
        images.append((-u, -v))
    return np.asarray(images)


def _thin_connectors(candidates: np.ndarray, body_xy: np.ndarray,
                     threshold: float) -> np.ndarray:
    """Keep connector orbits no closer than ``threshold`` to anything else.

    Candidates (one quadrant) are processed in construction order; each is
    expanded to its full mirror orbit, which is kept only if every image
    clears the ring bodies, the orbits already accepted, and the other
    images of its own orbit.  Accepting or dropping whole orbits preserves
    the fourfold mirror symmetry of the assembly.
    """
    body_tree = cKDTree(body_xy) if len(body_xy) else None
    accepted: list[np.ndarray] = []
    accepted_flat: np.ndarray | None = None
    for u, v in candidates:
        orbit = _orbit_images(u, v)
        if body_tree is not None:
            dist, _ = body_tree.query(orbit, k=1)
            if float(np.min(dist)) < threshold:
                continue
        if len(orbit) > 1:
            diffs = orbit[:, None, :] - orbit[None, :, :]
            d2 = np.einsum("ijk,ijk->ij", diffs, diffs)
            d2[np.arange(len(orbit)), np.arange(len(orbit))] = np.inf
            if float(np.min(d2)) < threshold * threshold:
                continue
        if accepted_flat is not None:
            diffs = orbit[:, None, :] - accepted_flat[None, :, :]
            d2 = np.einsum("ijk,ijk->ij", diffs, diffs)
            if float(np.min(d2)) < threshold * threshold:
                continue
        accepted.append(orbit)
        accepted_flat = orbit if accepted_flat is None else np.vstack(
            [accepted_flat, orbit])
    if not accepted:
        return np.zeros((0, 2))
    return np.vstack(accepted)


def build_buffer(
    prev_ring: RingSpec,
    ring: RingSpec,
    r_start: float,
    d_min: float,
    prev_positions: np.ndarray,
    ring_positions: np.ndarray,
) -> np.ndarray:
    """In-plane positions of the stitching buffer between two adjacent rings.

    The buffer occupies ``[ring.r_inner, r_start)``.  When the two rings
    share the hard-sphere constant along one axis, their lattice columns
    along that axis are connected by straight runs of emitters spaced no
    finer than ``d_min``; otherwise the corridor is simply populated as a
    normal part of the outer ring.

    Connectors are built in one quadrant and mirrored, preserving the
    fourfold mirror symmetry of the lens.  Candidates that would land
    within ``0.9 * d_min`` of a ring body or of one another are dropped
    (whole mirror orbits at a time), so the stitch never violates the
    spacing the assembly audit enforces.
    """
    t_prev, t_cur = prev_ring.triple, ring.triple
    if is_empty_triple(t_prev) or is_empty_triple(t_cur):
        return np.zeros((0, 2))
    threshold = 0.9 * d_min + 1e-9
    shared_y = abs(t_prev.dy - d_min) < _TOL and abs(t_cur.dy - d_min) < _TOL
    shared_x = abs(t_prev.dx - d_min) < _TOL and abs(t_cur.dx - d_min) < _TOL
    if not (shared_y or shared_x):
        lat = LatticeConstants(t_cur.dx, t_cur.dy)
        corridor = _annulus_nodes(lat, ring.r_inner, r_start)
        if len(corridor) and len(prev_positions):
            dist, _ = cKDTree(prev_positions).query(corridor, k=1)
            corridor = corridor[dist >= threshold]
        return corridor
    if shared_y:
        # columns along y at x = n * dx
        prev_uv = prev_positions
        cur_uv = ring_positions
        du_prev = t_prev.dx
    else:
        # columns along x at y = m * dy: swap roles of the axes
        prev_uv = prev_positions[:, ::-1]
        cur_uv = ring_positions[:, ::-1]
        du_prev = t_prev.dy
    quad = lambda p: p[(p[:, 0] >= -_TOL) & (p[:, 1] >= -_TOL)]
    cols_prev = _columns(quad(prev_uv))
    cols_cur = _columns(quad(cur_uv))
    if not cols_prev or not cols_cur:
        return np.zeros((0, 2))
    u_max = max(cols_prev) + 0.75 * du_prev
    cols_cur = {u: v for u, v in cols_cur.items() if u <= u_max + _TOL}
    if not cols_cur:
        return np.zeros((0, 2))
    prev_tops = sorted((u, v[-1]) for u, v in cols_prev.items())
    cur_bottoms = sorted((u, v[0]) for u, v in cols_cur.items())
    if len(cur_bottoms) <= len(prev_tops):
        fewer, other = cur_bottoms, prev_tops
        fewer_is_cur = True
    else:
        fewer, other = prev_tops, cur_bottoms
        fewer_is_cur = False
    other_u = np.array([u for u, _ in other])
    new_pts: list[tuple[float, float]] = []
    for u_f, v_f in fewer:
        k = int(np.argmin(np.abs(other_u - u_f)))
        u_o, v_o = other[k]
        if fewer_is_cur:
            (u_cur, v_cur), (u_prev, v_prev) = (u_f, v_f), (u_o, v_o)
        else:
            (u_cur, v_cur), (u_prev, v_prev) = (u_o, v_o), (u_f, v_f)
        if v_cur <= v_prev + _TOL:  # connect only radially outward
            continue
        gap = float(np.hypot(u_cur - u_prev, v_cur - v_prev))
        n_fill = max(0, int(np.floor(gap / d_min)) - 1)
        for m in range(1, n_fill + 1):
            s = m / (n_fill + 1)
            new_pts.append((u_prev + s * (u_cur - u_prev), v_prev + s * (v_cur - v_prev)))
    if not new_pts:
        return np.zeros((0, 2))
    body_uv = np.vstack([prev_uv, cur_uv])
    out = _thin_connectors(np.asarray(new_pts), body_uv, threshold)
    if shared_x:
        out = out[:, ::-1]
    return out


def _dedup(positions: np.ndarray, flags: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Remove duplicate positions (1e-9 grid), OR-ing flags of duplicates."""
    keys = np.round(positions / _TOL).astype(np.int64)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    perm = np.argsort(inverse, kind="stable")
    starts = np.searchsorted(inverse[perm], np.arange(len(uniq)))
    pos_out = positions[perm[starts]]
    flag_out = np.maximum.reduceat(flags[perm].astype(np.int8), starts).astype(bool)
    return pos_out, flag_out


def assemble_metalens(
    params: MetalensParams,
    table: PhaseTable | None = None,
    audit: bool = True,
) -> EmitterEnsemble:
    """Build the full three-layer emitter ensemble of a ring lens.

    Each non-empty ring contributes its body (and, from the second ring on,
    a stitching buffer when ``alpha > 0``) replicated on three layers at
    ``z in {-dz_j, 0, +dz_j}``.  Duplicate positions are removed, and an
    audit verifies that no pair involving a buffer atom is closer than
    ``0.9 * d_min`` (raising :class:`~atomlens.errors.NumericalError` with
    the offending pairs otherwise).

    Returns
    -------
    EmitterEnsemble
        Mirror-symmetric in x and y, with the global minimum pair distance
        recorded when the audit runs.
    """
    rings = build_rings(params, table)
    bodies: dict[int, np.ndarray] = {}
    all_pos: list[np.ndarray] = []
    all_buf: list[np.ndarray] = []
    for i, ring in enumerate(rings):
        if is_empty_triple(ring.triple):
            bodies[i] = np.zeros((0, 2))
            continue
        prev = rings[i - 1] if i > 0 else None
        has_buffer = (
            prev is not None
            and not is_empty_triple(prev.triple)
            and params.alpha > 0.0
        )
        r_start = ring.r_inner + params.alpha * params.delta_r if has_buffer else ring.r_inner
        if r_start >= ring.r_outer - 1e-12:  # degenerate sliver: no room for a buffer
            r_start = ring.r_inner
            has_buffer = False
        body = populate_ring(ring, r_start=r_start)
        bodies[i] = body
        plane = [body]
        plane_flags = [np.zeros(len(body), dtype=bool)]
        if has_buffer:
            buf = build_buffer(
                prev, ring, r_start, params.d_min, bodies[i - 1], body
            )
            plane.append(buf)
            plane_flags.append(np.ones(len(buf), dtype=bool))
        xy = np.vstack(plane)
        fl = np.concatenate(plane_flags)
        dz = ring.triple.dz
        for z in (-dz, 0.0, dz):
            all_pos.append(np.column_stack([xy, np.full(len(xy), z)]))
            all_buf.append(fl)
    if all_pos:
        positions = np.vstack(all_pos)
        flags = np.concatenate(all_buf)
        positions, flags = _dedup(positions, flags)
    else:
        positions = np.zeros((0, 3))
        flags = np.zeros(0, dtype=bool)
    min_dist: float | None = None
    if audit and len(positions) > 1:
        tree = cKDTree(positions)
        dists, _ = tree.query(positions, k=2)
        min_dist = float(dists[:, 1].min())
        pairs = tree.query_pairs(0.9 * params.d_min, output_type="ndarray")
        if len(pairs):
            bad = pairs[flags[pairs[:, 0]] | flags[pairs[:, 1]]]
            if len(bad):
                sample = ", ".join(
                    f"({i}, {j}): {np.linalg.norm(positions[i] - positions[j]):.3e}"
                    for i, j in bad[:10]
                )
                raise NumericalError(
                    f"buffer atoms violate the 0.9*d_min spacing audit; "
                    f"{len(bad)} offending pairs, first: {sample}"
                )
    return EmitterEnsemble(
        positions=positions,
        rates=EmitterRates(gamma_prime=params.gamma_prime),
        symmetric=True,
        d_min=params.d_min,
        buffer_mask=flags,
        min_pair_distance=min_dist,
    )


# ---------------------------------------------------------------------------
# Design persistence
# ---------------------------------------------------------------------------

_UNIT_NOTE = (
    "# lengths in wavelength units; rates and shifts in single-emitter "
    "linewidth units; phase in radians\n"
)


def save_design(directory, ens: EmitterEnsemble, params: MetalensParams, rings: list[RingSpec]) -> None:
    """Write positions (CSV) and design metadata (JSON) into ``directory``."""
    from pathlib import Path

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "positions.csv", "w", newline="") as fh:
        fh.write(_UNIT_NOTE)
        fh.write("x,y,z,is_buffer\n")
        for (x, y, z), b in zip(ens.positions, ens.buffer_mask):
            fh.write(f"{x:.12g},{y:.12g},{z:.12g},{int(b)}\n")
    meta = {
        "params": {
            "f": params.f,
            "r_lens": params.r_lens,
            "delta_r": params.delta_r,
            "phi0": params.phi0,
            "alpha": params.alpha,
            "d_min": params.d_min,
            "gamma_prime": params.gamma_prime,
        },
        "n_atoms": ens.n_atoms,
        "n_buffer": int(np.sum(ens.buffer_mask)),
        "symmetric": ens.symmetric,
        "min_pair_distance": ens.min_pair_distance,
        "rings": [
            {
                "index": r.index,
                "r_inner": r.r_inner,
                "r_outer": r.r_outer,
                "phi": r.phi,
                "triple": None
                if is_empty_triple(r.triple)
                else {
                    "dx": r.triple.dx,
                    "dy": r.triple.dy,
                    "dz": r.triple.dz,
                    "phase": r.triple.phase,
                    "transmittance": r.triple.transmittance,
                },
            }
            for r in rings
        ],
    }
    with open(directory / "design.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_design(directory) -> tuple[EmitterEnsemble, dict]:
    """Read back an ensemble and its metadata written by :func:`save_design`."""
    from pathlib import Path

    directory = Path(directory)
    with open(directory / "design.json") as fh:
        meta = json.load(fh)
    rows = np.loadtxt(directory / "positions.csv", delimiter=",", skiprows=2, ndmin=2)
    if rows.size == 0:
        rows = rows.reshape(0, 4)
    ens = EmitterEnsemble(
        positions=rows[:, :3],
        rates=EmitterRates(gamma_prime=meta["params"]["gamma_prime"]),
        symmetric=bool(meta["symmetric"]),
        d_min=meta["params"]["d_min"],
        buffer_mask=rows[:, 3].astype(bool),
        min_pair_distance=meta.get("min_pair_distance"),
    )
    return ens, meta
