"""Ring partition, lattice population, buffers, and lens assembly."""
from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from atomlens import (
    ConfigError,
    K0,
    MetalensParams,
    NumericalError,
    assemble_metalens,
    build_rings,
    ideal_phase,
    is_empty_triple,
    load_design,
    ring_layout,
    save_design,
    wrap_phase,
)
from atomlens.metalens import populate_ring


def test_wrap_phase_range_and_endpoints():
    assert wrap_phase(np.pi) == pytest.approx(np.pi, abs=0.0)
    assert wrap_phase(-np.pi) == pytest.approx(np.pi, abs=0.0)
    assert wrap_phase(3.5 * np.pi) == pytest.approx(-0.5 * np.pi, abs=1e-12)
    values = wrap_phase(np.linspace(-20, 20, 401))
    assert np.all(values > -np.pi)
    assert np.all(values <= np.pi)


@settings(max_examples=200, deadline=None)
@given(st.floats(-100.0, 100.0))
def test_wrap_phase_idempotent_and_aliased(phi):
    w = wrap_phase(phi)
    assert wrap_phase(w) == pytest.approx(w, abs=1e-9)
    assert wrap_phase(phi + 2 * np.pi) == pytest.approx(w, abs=1e-9)


def test_ideal_phase_values():
    assert ideal_phase(0.0, f=5.0, phi0=0.7) == pytest.approx(0.7, abs=1e-12)
    # frozen against a 30-digit evaluation of the same closed form
    assert ideal_phase(1.2, f=3.0, phi0=0.5) == pytest.approx(
        -0.95203711421810494, abs=1e-12
    )
    expected = wrap_phase(K0 * (20.0 - np.sqrt(500.0)))
    assert ideal_phase(10.0, f=20.0) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(-2.266, abs=1e-3)


def test_ideal_phase_monotone_before_wrapping():
    # the unwrapped profile K0 (f - sqrt(R^2+f^2)) decreases with radius
    radii = np.linspace(0.0, 0.4, 50)  # small enough that nothing wraps
    phases = ideal_phase(radii, f=10.0)
    assert np.all(np.diff(phases) < 0)


def test_ring_layout_partition():
    params = MetalensParams(f=20.0, r_lens=10.0, delta_r=2.0 / 3.0,
                            phi0=-2.06, alpha=0.2)
    layout = ring_layout(params)
    assert len(layout) == 15
    for j, (r_in, r_out, phi) in enumerate(layout, start=1):
        assert r_in == pytest.approx((j - 1) * params.delta_r, abs=1e-12)
        assert r_out <= params.r_lens + 1e-12
        assert phi == pytest.approx(
            float(ideal_phase(0.5 * (r_in + r_out), params.f, params.phi0)),
            abs=1e-12,
        )
    assert layout[-1][1] == pytest.approx(params.r_lens, abs=1e-12)


def test_ring_layout_truncates_last_ring():
    params = MetalensParams(f=5.0, r_lens=1.25, delta_r=0.5, phi0=0.0, alpha=0.0)
    layout = ring_layout(params)
    assert len(layout) == 3
    assert layout[-1][0] == pytest.approx(1.0, abs=1e-12)
    assert layout[-1][1] == pytest.approx(1.25, abs=1e-12)


def test_build_rings_round_trip_phases(table01, small_lens_params):
    rings = build_rings(small_lens_params, table01)
    assert len(rings) == len(ring_layout(small_lens_params))
    for ring in rings:
        if is_empty_triple(ring.triple):
            continue
        assert abs(wrap_phase(ring.triple.phase - ring.phi)) < 0.005
        assert ring.triple.dx >= small_lens_params.d_min - 1e-12
        assert ring.triple.dy >= small_lens_params.d_min - 1e-12
        assert 1.0 / 6.0 - 1e-9 <= ring.triple.dz <= 1.0 / 3.0 + 1e-9


def test_populate_ring_lattice_registration(table01, small_lens_params):
    rings = build_rings(small_lens_params, table01)
    ring = next(r for r in rings if not is_empty_triple(r.triple))
    pts = populate_ring(ring)
    assert pts.shape[1] == 2
    radii = np.hypot(pts[:, 0], pts[:, 1])
    assert np.all(radii >= ring.r_inner - 1e-9)
    assert np.all(radii < ring.r_outer)
    # every node is an integer multiple of the lattice constants
    nx = pts[:, 0] / ring.triple.dx
    ny = pts[:, 1] / ring.triple.dy
    np.testing.assert_allclose(nx, np.round(nx), atol=1e-9)
    np.testing.assert_allclose(ny, np.round(ny), atol=1e-9)


def test_params_validation():
    with pytest.raises(ConfigError):
        MetalensParams(f=-1.0, r_lens=2.0, delta_r=0.5, phi0=0.0, alpha=0.2)
    with pytest.raises(ConfigError):
        MetalensParams(f=4.0, r_lens=2.0, delta_r=0.5, phi0=0.0, alpha=1.5)
    with pytest.raises(ConfigError):
        MetalensParams(f=4.0, r_lens=2.0, delta_r=0.5, phi0=np.inf, alpha=0.2)
    with pytest.raises(ConfigError):
        MetalensParams(f=4.0, r_lens=2.0, delta_r=0.5, phi0=0.0, alpha=0.2,
                       gamma_prime=-1.0)


def test_assembled_lens_structure(small_lens, small_lens_params, table01):
    ens = small_lens
    assert ens.n_atoms == 1302
    assert ens.symmetric
    assert ens.rates.gamma_prime == small_lens_params.gamma_prime
    assert ens.min_pair_distance is not None
    # three identical layers: atom count divides by 3 and z-values come in
    # (-dz, 0, +dz) triplets drawn from the rings' spacings
    assert ens.n_atoms % 3 == 0
    z_values = np.unique(np.round(ens.positions[:, 2], 9))
    assert 0.0 in z_values
    spacings = sorted(z for z in z_values if z > 0)
    rings = build_rings(small_lens_params, table01)
    ring_dz = {round(r.triple.dz, 9) for r in rings if not is_empty_triple(r.triple)}
    assert set(spacings) <= ring_dz
    # in-plane extent never exceeds the lens radius
    assert np.max(np.hypot(ens.positions[:, 0], ens.positions[:, 1])) < \
        small_lens_params.r_lens


def test_assembled_lens_mirror_symmetry(small_lens):
    pos = np.round(small_lens.positions, 9)
    as_set = {tuple(p) for p in pos}
    assert len(as_set) == len(pos)
    for sx, sy in ((-1, 1), (1, -1), (-1, -1)):
        flipped = {(sx * x, sy * y, z) for x, y, z in as_set}
        assert flipped == as_set


def test_buffer_atoms_marked(small_lens):
    n_buffer = int(np.sum(small_lens.buffer_mask))
    assert 0 < n_buffer < small_lens.n_atoms
    # buffer atoms live between ring bodies, away from the lens center
    buffer_radii = np.hypot(
        small_lens.positions[small_lens.buffer_mask, 0],
        small_lens.positions[small_lens.buffer_mask, 1],
    )
    assert buffer_radii.min() > 0.4


def test_empty_lens(table01):
    # a single-ring lens whose only phase falls inside the unreachable band
    gap_mid = 0.5 * (table01.gap[0] + table01.gap[1])
    f, r_lens = 4.0, 0.4
    mid = 0.5 * r_lens  # single ring spans [0, r_lens); its midpoint radius
    phi0 = gap_mid - K0 * (f - np.sqrt(mid * mid + f * f))
    params = MetalensParams(f=f, r_lens=r_lens, delta_r=1.0, phi0=float(phi0),
                            alpha=0.2, d_min=0.1)
    ens = assemble_metalens(params, table01)
    assert ens.n_atoms == 0


# Frozen parameters whose stitching buffer violates the hard-sphere audit.
AUDIT_FAIL_PARAMS = dict(
    f=8.0, r_lens=3.0, delta_r=0.599422289952092, phi0=-2.333762244609258,
    alpha=0.30074917881167873, d_min=0.1,
)


def test_assembly_audit_rejects_colliding_buffers(table01):
    params = MetalensParams(**AUDIT_FAIL_PARAMS)
    with pytest.raises(NumericalError, match="pair"):
        assemble_metalens(params, table01)


def test_save_load_round_trip(tmp_path, small_lens, small_lens_params, table01):
    rings = build_rings(small_lens_params, table01)
    out = tmp_path / "design"
    save_design(out, small_lens, small_lens_params, rings)
    ens, meta = load_design(out)
    np.testing.assert_allclose(ens.positions, small_lens.positions, atol=1e-9)
    np.testing.assert_array_equal(ens.buffer_mask, small_lens.buffer_mask)
    assert ens.symmetric == small_lens.symmetric
    assert ens.rates.gamma_prime == small_lens.rates.gamma_prime
    assert meta["params"]["f"] == small_lens_params.f
    assert meta["n_atoms"] == small_lens.n_atoms
    assert len(meta["rings"]) == len(rings)


def test_save_design_is_deterministic(tmp_path, small_lens, small_lens_params, table01):
    rings = build_rings(small_lens_params, table01)
    save_design(tmp_path / "a", small_lens, small_lens_params, rings)
    save_design(tmp_path / "b", small_lens, small_lens_params, rings)
    for name in ("positions.csv", "design.json"):
        assert (tmp_path / "a" / name).read_bytes() == \
            (tmp_path / "b" / name).read_bytes()
    meta = json.loads((tmp_path / "a" / "design.json").read_text())
    assert meta["params"]["d_min"] == small_lens_params.d_min
