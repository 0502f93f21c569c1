"""Gaussian beams, the ideal focused mode, and transmission metrics."""
from __future__ import annotations

import numpy as np
import pytest

from atomlens import (
    BeamSpec,
    ConfigError,
    EmitterEnsemble,
    K0,
    beam_drive,
    collect_metrics,
    efficiency_eta,
    gaussian_field,
    overlap_epsilon,
    projected_r,
    projected_t,
    signal_to_background,
    solve_dipoles,
    t0,
    target_field,
    target_mode,
)


def test_gaussian_field_frozen_value():
    # frozen against a 30-digit evaluation of the paraxial mode
    value = gaussian_field(BeamSpec(1.5), 0.5, -0.3, 2.0)
    assert complex(value) == pytest.approx(
        0.81337497598993168 - 0.19572905471502447j, rel=1e-13
    )


def test_gaussian_field_focus_and_decay():
    spec = BeamSpec(2.0)
    assert complex(gaussian_field(spec, 0.0, 0.0, 0.0)) == pytest.approx(1.0)
    z = np.linspace(0.0, 50.0, 40)
    on_axis = np.abs(gaussian_field(spec, 0.0, 0.0, z))
    assert np.all(np.diff(on_axis) <= 1e-12)
    # amplitude never exceeds the focal value anywhere
    rng = np.random.default_rng(1)
    pts = rng.uniform(-10, 10, (200, 3))
    assert np.all(np.abs(gaussian_field(spec, *pts.T)) <= 1.0 + 1e-12)


def test_beam_waist_at():
    spec = BeamSpec(2.0, focus_z=1.0)
    z_r = K0 * 4.0 / 2.0
    assert spec.waist_at(1.0) == pytest.approx(2.0)
    assert spec.waist_at(1.0 + z_r) == pytest.approx(2.0 * np.sqrt(2.0))
    assert complex(gaussian_field(spec, 0.0, 0.0, 1.0)) == pytest.approx(
        np.exp(1j * K0 * 0.0) * 1.0
    )


def test_beam_spec_validation():
    with pytest.raises(ConfigError):
        BeamSpec(0.8)
    BeamSpec(1.0)  # exactly one wavelength is allowed


def test_target_mode_frozen_values():
    target = target_mode(2.0, 10.0)
    assert target.magnification == pytest.approx(1.6059690856844964, rel=1e-14)
    assert target.w_f == pytest.approx(1.2453539845989997, rel=1e-14)
    assert target.z_f == pytest.approx(6.1227336326084859, rel=1e-14)
    assert target.f == 10.0


def test_target_mode_no_lens_limit():
    target = target_mode(2.0, 1e9)
    assert target.magnification == pytest.approx(1.0, abs=1e-12)
    assert target.z_f == pytest.approx(0.0, abs=1e-6)
    assert abs(t0(2.0, target)) == pytest.approx(1.0, abs=1e-12)


def test_target_peak_intensity_is_squared_magnification():
    target = target_mode(2.0, 10.0)
    peak = target_field(target, 0.0, 0.0, target.z_f)
    assert abs(complex(peak)) ** 2 == pytest.approx(
        target.magnification ** 2, rel=1e-12
    )


def test_t0_frozen_value():
    target = target_mode(2.0, 10.0)
    value = t0(2.0, target)
    assert value == pytest.approx(
        0.79892148056401929 - 0.28050181499999805j, rel=1e-13
    )
    assert abs(value) ** 2 == pytest.approx(0.71695680032489778, rel=1e-13)


def test_empty_ensemble_metrics():
    ens = EmitterEnsemble(positions=np.zeros((0, 3)))
    sol = solve_dipoles(ens, drive=beam_drive(BeamSpec(2.0)))
    target = target_mode(2.0, 10.0)
    assert projected_t(ens, sol, target, 2.0) == pytest.approx(t0(2.0, target))
    assert efficiency_eta(ens, sol, target, 2.0) == pytest.approx(
        abs(t0(2.0, target)) ** 2
    )
    assert overlap_epsilon(ens, sol, 2.0) == 1.0
    assert projected_r(ens, sol, 2.0) == 0.0


def test_single_emitter_projections_match_manual_sums():
    ens = EmitterEnsemble(positions=np.array([[0.3, -0.2, 0.1]]))
    w0 = 2.0
    sol = solve_dipoles(ens, drive=beam_drive(BeamSpec(w0)))
    target = target_mode(w0, 10.0)
    q = sol.amplitudes[0]
    prefactor = 3j / (K0 * w0) ** 2
    mode = complex(target_field(target, 0.3, -0.2, 0.1))
    assert projected_t(ens, sol, target, w0) == pytest.approx(
        t0(w0, target) + prefactor * np.conj(mode) * q, rel=1e-12
    )
    inp = complex(gaussian_field(BeamSpec(w0), 0.3, -0.2, 0.1))
    assert overlap_epsilon(ens, sol, w0) == pytest.approx(
        abs(1.0 + prefactor * np.conj(inp) * q) ** 2, rel=1e-12
    )
    # reflection projects on the backward mode: values enter unconjugated
    assert projected_r(ens, sol, w0) == pytest.approx(prefactor * inp * q,
                                                      rel=1e-12)


def test_efficiency_warns_below_wavelength_focus():
    ens = EmitterEnsemble(positions=np.zeros((0, 3)))
    sol = solve_dipoles(ens, drive=beam_drive(BeamSpec(1.0)))
    target = target_mode(1.0, 8.0)
    assert target.w_f < 1.0
    with pytest.warns(UserWarning, match="waist"):
        efficiency_eta(ens, sol, target, 1.0)


def test_small_lens_metrics_frozen(small_lens, small_lens_solution,
                                   small_lens_params):
    # End-to-end regression: assembled lens, beam solve, all three metrics.
    w0 = 1.0
    target = target_mode(w0, small_lens_params.f)
    with pytest.warns(UserWarning, match="waist"):
        eta = efficiency_eta(small_lens, small_lens_solution, target, w0)
    eps = overlap_epsilon(small_lens, small_lens_solution, w0)
    assert eta == pytest.approx(0.918948788646, abs=1e-6)
    assert eps == pytest.approx(0.882806851362, abs=1e-6)


def test_signal_to_background_bounds(small_lens, small_lens_solution,
                                     small_lens_params):
    w0 = 1.0
    target = target_mode(w0, small_lens_params.f)
    with pytest.warns(UserWarning, match="waist"):
        ratio = signal_to_background(small_lens, small_lens_solution, target, w0)
    assert 0.0 < ratio <= 1.0 + 1e-9
    assert ratio == pytest.approx(0.966204486178, abs=1e-6)
    # the focused fraction exceeds the raw mode efficiency for a real lens
    with pytest.warns(UserWarning, match="waist"):
        eta = efficiency_eta(small_lens, small_lens_solution, target, w0)
    assert ratio > eta


def test_collect_metrics_contents(small_lens, small_lens_solution,
                                  small_lens_params):
    w0 = 1.0
    target = target_mode(w0, small_lens_params.f)
    with pytest.warns(UserWarning, match="waist"):
        metrics = collect_metrics(small_lens, small_lens_solution, target, w0,
                                  gamma_prime=1.0, seed=5)
    expected_keys = {"eta", "epsilon", "eta_tilde", "focal_intensity", "M",
                     "z_f", "N", "gamma_prime", "seed"}
    assert expected_keys <= set(metrics)
    assert metrics["N"] == small_lens.n_atoms
    assert metrics["seed"] == 5
    assert metrics["M"] == pytest.approx(target.magnification)
    assert metrics["eta"] == pytest.approx(0.918948788646, abs=1e-6)
    assert metrics["focal_intensity"] > 1.0  # the lens concentrates light
