"""Position disorder, spectral broadening, and the equivalent-loss laws."""
from __future__ import annotations

import numpy as np
import pytest

from atomlens import (
    BroadeningSpec,
    ConfigError,
    DisorderSpec,
    EmitterEnsemble,
    EmitterRates,
    LatticeConstants,
    METALENS_DISORDER_PREFACTOR,
    NumericalError,
    averaged_polarizability,
    bare_polarizability,
    config_rng,
    cooperative_decay,
    displace,
    disorder_law_scan,
    effective_gamma_dis,
    predicted_gamma_dis,
    sample_shifts,
)


# ---------------------------------------------------------------------------
# random streams


def test_config_rng_reproducible_and_independent():
    a = config_rng(5, 3).uniform(size=4)
    b = config_rng(5, 3).uniform(size=4)
    assert np.array_equal(a, b)
    c = config_rng(5, 4).uniform(size=4)
    d = config_rng(6, 3).uniform(size=4)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_config_rng_order_free():
    # drawing configuration 7 first or last gives the same stream
    first = config_rng(9, 7).standard_normal(5)
    for idx in (0, 3, 11):
        config_rng(9, idx).standard_normal(50)
    again = config_rng(9, 7).standard_normal(5)
    assert np.array_equal(first, again)


# ---------------------------------------------------------------------------
# position displacement


def _grid_ensemble(n: int = 400, spacing: float = 0.3) -> EmitterEnsemble:
    side = int(np.sqrt(n))
    xs = np.arange(side) * spacing
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    pos = np.column_stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)])
    return EmitterEnsemble(positions=pos, symmetric=True)


def test_displace_zero_radius_is_identity():
    ens = _grid_ensemble(25)
    out = displace(ens, DisorderSpec(delta_d=0.0, seed=1))
    assert np.array_equal(out.positions, ens.positions)
    assert out.positions is not ens.positions  # a copy, not a view
    assert out.symmetric == ens.symmetric


def test_displace_bounded_and_reproducible():
    ens = _grid_ensemble(100)
    spec = DisorderSpec(delta_d=0.07, seed=4)
    out = displace(ens, spec, config_index=2)
    shifts = out.positions - ens.positions
    norms = np.linalg.norm(shifts, axis=1)
    assert np.all(norms <= 0.07 + 1e-15)
    assert np.max(norms) > 0.03  # actually moved
    assert out.symmetric is False
    assert out.min_pair_distance is None
    again = displace(ens, spec, config_index=2)
    assert np.array_equal(out.positions, again.positions)
    other = displace(ens, spec, config_index=3)
    assert not np.array_equal(out.positions, other.positions)


def test_displace_ball_statistics():
    # uniform in a ball of radius R: <|s|> = 3R/4, <|s|^2> = 3R^2/5
    ens = EmitterEnsemble(positions=np.zeros((20000, 3)))
    radius = 0.3
    out = displace(ens, DisorderSpec(delta_d=radius, seed=0))
    norms = np.linalg.norm(out.positions, axis=1)
    assert np.mean(norms) == pytest.approx(3 * radius / 4, rel=0.02)
    assert np.mean(norms ** 2) == pytest.approx(3 * radius ** 2 / 5, rel=0.02)
    assert np.abs(np.mean(out.positions, axis=0)).max() < 0.01


def test_disorder_spec_validation():
    with pytest.raises(ConfigError):
        DisorderSpec(delta_d=-0.1)


# ---------------------------------------------------------------------------
# spectral broadening


def test_sample_shifts_basics():
    assert np.array_equal(sample_shifts(5, BroadeningSpec("gaussian", 0.0)),
                          np.zeros(5))
    with pytest.raises(ConfigError):
        sample_shifts(-1, BroadeningSpec("gaussian", 1.0))
    with pytest.raises(ConfigError):
        BroadeningSpec("poisson", 1.0)
    with pytest.raises(ConfigError):
        BroadeningSpec("gaussian", -0.5)


def test_sample_shifts_distributions():
    gauss = sample_shifts(200_000, BroadeningSpec("gaussian", 1.7, seed=2))
    assert np.std(gauss) == pytest.approx(1.7, rel=0.02)
    assert np.mean(gauss) == pytest.approx(0.0, abs=0.02)
    lor = sample_shifts(200_000, BroadeningSpec("lorentzian", 0.8, seed=2))
    # scale-0.8 Lorentzian: half the mass inside |x| <= 0.8
    assert np.mean(np.abs(lor) <= 0.8) == pytest.approx(0.5, abs=0.01)
    assert np.median(lor) == pytest.approx(0.0, abs=0.02)
    again = sample_shifts(10, BroadeningSpec("lorentzian", 0.8, seed=2))
    assert np.array_equal(again, lor[:10])


def test_averaged_polarizability_closed_form():
    rates = EmitterRates(gamma_prime=0.4)
    value = averaged_polarizability(0.3, 0.5, rates)
    widened = EmitterRates(gamma_prime=0.4 + 2 * 0.5)
    assert value == pytest.approx(bare_polarizability(0.3, widened), rel=1e-14)
    with pytest.raises(ConfigError):
        averaged_polarizability(0.0, -0.1)


def test_averaged_polarizability_matches_monte_carlo():
    sigma = 0.5
    shifts = sample_shifts(400_000, BroadeningSpec("lorentzian", sigma, seed=3))
    sampled = np.mean(bare_polarizability(0.3 - shifts))
    assert sampled == pytest.approx(averaged_polarizability(0.3, sigma),
                                    abs=0.02)


# ---------------------------------------------------------------------------
# equivalent loss rate


def test_effective_gamma_dis_roundtrip():
    gamma_coop = 5.0
    for gamma in (0.1, 1.0, 7.0):
        r = gamma_coop / (gamma_coop + gamma)
        assert effective_gamma_dis(r, gamma_coop) == pytest.approx(gamma,
                                                                   rel=1e-12)
    assert effective_gamma_dis(1.0, gamma_coop) == 0.0
    assert effective_gamma_dis(-0.5j, gamma_coop) == pytest.approx(5.0)
    with pytest.raises(NumericalError):
        effective_gamma_dis(0.0, gamma_coop)
    with pytest.raises(ConfigError):
        effective_gamma_dis(1.5, gamma_coop)


def test_predicted_gamma_dis_scaling():
    lat = LatticeConstants(0.2, 0.2)
    base = predicted_gamma_dis(0.05, lat)
    assert base == pytest.approx(
        (np.pi / 2) * 0.05 ** 2 / 0.04 * cooperative_decay(lat), rel=1e-14)
    assert predicted_gamma_dis(0.10, lat) == pytest.approx(4 * base, rel=1e-13)
    scaled = predicted_gamma_dis(0.05, lat,
                                 prefactor=METALENS_DISORDER_PREFACTOR)
    assert scaled == pytest.approx(2.5 * base, rel=1e-13)
    assert predicted_gamma_dis(0.0, lat) == 0.0
    with pytest.raises(ConfigError):
        predicted_gamma_dis(-0.01, lat)


# ---------------------------------------------------------------------------
# the characterization scan (small smoke; the full protocol runs elsewhere)


def test_disorder_law_scan_smoke():
    res = disorder_law_scan(0.2, [0.15, 0.3], n_configs=8, seed=2,
                            shape=(6, 5))
    assert np.array_equal(res.delta_d, np.array([0.03, 0.06]))
    assert np.all(res.gamma_dis > 0)
    assert res.gamma_dis[1] > res.gamma_dis[0]  # more shaking, more loss
    assert res.gamma_predicted[1] == pytest.approx(4 * res.gamma_predicted[0],
                                                   rel=1e-12)
    # deterministic for a fixed seed
    assert res.slope == pytest.approx(1.4888241703, rel=1e-6)
    again = disorder_law_scan(0.2, [0.15, 0.3], n_configs=8, seed=2,
                              shape=(6, 5))
    assert np.array_equal(res.gamma_dis, again.gamma_dis)
