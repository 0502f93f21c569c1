"""Shared fixtures: a small design table and a small assembled lens.

Both are expensive enough to build once per session and are reused across
test modules.  The table uses a coarser minimum spacing (0.1) than the
library default so it builds in seconds; every numerical claim tested
against it was frozen from independent calculations at that same spacing.
"""
from __future__ import annotations

import numpy as np
import pytest

from atomlens import (
    BeamSpec,
    MetalensParams,
    assemble_metalens,
    beam_drive,
    build_phase_table,
    solve_dipoles,
)


@pytest.fixture(scope="session")
def table01():
    return build_phase_table(d_min=0.1)


@pytest.fixture(scope="session")
def small_lens_params():
    return MetalensParams(
        f=4.0, r_lens=2.0, delta_r=0.5, phi0=0.3, alpha=0.2,
        d_min=0.1, gamma_prime=1.0,
    )


@pytest.fixture(scope="session")
def small_lens(small_lens_params, table01):
    return assemble_metalens(small_lens_params, table01)


@pytest.fixture(scope="session")
def small_lens_solution(small_lens):
    return solve_dipoles(small_lens, drive=beam_drive(BeamSpec(w0=1.0)))


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20260823)
