from __future__ import annotations

import pytest

from gradient_cases import TOL, all_cases, gradient_gap, ste_cases, ste_gap

SEEDS = range(4)


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("name", sorted(all_cases()))
def test_matches_central_differences(name, seed):
    assert gradient_gap(name, seed) <= TOL


@pytest.mark.parametrize("seed", range(8))
@pytest.mark.parametrize("name", sorted(ste_cases()))
def test_ste_matches_surrogate(name, seed):
    assert ste_gap(name, seed) <= TOL


def test_enough_configurations():
    assert len(all_cases()) * len(SEEDS) + len(ste_cases()) * 8 >= 100
