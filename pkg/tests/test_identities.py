import numpy as np
import pytest

from roughkit import identities as I
from roughkit.roughpath import pwl_signature


def _small():
    t = np.linspace(0, 1, 129)
    return pwl_signature(np.column_stack([t, np.sin(2 * t), 0.3 * t**2]), 2, p=2.5)


def test_standard_scenarios():
    names = [s.name for s in I.standard_scenarios(samples=65)]
    assert names == ["scalar smooth", "planar smooth", "pure area"]
    assert [s.d for s in I.standard_scenarios(samples=65)] == [1, 2, 2]


@pytest.mark.parametrize("check", [I.change_of_variable, I.pushforward_pullback, I.leibniz_rule])
def test_single_checks_on_small_driver(check):
    assert check(_small(), 1e-9) < 1e-6


def test_unknown_suite():
    with pytest.raises(ValueError):
        I.run_suite("other")


def test_records_shape():
    X = _small()
    records = I.run_suite(scenarios=[I.Scenario("small", X)])
    assert len(records) == len(I.CORE_CHECKS)
    assert {"name", "identity", "scenario", "defect", "threshold", "pass"} <= set(records[0])
    assert all(r["pass"] for r in records)
