import numpy as np
import pytest

from mcpmod_futility.appendix import (
    appendix_illustration, common_interim_times, default_time_grid, get_scenario, load_scenarios,
)


def test_four_scenarios_of_21_patients():
    scs = load_scenarios()
    assert sorted(scs) == [1, 2, 3, 4]
    for sc in scs.values():
        rec = sc.recruitment_times()
        assert rec.size == 21 and rec[0] == 0.0
        assert np.all(np.diff(rec) >= 0)
        assert sc.visit_times()[-1, -1] <= 1.0 + 1e-12
    with pytest.raises(ValueError):
        get_scenario(5)


def test_end_of_study_information():
    for sid in range(1, 5):
        res = appendix_illustration(sid, (0.6, 0.9))
        assert res["info_completer"][-1] == 21
        assert res["frac_completer"][-1] == 1.0
        assert res["info_rho0.9"][-1] == pytest.approx(21.0, abs=1e-9)


def test_zero_correlation_equals_completer():
    for sid in range(1, 5):
        res = appendix_illustration(sid, 0.0)
        np.testing.assert_allclose(res["info_rho0"], res["info_completer"], atol=1e-12)


def test_pointwise_ordering():
    for sid in range(1, 5):
        res = appendix_illustration(sid, (0.6, 0.9))
        assert np.all(res["frac_rho0.9"] >= res["frac_rho0.6"] - 1e-12)
        assert np.all(res["frac_rho0.6"] >= res["frac_completer"] - 1e-12)


def test_scenario3_plateau_equality():
    res = appendix_illustration(3, 0.9, [0.4])
    assert res["n_complete"][0] > 0
    assert abs(res["info_rho0.9"][0] - res["info_completer"][0]) <= 1e-8


def test_scenario4_large_gap_at_half():
    res = appendix_illustration(4, 0.9, [0.5])
    assert res["frac_rho0.9"][0] - res["frac_completer"][0] > 0.2


def test_fast_recruitment_has_larger_gap():
    a = appendix_illustration(1, 0.9)
    b = appendix_illustration(2, 0.9)
    common = common_interim_times(a, b)
    assert common.size >= 5
    idx = np.isin(a["time"], common)
    gap_a = a["frac_rho0.9"][idx] - a["frac_completer"][idx]
    gap_b = b["frac_rho0.9"][idx] - b["frac_completer"][idx]
    assert np.all(gap_b > gap_a)


def test_time_grid():
    g = default_time_grid(0.25)
    np.testing.assert_array_equal(g, [0, 0.25, 0.5, 0.75, 1.0])
    assert default_time_grid().size == 101
