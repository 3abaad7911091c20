import math

import pytest

from pksfil.estimates import (
    SUITES,
    EstimateRecord,
    K_stability,
    fp_fixed_point,
    fp_mean_zero_rate,
    monotone_damping,
    splitting_identity,
    suite_jobs,
)


def test_fixed_point_record():
    r = fp_fixed_point(R=12.0, N=128)
    assert r.passed and r.constant < 1e-10
    d = r.as_dict()
    assert d["estimate_id"] and "params" in d


def test_mean_zero_rate():
    r = fp_mean_zero_rate(R=12.0, N=128)
    assert r.passed
    assert r.fitted_exponent == pytest.approx(0.5, abs=0.025)


def test_splitting_small():
    r = splitting_identity(R=12.0, N=128, n_probes=2)
    assert r.passed


def test_damping_monotone():
    assert monotone_damping(N=64, R=12.0).passed


def test_K_stability_quick():
    assert K_stability(N=96, R=12.0).passed


@pytest.mark.parametrize("suite", SUITES)
def test_jobs_listed(suite):
    jobs = suite_jobs(suite)
    assert jobs and all(callable(fn) and isinstance(kw, dict) for fn, kw in jobs)


def test_unknown_suite():
    with pytest.raises(ValueError):
        suite_jobs("bogus")


def test_p_override():
    jobs = suite_jobs("background", ps=(3.0,))
    assert [kw.get("p") for _, kw in jobs if "p" in kw] == [3.0]
