import math

import numpy as np
import pytest
from scipy import stats as st

from crossedge.efficiency import make_family
from crossedge.simulate import (PowerExperimentConfig, SingularEstimateError, cov_lr_test, glr_scale_test,
                                hotelling_t2, lecam_joint_check, run_power_experiment)


def test_hotelling_reduces_to_t():
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=30), rng.normal(size=25) + 0.4
    t2, p = hotelling_t2(x, y)
    t, pt = st.ttest_ind(x, y)
    assert t2 == pytest.approx(t * t, rel=1e-9)
    assert p == pytest.approx(pt, rel=1e-9)


def test_hotelling_gross_shift():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(200, 3))
    y = rng.normal(size=(200, 3)) + np.array([3.0, 4.0, 0.0])
    assert hotelling_t2(x, y)[1] < 1e-6


def test_hotelling_null_calibration():
    rng = np.random.default_rng(2)
    rej = sum(hotelling_t2(rng.normal(size=(40, 3)), rng.normal(size=(40, 3)))[1] <= 0.05 for _ in range(600))
    assert abs(rej / 600 - 0.05) < 3 * math.sqrt(0.05 * 0.95 / 600)


def test_glr_equal_mean_square_is_zero():
    x = np.array([[1.0, 0.0], [0.0, 2.0]])
    y = np.array([[1.0, 2.0], [2.0, 1.0], [-1.0, 2.0], [2.0, -1.0]]) * math.sqrt(2.5 / 5)
    assert glr_scale_test(x, y)[0] == pytest.approx(0.0, abs=1e-12)


def test_glr_nonnegative_and_calibrated():
    rng = np.random.default_rng(3)
    pvals = []
    for _ in range(2000):
        x, y = rng.normal(size=(300, 4)), rng.normal(size=(300, 4))
        s, p = glr_scale_test(x, y)
        assert s >= 0
        pvals.append(p)
    assert 0.035 <= np.mean(np.array(pvals) <= 0.05) <= 0.065


def test_cov_lr():
    rng = np.random.default_rng(4)
    x, y = rng.normal(size=(500, 2)), rng.normal(size=(500, 2))
    s, p = cov_lr_test(x, y)
    assert s >= 0 and p > 1e-3
    assert cov_lr_test(3 * x, y)[1] < 1e-6
    with pytest.raises(SingularEstimateError, match="larger sample"):
        cov_lr_test(np.ones((5, 2)), y)


def test_cov_lr_null_calibration():
    rng = np.random.default_rng(5)
    rej = sum(cov_lr_test(rng.normal(size=(200, 3)), rng.normal(size=(200, 3)))[1] <= 0.05 for _ in range(600))
    assert abs(rej / 600 - 0.05) < 3 * math.sqrt(0.05 * 0.95 / 600) + 0.01


def test_power_null_rates():
    cfg = PowerExperimentConfig(dim=2, deltas=[0.0], n1=60, n2=60, reps=400,
                                tests=["mst", "hotelling", "depth-md"], seed=11)
    curve = run_power_experiment(cfg)
    se = math.sqrt(0.05 * 0.95 / 400)
    for name in cfg.tests:
        assert abs(curve.power(name)[0] - 0.05) < 3 * se + 0.01, name


def test_power_csv_deterministic_and_workers():
    cfg = PowerExperimentConfig(dim=2, deltas=[0.0, 2.0], n1=40, n2=30, reps=20, tests=["mst", "hotelling"], seed=3)
    a = run_power_experiment(cfg).to_csv()
    b = run_power_experiment(cfg, workers=2, chunk=7).to_csv()
    assert a == b
    assert a.splitlines()[0] == "test,delta,power,se,mean_stat,mean_p"
    assert len(a.splitlines()) == 5


def test_power_rows_independent_of_rest_of_grid():
    base = dict(dim=2, n1=40, n2=30, reps=15, tests=["mst"], seed=5)
    full = run_power_experiment(PowerExperimentConfig(deltas=[0.0, 1.0, 2.5], **base)).to_csv().splitlines()
    sub = run_power_experiment(PowerExperimentConfig(deltas=[2.5, 0.0], **base)).to_csv().splitlines()
    assert sorted(sub[1:]) == sorted([full[1], full[3]])


def test_power_failures_become_nan():
    cfg = PowerExperimentConfig(dim=3, deltas=[0.0], n1=2, n2=2, reps=3, tests=["cov-lr"], seed=0)
    curve = run_power_experiment(cfg)
    assert math.isnan(curve.power("cov-lr")[0])
    assert "nan" in curve.to_csv()
    assert '"cov-lr@0": 3' in curve.sidecar()


def test_config_validation():
    with pytest.raises(ValueError):
        PowerExperimentConfig(reps=0)
    with pytest.raises(ValueError):
        PowerExperimentConfig(deltas=[])
    cfg = PowerExperimentConfig(family="normal-scale")
    assert cfg.theta1 == [1.0] and cfg.h == [1.0]


def test_consistency_under_fixed_alternative():
    fam_shift = 0.5
    rates = []
    for n in (100, 400, 1600):
        cfg = PowerExperimentConfig(dim=2, deltas=[fam_shift * math.sqrt(2 * n)], n1=n, n2=n, reps=20,
                                    tests=["mst"], seed=7)
        rates.append(run_power_experiment(cfg).power("mst")[0])
    assert rates[0] <= rates[1] <= rates[2]
    assert rates[2] == 1.0


def test_lecam_zero_h():
    fam = make_family("normal-location", 1)
    rep = lecam_joint_check("depth-cdf", fam, [0.0], [0.0], 0.5, 200, 50, seed=1)
    assert rep["cov_R_L"] == 0.0 and rep["mean_L_null"] == 0.0


def test_lecam_mst_covariance_zero():
    fam = make_family("normal-location", 2)
    rep = lecam_joint_check("mst", fam, [0.0, 0.0], [1.0, 1.0], 0.5, 400, 300, seed=2)
    assert rep["sigma12"] == 0.0
    assert abs(rep["cov_R_L"]) < 3 * rep["se_cov"]
