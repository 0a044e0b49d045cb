import numpy as np
import pytest

from fedrulefit.synth import (ScenarioSpec, UnattainablePrevalence, _exact_prevalence_client,
                              gen_covariates, gen_outcomes, gen_scenario, linear_predictor)


def test_gen_covariates_moments_and_determinism():
    X = gen_covariates(1000, 10, seed=4)
    assert X.shape == (1000, 10)
    assert np.all(np.abs(X.mean(axis=0)) < 0.15)
    assert np.all(np.abs(X.std(axis=0, ddof=1) - 1) < 0.15)
    assert np.array_equal(X, gen_covariates(1000, 10, seed=4))
    one = gen_covariates(1, 10, seed=0)
    assert one.shape == (1, 10) and np.all(np.isfinite(one))


def test_linear_predictor_examples():
    z = np.zeros(10)
    assert linear_predictor(z, "linear") == 0
    assert linear_predictor(z, "nonlinear") == 0
    e1 = np.eye(10)[0]
    assert linear_predictor(e1, "linear") == 5
    with pytest.raises(ValueError):
        linear_predictor(np.zeros(4), "linear")


def test_linear_predictor_matches_reference_expression():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((1000, 10))
    for x, a, b in zip(X, linear_predictor(X, "linear"), linear_predictor(X, "nonlinear")):
        ref_lin = 5 * x[0] - 4 * x[1] + 3 * x[2] - 2 * x[3] + x[4]
        ref_non = (10 * np.exp(-2 * x[0] ** 2) - 10 * np.exp(-2 * x[1] ** 2)
                   + 6 * np.sin(x[2]) - 4 * np.sin(x[3]) + 2 * np.sin(x[4]))
        assert abs(a - ref_lin) <= 1e-12
        assert abs(b - ref_non) <= 1e-12


def test_gen_outcomes():
    assert gen_outcomes(np.full(100, 50.0), 0).sum() == 100
    assert gen_outcomes(np.full(100, -50.0), 0).sum() == 0
    assert abs(gen_outcomes(np.zeros(10000), 1).mean() - 0.5) < 0.02
    with pytest.raises(ValueError):
        gen_outcomes(np.array([np.inf]), 0)


def test_scenario1_client_sizes():
    train, test = gen_scenario(ScenarioSpec.client_count(5), seed=0)
    assert [c.n for c in train.clients] == [200] * 5
    assert [c.n for c in test.clients] == [200] * 5
    assert not np.array_equal(train.pooled().covariates, test.pooled().covariates)


@pytest.mark.parametrize("prev, counts", [
    ((0.5,) * 5, [100] * 5),
    ((0.125, 0.250, 0.375, 0.875, 0.875), [25, 50, 75, 175, 175]),
])
def test_outcome_imbalance_exact_counts(prev, counts):
    spec = ScenarioSpec("outcome_imbalance", 5, prev, "nonlinear")
    train, _ = gen_scenario(spec, seed=2)
    assert [int(c.outcomes.sum()) for c in train.clients] == counts
    assert [c.n for c in train.clients] == [200] * 5


def test_scenario_determinism():
    spec = ScenarioSpec("size_imbalance", 3, (0.2, 0.3, 0.5))
    a, _ = gen_scenario(spec, 7)
    b, _ = gen_scenario(spec, 7)
    for x, y in zip(a.clients, b.clients):
        assert np.array_equal(x.covariates, y.covariates)
        assert np.array_equal(x.outcomes, y.outcomes)


def test_unattainable_prevalence(monkeypatch):
    import fedrulefit.synth as synth
    # positives become essentially impossible, so the draw budget runs out
    monkeypatch.setattr(synth, "linear_predictor", lambda X, model: np.full(len(X), -60.0))
    spec = ScenarioSpec("outcome_imbalance", 1, (0.5,), N_total=4)
    with pytest.raises(UnattainablePrevalence):
        _exact_prevalence_client(4, 0.5, spec, 0)


def test_scenario_spec_validation():
    with pytest.raises(ValueError):
        ScenarioSpec("client_count", 2, (0.5, 0.6))
    with pytest.raises(ValueError):
        ScenarioSpec("outcome_imbalance", 2, (0.5, 1.0))
    with pytest.raises(ValueError):
        ScenarioSpec("bogus", 1, (1.0,))
    assert ScenarioSpec.client_count(20).label() == "client_count/M=20/linear"
