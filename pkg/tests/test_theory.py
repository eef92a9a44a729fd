import math

import numpy as np
import pytest

from acfr import theory as th
from acfr.theory import DiscreteInstance

# the worked 2x2 instance used throughout: rows are z, columns are t
JOINT = np.array([[0.4, 0.1], [0.1, 0.4]])
LOSS = np.array([[0.0, 1.0], [1.0, 0.0]])
INST = DiscreteInstance(joint=JOINT, loss=LOSS, c=1.0)

KL_JOINT_PROD = 0.8 * math.log(1.6) + 0.2 * math.log(0.4)   # = 0.192745...


def test_grid_construction():
    grid = th.treatment_grid()
    assert grid.size == 65
    assert grid[0] == 0.0 and grid[-1] == 1.0
    assert np.allclose(np.diff(grid), 1 / 64)


def test_mise_exact_cases():
    grid = th.treatment_grid()
    truth = np.random.default_rng(0).normal(size=(7, 65))
    assert th.mise(truth, truth, grid) == 0.0
    # constant offset integrates exactly under the trapezoid rule
    assert th.mise(truth + 0.1, truth, grid) == pytest.approx(0.01, abs=1e-12)


def test_mise_linear_truth_vs_integral():
    grid = th.treatment_grid()
    truth = grid[None, :]
    pred = np.zeros_like(truth)
    assert th.mise(pred, truth, grid) == pytest.approx(1 / 3, abs=1e-4)


@pytest.mark.parametrize("degree", [0, 1, 2, 3, 4])
def test_mise_matches_closed_form_for_low_degree_polynomials(degree):
    grid = th.treatment_grid()
    coeffs = np.random.default_rng(degree).normal(size=degree + 1)
    truth = np.polyval(coeffs, grid)[None, :]
    pred = np.zeros_like(truth)
    sq = np.polymul(coeffs, coeffs)             # squared polynomial, degree <= 8
    integ = np.polyint(sq)
    exact = np.polyval(integ, 1.0) - np.polyval(integ, 0.0)
    assert th.mise(pred, truth, grid) == pytest.approx(exact, abs=1e-4)


def test_policy_error_parabola_pair():
    grid = th.treatment_grid()
    truth = (1 - (grid - 0.5) ** 2)[None, :]
    pred = (1 - (grid - 0.25) ** 2)[None, :]
    assert th.policy_error(pred, truth, grid) == pytest.approx(0.00390625, abs=1e-12)
    assert th.policy_error(truth, truth, grid) == 0.0


def test_policy_error_monotone_truth_argmax_at_one():
    grid = th.treatment_grid()
    truth = grid[None, :] * 2.0
    pred = (1 - grid)[None, :]
    # true best dose is 1; predicted best is 0; regret (2 - 0)^2
    assert th.policy_error(pred, truth, grid) == pytest.approx(4.0, abs=1e-12)


def test_policy_error_tie_breaks_toward_smaller_dose():
    grid = th.treatment_grid()
    truth = np.ones((1, 65))
    pred = np.zeros((1, 65))
    assert th.policy_error(pred, truth, grid) == 0.0  # all doses equally good


def test_discrete_kl_hand_value_and_properties():
    prod = np.full((2, 2), 0.25)
    assert th.discrete_kl(JOINT, prod) == pytest.approx(KL_JOINT_PROD, abs=1e-12)
    assert th.discrete_kl(JOINT, prod) == pytest.approx(0.192745, abs=1e-6)
    assert th.discrete_kl(JOINT, JOINT) == 0.0
    rng = np.random.default_rng(1)
    for _ in range(1000):
        p = rng.dirichlet(np.ones(6))
        q = rng.dirichlet(np.ones(6))
        assert th.discrete_kl(p, q) >= 0.0


def test_discrete_kl_absolute_continuity():
    with pytest.raises(ValueError, match=r"cell \(0,\)"):
        th.discrete_kl(np.array([0.5, 0.5]), np.array([0.0, 1.0]))
    # zero p where q is zero is fine
    assert th.discrete_kl(np.array([0.0, 1.0]), np.array([0.0, 1.0])) == 0.0


def test_mutual_info_cases():
    independent = np.outer([0.3, 0.7], [0.6, 0.4])
    out = th.mutual_info(independent)
    assert out["mi"] == pytest.approx(0.0, abs=1e-15)
    assert out["h_t_given_z"] == pytest.approx(out["h_t"], abs=1e-12)

    diagonal = np.array([[0.5, 0.0], [0.0, 0.5]])
    assert th.mutual_info(diagonal)["mi"] == pytest.approx(math.log(2), abs=1e-12)

    out = th.mutual_info(JOINT)
    assert out["mi"] == pytest.approx(KL_JOINT_PROD, abs=1e-12)


def test_factual_and_counterfactual_errors_hand_instance():
    assert th.factual_error(INST, 0) == pytest.approx(0.2, abs=1e-15)
    assert th.counterfactual_error(INST, 0) == pytest.approx(0.5, abs=1e-15)
    zero = DiscreteInstance(joint=JOINT, loss=np.zeros((2, 2)), c=1.0)
    assert th.factual_error(zero, 1) == 0.0
    assert th.counterfactual_error(zero, 1) == 0.0
    const = DiscreteInstance(joint=JOINT, loss=np.full((2, 2), 0.8), c=1.0)
    assert th.factual_error(const, 0) == pytest.approx(0.8)
    assert th.counterfactual_error(const, 0) == pytest.approx(0.8)


def test_expected_errors_hand_instance():
    errs = th.expected_errors(INST)
    assert errs["factual"] == pytest.approx(0.2, abs=1e-15)
    assert errs["counterfactual"] == pytest.approx(0.5, abs=1e-15)
    # independence collapses the two errors
    ind = DiscreteInstance(joint=np.outer([0.5, 0.5], [0.5, 0.5]), loss=LOSS, c=1.0)
    errs = th.expected_errors(ind)
    assert errs["factual"] == pytest.approx(errs["counterfactual"], abs=1e-15)


def test_prop1_hand_instance():
    out = th.check_prop1(INST)
    assert out["lhs"] == pytest.approx(0.5)
    assert out["kl"] == pytest.approx(0.192745, abs=1e-6)
    assert out["rhs"] == pytest.approx(0.2 + math.sqrt(2 * KL_JOINT_PROD), abs=1e-12)
    assert out["rhs"] == pytest.approx(0.82088, abs=1e-4)
    assert out["holds"]


def test_prop1_independent_joint_is_tight():
    ind = DiscreteInstance(joint=np.outer([0.3, 0.7], [0.4, 0.6]), loss=LOSS, c=1.0)
    out = th.check_prop1(ind)
    assert out["kl"] == pytest.approx(0.0, abs=1e-15)
    assert out["lhs"] == pytest.approx(th.expected_errors(ind)["factual"], abs=1e-15)
    # cancellation must not drive either KL order negative (sqrt stays real)
    assert out["kl_alt"] >= 0.0 and out["holds"]


def test_prop1_validates_loss_bound():
    bad = DiscreteInstance(joint=JOINT, loss=LOSS * 3.0, c=1.0)
    with pytest.raises(ValueError, match="loss"):
        th.check_prop1(bad)


def test_lemma1_hand_instance():
    out = th.check_lemma1(INST, 0)
    kl = 0.5 * math.log(0.5 / 0.8) + 0.5 * math.log(0.5 / 0.2)
    assert out["kl"] == pytest.approx(kl, abs=1e-12)
    assert out["kl"] == pytest.approx(0.22314, abs=1e-5)
    assert out["rhs"] == pytest.approx(0.86805, abs=1e-4)
    assert out["lhs"] == pytest.approx(0.5)
    assert out["holds"]


def test_lemma1_equal_conditionals_tight():
    ind = DiscreteInstance(joint=np.outer([0.5, 0.5], [0.3, 0.7]), loss=LOSS, c=1.0)
    out = th.check_lemma1(ind, 1)
    assert out["kl"] == pytest.approx(0.0, abs=1e-15)
    assert out["lhs"] == pytest.approx(th.factual_error(ind, 1), abs=1e-15)


def test_pehe_perfect_and_shifted_models():
    mu = np.random.default_rng(3).normal(size=(3, 4))
    perfect = DiscreteInstance(
        joint=np.full((3, 4), 1 / 12), loss=np.zeros((3, 4)), c=1.0, mu=mu, h=mu)
    assert th.pehe(perfect, 0, 2) == 0.0
    assert th.check_prop2(perfect, 0, 2)["holds"]

    shifted_h = mu + 1.3
    shifted = DiscreteInstance(
        joint=np.full((3, 4), 1 / 12), loss=(mu - shifted_h) ** 2,
        c=float(((mu - shifted_h) ** 2).max()), mu=mu, h=shifted_h)
    # the constant cancels in differences while factual errors stay positive
    assert th.pehe(shifted, 1, 3) == pytest.approx(0.0, abs=1e-15)
    assert th.factual_error(shifted, 1) > 0.0
    assert th.check_prop2(shifted, 1, 3)["holds"]


def test_pinsker_hand_values():
    prod = np.full((2, 2), 0.25)
    out = th.pinsker_check(JOINT, prod)
    assert out["tv_sum"] == pytest.approx(0.6, abs=1e-15)
    assert out["kl_bound"] == pytest.approx(0.62088, abs=1e-5)
    assert out["holds"]
    same = th.pinsker_check(JOINT, JOINT)
    assert same["tv_sum"] == 0.0 and same["kl_bound"] == 0.0 and same["holds"]


def test_pinsker_on_random_pairs():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        p = rng.dirichlet(np.ones(5))
        q = rng.dirichlet(np.ones(5))
        assert th.pinsker_check(p, q)["holds"]


def test_random_instance_contract():
    a = th.random_instance(4, 6, seed=9)
    a.validate()
    assert abs(a.joint.sum() - 1.0) < 1e-12
    assert np.all(a.loss / a.c <= 1.0)
    b = th.random_instance(4, 6, seed=9)
    np.testing.assert_array_equal(a.joint, b.joint)
    np.testing.assert_array_equal(a.loss, b.loss)
    c = th.random_instance(4, 6, seed=9, with_response_tables=True)
    c.validate()
    np.testing.assert_allclose(c.loss, (c.mu - c.h) ** 2, rtol=0, atol=1e-15)


def test_bound_verification_sweep():
    report = th.verify_bounds(200, max_side=6, seed=7)
    # the sound results never fail: the overall bound, the per-dose bound,
    # the TV/KL step, and the cross-term form of the effect bound
    for name in ("prop1", "lemma1", "pinsker", "prop2_corrected"):
        assert report.min_slack[name] > -th.BOUND_TOL, name
    sound_violations = [v for v in report.violations if v[0] != "prop2"]
    assert sound_violations == []
    # the additive effect bound is violated by sign-flipping instances
    assert any(v[0] == "prop2" for v in report.violations)
    # same seed reruns identically
    again = th.verify_bounds(200, max_side=6, seed=7)
    assert again.to_text() == report.to_text()


def test_additive_effect_bound_counterexample():
    # one dominant state with prediction errors of opposite sign at the two
    # doses: the error differences add while the additive right side cannot see it
    eps = 1e-6
    joint = np.array([[0.5 - eps, 0.5 - eps], [eps, eps]])
    mu = np.array([[1.0, -1.0], [0.0, 0.0]])
    h = np.zeros((2, 2))
    inst = DiscreteInstance(joint=joint, loss=(mu - h) ** 2, c=1.0, mu=mu, h=h)
    out = th.check_prop2(inst, 0, 1)
    assert out["lhs"] > out["rhs"]          # additive form fails
    assert out["holds_corrected"]           # cross-term form holds


def test_balance_probe_independent_representation():
    rng = np.random.default_rng(11)
    z = rng.normal(size=(400, 6))
    t = rng.uniform(size=400)
    score = th.balance_probe(z, t, seed=0)
    assert abs(score) < 0.1


def test_balance_probe_fully_recoverable_dose():
    rng = np.random.default_rng(12)
    t = rng.uniform(size=400)
    z = np.tile(t[:, None], (1, 6))
    assert th.balance_probe(z, t, seed=0) > 0.95


def test_balance_probe_constant_representation():
    rng = np.random.default_rng(13)
    z = np.ones((300, 4))
    t = rng.uniform(size=300)
    assert abs(th.balance_probe(z, t, seed=0)) < 0.1


def test_balance_probe_degenerate_treatment_rejected():
    z = np.random.default_rng(14).normal(size=(100, 3))
    with pytest.raises(ValueError, match="degenerate"):
        th.balance_probe(z, np.full(100, 0.5))
    with pytest.raises(ValueError, match="50"):
        th.balance_probe(z[:20], np.linspace(0, 1, 20))


def test_metrics_rows_roundtrip(tmp_path):
    rows = [th.MetricsRow("acfr", 0, 2.0, "out-of-sample", 1.25, 0.125),
            th.MetricsRow("mlp", 0, 2.0, "within-sample", 2.5, 0.25)]
    path = str(tmp_path / "report.csv")
    th.write_metrics_rows(rows, path)
    th.write_metrics_rows([th.MetricsRow("acfr", 1, 2.0, "out-of-sample", 1.0, 0.1)],
                          path, append=True)
    lines = open(path).read().splitlines()
    assert lines[0] == th.METRICS_HEADER
    assert len(lines) == 4
    assert lines[1].startswith("acfr,0,2.0,out-of-sample,")
