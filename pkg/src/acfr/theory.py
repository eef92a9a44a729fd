"""Counterfactual evaluation metrics and numerical verification of the bounds.

Two halves. The metrics half scores predicted dose-response curves against
ground truth on the fixed 65-point grid: MISE (trapezoid-integrated squared
error averaged over units) and policy error (squared true-outcome gap between
the true and predicted best doses).

The verifier half replaces the integrals in the generalization bounds with
finite tables: a joint distribution P(z, t), a bounded loss table, and
optionally response tables mu/h linked by squared error. On such instances
every quantity in the counterfactual bound, the per-treatment bound, the
heterogeneous-effect bound, and the total-variation/KL step is computable
exactly, so the inequalities can be brute-force checked on thousands of
random instances.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .training import fit_adversary_to_convergence

GRID_SIZE = 65
BOUND_TOL = 1e-12

_STREAM_PROBE_SPLIT = 7


def treatment_grid(points: int = GRID_SIZE) -> np.ndarray:
    """Uniform dose grid {j / (points - 1)} covering [0, 1] inclusive."""
    return np.linspace(0.0, 1.0, points)


def _trapezoid(rows: np.ndarray, grid: np.ndarray) -> np.ndarray:
    steps = np.diff(grid)
    return np.sum((rows[:, 1:] + rows[:, :-1]) * 0.5 * steps, axis=1)


def mise(pred: np.ndarray, truth: np.ndarray, grid: np.ndarray) -> float:
    """Mean integrated squared error of response curves over the dose grid."""
    pred, truth = np.asarray(pred, float), np.asarray(truth, float)
    if pred.shape != truth.shape or pred.shape[1] != grid.size:
        raise ValueError(
            f"mise: shapes {pred.shape}, {truth.shape} do not agree with grid "
            f"size {grid.size}"
        )
    return float(np.mean(_trapezoid((pred - truth) ** 2, grid)))


def policy_error(pred: np.ndarray, truth: np.ndarray, grid: np.ndarray) -> float:
    """Squared true-outcome regret of dosing at the predicted optimum.

    Both optima are grid argmaxes; ties break toward the smaller dose.
    """
    pred, truth = np.asarray(pred, float), np.asarray(truth, float)
    if pred.shape != truth.shape or pred.shape[1] != grid.size:
        raise ValueError(
            f"policy_error: shapes {pred.shape}, {truth.shape} do not agree "
            f"with grid size {grid.size}"
        )
    best_true = np.argmax(truth, axis=1)
    best_pred = np.argmax(pred, axis=1)
    rows = np.arange(truth.shape[0])
    gap = truth[rows, best_true] - truth[rows, best_pred]
    return float(np.mean(gap ** 2))


# ---------------------------------------------------------------------------
# discrete information quantities
# ---------------------------------------------------------------------------

def discrete_kl(p, q) -> float:
    """KL divergence in nats between two tables of matching shape.

    Rounding can push the sum a hair below zero when the tables are nearly
    identical; such values are clamped to exactly 0 so downstream square
    roots stay defined. Genuinely negative sums (malformed inputs) pass
    through untouched.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"discrete_kl: shapes differ, {p.shape} vs {q.shape}")
    bad = (q == 0.0) & (p > 0.0)
    if np.any(bad):
        cell = tuple(int(i) for i in np.argwhere(bad)[0])
        raise ValueError(f"discrete_kl: q is zero at cell {cell} where p > 0")
    mask = p > 0.0
    total = float(np.sum(p[mask] * np.log(p[mask] / q[mask])))
    if -1e-9 < total < 0.0:
        return 0.0
    return total


def mutual_info(p_zt) -> dict:
    """I(T;Z), H(T) and H(T|Z) in nats from a joint table P(z, t)."""
    p_zt = np.asarray(p_zt, dtype=np.float64)
    p_z = p_zt.sum(axis=1)
    p_t = p_zt.sum(axis=0)
    mi = discrete_kl(p_zt, np.outer(p_z, p_t))
    pt_pos = p_t[p_t > 0.0]
    h_t = float(-np.sum(pt_pos * np.log(pt_pos)))
    return {"mi": mi, "h_t": h_t, "h_t_given_z": h_t - mi}


# ---------------------------------------------------------------------------
# discrete instances and bound checks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiscreteInstance:
    """A finite stand-in for the continuous populations in the bounds.

    joint[z, t] is a probability table, loss[z, t] a nonnegative loss with
    loss / c <= 1 everywhere (the bounded unit-loss requirement). When mu and
    h are present the loss must equal (mu - h)^2, which is what links the
    heterogeneous-effect bound to squared-error prediction.
    """

    joint: np.ndarray
    loss: np.ndarray
    c: float
    mu: np.ndarray | None = None
    h: np.ndarray | None = None

    def validate(self) -> None:
        joint, loss = np.asarray(self.joint), np.asarray(self.loss)
        if joint.ndim != 2 or joint.shape != loss.shape:
            raise ValueError(
                f"instance tables must be matching 2-D, got {joint.shape} "
                f"and {loss.shape}"
            )
        if np.any(joint < 0.0) or abs(joint.sum() - 1.0) > 1e-12:
            raise ValueError(f"joint is not a distribution (sum {joint.sum()!r})")
        if self.c <= 0.0:
            raise ValueError("bound constant c must be positive")
        if np.any(loss < 0.0) or np.any(loss / self.c > 1.0 + 1e-12):
            raise ValueError("loss table violates 0 <= loss / c <= 1")
        if (self.mu is None) != (self.h is None):
            raise ValueError("mu and h must be given together")
        if self.mu is not None:
            linked = (np.asarray(self.mu) - np.asarray(self.h)) ** 2
            if np.max(np.abs(linked - loss)) > 1e-9:
                raise ValueError("loss is not (mu - h)^2 as required")

    def p_z(self) -> np.ndarray:
        return self.joint.sum(axis=1)

    def p_t(self) -> np.ndarray:
        return self.joint.sum(axis=0)

    def p_z_given_t(self, t_index: int) -> np.ndarray:
        pt = self.joint[:, t_index].sum()
        if pt == 0.0:
            raise ValueError(f"treatment column {t_index} has zero probability")
        return self.joint[:, t_index] / pt


def factual_error(inst: DiscreteInstance, t_index: int) -> float:
    """Expected loss at dose t under the factual population p(z | t)."""
    return float(inst.loss[:, t_index] @ inst.p_z_given_t(t_index))


def counterfactual_error(inst: DiscreteInstance, t_index: int) -> float:
    """Expected loss at dose t under the full population p(z)."""
    return float(inst.loss[:, t_index] @ inst.p_z())


def expected_errors(inst: DiscreteInstance) -> dict:
    """Overall factual (under p(z,t)) and counterfactual (under p(z)p(t)) errors."""
    ef = float(np.sum(inst.loss * inst.joint))
    ecf = float(np.sum(inst.loss * np.outer(inst.p_z(), inst.p_t())))
    return {"factual": ef, "counterfactual": ecf}


def check_prop1(inst: DiscreteInstance) -> dict:
    """Counterfactual error vs factual error + c * sqrt(2 KL), both KL orders.

    The statement of the bound and the last proof line disagree on the KL
    argument order, so both directions are evaluated; ``holds`` requires both.
    """
    inst.validate()
    errs = expected_errors(inst)
    prod = np.outer(inst.p_z(), inst.p_t())
    kl_joint_prod = discrete_kl(inst.joint, prod)
    kl_prod_joint = discrete_kl(prod, inst.joint)
    rhs = errs["factual"] + inst.c * np.sqrt(2.0 * kl_joint_prod)
    rhs_alt = errs["factual"] + inst.c * np.sqrt(2.0 * kl_prod_joint)
    lhs = errs["counterfactual"]
    return {
        "lhs": lhs,
        "rhs": float(rhs),
        "rhs_alt": float(rhs_alt),
        "kl": kl_joint_prod,
        "kl_alt": kl_prod_joint,
        "holds": bool(lhs <= rhs + BOUND_TOL and lhs <= rhs_alt + BOUND_TOL),
    }


def check_lemma1(inst: DiscreteInstance, t_index: int) -> dict:
    """Per-dose bound: eps_cf(t) <= eps_f(t) + c * sqrt(2 KL(p(z) || p(z|t)))."""
    inst.validate()
    kl = discrete_kl(inst.p_z(), inst.p_z_given_t(t_index))
    lhs = counterfactual_error(inst, t_index)
    rhs = factual_error(inst, t_index) + inst.c * np.sqrt(2.0 * kl)
    return {"lhs": lhs, "rhs": float(rhs), "kl": kl,
            "holds": bool(lhs <= rhs + BOUND_TOL)}


def pehe(inst: DiscreteInstance, t1: int, t2: int) -> float:
    """Expected squared error of the predicted effect difference mu(t1)-mu(t2)."""
    if inst.mu is None:
        raise ValueError("pehe needs mu and h response tables")
    inst.validate()
    true_diff = inst.mu[:, t1] - inst.mu[:, t2]
    pred_diff = inst.h[:, t1] - inst.h[:, t2]
    return float(np.sum((true_diff - pred_diff) ** 2 * inst.p_z()))


def check_prop2(inst: DiscreteInstance, t1: int, t2: int) -> dict:
    """Heterogeneous-effect bound between two dose levels.

    ``rhs`` is the additive form ef(t1) + ef(t2) + c(sqrt(2 KL1) + sqrt(2 KL2)).
    That form is NOT a theorem: squaring the L2 triangle inequality keeps a
    cross term, so instances whose prediction errors flip sign between the two
    doses can exceed it (a one-state instance with errors +1 and -1 gives
    lhs 4 vs rhs 2). ``rhs_corrected`` keeps the cross term,
    (sqrt(ef1 + c sqrt(2 KL1)) + sqrt(ef2 + c sqrt(2 KL2)))^2, and always
    majorizes. Both are reported; ``holds`` refers to the additive form.
    """
    lhs = pehe(inst, t1, t2)
    p_z = inst.p_z()
    kl1 = discrete_kl(p_z, inst.p_z_given_t(t1))
    kl2 = discrete_kl(p_z, inst.p_z_given_t(t2))
    term1 = factual_error(inst, t1) + inst.c * np.sqrt(2.0 * kl1)
    term2 = factual_error(inst, t2) + inst.c * np.sqrt(2.0 * kl2)
    rhs = term1 + term2
    rhs_corrected = (np.sqrt(term1) + np.sqrt(term2)) ** 2
    return {"lhs": lhs, "rhs": float(rhs), "rhs_corrected": float(rhs_corrected),
            "holds": bool(lhs <= rhs + BOUND_TOL),
            "holds_corrected": bool(lhs <= rhs_corrected + BOUND_TOL)}


def pinsker_check(p, q) -> dict:
    """Total-variation sum against the sqrt(2 KL) majorant."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    tv_sum = float(np.sum(np.abs(p - q)))
    kl_bound = float(np.sqrt(2.0 * discrete_kl(p, q)))
    return {"tv_sum": tv_sum, "kl_bound": kl_bound,
            "holds": bool(tv_sum <= kl_bound + BOUND_TOL)}


def random_instance(n_z: int, n_t: int, seed: int,
                    with_response_tables: bool = False) -> DiscreteInstance:
    """Dirichlet-uniform joint with either a uniform loss or (mu - h)^2."""
    if n_z < 2 or n_t < 2:
        raise ValueError("instance sides must be >= 2")
    rng = np.random.default_rng(seed)
    joint = rng.dirichlet(np.ones(n_z * n_t)).reshape(n_z, n_t)
    if with_response_tables:
        mu = rng.normal(size=(n_z, n_t))
        h = rng.normal(size=(n_z, n_t))
        loss = (mu - h) ** 2
        c = float(max(loss.max(), np.finfo(np.float64).tiny))
        return DiscreteInstance(joint=joint, loss=loss, c=c, mu=mu, h=h)
    c = float(rng.uniform(0.5, 2.0))
    loss = rng.uniform(0.0, c, size=(n_z, n_t))
    return DiscreteInstance(joint=joint, loss=loss, c=c)


@dataclass
class BoundReport:
    """Outcome of a randomized verification sweep; violations must stay 0."""

    instances: int
    seed: int
    max_side: int
    checks: int = 0
    violations: list = None
    min_slack: dict = None

    def __post_init__(self):
        if self.violations is None:
            self.violations = []
        if self.min_slack is None:
            self.min_slack = {}

    def record(self, name: str, result: dict, context: str) -> None:
        slack = result["rhs"] - result["lhs"] if "rhs" in result else \
            result["kl_bound"] - result["tv_sum"]
        self.checks += 1
        if name not in self.min_slack or slack < self.min_slack[name]:
            self.min_slack[name] = slack
        if not result["holds"]:
            self.violations.append((name, context, result))

    def to_text(self) -> str:
        lines = [
            f"instances = {self.instances}",
            f"seed = {self.seed}",
            f"max_side = {self.max_side}",
            f"checks = {self.checks}",
            f"violations = {len(self.violations)}",
        ]
        for name in sorted(self.min_slack):
            lines.append(f"min_slack.{name} = {self.min_slack[name]!r}")
        for name, context, result in self.violations:
            lines.append(f"VIOLATION {name} at {context}: {result!r}")
        return "\n".join(lines) + "\n"


def verify_bounds(instances: int, max_side: int = 8, seed: int = 0) -> BoundReport:
    """Check every bound on ``instances`` random tables of each flavor.

    Per instance: the overall bound in both KL orders, the per-dose bound at
    every dose, the Pinsker step for the joint factorization, and (on a
    paired response-table instance) the heterogeneous-effect bound for every
    dose pair.
    """
    if instances < 1:
        raise ValueError("need at least one instance")
    report = BoundReport(instances=instances, seed=seed, max_side=max_side)
    rng = np.random.default_rng(seed)
    for k in range(instances):
        n_z = int(rng.integers(2, max_side + 1))
        n_t = int(rng.integers(2, max_side + 1))
        inst_seed = int(rng.integers(0, 2 ** 31))
        inst = random_instance(n_z, n_t, inst_seed)
        ctx = f"instance {k} (|Z|={n_z}, |T|={n_t}, seed={inst_seed})"
        report.record("prop1", check_prop1(inst), ctx)
        for t in range(n_t):
            report.record("lemma1", check_lemma1(inst, t), f"{ctx}, t={t}")
        prod = np.outer(inst.p_z(), inst.p_t())
        report.record("pinsker", pinsker_check(inst.joint, prod), ctx)

        paired = random_instance(n_z, n_t, inst_seed, with_response_tables=True)
        for t1 in range(n_t):
            for t2 in range(t1 + 1, n_t):
                out = check_prop2(paired, t1, t2)
                pair_ctx = f"{ctx} (responses), t1={t1}, t2={t2}"
                report.record("prop2", out, pair_ctx)
                report.record("prop2_corrected",
                              {"lhs": out["lhs"], "rhs": out["rhs_corrected"],
                               "holds": out["holds_corrected"]}, pair_ctx)
    return report


# ---------------------------------------------------------------------------
# representation balance probe
# ---------------------------------------------------------------------------

def balance_probe(z, t, seed: int = 0) -> float:
    """How much dose information a representation carries, in [..., 1].

    Fits a fresh linear-in-features treatment predictor on 70% of the rows
    and scores held-out R^2: 1 - MSE_holdout / Var(t_holdout). Near 0 means
    balanced (the dose is unpredictable beyond its mean); near 1 means the
    dose is fully recoverable. The probe is deliberately low-capacity so
    memorization cannot masquerade as dependence.
    """
    z = np.asarray(z, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    if z.shape[0] != t.shape[0]:
        raise ValueError(f"z has {z.shape[0]} rows but t has {t.shape[0]}")
    if z.shape[0] < 50:
        raise ValueError("balance probe needs at least 50 samples")
    if np.var(t) == 0.0:
        raise ValueError("treatment is degenerate (zero variance)")
    perm = np.random.default_rng([seed, _STREAM_PROBE_SPLIT]).permutation(z.shape[0])
    cut = int(0.7 * z.shape[0])
    fit_idx, hold_idx = perm[:cut], perm[cut:]
    fit = fit_adversary_to_convergence(z[fit_idx], t[fit_idx], seed=seed, hidden=0)
    t_hold = t[hold_idx]
    mse_holdout = float(np.mean((fit.predict(z[hold_idx]) - t_hold) ** 2))
    return 1.0 - mse_holdout / float(np.var(t_hold))


# ---------------------------------------------------------------------------
# metric reports
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricsRow:
    method: str
    seed: int
    alpha: float
    split: str
    mise: float
    pe: float


METRICS_HEADER = "method,seed,alpha,split,mise,pe"


def write_metrics_rows(rows, path: str, append: bool = False) -> None:
    exists = os.path.exists(path) and os.path.getsize(path) > 0
    mode = "a" if append and exists else "w"
    with open(path, mode) as fh:
        if mode == "w":
            fh.write(METRICS_HEADER + "\n")
        for r in rows:
            fh.write(f"{r.method},{r.seed},{r.alpha!r},{r.split},{r.mise!r},{r.pe!r}\n")
