"""Exact tabular checks of the soft-fusion improvement guarantee.

Everything here works on small finite discounted MDPs with stochastic
policies stored as ``(nS, nA)`` row-stochastic arrays. Values are computed
by direct linear solves, so the inequalities are checked pointwise up to
floating-point error only.

For a non-best learner the objects are: ``pi_old`` (its policy at the end
of the previous period), ``pi_b`` (the best policy of that period) and
``pi_new``, the per-state minimizer of ``E_pi[-Q_old] + beta KL(pi || pi_b)``.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .numcore import ConfigError, NumericError

ROW_TOL = 1e-12


@dataclass
class TabularMDP:
    P: np.ndarray  # (nS, nA, nS)
    R: np.ndarray  # (nS, nA)
    gamma: float

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=np.float64)
        self.R = np.asarray(self.R, dtype=np.float64)
        if self.P.ndim != 3 or self.P.shape[0] != self.P.shape[2] or self.R.shape != self.P.shape[:2]:
            raise ConfigError(f"inconsistent shapes P{self.P.shape} R{self.R.shape}")
        if np.any(self.P < 0) or np.max(np.abs(self.P.sum(axis=2) - 1.0)) > ROW_TOL:
            raise ConfigError("transition rows must be probability distributions")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not np.all(np.isfinite(self.R)):
            raise ConfigError("rewards must be finite")

    @property
    def nS(self) -> int:
        return self.P.shape[0]

    @property
    def nA(self) -> int:
        return self.P.shape[1]


@dataclass
class EvalResult:
    Q: np.ndarray
    V: np.ndarray
    A: np.ndarray


@dataclass
class TabularPolicy:
    """Row-stochastic (nS, nA) action distribution; usable wherever an array is expected."""

    pi: np.ndarray

    def __post_init__(self):
        self.pi = check_policy(self.pi)

    def __array__(self, dtype=None, copy=None):
        return self.pi if dtype is None else self.pi.astype(dtype)

    @classmethod
    def uniform(cls, nS: int, nA: int) -> "TabularPolicy":
        return cls(np.full((nS, nA), 1.0 / nA))


@dataclass
class TheoremConfig:
    beta: float
    C: float
    tolerance: float = 1e-9

    def __post_init__(self):
        if not (self.beta > 0 and self.C > 0):
            raise ConfigError("beta and C must be positive")

    def derive(self, eps: float, gamma: float):
        return derive_rho_d(eps, gamma, self.beta, self.C)


def check_policy(pi, nS=None, nA=None) -> np.ndarray:
    pi = np.asarray(pi, dtype=np.float64)
    if pi.ndim != 2 or (nS is not None and pi.shape != (nS, nA)):
        raise ConfigError(f"policy has shape {pi.shape}, expected ({nS}, {nA})")
    if np.any(pi < 0) or np.max(np.abs(pi.sum(axis=1) - 1.0)) > ROW_TOL:
        raise ConfigError("policy rows must be probability distributions")
    return pi


def random_mdp(seed, nS: int, nA: int, reward_scale: float = 1.0, gamma: float = 0.9) -> TabularMDP:
    """Flat-Dirichlet transition rows, rewards uniform in [-reward_scale, reward_scale]."""
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(nS), size=(nS, nA))
    P /= P.sum(axis=2, keepdims=True)
    R = rng.uniform(-reward_scale, reward_scale, size=(nS, nA))
    return TabularMDP(P, R, gamma)


def random_policy(rng, nS: int, nA: int, concentration: float = 1.0) -> np.ndarray:
    pi = rng.dirichlet(np.full(nA, concentration), size=nS)
    return pi / pi.sum(axis=1, keepdims=True)


def state_chain(mdp: TabularMDP, pi) -> np.ndarray:
    """State-to-state transition matrix of the Markov chain induced by `pi`."""
    return np.einsum("sa,sat->st", pi, mdp.P)


def policy_evaluation(mdp: TabularMDP, pi) -> EvalResult:
    """Q^pi from the linear Bellman system Q = R + gamma P (pi . Q)."""
    pi = check_policy(pi, mdp.nS, mdp.nA)
    n = mdp.nS * mdp.nA
    # M[(s,a), (s',a')] = P[s,a,s'] pi[s',a']
    M = (mdp.P[:, :, :, None] * pi[None, None, :, :]).reshape(n, n)
    try:
        q = np.linalg.solve(np.eye(n) - mdp.gamma * M, mdp.R.reshape(n))
    except np.linalg.LinAlgError as exc:
        raise NumericError("singular Bellman system") from exc
    Q = q.reshape(mdp.nS, mdp.nA)
    V = np.sum(pi * Q, axis=1)
    return EvalResult(Q, V, Q - V[:, None])


def value_iteration_q(mdp: TabularMDP, pi, tol: float = 1e-13, max_iter: int = 100_000) -> np.ndarray:
    """Iterative policy evaluation; slow, used as an independent check of the direct solve."""
    Q = np.zeros_like(mdp.R)
    for _ in range(max_iter):
        V = np.sum(pi * Q, axis=1)
        Q_next = mdp.R + mdp.gamma * mdp.P @ V
        if np.max(np.abs(Q_next - Q)) < tol:
            return Q_next
        Q = Q_next
    return Q


def kl_categorical(p, q) -> float:
    """KL(p || q); +inf when q vanishes somewhere p does not."""
    p, q = np.asarray(p, dtype=np.float64), np.asarray(q, dtype=np.float64)
    mask = p > 0
    if np.any(q[mask] <= 0):
        return np.inf
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def tv_categorical(p, q) -> float:
    return 0.5 * float(np.sum(np.abs(np.asarray(p) - np.asarray(q))))


def kl_rows(p, q) -> np.ndarray:
    return np.array([kl_categorical(a, b) for a, b in zip(p, q)])


def tv_rows(p, q) -> np.ndarray:
    return 0.5 * np.sum(np.abs(np.asarray(p) - np.asarray(q)), axis=1)


def augmented_objective(pi, Q_old, pi_b, beta) -> np.ndarray:
    """Per-state E_{a~pi}[-Q_old(s,a)] + beta KL(pi(.|s) || pi_b(.|s))."""
    return -np.sum(pi * Q_old, axis=1) + beta * kl_rows(pi, pi_b)


def augmented_minimizer(Q_old, pi_b, beta: float) -> np.ndarray:
    """pi_new(a|s) proportional to pi_b(a|s) exp(Q_old(s,a) / beta)."""
    if not beta > 0:
        raise ConfigError(f"beta must be positive, got {beta}")
    pi_b = np.asarray(pi_b, dtype=np.float64)
    if np.any(pi_b.sum(axis=1) <= 0):
        raise ConfigError("reference policy has an all-zero row")
    with np.errstate(divide="ignore"):
        logits = np.log(pi_b) + np.asarray(Q_old) / beta
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    return w / w.sum(axis=1, keepdims=True)


def expected_q(Q, pi) -> np.ndarray:
    return np.sum(np.asarray(pi) * Q, axis=1)


def check_assumption1(mdp: TabularMDP, pi_b, pi_old, tol: float = ROW_TOL, Q_old=None) -> np.ndarray:
    """Per state: E_{pi_b}[Q^{pi_old}] >= E_{pi_old}[Q^{pi_old}] - tol."""
    if Q_old is None:
        Q_old = policy_evaluation(mdp, pi_old).Q
    return expected_q(Q_old, pi_b) >= expected_q(Q_old, pi_old) - tol


def derive_rho_d(eps: float, gamma: float, beta: float, C: float):
    """Constants that make |Q^new - Q^old| <= beta max(rho KL_max, d) hold."""
    k = 2.0 * eps * gamma / (beta * (1.0 - gamma))
    return k * C, k / C


def search_radius(pi_new, pi_old, rho: float, d: float) -> float:
    """max(rho * max_s KL(pi_new || pi_old), d)."""
    return max(rho * float(np.max(kl_rows(pi_new, pi_old))), d)


def spread_excess(pi_new, pi_b, pi_old, rho: float, d: float) -> np.ndarray:
    """Per-state KL(pi_new || pi_b) minus the search radius (the improvement-gap integrand)."""
    return kl_rows(pi_new, pi_b) - search_radius(pi_new, pi_old, rho, d)


def check_assumption2(pi_new, pi_b, pi_old, rho: float, d: float, tol: float = ROW_TOL) -> np.ndarray:
    return spread_excess(pi_new, pi_b, pi_old, rho, d) >= -tol


def discounted_visits(mdp: TabularMDP, pi, values) -> np.ndarray:
    """W(s) = E[sum_{k>=0} gamma^k values(s_k) | s_0 = s] under the chain of `pi`."""
    Pb = state_chain(mdp, pi)
    return np.linalg.solve(np.eye(mdp.nS) - mdp.gamma * Pb, np.asarray(values, dtype=np.float64))


def improvement_gap_matrix(mdp: TabularMDP, pi_b, delta, beta: float) -> np.ndarray:
    """beta E[sum_{k>=t+1} gamma^{k-t} delta(s_k)] from every (s_t, a_t), later actions from pi_b."""
    W = discounted_visits(mdp, pi_b, delta)
    return beta * mdp.gamma * (mdp.P @ W)


def improvement_gap(mdp: TabularMDP, pi_b, delta, beta: float, s: int, a: int) -> float:
    return float(improvement_gap_matrix(mdp, pi_b, delta, beta)[s, a])


def lemma4_bound(ev: EvalResult, alpha: float, gamma: float, C: float) -> float:
    eps = float(np.max(np.abs(ev.A)))
    return 2.0 * eps * gamma / (1.0 - gamma) * max(C * alpha * alpha, 1.0 / C)


def check_lemma4(mdp: TabularMDP, pi, pi_other, C: float, tol: float) -> float:
    """Slack of |Q^pi - Q^pi'| <= (2 eps gamma / (1-gamma)) max(C alpha^2, 1/C); negative = violated."""
    ev = policy_evaluation(mdp, pi)
    Q_other = policy_evaluation(mdp, pi_other).Q
    alpha = float(np.max(tv_rows(pi, pi_other)))
    return lemma4_bound(ev, alpha, mdp.gamma, C) - float(np.max(np.abs(ev.Q - Q_other))) + tol


@dataclass
class CertReport:
    nS: int
    nA: int
    gamma: float
    beta: float
    C: float
    eps: float
    rho: float
    d: float
    a1: bool
    a2: bool
    lemma1_slack: float
    prop1_slack: float
    ineq_a_slack: float
    ineq_b_slack: float
    lemma4_slack: float
    gap_min: float

    @property
    def violations(self) -> list:
        """Names of checks that failed although their premises held."""
        out = []
        if self.a1:
            for name in ("lemma1", "prop1", "ineq_a"):
                if getattr(self, f"{name}_slack") < 0:
                    out.append(name)
        if self.a1 and self.a2 and self.ineq_b_slack < 0:
            out.append("ineq_b")
        if self.lemma4_slack < 0:
            out.append("lemma4")
        return out


def certify_theorem1(mdp: TabularMDP, pi_old, pi_b, beta: float, C: float, tol: float = 1e-9,
                     assumption_tol: float = ROW_TOL) -> CertReport:
    """Evaluate every link of the improvement chain on one instance.

    Slacks are ``lhs - rhs + tol`` minimized over all states (and actions),
    so a negative slack is a violation at tolerance `tol`. Checks whose
    premises fail are still computed and reported but not counted as
    violations.
    """
    pi_old = check_policy(pi_old, mdp.nS, mdp.nA)
    pi_b = check_policy(pi_b, mdp.nS, mdp.nA)
    ev_old = policy_evaluation(mdp, pi_old)
    Q_old = ev_old.Q
    pi_new = augmented_minimizer(Q_old, pi_b, beta)
    eps = float(np.max(np.abs(ev_old.A)))
    rho, d = derive_rho_d(eps, mdp.gamma, beta, C)
    a1 = bool(np.all(check_assumption1(mdp, pi_b, pi_old, assumption_tol, Q_old)))
    a2 = bool(np.all(check_assumption2(pi_new, pi_b, pi_old, rho, d, assumption_tol)))
    Q_new = policy_evaluation(mdp, pi_new).Q
    Q_b = policy_evaluation(mdp, pi_b).Q
    delta = spread_excess(pi_new, pi_b, pi_old, rho, d)
    gap = improvement_gap_matrix(mdp, pi_b, delta, beta)
    return CertReport(
        nS=mdp.nS, nA=mdp.nA, gamma=mdp.gamma, beta=beta, C=C, eps=eps, rho=rho, d=d, a1=a1, a2=a2,
        lemma1_slack=float(np.min(expected_q(Q_old, pi_new) - expected_q(Q_old, pi_old))) + tol,
        prop1_slack=float(np.min(Q_new - Q_old)) + tol,
        ineq_a_slack=float(np.min(Q_new - (Q_b + gap))) + tol,
        ineq_b_slack=float(np.min(Q_new - Q_b)) + tol,
        lemma4_slack=min(check_lemma4(mdp, pi_old, pi_new, C, tol), check_lemma4(mdp, pi_b, pi_old, C, tol)),
        gap_min=float(np.min(gap)),
    )


def sample_instance(seed: int, max_states: int = 4, max_actions: int = 3):
    """One certification instance: (mdp, pi_old, pi_b, beta, C).

    Four families, equally likely:

    0. pi_b is an unrelated random policy (the first assumption often fails).
    1. pi_b mixes pi_old with the greedy policy of Q^{pi_old} (first assumption holds).
    2. pi_b is that greedy policy with a little uniform mass.
    3. Short horizon (gamma <= 0.05) with a concentrated pi_old and a mixed pi_b,
       where both assumptions hold together often enough to test the full chain.
    """
    rng = np.random.default_rng(seed)
    nS = int(rng.integers(1, max_states + 1))
    nA = int(rng.integers(2, max_actions + 1))
    kind = int(rng.integers(4))
    if kind == 3:
        gamma, conc = float(rng.uniform(1e-3, 0.05)), 5.0
    else:
        gamma = float(rng.choice([rng.uniform(0.01, 0.2), rng.uniform(0.2, 0.95)]))
        conc = float(rng.choice([0.3, 1.0, 5.0]))
    mdp = random_mdp(rng.integers(2**63), nS, nA, 1.0, gamma)
    pi_old = random_policy(rng, nS, nA, conc)
    if kind == 0:
        pi_b = random_policy(rng, nS, nA)
    else:
        Q_old = policy_evaluation(mdp, pi_old).Q
        greedy = np.zeros_like(Q_old)
        greedy[np.arange(nS), np.argmax(Q_old, axis=1)] = 1.0
        lam = 1.0 if kind == 2 else rng.uniform(0.05, 0.95)
        # keep full support so KL terms stay finite
        pi_b = (1 - lam) * pi_old + lam * (0.98 * greedy + 0.02 / nA)
        pi_b /= pi_b.sum(axis=1, keepdims=True)
    beta = float(rng.uniform(0.1, 2.0))
    C = float(rng.uniform(0.5, 2.0))
    return mdp, pi_old, pi_b, beta, C


@dataclass
class CorpusSummary:
    instances: int
    a1_holds: int
    a2_holds: int
    both_hold: int
    violations: int
    reports: list

    def table(self) -> str:
        rows = [("instances", self.instances), ("A1 holds", self.a1_holds), ("A2 holds", self.a2_holds),
                ("A1 and A2 hold", self.both_hold), ("violations", self.violations)]
        return "\n".join(f"{k:<16}{v:>8}" for k, v in rows)


def certify_corpus(instances: int = 1000, seed: int = 0, tol: float = 1e-9) -> CorpusSummary:
    ss = np.random.SeedSequence(seed)
    reports = []
    for child in ss.spawn(instances):
        mdp, pi_old, pi_b, beta, C = sample_instance(int(child.generate_state(1)[0]))
        reports.append(certify_theorem1(mdp, pi_old, pi_b, beta, C, tol))
    return CorpusSummary(
        instances=instances,
        a1_holds=sum(r.a1 for r in reports),
        a2_holds=sum(r.a2 for r in reports),
        both_hold=sum(r.a1 and r.a2 for r in reports),
        violations=sum(bool(r.violations) for r in reports),
        reports=reports,
    )


def write_corpus_csv(summary: CorpusSummary, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(asdict(summary.reports[0]).keys()) if summary.reports else []
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["instance", *names, "violations"])
        for k, r in enumerate(summary.reports):
            w.writerow([k, *asdict(r).values(), ";".join(r.violations)])
