"""Sampling-free reference computations and regret-bound evaluators."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import expit

from query_hedge.instances import C0, C1, LossSequence, two_expert_losses
from query_hedge.learners import HedgeState, default_eta, hedge_step

THEOREMS = ("thm2", "thm3", "thm_adv3_uniform", "thm_etc", "thm_ftl", "thm_lb", "thm_lb_le")
LOWER_BOUNDS = ("thm_lb", "thm_lb_le")

# Default bound checked for each learner.
DEFAULT_BOUND = {
    "hedge_full": "thm2",
    "hedge_le_bernoulli": "thm3",
    "hedge_le_uniform": "thm_adv3_uniform",
    "etc": "thm_etc",
    "ftl": "thm_ftl",
}


# --------------------------------------------------------------------------- #
# Two-expert regret of Hedge with uniform querying
# --------------------------------------------------------------------------- #


def _check_eps(eps_sequence: Sequence[float], k: int, T: int) -> np.ndarray:
    eps = np.asarray(eps_sequence, dtype=np.float64)
    if eps.ndim != 1 or eps.size != T:
        raise ValueError(f"eps_sequence must have length T={T}, got shape {eps.shape}")
    if np.any(np.abs(eps) > 1.0):
        raise ValueError("every eps_t must lie in [-1, 1]")
    if not 0 <= k <= T:
        raise ValueError(f"need 0 <= k <= T, got k={k}, T={T}")
    total = float(eps.sum())
    if total < 0.0:
        raise ValueError(f"sum of eps_t is {total!r} < 0: expert 0 must be the best fixed expert")
    return eps


def vanilla_hedge_closed_form_regret(eps_sequence: Sequence[float], eta: float, k: int, T: int) -> float:
    """Closed-form regret of two-expert Hedge with k uniform best-action queries.

    (1 - k/T) * sum_t eps_t * sigma(-eta * D_t) + (k/T) * sum_{eps_t <= 0} eps_t,
    where D_t = sum_{tau < t} eps_tau.
    """
    eps = _check_eps(eps_sequence, k, T)
    gap = np.concatenate([[0.0], np.cumsum(eps)[:-1]])
    follow = expit(-eta * gap)  # stable for any magnitude of eta * gap
    hedge_term = float(np.dot(eps, follow))
    query_term = float(eps[eps <= 0.0].sum())
    return (1.0 - k / T) * hedge_term + (k / T) * query_term


def vanilla_hedge_exact_recursion(eps_sequence: Sequence[float], eta: float, k: int, T: int) -> float:
    """Same regret obtained by running the weight recursion on materialized losses."""
    eps = _check_eps(eps_sequence, k, T)
    losses = two_expert_losses(eps)
    logw = np.zeros(2)
    hedge_loss = 0.0
    for t in range(T):
        w = np.exp(logw - logw.max())
        p = w / w.sum()
        hedge_loss += float(p @ losses[:, t])
        logw = logw - eta * losses[:, t]
    min_loss = float(losses.min(axis=0).sum())
    mixed = (1.0 - k / T) * hedge_loss + (k / T) * min_loss
    return mixed - float(losses[0].sum())


# --------------------------------------------------------------------------- #
# Exact expected losses of Hedge learners
# --------------------------------------------------------------------------- #


def hedge_expected_loss(tilde: np.ndarray, losses: np.ndarray, eta: float, U: float = 1.0) -> float:
    """Sum_t p_t . losses_t where p_t comes from stepping Hedge on ``tilde``."""
    state = HedgeState.initial(tilde.shape[0], eta, U)
    total = 0.0
    for t in range(tilde.shape[1]):
        p, state = hedge_step(state, tilde[:, t])
        total += float(p @ losses[:, t])
    return total


def no_query_expected_loss(losses: LossSequence, eta: float) -> float:
    """Expected loss L_0 of the Hedge core on relative losses, with no queries."""
    rel = losses.losses - losses.step_min
    return hedge_expected_loss(rel, losses.losses, eta)


def hedge_full_expected_loss(losses: LossSequence, k: int, eta: float | None = None) -> float:
    """Exact expected total loss of full-feedback Hedge with k uniform queries.

    Because its distributions do not depend on which steps are queried, the
    expectation is (1 - k/T) * L_0 + (k/T) * L_T^min.
    """
    T = losses.T
    if eta is None:
        eta = default_eta("hedge_full", T, losses.n, k)
    l0 = no_query_expected_loss(losses, eta)
    return (1.0 - k / T) * l0 + (k / T) * losses.dynamic_min_loss


def lemma_certificate_margins(tilde: np.ndarray, eta: float, U: float) -> np.ndarray:
    """Per-action slack of the Hedge certificate on relative losses in [0, U].

    Entry i is (1/(1 - U eta)) (L_T(i) + ln n / eta) - sum_t p_t . tilde_t;
    the certificate holds iff every entry is >= 0.
    """
    if not eta * U < 1.0:
        raise ValueError(f"certificate needs U * eta < 1, got U={U}, eta={eta}")
    n = tilde.shape[0]
    hedge = hedge_expected_loss(tilde, tilde, eta, U)
    bound = (tilde.sum(axis=1) + math.log(n) / eta) / (1.0 - U * eta)
    return bound - hedge


# --------------------------------------------------------------------------- #
# Regret bounds
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class BoundSpec:
    theorem: str
    T: int
    n: int
    k: int

    def __post_init__(self) -> None:
        if self.theorem not in THEOREMS:
            raise ValueError(f"unknown theorem id {self.theorem!r}; expected one of {THEOREMS}")
        if self.T < 1 or self.n < 1 or self.k < 0:
            raise ValueError(f"invalid bound parameters T={self.T}, n={self.n}, k={self.k}")

    @property
    def is_lower_bound(self) -> bool:
        return self.theorem in LOWER_BOUNDS


class BoundValue(NamedTuple):
    value: float
    precondition_met: bool


def _safe_div(a: float, b: float) -> float:
    return math.inf if b == 0 else a / b


def theorem_bound(spec: BoundSpec) -> BoundValue:
    """Numeric value of the named regret bound and whether its hypotheses hold."""
    T, n, k = spec.T, spec.n, spec.k
    ln_n = math.log(n)
    in_range = 1 <= k <= T
    th = spec.theorem
    if th == "thm2":
        value = min(math.sqrt(T * ln_n), _safe_div(T * ln_n, k))
        return BoundValue(value, 0 <= k <= T)
    if th == "thm3":
        value = 2.0 * min(T * math.sqrt(_safe_div(2.0 * ln_n, k)), _safe_div(T**2 * ln_n, k**2))
        return BoundValue(value, in_range and k >= math.sqrt(T * math.log(T) / 2.0) - 1.0)
    if th == "thm_adv3_uniform":
        return BoundValue(_safe_div(T, k) ** 2 * ln_n, in_range)
    if th == "thm_etc":
        value = min(3.0 * T * math.sqrt(_safe_div(math.log(2 * n * T), 2.0 * k)),
                    _safe_div(2.0 * n * T**2 * math.log(T), k**2))
        return BoundValue(value, in_range and k <= 4.0 * T / 9.0 and T >= n - 1)
    if th == "thm_ftl":
        value = min(3.0 * math.sqrt(2.0 * T * math.log(2 * n * T)), _safe_div(5.0 * n * T, k))
        return BoundValue(value, in_range and k >= 2.0 * math.sqrt(T) and T >= n - 1)
    if th == "thm_lb":
        if k < C0 * math.sqrt(T):
            return BoundValue(C0 * math.sqrt(T) / 4.0, in_range)
        return BoundValue(C1 * T / k, in_range)
    # thm_lb_le
    if k**1.5 < C0 * T:
        return BoundValue(_safe_div(C0 * T, 4.0 * math.sqrt(k)), in_range)
    return BoundValue(C1 * T**2 / k**2, in_range)
