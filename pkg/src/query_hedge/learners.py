"""Learners with best-action queries.

Every learner splits into two parts. First it draws all of its per-run
randomness from a generator (query steps, action-sampling uniforms). Then a
deterministic simulation consumes those draws. The simulation is vectorized
over a batch of runs, so a single trajectory is simply a batch of one and the
Monte Carlo harness reproduces single runs bit for bit.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from query_hedge.instances import LossSequence

ALGORITHMS = ("hedge_full", "hedge_le_bernoulli", "hedge_le_uniform", "etc", "ftl")
HEDGE_ALGORITHMS = ALGORITHMS[:3]
FEEDBACK = {
    "hedge_full": "full",
    "hedge_le_bernoulli": "label_efficient",
    "hedge_le_uniform": "label_efficient",
    "etc": "label_efficient",
    "ftl": "full",
}

_RANGE_TOL = 1e-12


# --------------------------------------------------------------------------- #
# Hedge core
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class HedgeState:
    """Hedge weights held as logarithms; w(i) = exp(log_weights[i])."""

    log_weights: np.ndarray
    eta: float
    U: float = 1.0

    @classmethod
    def initial(cls, n: int, eta: float, U: float = 1.0) -> "HedgeState":
        return cls(np.zeros(n), float(eta), float(U))

    @property
    def weights(self) -> np.ndarray:
        """Weights rescaled so the largest equals 1 (same distribution, no underflow)."""
        return np.exp(self.log_weights - self.log_weights.max())

    def distribution(self) -> np.ndarray:
        w = self.weights
        return w / w.sum()


def hedge_step(state: HedgeState, tilde_loss: np.ndarray, update: bool = True) -> tuple[np.ndarray, HedgeState]:
    """Play from the current weights, then optionally apply the exponential update.

    Returns the pre-update distribution and the new state.
    """
    tl = np.asarray(tilde_loss, dtype=np.float64)
    if tl.shape != state.log_weights.shape:
        raise ValueError(f"tilde_loss has shape {tl.shape}, expected {state.log_weights.shape}")
    bad = np.flatnonzero(~((tl >= -_RANGE_TOL) & (tl <= state.U + _RANGE_TOL)))
    if bad.size:
        i = int(bad[0])
        raise ValueError(f"tilde_loss[{i}] = {tl[i]!r} lies outside [0, U={state.U}]")
    p = state.distribution()
    if not update:
        return p, state
    new_state = replace(state, log_weights=state.log_weights - state.eta * tl)
    return p, new_state


def hedge_distributions(tilde: np.ndarray, eta: float) -> np.ndarray:
    """Pre-update Hedge distributions for every step of a ``(..., n, T)`` loss array.

    Zero columns in ``tilde`` leave the weights untouched, which is how
    no-update steps are expressed.
    """
    logw = np.zeros_like(tilde)
    if tilde.shape[-1] > 1:
        np.cumsum(tilde[..., :-1], axis=-1, out=logw[..., 1:])
        logw[..., 1:] *= -eta
    logw -= logw.max(axis=-2, keepdims=True)
    np.exp(logw, out=logw)
    logw /= logw.sum(axis=-2, keepdims=True)
    return logw


# --------------------------------------------------------------------------- #
# Configuration and learning rates
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class LearnerConfig:
    algorithm: str
    k: int
    n: int
    T: int
    eta_override: float | None = None

    def __post_init__(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.n < 1 or self.T < 1:
            raise ValueError(f"need n >= 1 and T >= 1, got n={self.n}, T={self.T}")
        if not 0 <= self.k <= self.T:
            raise ValueError(f"need 0 <= k <= T, got k={self.k}, T={self.T}")
        if self.algorithm in ("etc", "ftl") and self.k == 0:
            raise ValueError(f"{self.algorithm} needs k >= 1 (no history to act on with k = 0)")
        if self.eta_override is not None and not self.eta_override >= 0.0:
            raise ValueError(f"eta_override must be non-negative, got {self.eta_override!r}")

    @property
    def feedback(self) -> str:
        return FEEDBACK[self.algorithm]

    @property
    def eta(self) -> float | None:
        """Learning rate in use (None for ETC/FTL)."""
        if self.algorithm not in HEDGE_ALGORITHMS:
            return None
        if self.eta_override is not None:
            return float(self.eta_override)
        return default_eta(self.algorithm, self.T, self.n, self.k)

    def with_k(self, k: int) -> "LearnerConfig":
        return replace(self, k=int(k))

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"algorithm": self.algorithm, "k": self.k, "n": self.n, "T": self.T}
        if self.eta_override is not None:
            d["eta_override"] = self.eta_override
        return d

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "LearnerConfig":
        fields_ = ("algorithm", "k", "n", "T")
        missing = [f for f in fields_ if f not in data]
        if missing:
            raise ValueError(f"learner is missing field(s): {', '.join(missing)}")
        extra = sorted(set(data) - set(fields_) - {"eta_override"})
        if extra:
            raise ValueError(f"learner has unknown field(s): {', '.join(extra)}")
        eta = data.get("eta_override")
        return cls(str(data["algorithm"]), int(data["k"]), int(data["n"]), int(data["T"]),
                   None if eta is None else float(eta))


def k_hat(T: int, k: int) -> int:
    """Bernoulli query-rate numerator, max(1, k - ceil(sqrt(T ln T / 2)) + 1)."""
    return max(1, k - math.ceil(math.sqrt(T * math.log(T) / 2.0)) + 1)


def bernoulli_guarantee_applies(T: int, k: int) -> bool:
    return k >= math.sqrt(T * math.log(T) / 2.0) - 1.0


def default_eta(algorithm: str, T: int, n: int, k: int) -> float:
    ln_n = math.log(n)
    if algorithm == "hedge_full":
        # Hard switch at k = sqrt(T) would miss the min{sqrt(T ln n), T ln n / k}
        # guarantee for budgets between sqrt(T) and sqrt(T ln n).
        return max(math.sqrt(ln_n / T), k / T)
    if algorithm == "hedge_le_bernoulli":
        kh = k_hat(T, k)
        return max(math.sqrt(kh * ln_n / 2.0) / T, k * kh / (math.sqrt(2.0) * T**2))
    if algorithm == "hedge_le_uniform":
        return k / T
    raise ValueError(f"{algorithm!r} has no learning rate")


def loss_range(config: LearnerConfig) -> float:
    """Upper end U of the relative losses fed to the Hedge core."""
    if config.algorithm == "hedge_le_bernoulli":
        return config.T / k_hat(config.T, config.k)
    return 1.0


# --------------------------------------------------------------------------- #
# Randomness and batched simulation
# --------------------------------------------------------------------------- #


def randomness_width(config: LearnerConfig) -> int:
    """Number of uniforms one run of ``config`` consumes."""
    T, k = config.T, config.k
    if config.algorithm in ("hedge_full", "hedge_le_uniform"):
        if k == T:
            return 0  # every step queried: nothing random left
        return T if k == 0 else 2 * T
    if config.algorithm == "hedge_le_bernoulli":
        return 2 * T
    return 0


def split_randomness(config: LearnerConfig, u: np.ndarray) -> dict[str, np.ndarray]:
    """Name the columns of a ``(B, width)`` block of uniforms."""
    T = config.T
    if u.shape[-1] == 0:
        return {}
    if config.algorithm == "hedge_le_bernoulli":
        return {"x_u": u[:, :T], "action_u": u[:, T:]}
    if u.shape[-1] == T:
        return {"action_u": u}
    # The k steps with the smallest keys form a uniform k-subset.
    return {"query_keys": u[:, :T], "action_u": u[:, T:]}


def draw_randomness(config: LearnerConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """All random inputs of one run, as a batch of one."""
    return split_randomness(config, rng.random((1, randomness_width(config))))


def uniform_query_mask(draws: dict[str, np.ndarray], k: int, batch: int, T: int) -> np.ndarray:
    """Boolean (B, T) mask marking the k smallest query keys of each row."""
    mask = np.zeros((batch, T), dtype=bool)
    if k == T:
        mask[:] = True
    elif k > 0:
        idx = np.argpartition(draws["query_keys"], k - 1, axis=1)[:, :k]
        mask[np.arange(batch)[:, None], idx] = True
    return mask


@dataclass
class BatchOutcome:
    """Per-run totals for a batch; per-step arrays only when requested."""

    expected_total: np.ndarray
    incurred_total: np.ndarray
    queries: np.ndarray
    detail: dict[str, np.ndarray] | None = None


def _min_argmin(L: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Minimum and lowest-index argmin over the action axis (-2).

    Loops over actions with contiguous slices, which beats a strided reduction
    for the small n used here.
    """
    mn = L[..., 0, :].copy()
    best = np.zeros(mn.shape, dtype=np.int64)
    for i in range(1, L.shape[-2]):
        row = L[..., i, :]
        better = row < mn
        np.copyto(mn, row, where=better)
        best[better] = i
    return mn, best


def _gather(L: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """``L[..., actions[b, t], t]`` for a shared (n, T) or batched (B, n, T) array."""
    out = np.empty(actions.shape)
    out[...] = L[..., 0, :]
    for i in range(1, L.shape[-2]):
        np.copyto(out, L[..., i, :], where=actions == i)
    return out


def _sample_actions(p: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF sampling; ``p`` is (n, T) or (B, n, T), ``u`` is (B, T)."""
    n = p.shape[-2]
    if n == 1:
        return np.zeros(u.shape, dtype=np.int64)
    cdf = np.cumsum(p[..., :-1, :], axis=-2)
    if cdf.ndim == 2:
        cdf = cdf[None]
    return (u[:, None, :] >= cdf).sum(axis=1).astype(np.int64)


def simulate_batch(
    config: LearnerConfig,
    losses: np.ndarray,
    draws: dict[str, np.ndarray],
    batch: int,
    detail: bool = False,
) -> BatchOutcome:
    """Run ``batch`` independent runs of ``config``.

    ``losses`` is either one shared ``(n, T)`` matrix or a ``(batch, n, T)``
    stack; ``draws`` holds ``(batch, T)`` uniforms named by :func:`split_randomness`.
    """
    L = np.asarray(losses, dtype=np.float64)
    if L.shape[-2:] != (config.n, config.T):
        raise ValueError(f"losses have shape {L.shape}, config expects (n={config.n}, T={config.T})")
    shared = L.ndim == 2
    T, k = config.T, config.k
    mn, best = _min_argmin(L)
    alg = config.algorithm
    hedge_p = None

    if alg in HEDGE_ALGORITHMS:
        eta = config.eta
        if alg == "hedge_full":
            queried = uniform_query_mask(draws, k, batch, T)
            hedge_p = hedge_distributions(L - mn[..., None, :], eta)
        else:
            if alg == "hedge_le_uniform":
                queried = uniform_query_mask(draws, k, batch, T)
                scale = 1.0
            else:
                kh = k_hat(T, k)
                x = draws["x_u"] < kh / T
                queried = x & (np.cumsum(x, axis=1) <= k)
                scale = T / kh
            tilde = (L - mn[..., None, :]) * queried[:, None, :]
            if scale != 1.0:
                tilde *= scale
            hedge_p = hedge_distributions(tilde, eta)
            del tilde
        hedge_exp = (hedge_p * L).sum(axis=-2)
        if "action_u" in draws:
            actions = np.where(queried, best, _sample_actions(hedge_p, draws["action_u"]))
        else:
            actions = np.broadcast_to(best, (batch, T))
        expected = np.where(queried, mn, hedge_exp)
    else:
        if shared:
            L = np.broadcast_to(L, (batch,) + L.shape)
            mn = np.broadcast_to(mn, (batch, T))
            best = np.broadcast_to(best, (batch, T))
        steps = np.arange(T)
        queried = np.broadcast_to(steps < k, (batch, T))
        if alg == "etc":
            commit = (L[..., :k].sum(axis=-1) / k).argmin(axis=-1)
            follow = np.broadcast_to(commit[:, None], (batch, T))
        else:
            history = np.zeros_like(L)
            np.cumsum(L[..., :-1], axis=-1, out=history[..., 1:])
            history[..., 1:] /= steps[1:]
            follow = _min_argmin(history)[1]
            del history
        actions = np.where(queried, best, follow)
        expected = None

    incurred = _gather(L, actions)
    if expected is None:
        expected = incurred
    queried = np.broadcast_to(queried, (batch, T))
    out = BatchOutcome(
        expected_total=expected.sum(axis=1),
        incurred_total=incurred.sum(axis=1),
        queries=queried.sum(axis=1),
    )
    if detail:
        out.detail = {
            "queried": queried,
            "actions": actions,
            "incurred": incurred,
            "expected": np.broadcast_to(expected, (batch, T)),
            "hedge_p": hedge_p,
        }
    return out


# --------------------------------------------------------------------------- #
# Trajectories
# --------------------------------------------------------------------------- #


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Per-step record of one run.

    ``distributions`` is the distribution actually used at each step, a point
    mass on queried steps and for deterministic learners. ``hedge_distributions``
    keeps the Hedge core's distribution at every step (Hedge learners only).
    """

    algorithm: str
    k: int
    distributions: np.ndarray
    queried: np.ndarray
    actions: np.ndarray
    incurred_loss: np.ndarray
    expected_loss: np.ndarray
    hedge_distributions: np.ndarray | None = None
    eta: float | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.queries_used > self.k:
            raise AssertionError(f"{self.queries_used} queries issued with budget k={self.k}")

    @property
    def n(self) -> int:
        return self.distributions.shape[0]

    @property
    def T(self) -> int:
        return self.distributions.shape[1]

    @property
    def query_set(self) -> np.ndarray:
        return np.flatnonzero(self.queried)

    @property
    def queries_used(self) -> int:
        return int(self.queried.sum())

    @property
    def total_expected_loss(self) -> float:
        return float(self.expected_loss.sum())

    @property
    def total_incurred_loss(self) -> float:
        return float(self.incurred_loss.sum())

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", "queried", "action", "incurred_loss", "expected_loss"])
            for t in range(self.T):
                writer.writerow([
                    t,
                    int(self.queried[t]),
                    int(self.actions[t]),
                    repr(float(self.incurred_loss[t])),
                    repr(float(self.expected_loss[t])),
                ])


def run_learner(config: LearnerConfig, losses: LossSequence, rng: np.random.Generator | None = None) -> Trajectory:
    """Simulate one run of ``config`` on ``losses``."""
    if (losses.n, losses.T) != (config.n, config.T):
        raise ValueError(f"losses are {losses.n}x{losses.T} but config expects {config.n}x{config.T}")
    if config.algorithm in ("etc", "ftl"):
        draws: dict[str, np.ndarray] = {}
    else:
        if rng is None:
            raise ValueError(f"{config.algorithm} is randomized and needs an rng")
        draws = draw_randomness(config, rng)
    out = simulate_batch(config, losses.losses, draws, batch=1, detail=True)
    d = out.detail
    actions = d["actions"][0]
    queried = np.array(d["queried"][0])
    hedge_p = d["hedge_p"]
    if hedge_p is not None and hedge_p.ndim == 3:
        hedge_p = hedge_p[0]
    used = np.zeros((config.n, config.T))
    used[actions, np.arange(config.T)] = 1.0
    if hedge_p is not None:
        used = np.where(queried[None, :], used, hedge_p)
    meta: dict[str, Any] = {}
    if config.algorithm == "hedge_le_bernoulli":
        meta["k_hat"] = k_hat(config.T, config.k)
        meta["guarantee_applies"] = bernoulli_guarantee_applies(config.T, config.k)
    return Trajectory(
        algorithm=config.algorithm,
        k=config.k,
        distributions=used,
        queried=queried,
        actions=np.array(actions),
        incurred_loss=np.array(d["incurred"][0]),
        expected_loss=np.array(d["expected"][0]),
        hedge_distributions=None if hedge_p is None else np.array(hedge_p),
        eta=config.eta,
        meta=meta,
    )


def _config(algorithm: str, losses: LossSequence, k: int, eta_override: float | None) -> LearnerConfig:
    return LearnerConfig(algorithm, int(k), losses.n, losses.T, eta_override)


def run_hedge_full(losses: LossSequence, k: int, rng: np.random.Generator,
                   eta_override: float | None = None) -> Trajectory:
    """Hedge on relative losses with k uniformly placed best-action queries; updates every step."""
    return run_learner(_config("hedge_full", losses, k, eta_override), losses, rng)


def run_hedge_le_bernoulli(losses: LossSequence, k: int, rng: np.random.Generator,
                           eta_override: float | None = None) -> Trajectory:
    """Label-efficient Hedge querying on Bernoulli(k_hat/T) coin flips until the budget runs out."""
    return run_learner(_config("hedge_le_bernoulli", losses, k, eta_override), losses, rng)


def run_hedge_le_uniform(losses: LossSequence, k: int, rng: np.random.Generator,
                         eta_override: float | None = None) -> Trajectory:
    """Label-efficient Hedge that queries (and updates) on a uniform k-subset of steps."""
    return run_learner(_config("hedge_le_uniform", losses, k, eta_override), losses, rng)


def run_etc(losses: LossSequence, k: int) -> Trajectory:
    """Query the first k steps, then commit to the empirically best action."""
    return run_learner(_config("etc", losses, k, None), losses)


def run_ftl(losses: LossSequence, k: int) -> Trajectory:
    """Query the first k steps, then follow the leader on all observed losses."""
    return run_learner(_config("ftl", losses, k, None), losses)
