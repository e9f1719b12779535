"""Loss sequences and the instance families that generate them.

Actions and time steps are 0-indexed throughout: ``losses[i, t]`` is the loss of
action ``i`` at step ``t``. Ties for the best action are broken toward the
lowest index.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Literal, Mapping, Sequence, Union

import numpy as np

from query_hedge.seeding import make_rng

C0 = 1.0 / (math.exp(8.0) * math.sqrt(5.0))
C1 = 1.0 / (320.0 * math.e**2)

MAX_ENUMERATION_ACTIONS = 20

Feedback = Literal["full", "label_efficient"]


class InvalidInstanceError(ValueError):
    """Raised when instance parameters do not define a valid loss law."""


# --------------------------------------------------------------------------- #
# Loss sequences
# --------------------------------------------------------------------------- #


@dataclass(frozen=True, eq=False)
class LossSequence:
    """An ``n x T`` matrix of losses in [0, 1]. Immutable once built."""

    losses: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.losses, dtype=np.float64, copy=True)
        if arr.ndim != 2:
            raise ValueError(f"losses must be a 2-d (n, T) array, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"need n >= 1 and T >= 1, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
            bad = np.argwhere(~((arr >= 0.0) & (arr <= 1.0)))[0]
            raise ValueError(
                f"loss entry (action={bad[0]}, t={bad[1]}) = {arr[tuple(bad)]!r} lies outside [0, 1]"
            )
        arr.setflags(write=False)
        object.__setattr__(self, "losses", arr)

    @property
    def n(self) -> int:
        return self.losses.shape[0]

    @property
    def T(self) -> int:
        return self.losses.shape[1]

    @cached_property
    def step_min(self) -> np.ndarray:
        """Per-step minimum loss, min_i l_t(i)."""
        return self.losses.min(axis=0)

    @cached_property
    def step_best(self) -> np.ndarray:
        """Per-step best action i*_t (lowest index on ties)."""
        return self.losses.argmin(axis=0)

    @cached_property
    def cumulative(self) -> np.ndarray:
        """Total loss L_T(i) of each fixed action."""
        return self.losses.sum(axis=1)

    @property
    def best_fixed_loss(self) -> float:
        return float(self.cumulative.min())

    @property
    def best_fixed_action(self) -> int:
        return int(self.cumulative.argmin())

    @property
    def dynamic_min_loss(self) -> float:
        """L_T^min, the sum of per-step minima."""
        return float(self.step_min.sum())

    def to_csv(self, path: str | Path) -> None:
        """Write ``t,action,loss`` rows ordered by t, then action."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", "action", "loss"])
            for t in range(self.T):
                for i in range(self.n):
                    writer.writerow([t, i, repr(float(self.losses[i, t]))])

    @classmethod
    def from_csv(cls, path: str | Path) -> "LossSequence":
        rows = []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            for row in reader:
                rows.append((int(row["t"]), int(row["action"]), float(row["loss"])))
        if not rows:
            raise ValueError(f"{path}: no loss rows")
        T = max(r[0] for r in rows) + 1
        n = max(r[1] for r in rows) + 1
        mat = np.full((n, T), np.nan)
        for t, i, v in rows:
            mat[i, t] = v
        if np.isnan(mat).any():
            raise ValueError(f"{path}: missing (t, action) entries")
        return cls(mat)


# --------------------------------------------------------------------------- #
# Instance specifications
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class FixedInstance:
    """A fixed, oblivious loss matrix."""

    matrix: tuple[tuple[float, ...], ...]
    seed: int = 0

    kind = "fixed"
    stochastic = False

    def __post_init__(self) -> None:
        mat = np.asarray(self.matrix, dtype=np.float64)
        if mat.ndim != 2:
            raise InvalidInstanceError("fixed matrix must be 2-d (n rows, T columns)")
        object.__setattr__(self, "matrix", tuple(tuple(float(x) for x in row) for row in mat))
        LossSequence(mat)  # validates range

    @classmethod
    def from_array(cls, matrix: np.ndarray, seed: int = 0) -> "FixedInstance":
        return cls(tuple(map(tuple, np.asarray(matrix, dtype=np.float64))), seed)

    @property
    def n(self) -> int:
        return len(self.matrix)

    @property
    def T(self) -> int:
        return len(self.matrix[0])

    @cached_property
    def sequence(self) -> LossSequence:
        return LossSequence(np.asarray(self.matrix))


@dataclass(frozen=True)
class LowerBoundInstance:
    """Two-action stochastic instance used in the lower-bound construction.

    Each step draws (l(0), l(1)) from the law
    (1,1): 1/2, (0,0): 1/2 - 2q, (0,1): q + s*eps, (1,0): q - s*eps,
    where s = +1 for sign ``+`` and -1 for sign ``-``.
    """

    sign: str
    q: float
    eps: float
    T: int
    seed: int = 0

    kind = "lower_bound"
    stochastic = True
    n = 2

    def __post_init__(self) -> None:
        if self.sign not in ("+", "-"):
            raise InvalidInstanceError(f"sign must be '+' or '-', got {self.sign!r}")
        if self.T < 1:
            raise InvalidInstanceError(f"T must be positive, got {self.T}")
        _check_eps_q(self.eps, self.q)

    @cached_property
    def outcome_law(self) -> dict[tuple[int, int], float]:
        s = 1.0 if self.sign == "+" else -1.0
        return {
            (1, 1): 0.5,
            (0, 0): 0.5 - 2.0 * self.q,
            (0, 1): self.q + s * self.eps,
            (1, 0): self.q - s * self.eps,
        }


@dataclass(frozen=True)
class IidBernoulliInstance:
    """Independent Bernoulli losses, action i with mean ``means[i]``."""

    means: tuple[float, ...]
    T: int
    seed: int = 0

    kind = "iid_bernoulli"
    stochastic = True

    def __post_init__(self) -> None:
        means = tuple(float(m) for m in self.means)
        if not means:
            raise InvalidInstanceError("means must be non-empty")
        if any(not (0.0 <= m <= 1.0) for m in means):
            raise InvalidInstanceError(f"means must lie in [0, 1], got {means}")
        if self.T < 1:
            raise InvalidInstanceError(f"T must be positive, got {self.T}")
        object.__setattr__(self, "means", means)

    @property
    def n(self) -> int:
        return len(self.means)


@dataclass(frozen=True)
class TwoExpertEpsInstance:
    """Two experts whose per-step gap is l_t(1) - l_t(0) = eps_t.

    Materialized as l_t(0) = max(0, -eps_t), l_t(1) = max(0, eps_t).
    """

    eps_sequence: tuple[float, ...]
    seed: int = 0

    kind = "two_expert_eps"
    stochastic = False
    n = 2

    def __post_init__(self) -> None:
        eps = tuple(float(e) for e in self.eps_sequence)
        if not eps:
            raise InvalidInstanceError("eps_sequence must be non-empty")
        if any(not (-1.0 <= e <= 1.0) for e in eps):
            raise InvalidInstanceError("every eps_t must lie in [-1, 1]")
        object.__setattr__(self, "eps_sequence", eps)

    @property
    def T(self) -> int:
        return len(self.eps_sequence)

    @cached_property
    def sequence(self) -> LossSequence:
        return LossSequence(two_expert_losses(self.eps_sequence))


InstanceSpec = Union[FixedInstance, LowerBoundInstance, IidBernoulliInstance, TwoExpertEpsInstance]


@dataclass(frozen=True)
class LowerBoundFamily:
    """The lower-bound instance with (eps, q) chosen from the query budget k."""

    feedback: str
    sign: str
    T: int
    seed: int = 0

    kind = "lower_bound_family"
    stochastic = True
    n = 2

    def __post_init__(self) -> None:
        if self.feedback not in ("full", "label_efficient"):
            raise InvalidInstanceError(f"feedback must be 'full' or 'label_efficient', got {self.feedback!r}")
        if self.sign not in ("+", "-"):
            raise InvalidInstanceError(f"sign must be '+' or '-', got {self.sign!r}")

    def at(self, k: int) -> LowerBoundInstance:
        eps, q, _ = lower_bound_params(self.feedback, self.T, k)
        return LowerBoundInstance(self.sign, q, eps, self.T, self.seed)


def two_expert_losses(eps_sequence: Sequence[float]) -> np.ndarray:
    eps = np.asarray(eps_sequence, dtype=np.float64)
    return np.vstack([np.maximum(0.0, -eps), np.maximum(0.0, eps)])


def _check_eps_q(eps: float, q: float) -> None:
    if not eps >= 0.0:
        raise InvalidInstanceError(f"constraint 0 <= eps violated: eps = {eps!r}")
    if not eps <= q:
        raise InvalidInstanceError(f"constraint eps <= q violated: eps = {eps!r} > q = {q!r}")
    if not q <= 0.25:
        raise InvalidInstanceError(f"constraint q <= 1/4 violated: q = {q!r}")


# --------------------------------------------------------------------------- #
# Sampling
# --------------------------------------------------------------------------- #


def sample_losses(spec: InstanceSpec, rng: np.random.Generator) -> np.ndarray:
    """Raw ``(n, T)`` loss array for ``spec``; fixed instances ignore ``rng``."""
    if isinstance(spec, (FixedInstance, TwoExpertEpsInstance)):
        return spec.sequence.losses
    if isinstance(spec, LowerBoundInstance):
        u = rng.random(spec.T)
        s = 1.0 if spec.sign == "+" else -1.0
        # Cut [0,1) into (1,1) | (0,0) | (0,1) | (1,0).
        c1 = 0.5
        c2 = c1 + (0.5 - 2.0 * spec.q)
        c3 = c2 + (spec.q + s * spec.eps)
        out = np.empty((2, spec.T))
        out[0] = (u < c1) | (u >= c3)
        out[1] = (u < c1) | ((u >= c2) & (u < c3))
        return out
    if isinstance(spec, IidBernoulliInstance):
        mu = np.asarray(spec.means)[:, None]
        return (rng.random((spec.n, spec.T)) < mu).astype(np.float64)
    raise TypeError(f"unsupported instance type {type(spec).__name__}")


def sample_loss_sequence(spec: InstanceSpec, rng: np.random.Generator | None = None) -> LossSequence:
    """Draw one loss sequence from ``spec``.

    When ``rng`` is omitted a generator seeded from ``spec.seed`` is used.
    """
    if rng is None:
        rng = make_rng(spec.seed)
    return LossSequence(sample_losses(spec, rng))


# --------------------------------------------------------------------------- #
# Lower-bound parameters and adversaries
# --------------------------------------------------------------------------- #


def lower_bound_regime(feedback: str, T: int, k: int) -> str:
    """``small_k`` or ``large_k``: which parameter choice applies at (T, k)."""
    if feedback == "full":
        return "small_k" if k < C0 * math.sqrt(T) else "large_k"
    if feedback == "label_efficient":
        return "small_k" if k**1.5 < C0 * T else "large_k"
    raise ValueError(f"feedback must be 'full' or 'label_efficient', got {feedback!r}")


def lower_bound_params(feedback: str, T: int, k: int) -> tuple[float, float, str]:
    """(eps, q, regime) of the hard instance for horizon ``T`` and budget ``k``.

    Raises :class:`InvalidInstanceError` when the large-k formulas leave the
    valid region ``0 <= eps <= q <= 1/4``.
    """
    if not 1 <= k <= T:
        raise ValueError(f"need 1 <= k <= T, got k={k}, T={T}")
    e = math.e
    regime = lower_bound_regime(feedback, T, k)
    if feedback == "full":
        if regime == "small_k":
            eps, q = 2.0 / math.sqrt(5.0 * T), 0.25
        else:
            eps = 1.0 / (40.0 * e * k) + (4.0 * e - 1.0) / (40.0 * e * T)
            q = 5.0 * eps**2 * T
    else:
        if regime == "small_k":
            eps, q = 2.0 / math.sqrt(5.0 * k), 0.25
        else:
            eps = T / (40.0 * e * k**2) + (4.0 * e - 1.0) / (40.0 * e * k)
            q = 5.0 * eps**2 * T
    _check_eps_q(eps, q)
    return eps, q, regime


def kl_sign_pair(q: float, eps: float) -> float:
    """KL divergence between the sign + and sign - per-step outcome laws."""
    plus = LowerBoundInstance("+", q, eps, 1).outcome_law
    minus = LowerBoundInstance("-", q, eps, 1).outcome_law
    total = 0.0
    for outcome, p in plus.items():
        if p > 0.0:
            total += p * math.log(p / minus[outcome])
    return total


def looping_increasing_adversary(T: int, T_tilde: int, order: str = "loop_first") -> np.ndarray:
    """Gap sequence with (T - T_tilde)/2 loops (+1, -1) and T_tilde increases (+1)."""
    if not 0 <= T_tilde <= T:
        raise ValueError(f"need 0 <= T_tilde <= T, got T_tilde={T_tilde}, T={T}")
    if (T - T_tilde) % 2:
        raise ValueError(f"T - T_tilde must be even, got T={T}, T_tilde={T_tilde}")
    loops = np.tile([1.0, -1.0], (T - T_tilde) // 2)
    incr = np.ones(T_tilde)
    if order == "loop_first":
        return np.concatenate([loops, incr])
    if order == "increase_first":
        return np.concatenate([incr, loops])
    raise ValueError(f"order must be 'loop_first' or 'increase_first', got {order!r}")


# --------------------------------------------------------------------------- #
# Exact instance statistics
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class InstanceStats:
    means: np.ndarray
    best_action: int
    gaps: np.ndarray  # Delta_i = mu(i) - mu(i*)
    abs_gaps: np.ndarray  # Psi_i = E|l(i) - l(i*)|
    gap: float  # Delta = E[min_{i != i*} l(i) - l(i*)]
    abs_gap: float  # Psi = E|min_{i != i*} l(i) - l(i*)|
    expected_min: float
    expected_min_others: float = field(default=float("nan"))


def _joint_law(spec: InstanceSpec) -> tuple[np.ndarray, np.ndarray]:
    """Outcomes (m, n) and probabilities (m,) of one loss column."""
    if isinstance(spec, LowerBoundInstance):
        law = spec.outcome_law
        outcomes = np.array(list(law.keys()), dtype=np.float64)
        probs = np.array(list(law.values()))
        return outcomes, probs
    if isinstance(spec, IidBernoulliInstance):
        n = spec.n
        if n > MAX_ENUMERATION_ACTIONS:
            raise ValueError(
                f"exact statistics enumerate 2^n outcomes and need n <= {MAX_ENUMERATION_ACTIONS}; "
                f"got n={n}, estimate by Monte Carlo instead"
            )
        outcomes = np.array(list(itertools.product((0.0, 1.0), repeat=n)))
        mu = np.asarray(spec.means)
        probs = np.prod(np.where(outcomes == 1.0, mu, 1.0 - mu), axis=1)
        return outcomes, probs
    raise TypeError(f"exact statistics need an analytic stochastic instance, got {type(spec).__name__}")


def instance_stats(spec: InstanceSpec) -> InstanceStats:
    """Exact gap statistics by enumerating the per-step outcome law."""
    outcomes, probs = _joint_law(spec)
    n = outcomes.shape[1]
    if n < 2:
        raise ValueError("gap statistics need at least two actions")
    means = probs @ outcomes
    best = int(np.argmin(means))
    diff = outcomes - outcomes[:, [best]]
    gaps = means - means[best]
    abs_gaps = probs @ np.abs(diff)
    others = np.delete(outcomes, best, axis=1).min(axis=1)
    d = others - outcomes[:, best]
    return InstanceStats(
        means=means,
        best_action=best,
        gaps=gaps,
        abs_gaps=abs_gaps,
        gap=float(probs @ d),
        abs_gap=float(probs @ np.abs(d)),
        expected_min=float(probs @ outcomes.min(axis=1)),
        expected_min_others=float(probs @ others),
    )


# --------------------------------------------------------------------------- #
# Config (de)serialization
# --------------------------------------------------------------------------- #


def instance_to_dict(spec: InstanceSpec | LowerBoundFamily) -> dict[str, Any]:
    if isinstance(spec, FixedInstance):
        return {"kind": spec.kind, "matrix": [list(r) for r in spec.matrix], "seed": spec.seed}
    if isinstance(spec, LowerBoundInstance):
        return {"kind": spec.kind, "sign": spec.sign, "q": spec.q, "eps": spec.eps, "T": spec.T, "seed": spec.seed}
    if isinstance(spec, IidBernoulliInstance):
        return {"kind": spec.kind, "means": list(spec.means), "T": spec.T, "seed": spec.seed}
    if isinstance(spec, TwoExpertEpsInstance):
        return {"kind": spec.kind, "eps_sequence": list(spec.eps_sequence), "seed": spec.seed}
    if isinstance(spec, LowerBoundFamily):
        return {"kind": spec.kind, "feedback": spec.feedback, "sign": spec.sign, "T": spec.T, "seed": spec.seed}
    raise TypeError(f"unsupported instance type {type(spec).__name__}")


_REQUIRED = {
    "fixed": ("matrix",),
    "lower_bound": ("sign", "q", "eps", "T"),
    "iid_bernoulli": ("means", "T"),
    "two_expert_eps": ("eps_sequence",),
    "lower_bound_family": ("feedback", "sign", "T"),
}


def instance_from_dict(data: Mapping[str, Any]) -> InstanceSpec | LowerBoundFamily:
    kind = data.get("kind")
    if kind not in _REQUIRED:
        raise ValueError(f"instance.kind must be one of {sorted(_REQUIRED)}, got {kind!r}")
    missing = [f for f in _REQUIRED[kind] if f not in data]
    if missing:
        raise ValueError(f"instance of kind {kind!r} is missing field(s): {', '.join(missing)}")
    allowed = set(_REQUIRED[kind]) | {"kind", "seed"}
    extra = sorted(set(data) - allowed)
    if extra:
        raise ValueError(f"instance of kind {kind!r} has unknown field(s): {', '.join(extra)}")
    seed = int(data.get("seed", 0))
    if kind == "fixed":
        return FixedInstance.from_array(np.asarray(data["matrix"], dtype=np.float64), seed)
    if kind == "lower_bound":
        return LowerBoundInstance(str(data["sign"]), float(data["q"]), float(data["eps"]), int(data["T"]), seed)
    if kind == "iid_bernoulli":
        return IidBernoulliInstance(tuple(data["means"]), int(data["T"]), seed)
    if kind == "two_expert_eps":
        return TwoExpertEpsInstance(tuple(data["eps_sequence"]), seed)
    return LowerBoundFamily(str(data["feedback"]), str(data["sign"]), int(data["T"]), seed)
