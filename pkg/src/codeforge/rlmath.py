"""Group-relative policy-gradient kernel and pass@k estimation.

The advantage of rollout i within its group of G is its reward minus the
group mean reward — no standard-deviation normalization, and no KL term
(the beta field exists to make that omission explicit and testable).
Advantages are exact rationals, so each group's advantages sum to zero
exactly, not within epsilon.

The surrogate uses asymmetric clipping with a wider upper bound
(eps_low 0.2, eps_high 0.25): raising only the upper clip leaves more
headroom for upweighting good rollouts, which counteracts entropy
collapse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational
from typing import Sequence, Union

from .model import InvariantError

Number = Union[int, float, Fraction]


class DomainError(ValueError):
    """Arguments outside the estimator's domain."""


@dataclass(frozen=True)
class GroupRollout:
    """Rewards of the G samples drawn for one prompt."""

    rewards: tuple[Fraction, ...]
    group_size_g: int = 8

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "rewards", tuple(_exact(r) for r in self.rewards)
        )
        if self.group_size_g < 2:
            raise InvariantError("group size must be >= 2")
        if len(self.rewards) != self.group_size_g:
            raise InvariantError(
                f"got {len(self.rewards)} rewards for group size {self.group_size_g}"
            )

    @classmethod
    def of(cls, rewards: Sequence[Number]) -> "GroupRollout":
        rewards = tuple(rewards)
        return cls(rewards=rewards, group_size_g=len(rewards))


def _exact(value: Number) -> Fraction:
    if isinstance(value, Rational):
        return Fraction(value)
    if isinstance(value, float):
        return Fraction(value)  # exact binary value; sums still cancel exactly
    raise InvariantError(f"not a number: {value!r}")


@dataclass(frozen=True)
class ClipConfig:
    eps_low: float = 0.2
    eps_high: float = 0.25
    kl_beta: float = 0.0  # pinned: this kernel has no KL regularization

    def __post_init__(self) -> None:
        if not 0 < self.eps_low <= self.eps_high:
            raise InvariantError("need 0 < eps_low <= eps_high")
        if self.kl_beta != 0.0:
            raise InvariantError("kl_beta is fixed at 0 in this kernel")


def group_advantages(rollout: GroupRollout) -> list[Fraction]:
    """A_i = r_i - mean(r), computed in exact rational arithmetic."""
    mean = Fraction(sum(rollout.rewards), rollout.group_size_g)
    return [r - mean for r in rollout.rewards]


def clipped_objective(ratio: Number, advantage: Number, cfg: ClipConfig = ClipConfig()) -> float:
    """min(ratio * A, clip(ratio, 1 - eps_low, 1 + eps_high) * A)."""
    if ratio <= 0:
        raise DomainError(f"probability ratio must be positive, got {ratio}")
    clipped_ratio = min(max(ratio, 1.0 - cfg.eps_low), 1.0 + cfg.eps_high)
    return min(ratio * advantage, clipped_ratio * advantage)


def pass_at_k(n: int, c: int, k: int) -> Fraction:
    """Unbiased pass@k: 1 - C(n-c, k) / C(n, k), with exact binomials."""
    if not (isinstance(n, int) and isinstance(c, int) and isinstance(k, int)):
        raise DomainError("n, c, k must be integers")
    if not 0 <= c <= n:
        raise DomainError(f"need 0 <= c <= n, got c={c}, n={n}")
    if not 1 <= k <= n:
        raise DomainError(f"need 1 <= k <= n, got k={k}, n={n}")
    return 1 - Fraction(math.comb(n - c, k), math.comb(n, k))
