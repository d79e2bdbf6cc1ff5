"""Internal longevity-insurance market: tontine settlement across schemes.

Funds of members who die over a period are pooled and shared among survivors
in proportion to expected contribution: survivor i with one-period survival
probability p_i and end-of-period fund value v_i receives

    credit_i = F * (1 - p_i) * v_i / sum_j (1 - D_j) * (1 - p_j) * v_j

where F is the total pooled value of the dead and D_j the death indicator.
Because pooling uses end-of-period fund values, each member's credit depends
on other members only through their realised fund values, never through how
those values were invested.  Scheme membership is bookkeeping only; pooling
spans all schemes of the provider.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class UndistributablePoolError(ValueError):
    """Raised by callers that refuse to carry an undistributable pool."""

    def __init__(self, pool_total: float):
        super().__init__(f"pool of {pool_total} has no surviving weight to receive it")
        self.pool_total = pool_total


@dataclass(frozen=True)
class PoolMember:
    scheme_id: str
    member_id: str
    survive_prob: float
    fund_value: float
    died: bool = False

    def __post_init__(self):
        if not 0.0 <= self.survive_prob <= 1.0:
            raise ValueError(f"survive_prob {self.survive_prob} outside [0, 1]")
        if self.fund_value < 0:
            raise ValueError(f"fund_value must be >= 0, got {self.fund_value}")


@dataclass(frozen=True)
class SettlementResult:
    """Outcome of one settlement period.

    ``pool_total`` is the pooled value of the dead; credits map member_id to
    the survivor's share.  ``undistributed`` carries the pool when no
    survivor has positive weight (the caller decides its disposition; the
    engine never loses it silently).  ``retained`` holds the un-pooled
    excess of dead members' funds under a cap.
    """

    pool_total: float
    credits: dict[str, float]
    undistributed: float = 0.0
    retained: dict[str, float] = field(default_factory=dict)


def _settle_arrays(died, survive_prob, values) -> tuple[float, np.ndarray, float]:
    died = np.asarray(died, dtype=bool)
    p = np.asarray(survive_prob, dtype=float)
    v = np.asarray(values, dtype=float)
    pool_total = float(np.sum(v[died]))
    weights = (~died) * (1.0 - p) * v
    weight_sum = float(np.sum(weights))
    if weight_sum > 0.0:
        credits = pool_total * weights / weight_sum
        undistributed = 0.0
    else:
        credits = np.zeros_like(v)
        undistributed = pool_total
    return pool_total, credits, undistributed


def settle(members: list[PoolMember]) -> SettlementResult:
    """Settle one period: pool the funds of the dead, credit the survivors."""
    if not members:
        raise ValueError("settle requires a non-empty member list")
    died = [m.died for m in members]
    p = [m.survive_prob for m in members]
    v = [m.fund_value for m in members]
    pool_total, credits, undistributed = _settle_arrays(died, p, v)
    return SettlementResult(
        pool_total=pool_total,
        credits={m.member_id: float(c) for m, c in zip(members, credits)},
        undistributed=undistributed,
    )


def settle_capped(members: list[PoolMember], cap: float) -> SettlementResult:
    """Settle with each member's at-risk exposure (1-p)*v limited to ``cap``.

    A member's pooled fund value is min(v, cap/(1-p)); the rest of a dead
    member's fund is retained (reported, not forfeited to the pool).
    Composing calls with decreasing caps realises a multi-tier pool.
    """
    if not (cap > 0):
        raise ValueError(f"cap must be positive, got {cap}")
    if not members:
        raise ValueError("settle_capped requires a non-empty member list")
    died = np.array([m.died for m in members], dtype=bool)
    p = np.array([m.survive_prob for m in members], dtype=float)
    v = np.array([m.fund_value for m in members], dtype=float)
    with np.errstate(divide="ignore"):
        limit = np.where(p < 1.0, cap / (1.0 - p), np.inf)
    v_pooled = np.minimum(v, limit)
    pool_total, credits, undistributed = _settle_arrays(died, p, v_pooled)
    retained = {
        m.member_id: float(v[i] - v_pooled[i])
        for i, m in enumerate(members)
        if m.died and v[i] > v_pooled[i]
    }
    return SettlementResult(
        pool_total=pool_total,
        credits={m.member_id: float(c) for m, c in zip(members, credits)},
        undistributed=undistributed,
        retained=retained,
    )


def simulate_period(members: list[PoolMember], rng: np.random.Generator) -> SettlementResult:
    """Draw deaths ~ Bernoulli(1 - survive_prob) independently, then settle."""
    if not members:
        raise ValueError("simulate_period requires a non-empty member list")
    u = rng.random(len(members))
    drawn = [
        PoolMember(
            scheme_id=m.scheme_id,
            member_id=m.member_id,
            survive_prob=m.survive_prob,
            fund_value=m.fund_value,
            died=bool(u[i] >= m.survive_prob),
        )
        for i, m in enumerate(members)
    ]
    return settle(drawn)


def write_settlement_csv(members: list[PoolMember], result: SettlementResult, path) -> None:
    """Audit CSV: scheme_id,member_id,fund_value,survive_prob,died,credit."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("scheme_id,member_id,fund_value,survive_prob,died,credit\n")
        for m in members:
            f.write(
                f"{m.scheme_id},{m.member_id},{m.fund_value!r},{m.survive_prob!r},"
                f"{int(m.died)},{result.credits[m.member_id]!r}\n"
            )
