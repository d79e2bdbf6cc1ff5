"""Standard dynamic-accrual shared-indexation CDC scheme.

One generation enters per year; every member of a generation is identical.
Each year the scheme, holding assets A before flows, solves for a nominal
indexation rate h in [h_min, h_max] (and a cut/bonus factor theta) such that

    A = theta * sum_g sum_{l>=0} (1+h)**l * P(l) * N_g * B_g * p_g(l) * R_{g,l}

where B_g is the generation's accrued nominal benefit, N_g its (real-valued,
infinite-fund) survivor count, p_g(l) its survival probability over l years,
P(l) the strategy discount factor, and R_{g,l} indicates the generation is
drawing a pension l years ahead.  If the equation solves inside the band,
theta = 1; otherwise h clamps to the nearer bound and theta = A / L(h_bound)
(a cut below 1 or bonus above 1).  Benefits then index by (1+h)*theta,
working generations buy new benefit at annuity-factor prices, pensions are
paid, and assets roll forward at the fixed-weight portfolio return.

States are vectorised over scenarios: all arrays carry a leading scenario
axis, and generations occupy one slot per age.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .market import MarketParams, expected_one_year_return, log_return
from .mortality import CohortMortality


class SchemeError(RuntimeError):
    pass


class NoLiabilityError(SchemeError):
    """Assets exist but no entitlements to match them against (startup misuse)."""


class SchemeFailureError(SchemeError):
    """Assets went negative: theta-cuts failed to protect solvency."""


@dataclass(frozen=True)
class SIParams:
    h0: float = 0.02
    h_min: float = 0.0
    h_max: float = 0.07
    pi: float = 0.81
    sim_years: int = 150
    entry_age: int = 25
    retirement_age: int = 65
    max_age: int = 120
    contribution_rate: float = 0.0483
    tracked_entry_year: int = 50
    solver_tol: float = 1e-10
    solver_max_iter: int = 200

    def __post_init__(self):
        if not self.h_min <= self.h0 <= self.h_max:
            raise ValueError(
                f"h0 = {self.h0} must lie within [h_min, h_max] = [{self.h_min}, {self.h_max}]"
            )
        if self.sim_years < 1:
            raise ValueError(f"sim_years must be >= 1, got {self.sim_years}")


@dataclass
class SchemeState:
    """Per-year scheme state, vectorised over scenarios.

    ``nominal[s, i]`` is the accrued benefit per member of the generation in
    age slot i (age = entry_age + i) in scenario s; ``alive[i]`` the
    deterministic survivor count per slot (0 for unpopulated slots).
    """

    year: int
    assets_pre: np.ndarray  # (S,) A_{t-}
    nominal: np.ndarray  # (S, G)
    alive: np.ndarray  # (G,)
    assets_post: np.ndarray | None = None  # (S,) A_{t+}
    h: np.ndarray | None = None  # (S,)
    theta: np.ndarray | None = None  # (S,)


class SIPricer:
    """Precomputed pricing coefficients for a fixed-weight, fixed-mortality scheme.

    Annuity and liability factors reduce to polynomials in (1+h):
    AF(age, h) = sum_l K[age, l] * (1+h)**l with
    K[age, l] = P(l) * p(age, l) * [age + l in payout ages].
    ``K0`` includes the l = 0 term (liability valuation); ``K1`` starts at
    l = 1 (benefit purchase).
    """

    def __init__(self, market: MarketParams, cohort: CohortMortality, pi: float):
        self.market = market
        self.cohort = cohort
        self.pi = pi
        base = 1.0 + expected_one_year_return(pi, market)
        if base <= 0:
            raise ValueError(f"degenerate compounding: base {base} <= 0")
        entry, max_age, ret = cohort.entry_age, cohort.max_age, cohort.retirement_age
        n_slots = max_age - entry
        self.n_slots = n_slots
        ells = np.arange(n_slots)
        disc = base ** (-ells.astype(float))
        K0 = np.zeros((n_slots, n_slots))
        for i in range(n_slots):
            age = entry + i
            horizon = max_age - age  # p(age, l) = 0 at l = horizon
            surv = cohort.survival_curve(age)[:horizon]
            pay = (age + ells[:horizon]) >= ret
            K0[i, :horizon] = disc[:horizon] * surv * pay
        self.K0 = K0
        self.K1 = K0.copy()
        self.K1[:, 0] = 0.0

    def _h_powers(self, h, n) -> np.ndarray:
        h = np.atleast_1d(np.asarray(h, dtype=float))
        out = np.empty((h.size, n))
        out[:, 0] = 1.0
        np.cumprod(np.broadcast_to((1.0 + h)[:, None], (h.size, n - 1)), axis=1, out=out[:, 1:])
        return out

    def annuity_factor(self, age: int, h) -> np.ndarray | float:
        """Benefit-purchase price per unit of yearly pension for a member aged ``age``."""
        i = age - self.cohort.entry_age
        vals = self._h_powers(h, self.n_slots) @ self.K1[i]
        return float(vals[0]) if np.isscalar(h) else vals

    def liability_weights(self, state: SchemeState) -> np.ndarray:
        """G[s, l]: liability of scenario s as the polynomial sum_l G[s,l] (1+h)**l."""
        return (state.nominal * state.alive[None, :]) @ self.K0

    def liability(self, state: SchemeState, h) -> np.ndarray:
        """Total liability at indexation rate h (h scalar or one per scenario)."""
        G = self.liability_weights(state)
        hp = self._h_powers(h if not np.isscalar(h) else np.full(state.nominal.shape[0], h),
                            self.n_slots)
        return np.einsum("sl,sl->s", G, hp)


def liability(state: SchemeState, h, pricer: SIPricer) -> np.ndarray:
    return pricer.liability(state, h)


def solve_indexation(state: SchemeState, pricer: SIPricer, params: SIParams) -> tuple[np.ndarray, np.ndarray]:
    """Solve A = theta * L(h) per scenario.

    Returns (h, theta) with theta = 1 where h lies strictly inside
    [h_min, h_max]; at the bounds theta = A / L(h_bound).  Bisection to
    relative residual ``params.solver_tol`` on assets.
    """
    A = np.asarray(state.assets_pre, dtype=float)
    if np.any(A < 0):
        raise SchemeFailureError(f"negative assets at year {state.year}")
    G = pricer.liability_weights(state)

    def lia(h):
        return np.einsum("sl,sl->s", G, pricer._h_powers(h, pricer.n_slots))

    S = A.size
    L_min = lia(np.full(S, params.h_min))
    if np.any((L_min == 0) & (A > 0)):
        raise NoLiabilityError(f"zero liability with positive assets at year {state.year}")
    h = np.full(S, params.h0)
    theta = np.ones(S)

    startup = L_min == 0
    L_max = lia(np.full(S, params.h_max))
    cut = ~startup & (A <= L_min)
    bonus = ~startup & (A >= L_max)
    inner = ~startup & ~cut & ~bonus

    with np.errstate(invalid="ignore", divide="ignore"):
        h[cut] = params.h_min
        theta[cut] = np.where(L_min[cut] > 0, A[cut] / L_min[cut], 1.0)
        h[bonus] = params.h_max
        theta[bonus] = A[bonus] / L_max[bonus]

    if np.any(inner):
        lo = np.full(S, params.h_min)
        hi = np.full(S, params.h_max)
        active = inner.copy()
        for _ in range(params.solver_max_iter):
            mid = 0.5 * (lo + hi)
            L_mid = lia(mid)
            resid = np.abs(L_mid - A) / np.maximum(A, 1e-300)
            converged = resid <= params.solver_tol
            active = active & ~converged
            if not np.any(active):
                break
            too_low = active & (L_mid < A)  # liability increasing in h
            lo[too_low] = mid[too_low]
            hi[active & ~too_low] = mid[active & ~too_low]
        h[inner] = 0.5 * (lo[inner] + hi[inner])
        theta[inner] = 1.0
    return h, theta


def apply_indexation(state: SchemeState, h, theta) -> SchemeState:
    """B <- (1+h) * theta * B for every generation."""
    factor = np.atleast_1d((1.0 + np.asarray(h, dtype=float)) * np.asarray(theta, dtype=float))
    return SchemeState(
        year=state.year,
        assets_pre=state.assets_pre,
        nominal=state.nominal * factor[:, None],
        alive=state.alive,
        h=np.atleast_1d(np.asarray(h, dtype=float)),
        theta=np.atleast_1d(np.asarray(theta, dtype=float)),
    )


def accrue(state: SchemeState, h, contributions: np.ndarray, pricer: SIPricer) -> SchemeState:
    """Add benefit bought by each generation: B_new = C / annuity_factor(age, h).

    ``contributions`` has one entry per age slot (same for every scenario).
    Generations with a zero annuity factor cannot buy (past terminal age).
    """
    contributions = np.asarray(contributions, dtype=float)
    h_arr = np.atleast_1d(np.asarray(h, dtype=float))
    hp = pricer._h_powers(h_arr, pricer.n_slots)
    af = hp @ pricer.K1.T  # (S, G)
    buying = contributions > 0
    if np.any(buying & (af.min(axis=0) <= 0)):
        bad = np.where(buying & (af.min(axis=0) <= 0))[0]
        raise SchemeError(
            f"generation in slot {bad[0]} cannot accrue: annuity factor is zero"
        )
    add = np.zeros_like(state.nominal)
    with np.errstate(divide="ignore", invalid="ignore"):
        add[:, buying] = contributions[buying] / af[:, buying]
    return SchemeState(
        year=state.year,
        assets_pre=state.assets_pre,
        nominal=state.nominal + add,
        alive=state.alive,
        h=h_arr,
        theta=state.theta,
    )


def si_pooled_quantity(state: SchemeState, slot: int, h, pricer: SIPricer) -> np.ndarray:
    """Per-member value handed to the longevity pool on death: B * annuity factor."""
    h_arr = np.atleast_1d(np.asarray(h, dtype=float))
    af = pricer._h_powers(h_arr, pricer.n_slots) @ pricer.K1[slot]
    return state.nominal[:, slot] * af


def roll_forward(state: SchemeState, contributions: np.ndarray, eps, pricer: SIPricer,
                 params: SIParams) -> SchemeState:
    """Apply cash flows, invest over the year, and advance mortality/slots.

    A_{t+} = A_{t-} + sum_g N_g (C_g - B_g * is_retired_g); then
    A_{(t+1)-} = A_{t+} * exp(F(pi, eps)).  Generations shift one age slot;
    a fresh slot opens at the entry age.
    """
    entry = pricer.cohort.entry_age
    ages = entry + np.arange(pricer.n_slots)
    retired = ages >= pricer.cohort.retirement_age
    pension_out = (state.nominal * (state.alive * retired)[None, :]).sum(axis=1)
    contrib_in = float((contributions * state.alive).sum())
    assets_post = state.assets_pre + contrib_in - pension_out
    if np.any(assets_post < 0):
        worst = int(np.argmin(assets_post))
        raise SchemeFailureError(
            f"scheme failure: negative assets {assets_post[worst]:.6g} in scenario "
            f"{worst} at year {state.year} (cuts did not protect solvency)"
        )
    growth = np.exp(log_return(params.pi, np.asarray(eps, dtype=float), pricer.market))
    assets_next = assets_post * growth

    nominal_next = np.zeros_like(state.nominal)
    nominal_next[:, 1:] = state.nominal[:, :-1]
    alive_next = np.zeros_like(state.alive)
    survive = 1.0 - pricer.cohort.q_eff[ages[:-1]]
    alive_next[1:] = state.alive[:-1] * survive
    alive_next[0] = 1.0
    return SchemeState(
        year=state.year + 1,
        assets_pre=assets_next,
        nominal=nominal_next,
        alive=alive_next,
        assets_post=assets_post,
        h=state.h,
        theta=state.theta,
    )


@dataclass
class SIRunResult:
    params: SIParams
    ages: np.ndarray  # payout ages of the tracked generation
    ratios: np.ndarray  # (S, n_payout) replacement ratios of the tracked generation
    lifetime_mean: np.ndarray  # (S,)
    h_history: np.ndarray  # (S, sim_years)
    theta_history: np.ndarray  # (S, sim_years)
    assets_history: np.ndarray  # (S, sim_years) A_{t-}
    liability_history: np.ndarray  # (S, sim_years) L(h_solved)
    survival_weights: np.ndarray = field(default=None)

    def decile_table(self) -> np.ndarray:
        from .trainer import DECILES

        return np.percentile(self.ratios, DECILES, axis=0).T


def run_scheme(params: SIParams, epsilons: np.ndarray, market: MarketParams,
               cohort: CohortMortality) -> SIRunResult:
    """Simulate the scheme for sim_years and report the tracked generation.

    ``epsilons`` has shape (S, sim_years).  The tracked generation enters in
    year ``params.tracked_entry_year`` (the steady state); its replacement
    ratio divides the pension by its CPI-indexed final salary.
    """
    epsilons = np.atleast_2d(np.asarray(epsilons, dtype=float))
    S, n_years = epsilons.shape
    if n_years < params.sim_years:
        raise ValueError(f"need {params.sim_years} scenario years, got {n_years}")
    pricer = SIPricer(market, cohort, params.pi)
    entry, ret, max_age = cohort.entry_age, cohort.retirement_age, cohort.max_age
    G = pricer.n_slots
    ages = entry + np.arange(G)
    working = ages < ret
    salaries_by_age = (1.0 + market.wage_growth) ** (ages - entry).astype(float)
    contributions = np.where(working, params.contribution_rate * salaries_by_age, 0.0)

    track_entry = params.tracked_entry_year
    track_last = track_entry + (max_age - 1 - entry)
    if track_last >= params.sim_years:
        raise ValueError(
            f"tracked generation (entry year {track_entry}) needs simulation through "
            f"year {track_last}; have {params.sim_years}"
        )
    final_salary = salaries_by_age[ret - entry - 1]
    n_payout = max_age - ret

    alive0 = np.zeros(G)
    alive0[0] = 1.0
    state = SchemeState(
        year=0,
        assets_pre=np.zeros(S),
        nominal=np.zeros((S, G)),
        alive=alive0,
    )
    h_hist = np.empty((S, params.sim_years))
    theta_hist = np.empty((S, params.sim_years))
    assets_hist = np.empty((S, params.sim_years))
    lia_hist = np.empty((S, params.sim_years))
    pension_track = np.zeros((S, n_payout))

    for year in range(params.sim_years):
        h, theta = solve_indexation(state, pricer, params)
        lia_hist[:, year] = pricer.liability(state, h)  # valuation backing the solve
        state = apply_indexation(state, h, theta)
        state = accrue(state, h, contributions, pricer)
        h_hist[:, year] = h
        theta_hist[:, year] = theta
        assets_hist[:, year] = state.assets_pre

        track_age = entry + (year - track_entry)
        if ret <= track_age < max_age:
            slot = track_age - entry
            pension_track[:, track_age - ret] = state.nominal[:, slot]
        state = roll_forward(state, contributions, epsilons[:, year], pricer, params)

    payout_ages = np.arange(ret, max_age)
    levels = final_salary * (1.0 + market.cpi) ** np.arange(n_payout).astype(float)
    ratios = pension_track / levels[None, :]
    survival = cohort.survival_curve(ret)[:n_payout]
    lifetime_mean = ratios @ survival / survival.sum()
    return SIRunResult(
        params=params,
        ages=payout_ages,
        ratios=ratios,
        lifetime_mean=lifetime_mean,
        h_history=h_hist,
        theta_history=theta_hist,
        assets_history=assets_hist,
        liability_history=lia_hist,
        survival_weights=survival,
    )
