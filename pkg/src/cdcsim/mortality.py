"""Mortality tables, survival probabilities, death-time pmf, and hazard payments.

Conventions used throughout the engine:

* ``q[x]`` is the probability of dying during the year of age ``x``
  conditional on being alive at age ``x``; death is certain by ``max_age``
  (``q[max_age - 1] == 1``).
* "Dying in year s" means being alive (and consuming) at age ``s`` and dying
  during the following year, so the death-year pmf is
  ``pmf(s) = S(retirement -> s) * q[s]``.
* The infinite-pool longevity credit received on arriving at age ``x``
  settles the deaths of the year just ended: ``P = p/(1-p)`` with
  ``p = q[x-1]``, so survivor wealth scaled by ``1 + P = 1/(1-p)`` conserves
  cohort wealth exactly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

# Gompertz-Makeham default hazard q(x) = min(1, A + B * c**x), calibrated so
# that life expectancy at 65 is 87.1 years (UK male annuitant-like basis)
# while q stays below 1 at every age before the forced terminal year.
GM_A = 1.0e-3
GM_B = 3.4e-5
GM_C = 1.09
DEFAULT_MAX_AGE = 120


class MortalityError(ValueError):
    """Malformed table or out-of-range query."""


class TerminalYearError(MortalityError):
    """Hazard payment requested for a year in which nobody survives."""


@dataclass(frozen=True)
class MortalityTable:
    """Yearly death probabilities ``q[x]`` for ages ``first_age .. max_age-1``."""

    first_age: int
    q: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        object.__setattr__(self, "q", q)
        if q.ndim != 1 or q.size < 1:
            raise MortalityError("q must be a non-empty vector")
        if np.any(q < 0) or np.any(q > 1):
            raise MortalityError("q values must lie in [0, 1]")
        if q[-1] != 1.0:
            raise MortalityError(
                f"q at the final age must be 1 (death certain by max_age), got {q[-1]}"
            )

    @property
    def max_age(self) -> int:
        """Age at which death is certain."""
        return self.first_age + self.q.size

    def hazard(self, age: int) -> float:
        if not self.first_age <= age < self.max_age:
            raise MortalityError(
                f"age {age} outside table range [{self.first_age}, {self.max_age - 1}]"
            )
        return float(self.q[age - self.first_age])


def survival_prob(table: MortalityTable, age: int, ell: int) -> float:
    """P(alive at age+ell | alive at age) = prod_{k<ell} (1 - q[age+k])."""
    if ell < 0:
        raise MortalityError(f"ell must be >= 0, got {ell}")
    if age < table.first_age:
        raise MortalityError(f"age {age} below table first_age {table.first_age}")
    if age + ell > table.max_age:
        raise MortalityError(f"age + ell = {age + ell} beyond max_age {table.max_age}")
    lo = age - table.first_age
    return float(np.prod(1.0 - table.q[lo : lo + ell]))


@dataclass(frozen=True)
class CohortMortality:
    """Scheme-level mortality: certain survival through the retirement year.

    The effective hazard is zero below ``retirement_age + 1`` (deaths start
    the year after retirement); the raw table is kept unmodified.
    """

    table: MortalityTable
    entry_age: int = 25
    retirement_age: int = 65
    q_eff: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        # entry == retirement gives a consumption-only horizon (used by the
        # fixed-horizon validation toys); production cohorts have entry < retirement.
        if not self.entry_age <= self.retirement_age < self.table.max_age:
            raise MortalityError("need entry_age <= retirement_age < max_age")
        q_eff = np.zeros(self.table.max_age, dtype=float)
        lo = max(self.table.first_age, self.retirement_age + 1)
        q_eff[lo:] = self.table.q[lo - self.table.first_age :]
        object.__setattr__(self, "q_eff", q_eff)

    @property
    def max_age(self) -> int:
        return self.table.max_age

    def survival(self, age: int, ell: int) -> float:
        """Survival over ell years under the effective (clamped) hazard."""
        if ell < 0 or age < 0 or age + ell > self.max_age:
            raise MortalityError(f"bad survival query age={age}, ell={ell}")
        return float(np.prod(1.0 - self.q_eff[age : age + ell]))

    def survival_curve(self, age: int) -> np.ndarray:
        """Vector of survival probabilities from ``age`` to every age up to max_age."""
        s = np.ones(self.max_age - age + 1)
        s[1:] = np.cumprod(1.0 - self.q_eff[age:])
        return s

    def death_pmf(self, s: int) -> float:
        """P(last year alive is age s) for s in [retirement_age, max_age]."""
        if not self.retirement_age <= s <= self.max_age:
            raise MortalityError(
                f"death year {s} outside [{self.retirement_age}, {self.max_age}]"
            )
        if s == self.max_age:
            return 0.0
        return self.survival(self.retirement_age, s - self.retirement_age) * float(self.q_eff[s])

    def death_pmf_vector(self) -> tuple[np.ndarray, np.ndarray]:
        """All death years [retirement_age .. max_age-1] and their pmf (sums to 1)."""
        ages = np.arange(self.retirement_age, self.max_age)
        surv = self.survival_curve(self.retirement_age)[: ages.size]
        pmf = surv * self.q_eff[ages]
        return ages, pmf

    def hazard_payment(self, t: int) -> float:
        """Infinite-pool longevity credit rate on arrival at age t.

        Settles the deaths of the year just ended: p = q_eff[t-1], payment
        p/(1-p).  Zero for t <= retirement_age (everyone survives to
        retirement, and the first retirement year carries no credit).
        """
        if t <= self.retirement_age:
            return 0.0
        if t > self.max_age:
            raise MortalityError(f"year {t} beyond max_age {self.max_age}")
        p = float(self.q_eff[t - 1])
        if p >= 1.0:
            raise TerminalYearError(f"no survivor to pay at year {t} (p = {p})")
        return p / (1.0 - p)

    def hazard_payment_vector(self) -> np.ndarray:
        """Payments indexed by age 0..max_age-1 (0 where not payable).

        Settlement years nobody survives to see (after the first age with
        q = 1, normally only the terminal year) are left at 0: there is no
        survivor to pay, and those ages carry no weight anywhere.
        """
        out = np.zeros(self.max_age)
        for t in range(self.retirement_age + 1, self.max_age):
            if self.q_eff[t - 1] >= 1.0:
                break
            out[t] = self.hazard_payment(t)
        return out


def default_table(first_age: int = 0, max_age: int = DEFAULT_MAX_AGE) -> MortalityTable:
    """Gompertz-Makeham table q(x) = min(1, GM_A + GM_B * GM_C**x), q forced to 1 at max_age-1."""
    ages = np.arange(first_age, max_age)
    q = np.minimum(1.0, GM_A + GM_B * GM_C**ages.astype(float))
    q[-1] = 1.0
    return MortalityTable(first_age=first_age, q=q)


def load_table(path) -> MortalityTable:
    """Load a mortality CSV with header ``age,q``: ascending consecutive integer ages."""
    ages: list[int] = []
    qs: list[float] = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != ["age", "q"]:
            raise MortalityError(f"expected header 'age,q', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 2:
                raise MortalityError(f"line {lineno}: expected 2 columns, got {len(row)}")
            try:
                age = int(row[0])
                q = float(row[1])
            except ValueError as exc:
                raise MortalityError(f"line {lineno}: {exc}") from exc
            if not 0.0 <= q <= 1.0:
                raise MortalityError(f"line {lineno}: q = {q} outside [0, 1]")
            if ages:
                if age == ages[-1]:
                    raise MortalityError(f"line {lineno}: duplicate age {age}")
                if age != ages[-1] + 1:
                    raise MortalityError(f"line {lineno}: gap in ages ({ages[-1]} -> {age})")
            ages.append(age)
            qs.append(q)
    if not ages:
        raise MortalityError("empty mortality table")
    return MortalityTable(first_age=ages[0], q=np.array(qs))
