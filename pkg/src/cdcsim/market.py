"""Black-Scholes market scenarios, fixed-weight log returns, and macro paths.

The risky asset follows a geometric Brownian motion with drift ``mu`` and
volatility ``sigma``; the riskless leg grows at ``r_bond``.  Holding a fixed
proportion ``pi`` of wealth in the risky asset over one period of length
``dt`` gives the exact log return

    F(pi, eps) = (pi*mu + (1-pi)*r_bond - 0.5*(pi*sigma)**2) * dt
                 + pi * sigma * eps * sqrt(dt)

with ``eps`` a standard normal increment.  Because the weight is fixed
within the period, wealth stays strictly positive for any ``pi``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Generator recorded in all output metadata: numpy's PCG64 counter-based
# generator with the ziggurat normal transform.
RNG_DESCRIPTION = "numpy-PCG64-ziggurat"


@dataclass(frozen=True)
class MarketParams:
    """Annualised market and macro parameters (all rates nominal)."""

    mu: float = 0.0773
    sigma: float = 0.153
    r_bond: float = 0.0446
    wage_growth: float = 0.0383
    cpi: float = 0.02
    dt: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")


@dataclass(frozen=True)
class ScenarioBatch:
    """A reproducible matrix of standard-normal increments.

    ``epsilons[j, t]`` drives scenario ``j`` in year ``t``.  The same seed
    always yields a bit-identical matrix.
    """

    epsilons: np.ndarray
    seed: int
    n_scenarios: int
    n_years: int
    generator: str = RNG_DESCRIPTION

    def __post_init__(self):
        if self.epsilons.shape != (self.n_scenarios, self.n_years):
            raise ValueError(
                f"epsilons shape {self.epsilons.shape} does not match "
                f"({self.n_scenarios}, {self.n_years})"
            )


def generate_scenarios(n_scenarios: int, n_years: int, seed: int) -> ScenarioBatch:
    """Draw an (n_scenarios, n_years) standard-normal matrix, deterministic per seed."""
    if n_scenarios < 1:
        raise ValueError(f"n_scenarios must be >= 1, got {n_scenarios}")
    if n_years < 1:
        raise ValueError(f"n_years must be >= 1, got {n_years}")
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal((n_scenarios, n_years))
    return ScenarioBatch(epsilons=eps, seed=seed, n_scenarios=n_scenarios, n_years=n_years)


def log_return(pi, eps, params: MarketParams):
    """Log return of the fixed-weight strategy over one period.

    Affine in ``eps`` with slope ``pi*sigma*sqrt(dt)``; total in both
    arguments (broadcasts over arrays).
    """
    drift = (pi * params.mu + (1.0 - pi) * params.r_bond - 0.5 * (pi * params.sigma) ** 2) * params.dt
    return drift + pi * params.sigma * np.sqrt(params.dt) * eps


def log_return_dpi(pi, eps, params: MarketParams):
    """Derivative of ``log_return`` with respect to ``pi`` (needed by the trainer)."""
    return (params.mu - params.r_bond - pi * params.sigma**2) * params.dt + params.sigma * np.sqrt(params.dt) * eps


def expected_one_year_return(pi: float, params: MarketParams) -> float:
    """Arithmetic expected portfolio return over one year: pi*mu + (1-pi)*r_bond."""
    return pi * params.mu + (1.0 - pi) * params.r_bond


def discount_factor(pi: float, ell: int, params: MarketParams) -> float:
    """Discount factor P(ell) = 1 / (1 + e(ell)).

    Expected returns compound geometrically from the one-year arithmetic
    expectation: e(ell) = (1 + pi*mu + (1-pi)*r_bond)**ell - 1, which is
    time-homogeneous for a constant-weight strategy and multiplicative over
    horizons.  P(0) = 1.
    """
    if ell < 0:
        raise ValueError(f"ell must be >= 0, got {ell}")
    base = 1.0 + expected_one_year_return(pi, params)
    if base <= 0:
        raise ValueError(f"degenerate compounding: 1 + expected return = {base} <= 0")
    return float(base ** (-ell))


def macro_paths(n_years: int, params: MarketParams) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic salary and CPI index paths, both normalised to 1 at t=0.

    ``salaries[t] = (1+wage_growth)**t`` is one member's salary ``t`` years
    after entry; every cohort enters on salary 1, so monetary outputs are
    ratios of entry salary.
    """
    if n_years < 1:
        raise ValueError(f"n_years must be >= 1, got {n_years}")
    t = np.arange(n_years)
    salaries = (1.0 + params.wage_growth) ** t
    cpi_index = (1.0 + params.cpi) ** t
    return salaries, cpi_index
