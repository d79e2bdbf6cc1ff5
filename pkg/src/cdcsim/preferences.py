"""Exponential Kihlstrom-Mirman (EKM) preferences over retirement consumption.

Per-period utility with satiation exponent ``rho`` and adequacy level ``a``:

    u(c, a) = c**rho / rho - a**rho / rho

and overall utility over a random death year tau (the last year alive),

    U = E[ -exp(-alpha * sum_{t = t_RA}^{tau} u(c_t, a) * dt) ]

estimated over N market scenarios j with the death-year pmf ``pbar``:

    U_hat = -(1/N) sum_j sum_s pbar_s * exp(-alpha * sum_{t<=s} u(c_t^j, a) * dt)

The training loss is L = log(-U_hat), evaluated with nested logsumexp so it
stays finite when the exponents are far outside floating-point range.
Consumption inputs are floored at ``C_FLOOR`` before u: with rho < 0 the
utility diverges to -inf as c -> 0, and the floor keeps arithmetic and
gradients finite while preserving an overwhelming penalty.

All reductions use numpy's pairwise summation / sequential logaddexp in a
fixed index order, so batch evaluations are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

C_FLOOR = 1e-8


@dataclass(frozen=True)
class EKMParams:
    alpha: float = 5e-5
    rho: float = -2.0
    adequacy: float = 0.4
    dt: float = 1.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not self.rho < 1:
            raise ValueError(f"rho must be < 1, got {self.rho}")
        if self.rho == 0:
            raise ValueError("rho = 0 is outside the c**rho/rho family")
        if not self.adequacy > 0:
            raise ValueError(f"adequacy must be positive, got {self.adequacy}")


def period_utility(c, params: EKMParams):
    """u(c, a) = c**rho/rho - a**rho/rho, with c floored at C_FLOOR."""
    c = np.maximum(np.asarray(c, dtype=float), C_FLOOR)
    rho = params.rho
    return (c**rho - params.adequacy**rho) / rho


def period_utility_dc(c, params: EKMParams):
    """du/dc = c**(rho-1); zero below the floor (clamped region)."""
    c_arr = np.asarray(c, dtype=float)
    grad = np.maximum(c_arr, C_FLOOR) ** (params.rho - 1.0)
    return np.where(c_arr >= C_FLOOR, grad, 0.0)


def _validate(consumptions, pmf):
    consumptions = np.atleast_2d(np.asarray(consumptions, dtype=float))
    pmf = np.asarray(pmf, dtype=float)
    if pmf.ndim != 1 or pmf.size != consumptions.shape[1]:
        raise ValueError(
            f"pmf length {pmf.size} must match consumption years {consumptions.shape[1]}"
        )
    if np.any(pmf < 0):
        raise ValueError("death pmf must be non-negative")
    if not np.isclose(pmf.sum(), 1.0, atol=1e-9):
        raise ValueError(f"death pmf must sum to 1, got {pmf.sum()}")
    return consumptions, pmf


def _exponents(consumptions, pmf, params):
    """log(pbar_s) - alpha * dt * sum_{t<=s} u_t, shape (N, K)."""
    u = period_utility(consumptions, params)
    cum_u = np.cumsum(u, axis=1)
    with np.errstate(divide="ignore"):
        log_pmf = np.log(pmf)
    return log_pmf[None, :] - params.alpha * params.dt * cum_u


def utility_estimate(consumptions, pmf, params: EKMParams) -> float:
    """Direct evaluation of U_hat (may overflow where `loss` stays finite)."""
    consumptions, pmf = _validate(consumptions, pmf)
    exponents = _exponents(consumptions, pmf, params)
    return float(-np.mean(np.sum(np.exp(exponents), axis=1)))


def _logsumexp(a, axis):
    amax = np.max(a, axis=axis, keepdims=True)
    amax = np.where(np.isfinite(amax), amax, 0.0)
    out = np.log(np.sum(np.exp(a - amax), axis=axis)) + np.squeeze(amax, axis=axis)
    return out


def loss(consumptions, pmf, params: EKMParams) -> float:
    """L = log(-U_hat) via nested logsumexp over death years and scenarios."""
    consumptions, pmf = _validate(consumptions, pmf)
    exponents = _exponents(consumptions, pmf, params)
    per_scenario = _logsumexp(exponents, axis=1)
    return float(_logsumexp(per_scenario, axis=0) - np.log(consumptions.shape[0]))


def loss_and_gradient(consumptions, pmf, params: EKMParams) -> tuple[float, np.ndarray]:
    """Loss plus dL/dc for every scenario-year consumption entry.

    With softmax weights g_j over scenarios and w_{j,s} over death years
    within a scenario, dL/du_{j,t} = -alpha*dt * g_j * sum_{s>=t} w_{j,s},
    and dL/dc = dL/du * c**(rho-1).
    """
    consumptions, pmf = _validate(consumptions, pmf)
    exponents = _exponents(consumptions, pmf, params)
    per_scenario = _logsumexp(exponents, axis=1)
    total = _logsumexp(per_scenario, axis=0)
    loss_value = float(total - np.log(consumptions.shape[0]))

    g = np.exp(per_scenario - total)  # scenario softmax, sums to 1
    w = np.exp(exponents - per_scenario[:, None])  # death-year softmax per scenario
    # tail sums over s >= t
    tail = np.cumsum(w[:, ::-1], axis=1)[:, ::-1]
    du = -params.alpha * params.dt * g[:, None] * tail
    grad = du * period_utility_dc(consumptions, params)
    return loss_value, grad
