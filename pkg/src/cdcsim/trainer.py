"""Lifecycle simulation and policy training for the collective-drawdown scheme.

One simulated life runs over integer years t = 0 .. T-1 (ages entry_age ..
max_age-1).  Wealth after payments and consumption follows

    w_{t-} = exp(F(pi_{t-1}, eps_{t-1})) * w_{t-1}
    w_t    = rate * s_t * [t < t_RA]
             + (1 - c_t * [t >= t_RA]) * (1 + P_t * [t > t_RA]) * w_{t-}

where P_t is the infinite-pool longevity credit rate and c_t, pi_t come from
the recurrent policy (whose input at step t is the increment observed over
the year just ended, plus normalised time).  Replacement ratios divide the
consumption stream c_t * w_t by the CPI-indexed final salary.  Training
minimises the EKM loss with minibatch Adam; gradients flow through the whole
recursion via hand-derived adjoints plus backpropagation through time in the
policy network.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import policy as policy_mod
from . import preferences
from .market import (
    MarketParams,
    generate_scenarios,
    log_return,
    log_return_dpi,
    macro_paths,
)
from .mortality import CohortMortality
from .policy import PolicyParams
from .preferences import EKMParams


class TrainingDivergedError(RuntimeError):
    pass


def wealth_step(w_prev, pi_prev, eps_prev, t, salary_t, consume_frac, cohort: CohortMortality,
                market: MarketParams, contribution_rate: float):
    """One year of the wealth recursion; ``t`` counts years since entry."""
    t_ra = cohort.retirement_age - cohort.entry_age
    w_minus = np.exp(log_return(pi_prev, eps_prev, market)) * w_prev
    payment = cohort.hazard_payment(cohort.entry_age + t) if t > t_ra else 0.0
    contribution = contribution_rate * salary_t if t < t_ra else 0.0
    consume = consume_frac if t >= t_ra else 0.0
    return contribution + (1.0 - consume) * (1.0 + payment) * w_minus


def replacement_path(consumption_amounts, final_salary: float, market: MarketParams) -> np.ndarray:
    """Replacement ratios for a consumption stream starting at retirement.

    The replacement level starts at the final salary and grows with CPI:
    L_0 = final_salary, L_{k+1} = L_k * (1 + cpi); R_k = consumption_k / L_k.
    """
    amounts = np.atleast_2d(np.asarray(consumption_amounts, dtype=float))
    k = np.arange(amounts.shape[1])
    levels = final_salary * (1.0 + market.cpi) ** k
    return np.squeeze(amounts / levels)


@dataclass
class VNMObjective:
    """Survival-weighted expected power utility, used by the validation oracles.

    loss = -(1/N) sum_j sum_k weights_k * c_{j,k}**rho / rho * dt
    """

    rho: float
    weights: np.ndarray
    dt: float = 1.0

    def __call__(self, consumptions) -> tuple[float, np.ndarray]:
        c = np.maximum(consumptions, preferences.C_FLOOR)
        n = c.shape[0]
        loss = -np.sum(self.weights[None, :] * c**self.rho / self.rho) * self.dt / n
        grad = -(self.weights[None, :] * c ** (self.rho - 1.0)) * self.dt / n
        grad = np.where(consumptions >= preferences.C_FLOOR, grad, 0.0)
        return float(loss), grad


@dataclass
class EKMObjective:
    pmf: np.ndarray
    params: EKMParams

    def __call__(self, consumptions) -> tuple[float, np.ndarray]:
        return preferences.loss_and_gradient(consumptions, self.pmf, self.params)


class LifecycleModel:
    """Precomputed lifecycle environment shared by training and evaluation.

    ``consumption_unit`` selects what enters the objective: "replacement"
    divides consumption by the CPI-indexed final salary (the production
    configuration); "amount" uses raw consumption (used by oracle toys).
    """

    def __init__(self, market: MarketParams, cohort: CohortMortality, ekm: EKMParams | None = None,
                 contribution_rate: float = 0.0483, initial_wealth: float = 0.0,
                 consumption_unit: str = "replacement", objective: str = "ekm"):
        self.market = market
        self.cohort = cohort
        self.ekm = ekm
        self.contribution_rate = contribution_rate
        self.initial_wealth = initial_wealth
        self.t_ra = cohort.retirement_age - cohort.entry_age
        self.n_steps = cohort.max_age - cohort.entry_age
        self.n_consume = self.n_steps - self.t_ra

        salaries, _ = macro_paths(max(self.n_steps, 2), market)
        self.salaries = salaries[: self.n_steps]
        if consumption_unit == "replacement":
            if self.t_ra < 1:
                raise ValueError("replacement units need at least one working year")
            final_salary = self.salaries[self.t_ra - 1]
            k = np.arange(self.n_consume)
            self.levels = final_salary * (1.0 + market.cpi) ** k
        elif consumption_unit == "amount":
            self.levels = np.ones(self.n_consume)
        else:
            raise ValueError(f"unknown consumption_unit {consumption_unit!r}")
        self.consumption_unit = consumption_unit

        self.payments = cohort.hazard_payment_vector()[cohort.entry_age :]
        _, self.death_pmf = cohort.death_pmf_vector()
        self.survival_weights = cohort.survival_curve(cohort.retirement_age)[: self.n_consume]

        if objective == "ekm":
            if ekm is None:
                raise ValueError("ekm objective requires EKMParams")
            self.objective = EKMObjective(pmf=self.death_pmf, params=ekm)
        elif objective == "vnm":
            if ekm is None:
                raise ValueError("vnm objective reads rho and dt from EKMParams")
            self.objective = VNMObjective(rho=ekm.rho, weights=self.survival_weights, dt=ekm.dt)
        else:
            raise ValueError(f"unknown objective {objective!r}")

    # ------------------------------------------------------------------ inputs

    def build_inputs(self, eps: np.ndarray) -> np.ndarray:
        """Network inputs: step t sees the increment of the year just ended.

        ``eps`` has shape (S, n_steps - 1); input[:, 0, 0] is 0 (nothing
        observed at entry) and input[:, t, 0] = eps[:, t-1] for t >= 1.
        Time is normalised to t/(T-1).
        """
        eps = np.asarray(eps, dtype=float)
        S = eps.shape[0]
        if eps.shape[1] != self.n_steps - 1:
            raise ValueError(f"eps must have {self.n_steps - 1} columns, got {eps.shape[1]}")
        inputs = np.zeros((S, self.n_steps, 2))
        inputs[:, 1:, 0] = eps
        inputs[:, :, 1] = np.arange(self.n_steps) / (self.n_steps - 1)
        return inputs

    # ------------------------------------------------------------ wealth paths

    def _wealth_forward(self, consume, risky, eps):
        S, T = consume.shape
        t_ra = self.t_ra
        w_minus = np.empty((S, T))
        w = np.empty((S, T))
        growth = np.empty((S, T - 1))
        multiplier = np.empty((S, T))
        w_minus[:, 0] = self.initial_wealth
        for t in range(T):
            if t > 0:
                growth[:, t - 1] = np.exp(log_return(risky[:, t - 1], eps[:, t - 1], self.market))
                w_minus[:, t] = growth[:, t - 1] * w[:, t - 1]
            consuming = 1.0 if t >= t_ra else 0.0
            multiplier[:, t] = (1.0 - consume[:, t] * consuming) * (1.0 + self.payments[t])
            contribution = self.contribution_rate * self.salaries[t] if t < t_ra else 0.0
            w[:, t] = contribution + multiplier[:, t] * w_minus[:, t]
        return w, w_minus, growth, multiplier

    def simulate(self, params: PolicyParams, eps: np.ndarray) -> dict:
        """Forward-only lifecycle paths for a batch of scenarios."""
        inputs = self.build_inputs(eps)
        consume, risky = policy_mod.forward(params, inputs)
        w, w_minus, _, _ = self._wealth_forward(consume, risky, eps)
        consumption = consume[:, self.t_ra :] * w[:, self.t_ra :]
        ratios = consumption / self.levels[None, :]
        return {
            "wealth": w,
            "wealth_pre": w_minus,
            "consume_frac": consume,
            "risky": risky,
            "consumption": consumption,
            "ratios": ratios,
        }

    def loss(self, params: PolicyParams, eps: np.ndarray) -> float:
        sim = self.simulate(params, eps)
        value, _ = self.objective(sim["ratios"])
        return value

    def loss_and_grad(self, params: PolicyParams, eps: np.ndarray) -> tuple[float, np.ndarray]:
        """Loss and its exact gradient as a flat vector over all policy parameters."""
        inputs = self.build_inputs(eps)
        (consume, risky), tape = policy_mod.forward(params, inputs, return_tape=True)
        w, w_minus, growth, multiplier = self._wealth_forward(consume, risky, eps)
        t_ra = self.t_ra
        ratios = consume[:, t_ra:] * w[:, t_ra:] / self.levels[None, :]
        value, d_ratio = self.objective(ratios)
        if not np.isfinite(value):
            raise TrainingDivergedError(f"non-finite loss {value}")

        S, T = consume.shape
        d_consume = np.zeros((S, T))
        d_risky = np.zeros((S, T))
        w_bar_next = np.zeros(S)
        for t in range(T - 1, -1, -1):
            w_bar = np.zeros(S)
            if t >= t_ra:
                k = t - t_ra
                w_bar += d_ratio[:, k] * consume[:, t] / self.levels[k]
            if t < T - 1:
                w_bar += w_bar_next * multiplier[:, t + 1] * growth[:, t]
                d_risky[:, t] = (
                    w_bar_next
                    * multiplier[:, t + 1]
                    * w_minus[:, t + 1]
                    * log_return_dpi(risky[:, t], eps[:, t], self.market)
                )
            if t >= t_ra:
                k = t - t_ra
                d_consume[:, t] = d_ratio[:, k] * w[:, t] / self.levels[k] - w_bar * (
                    1.0 + self.payments[t]
                ) * w_minus[:, t]
            w_bar_next = w_bar

        grads = policy_mod.backward(params, tape, d_consume, d_risky)
        return value, grads.to_flat()


# ---------------------------------------------------------------------- Adam


class AdamOptimizer:
    """Minibatch Adam with bias correction (beta1/beta2/eps as configured)."""

    def __init__(self, n_params: int, learning_rate: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad**2
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        return theta - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# ------------------------------------------------------------------- training


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    scenarios_per_epoch: int = 10000
    batch_size: int = 100
    learning_rate: float = 0.001
    validation_scenarios: int = 10000
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1 or self.scenarios_per_epoch < 1 or self.batch_size < 1:
            raise ValueError("epochs, scenarios_per_epoch and batch_size must be >= 1")
        if self.batch_size > self.scenarios_per_epoch:
            raise ValueError("batch_size cannot exceed scenarios_per_epoch")


@dataclass
class TrainResult:
    params: PolicyParams  # best-validation checkpoint
    final_params: PolicyParams
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    metadata: dict = field(default_factory=dict)


def train(config: TrainConfig, model: LifecycleModel,
          init_params: PolicyParams | None = None) -> TrainResult:
    """Minibatch Adam on the model objective; returns the best-validation checkpoint.

    All randomness (initialisation, training set, validation set, shuffling)
    derives from config.seed; the training and validation scenario seeds are
    distinct so validation never sees training scenarios.
    """
    seeds = np.random.SeedSequence(config.seed).generate_state(4)
    init_seed, train_seed, val_seed, shuffle_seed = (int(s) for s in seeds)
    assert train_seed != val_seed

    params = init_params.copy() if init_params is not None else policy_mod.init(init_seed)
    theta = params.to_flat()
    adam = AdamOptimizer(theta.size, config.learning_rate, config.beta1, config.beta2, config.adam_eps)

    n_eps = model.n_steps - 1
    train_eps = generate_scenarios(config.scenarios_per_epoch, n_eps, train_seed).epsilons
    val_eps = generate_scenarios(config.validation_scenarios, n_eps, val_seed).epsilons
    shuffle_rng = np.random.default_rng(shuffle_seed)

    history: list[dict] = []
    best_val = np.inf
    best_theta = theta.copy()
    best_epoch = -1
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(config.scenarios_per_epoch)
        batch_losses = []
        for start in range(0, config.scenarios_per_epoch, config.batch_size):
            idx = order[start : start + config.batch_size]
            params = PolicyParams.from_flat(theta)
            try:
                value, grad = model.loss_and_grad(params, train_eps[idx])
            except TrainingDivergedError as exc:
                raise TrainingDivergedError(
                    f"epoch {epoch}, batch starting at {start}: {exc}"
                ) from exc
            if not np.all(np.isfinite(grad)):
                raise TrainingDivergedError(
                    f"non-finite gradient at epoch {epoch}, batch starting at {start}"
                )
            batch_losses.append(value)
            theta = adam.step(theta, grad)
        val_loss = model.loss(PolicyParams.from_flat(theta), val_eps)
        elapsed = time.perf_counter() - t0
        history.append(
            {
                "epoch": epoch,
                "train_loss": float(np.mean(batch_losses)),
                "val_loss": float(val_loss),
                "wall_seconds": elapsed,
            }
        )
        if val_loss < best_val:
            best_val = val_loss
            best_theta = theta.copy()
            best_epoch = epoch

    metadata = {
        "learning_rate": config.learning_rate,
        "beta1": config.beta1,
        "beta2": config.beta2,
        "adam_eps": config.adam_eps,
        "epochs": config.epochs,
        "scenarios_per_epoch": config.scenarios_per_epoch,
        "batch_size": config.batch_size,
        "validation_scenarios": config.validation_scenarios,
        "train_seed": train_seed,
        "val_seed": val_seed,
        "best_epoch": best_epoch,
        "best_val_loss": float(best_val),
    }
    return TrainResult(
        params=PolicyParams.from_flat(best_theta),
        final_params=PolicyParams.from_flat(theta),
        history=history,
        best_epoch=best_epoch,
        metadata=metadata,
    )


# ----------------------------------------------------------------- evaluation

DECILES = (10, 20, 30, 40, 50, 60, 70, 80, 90)


@dataclass
class EvalResult:
    ages: np.ndarray  # consumption ages (retirement .. max_age-1)
    ratios: np.ndarray  # (S, n_consume) replacement ratios
    lifetime_mean: np.ndarray  # (S,) survival-weighted mean replacement ratio
    wealth: np.ndarray  # (S, n_steps)
    risky: np.ndarray  # (S, n_steps)
    consume_frac: np.ndarray  # (S, n_steps)
    survival_weights: np.ndarray

    def decile_table(self) -> np.ndarray:
        """(n_consume, 9) decile values of the replacement ratio by age."""
        return np.percentile(self.ratios, DECILES, axis=0).T


def lifetime_mean_ratio(ratios: np.ndarray, survival: np.ndarray) -> np.ndarray:
    """Survival-weighted average ratio per scenario: sum(N_t z_t) / sum(N_t)."""
    ratios = np.atleast_2d(ratios)
    return ratios @ survival / survival.sum()


def evaluate(params: PolicyParams, n_scenarios: int, seed: int, model: LifecycleModel) -> EvalResult:
    eps = generate_scenarios(n_scenarios, model.n_steps - 1, seed).epsilons
    sim = model.simulate(params, eps)
    ages = np.arange(model.cohort.retirement_age, model.cohort.max_age)
    return EvalResult(
        ages=ages,
        ratios=sim["ratios"],
        lifetime_mean=lifetime_mean_ratio(sim["ratios"], model.survival_weights),
        wealth=sim["wealth"],
        risky=sim["risky"],
        consume_frac=sim["consume_frac"],
        survival_weights=model.survival_weights,
    )


def aggregate_leverage(wealth: np.ndarray, risky: np.ndarray,
                       deciles=(10, 50, 90)) -> np.ndarray:
    """Deciles of fund-level risky share across synthetic coexisting generations.

    Each age is represented by its simulated distribution; within a scenario
    the fund aggregate is sum_t(pi_t * w_t) / sum_t(w_t) over all ages.
    """
    per_scenario = np.sum(risky * wealth, axis=1) / np.sum(wealth, axis=1)
    return np.percentile(per_scenario, deciles)
