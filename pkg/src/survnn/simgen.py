"""Synthetic right-censored data from closed-form hazard scenarios.

Three structural kinds share five uniform covariates:

  cox-type   lambda(t|x) = 0.1(t+b) * theta(x)
  ah-type    lambda(t|x) = 0.1(t+b) + c(x)
  aft-type   log T = m(x) + eps  (normal or standard-Gumbel errors)

Event times are drawn by inverting Lambda(T|x) = E with E ~ Exp(1), which is
exact for every family (quadratic roots for cox/ah, quantile transforms for
aft).  Censoring times are exponential with mean mu, calibrated by bisection
to hit a target censoring rate.  A two-sample deviation c shifts the log
hazard by c (cox/aft kinds) or by c/5 with a small floor guard (ah kind).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import norm

from .errors import CalibrationError, ConfigError, DataError
from .hazard import Dataset

__all__ = [
    "SimScenario",
    "GeneratedDataset",
    "FAMILIES",
    "true_cum_hazard",
    "true_log_hazard",
    "sample_event_time",
    "invert_cum_hazard",
    "calibrate_censoring",
    "generate",
]

AH_SHIFT_DELTA0 = 1e-8
_COV_DIM = 5


def _sum5(x):
    return x.sum(axis=1)


def _nl_core(x):
    """Shared nonlinear combination 2*x1^2 + 4*x2^2 + 2*x3^3 + sqrt(x4+1)*log(x5+1)."""
    x4p = np.sqrt(np.maximum(x[:, 3] + 1.0, 0.0))
    x5l = np.log(np.maximum(x[:, 4] + 1.0, 1e-300))
    return 2 * x[:, 0] ** 2 + 4 * x[:, 1] ** 2 + 2 * x[:, 2] ** 3 + x4p * x5l


def _nl_abs(x):
    """|-x1^2 + 2*x2^2 - x3^3 + sqrt(x4+1)*log(x5+1)| / 2 (ah-type nonlinearity)."""
    x4p = np.sqrt(np.maximum(x[:, 3] + 1.0, 0.0))
    x5l = np.log(np.maximum(x[:, 4] + 1.0, 1e-300))
    return np.abs(-x[:, 0] ** 2 + 2 * x[:, 1] ** 2 - x[:, 2] ** 3 + x4p * x5l) / 2.0


def _nl_cos(x):
    """cos((x1^2 + 2*x2^2 + x3^3 + sqrt(x4+1)*log(x5+1)) / 20) (aft-type mean)."""
    x4p = np.sqrt(np.maximum(x[:, 3] + 1.0, 0.0))
    x5l = np.log(np.maximum(x[:, 4] + 1.0, 1e-300))
    s = x[:, 0] ** 2 + 2 * x[:, 1] ** 2 + x[:, 2] ** 3 + x4p * x5l
    return np.cos(s / 20.0)


def _ah_linear(x):
    return (-x[:, 0] + x[:, 1] - x[:, 2] + x[:, 3] - x[:, 4] + 15.0) / 30.0


def _weighted5(x, denom):
    return (x[:, 0] + 2 * x[:, 1] + 3 * x[:, 2] + 4 * x[:, 3] + 5 * x[:, 4]) / denom


@dataclass(frozen=True)
class _Family:
    kind: str           # "cox" | "ah" | "aft"
    cov_low: float      # covariates uniform on [cov_low, 1]
    base_b: float       # baseline hazard 0.1*(t + base_b) for cox/ah kinds
    effect: callable    # log theta(x) for cox, c(x) for ah, m(x) for aft
    error: str = ""     # "normal" | "gumbel" for aft kind


FAMILIES: dict[str, _Family] = {
    # estimation study, covariates uniform on [-1, 1]
    "cox_i": _Family("cox", -1.0, 0.01, lambda x: _sum5(x) / 20.0),
    "cox_ii": _Family("cox", -1.0, 0.01, _nl_core),
    "ah_i": _Family("ah", -1.0, 0.01, _ah_linear),
    "ah_ii": _Family("ah", -1.0, 0.01, _nl_abs),
    "aft_i": _Family("aft", -1.0, 0.0, lambda x: _sum5(x) / 20.0, "normal"),
    "aft_ii": _Family("aft", -1.0, 0.0, _nl_cos, "normal"),
    # one/two-sample testing study, covariates uniform on [0, 1]
    "cox_test": _Family("cox", 0.0, 0.01, lambda x: _weighted5(x, 100.0)),
    "ah_test": _Family("ah", 0.0, 0.01, lambda x: _weighted5(x, 100.0)),
    "aft_test": _Family("aft", 0.0, 0.0, lambda x: _weighted5(x, 5.0), "gumbel"),
    # goodness-of-fit study, baseline 0.1*(t+1), covariates uniform on [0, 1]
    "gof_cox_i": _Family("cox", 0.0, 1.0, lambda x: _sum5(x) / 20.0),
    "gof_cox_ii": _Family("cox", 0.0, 1.0, lambda x: (_nl_core(x)
                                                      + 3.0 * np.sqrt(np.maximum(x[:, 3] + 1.0, 0.0))
                                                      * np.log(np.maximum(x[:, 4] + 1.0, 1e-300))) / 20.0),
    "gof_ah_i": _Family("ah", 0.0, 1.0, _ah_linear),
    "gof_ah_ii": _Family("ah", 0.0, 1.0, _nl_abs),
    "gof_aft_i": _Family("aft", 0.0, 0.0, lambda x: _sum5(x) / 20.0, "normal"),
    "gof_aft_ii": _Family("aft", 0.0, 0.0, _nl_cos, "normal"),
}


def canonical_family(name: str) -> str:
    key = name.strip().lower().replace("-", "_").replace(" ", "_")
    alias = {
        "coxi": "cox_i", "coxii": "cox_ii", "ahi": "ah_i", "ahii": "ah_ii",
        "afti": "aft_i", "aftii": "aft_ii", "coxtest": "cox_test",
        "ahtest": "ah_test", "afttest": "aft_test",
        "gofcoxi": "gof_cox_i", "gofcoxii": "gof_cox_ii", "gofahi": "gof_ah_i",
        "gofahii": "gof_ah_ii", "gofafti": "gof_aft_i", "gofaftii": "gof_aft_ii",
    }
    key = alias.get(key.replace("_", ""), key)
    if key not in FAMILIES:
        raise ConfigError(f"unknown scenario family {name!r}; known: {sorted(FAMILIES)}")
    return key


@dataclass(frozen=True)
class SimScenario:
    """A data-generating scenario: family plus optional shift and censoring target."""

    family: str
    shift_c: float = 0.0
    censor_mean_mu: float | None = None
    target_censor_rate: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "family", canonical_family(self.family))
        if self.target_censor_rate is not None and not 0.0 < self.target_censor_rate < 1.0:
            raise ConfigError("target censoring rate must lie in (0, 1)")

    @property
    def spec(self) -> _Family:
        return FAMILIES[self.family]

    @property
    def cov_dim(self) -> int:
        return _COV_DIM

    @property
    def delta0(self) -> float:
        """Hazard floor guard, active only for the shifted ah-type construction."""
        if self.spec.kind == "ah" and self.shift_c != 0.0:
            return AH_SHIFT_DELTA0
        return 0.0

    def sample_covariates(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.spec.cov_low, 1.0, size=(n, _COV_DIM))

    def true_cum_hazard(self, t, x) -> np.ndarray:
        return true_cum_hazard(self, t, x)

    def true_log_hazard(self, t, x) -> np.ndarray:
        return true_log_hazard(self, t, x)


def _base_cum(fam: _Family, t):
    """integral_0^t 0.1*(s + b) ds = 0.05*t*(t + 2b)."""
    return 0.05 * t * (t + 2.0 * fam.base_b)


def _aft_std_cum(fam: _Family, t, m):
    """-log S for log T = m + eps at sigma 1; vectorized and 0 at t = 0."""
    t = np.asarray(t, dtype=float)
    out = np.zeros(np.broadcast(t, m).shape)
    pos = np.broadcast_to(t, out.shape) > 0
    with np.errstate(divide="ignore"):
        z = np.where(pos, np.log(np.where(t > 0, t, 1.0)) - m, 0.0)
    if fam.error == "normal":
        out[pos] = -norm.logsf(z[pos])
    elif fam.error == "gumbel":
        # S(t) = 1 - exp(-exp(-z)); stable via expm1
        u = np.exp(-z[pos])
        out[pos] = -np.log(-np.expm1(-u))
    else:
        raise ConfigError(f"unknown aft error law {fam.error!r}")
    return out


def true_cum_hazard(scenario: SimScenario, t, x) -> np.ndarray:
    """Analytic Lambda(t|x) for the scenario, including any shift."""
    fam = scenario.spec
    t = np.asarray(t, dtype=float)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if np.any(t < 0):
        raise ConfigError("cumulative hazard requested at negative time")
    c = scenario.shift_c
    if fam.kind == "cox":
        return np.exp(c) * _base_cum(fam, t) * np.exp(fam.effect(x))
    if fam.kind == "ah":
        add = fam.effect(x) + scenario.delta0
        return np.exp(c / 5.0) * (_base_cum(fam, t) + t * add)
    return np.exp(c) * _aft_std_cum(fam, t, fam.effect(x))


def true_log_hazard(scenario: SimScenario, t, x) -> np.ndarray:
    """Analytic g0(t,x) = log lambda(t|x) for the scenario, including any shift."""
    fam = scenario.spec
    t = np.asarray(t, dtype=float)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    c = scenario.shift_c
    if fam.kind == "cox":
        return np.log(0.1 * (t + fam.base_b)) + fam.effect(x) + c
    if fam.kind == "ah":
        lam = 0.1 * (t + fam.base_b) + fam.effect(x) + scenario.delta0
        return np.log(lam) + c / 5.0
    m = fam.effect(x)
    z = np.log(t) - m
    if fam.error == "normal":
        return norm.logpdf(z) - np.log(t) - norm.logsf(z) + c
    u = np.exp(-z)
    # lambda = u*exp(-u) / (t*(1 - exp(-u)))
    return np.log(u) - u - np.log(t) - np.log(-np.expm1(-u)) + c


def invert_cum_hazard(scenario: SimScenario, e, x) -> np.ndarray:
    """Solve Lambda(T|x) = e for T; exact closed forms per family kind."""
    fam = scenario.spec
    e = np.asarray(e, dtype=float)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    c = scenario.shift_c
    if fam.kind == "cox":
        e0 = e * np.exp(-c) / np.exp(fam.effect(x))
        b = fam.base_b
        out = np.sqrt(e0 / 0.05 + b * b) - b
    elif fam.kind == "ah":
        e0 = e * np.exp(-c / 5.0)
        beta = 0.1 * fam.base_b + fam.effect(x) + scenario.delta0
        out = (-beta + np.sqrt(beta * beta + 0.2 * e0)) / 0.1
    else:
        e0 = e * np.exp(-c)
        m = fam.effect(x)
        with np.errstate(divide="ignore"):
            if fam.error == "normal":
                q = norm.isf(np.exp(-e0))
            else:
                # Gumbel quantile of 1 - exp(-e0), stable in both tails
                logF = np.log1p(-np.exp(-e0))
                q = -np.log(-logF)
        out = np.exp(m + q)
    tiny = np.finfo(float).tiny
    return np.maximum(out, tiny)


def sample_event_time(scenario: SimScenario, x, rng: np.random.Generator) -> float:
    """Draw one event time for covariates x by inverse-CDF sampling."""
    e = rng.exponential(1.0)
    return float(invert_cum_hazard(scenario, np.array([e]), np.atleast_2d(x))[0])


class GeneratedDataset:
    """A Dataset plus the latent truth it was generated from."""

    def __init__(self, data: Dataset, event_times, censor_times, scenario: SimScenario,
                 mu: float):
        self.data = data
        self.event_times = np.asarray(event_times, dtype=float)
        self.censor_times = np.asarray(censor_times, dtype=float)
        self.scenario = scenario
        self.mu = float(mu)

    def true_cum_hazard(self, t, x) -> np.ndarray:
        return true_cum_hazard(self.scenario, t, x)

    def true_log_hazard(self, t, x) -> np.ndarray:
        return true_log_hazard(self.scenario, t, x)

    @property
    def censor_rate(self) -> float:
        return 1.0 - float(self.data.delta.mean())


_CALIBRATION_CACHE: dict = {}


def calibrate_censoring(scenario: SimScenario, target_rate: float, n_pilot: int = 200_000,
                        seed: int = 0, tolerance: float = 0.005) -> float:
    """Bisection on the exponential censoring mean mu to hit a censoring rate.

    One pilot set of (X, T, U) draws is shared across bisection steps, so the
    Monte Carlo rate is monotone in mu and the search is deterministic under
    the seed.
    """
    if not 0.0 < target_rate < 1.0:
        raise ConfigError("target censoring rate must lie in (0, 1)")
    key = (scenario.family, scenario.shift_c, round(target_rate, 6), n_pilot, seed)
    if key in _CALIBRATION_CACHE:
        return _CALIBRATION_CACHE[key]
    ss = np.random.SeedSequence([seed, 0xCA11B])
    sx, se, su = [np.random.Generator(np.random.PCG64(s)) for s in ss.spawn(3)]
    x = scenario.sample_covariates(sx, n_pilot)
    t = invert_cum_hazard(scenario, se.exponential(1.0, size=n_pilot), x)
    u = su.uniform(0.0, 1.0, size=n_pilot)
    logu = np.log(np.maximum(u, 1e-300))

    def rate(mu):
        return float(np.mean(-mu * logu < t))

    lo, hi = 1e-3, 1e3
    if rate(lo) < target_rate or rate(hi) > target_rate:
        raise CalibrationError(
            f"cannot bracket censoring rate {target_rate} for {scenario.family} in [{lo}, {hi}]")
    for _ in range(200):
        mid = np.sqrt(lo * hi)  # geometric bisection on a scale parameter
        r = rate(mid)
        if abs(r - target_rate) <= tolerance:
            _CALIBRATION_CACHE[key] = mid
            return mid
        if r > target_rate:
            lo = mid
        else:
            hi = mid
        if hi / lo < 1 + 1e-12:
            break
    raise CalibrationError(
        f"censoring calibration did not converge for {scenario.family} at {target_rate}")


def generate(scenario: SimScenario, n: int, seed: int, mu: float | None = None,
             tau: float | None = None) -> GeneratedDataset:
    """Generate n i.i.d. right-censored subjects from the scenario.

    Draw order (covariates, event exponentials, censoring uniforms) is fixed,
    so output is reproducible and independent of any internal batching.
    """
    if n < 1:
        raise DataError("need n >= 1 subjects")
    if mu is None:
        mu = scenario.censor_mean_mu
    if mu is None:
        if scenario.target_censor_rate is None:
            raise ConfigError("scenario needs censor_mean_mu or target_censor_rate")
        mu = calibrate_censoring(scenario, scenario.target_censor_rate, seed=seed)
    ss = np.random.SeedSequence([seed, 0xDA7A])
    sx, se, su = [np.random.Generator(np.random.PCG64(s)) for s in ss.spawn(3)]
    x = scenario.sample_covariates(sx, n)
    t = invert_cum_hazard(scenario, se.exponential(1.0, size=n), x)
    c = -mu * np.log(np.maximum(su.uniform(0.0, 1.0, size=n), 1e-300))
    y = np.minimum(t, c)
    delta = (t <= c).astype(np.int64)
    data = Dataset(y, delta, x, tau=tau)
    return GeneratedDataset(data, t, c, scenario, mu)
