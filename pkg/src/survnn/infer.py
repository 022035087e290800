"""Weighted hypothesis tests on conditional hazard surfaces.

The shared ingredient is the influence functional

    psi(g; Z)[h] = Delta * h(Y, X) - integral_0^Y exp{g(s, X)} h(s, X) ds,

whose empirical second moment drives every variance estimator.  Weight
processes are Fleming-Harrington style: at-risk fraction times
S(t,x)^rho * (1-S(t,x))^gamma with S from a fitted model.  The one-sample
statistic contrasts a fit against a null log-hazard, the two-sample statistic
contrasts two fits over the pooled sample, and the goodness-of-fit statistic
contrasts a sample-split network fit against a null-model fit.
"""

from __future__ import annotations

import concurrent.futures as cf
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import beta as beta_dist
from scipy.stats import norm

from . import trainer as trainer_mod
from .errors import ConfigError, DegenerateTestError, ShapeError
from .hazard import (DEFAULT_EXP_CLIP, DEFAULT_LIK_SUBINT, DEFAULT_QUAD_ORDER, Dataset,
                     FittedHazard, as_log_hazard, batched_cum_hazard)
from .quadrature import composite_nodes

__all__ = [
    "WeightSpec",
    "TestReport",
    "FlemingHarringtonWeight",
    "fh_weight",
    "psi",
    "psi_values",
    "influence_statistic",
    "one_sample_test",
    "two_sample_test",
    "gof_test",
    "RejectionRateResult",
    "monte_carlo_rejection_rate",
]

MIN_EVENTS_FOR_TEST = 10


@dataclass(frozen=True)
class WeightSpec:
    """Fleming-Harrington exponents (rho, gamma) selecting a weight process."""

    rho: float = 0.0
    gamma: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.rho) and np.isfinite(self.gamma)):
            raise ConfigError("weight exponents must be finite")
        if self.rho < 0 or self.gamma < 0:
            raise ConfigError("weight exponents must be nonnegative")

    @property
    def label(self) -> str:
        def fmt(v):
            return f"{v:g}"
        return f"W({fmt(self.rho)},{fmt(self.gamma)})"


@dataclass
class TestReport:
    statistic: float
    variance_estimate: float
    z: float
    p_value: float
    alpha: float
    reject: bool
    weight: WeightSpec
    n: int
    n1: int | None = None
    n2: int | None = None
    details: dict | None = None

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "variance_estimate": self.variance_estimate,
            "z": self.z,
            "p_value": self.p_value,
            "alpha": self.alpha,
            "reject": self.reject,
            "weight": {"rho": self.weight.rho, "gamma": self.weight.gamma},
            "n": self.n,
            "n1": self.n1,
            "n2": self.n2,
            "details": self.details or {},
        }


def _report(stat, var, alpha, spec, n, n1=None, n2=None, details=None) -> TestReport:
    if not var > 0:
        raise DegenerateTestError("test variance estimate is not positive")
    z = stat / np.sqrt(var)
    p = float(2.0 * norm.sf(abs(z)))
    reject = bool(abs(z) > norm.isf(alpha / 2.0))
    return TestReport(float(stat), float(var), float(z), p, alpha, reject, spec,
                      int(n), n1, n2, details)


class FlemingHarringtonWeight:
    """W(t,x) = (1/n) sum_i I(Y_i >= t) * S(t,x)^rho * (1 - S(t,x))^gamma.

    The at-risk fraction comes from `risk_times` (the evaluation sample); the
    survival surface comes from one or more fitted models.  With several
    sources, S is their sample-size weighted mixture, which keeps two-sample
    weights symmetric under sample swap.
    """

    def __init__(self, risk_times, spec: WeightSpec, sources=(), tau: float | None = None):
        self.sorted_y = np.sort(np.asarray(risk_times, dtype=float))
        self.n = self.sorted_y.shape[0]
        self.spec = spec
        self.sources = tuple(sources)
        if self.sources:
            coefs = np.array([c for c, _ in self.sources], dtype=float)
            if abs(coefs.sum() - 1.0) > 1e-9:
                raise ConfigError("survival mixture coefficients must sum to 1")
        if tau is None:
            tau = float(self.sorted_y[-1]) if self.n else 1.0
        self.tau = tau

    def at_risk_fraction(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return (self.n - np.searchsorted(self.sorted_y, t, side="left")) / max(self.n, 1)

    def survival(self, t, x) -> np.ndarray:
        s = 0.0
        for coef, g in self.sources:
            s = s + coef * np.exp(-batched_cum_hazard(g, t, x, tau=self.tau))
        return s

    def __call__(self, t, x) -> np.ndarray:
        w = self.at_risk_fraction(t)
        if self.spec.rho == 0 and self.spec.gamma == 0:
            return w
        if not self.sources:
            raise ConfigError("rho/gamma weights need a survival source model")
        s = self.survival(t, x)
        if self.spec.rho != 0:
            w = w * s ** self.spec.rho
        if self.spec.gamma != 0:
            w = w * (1.0 - s) ** self.spec.gamma
        return w


def fh_weight(data: Dataset, fh, spec: WeightSpec, t: float, x) -> float:
    """Spec'd scalar weight evaluation W_n(t, x) built from a fitted model."""
    wfn = FlemingHarringtonWeight(data.y, spec, sources=((1.0, fh),), tau=data.tau)
    return float(wfn(np.array([t]), np.atleast_2d(np.asarray(x, dtype=float)))[0])


def psi_values(data: Dataset, g, h, quad_order: int = DEFAULT_QUAD_ORDER,
               subintervals: int = DEFAULT_LIK_SUBINT,
               exp_clip: float = DEFAULT_EXP_CLIP) -> np.ndarray:
    """psi(g; Z_i)[h] for every subject: Delta*h(Y,X) - int_0^Y exp(g) h ds."""
    g_fn = as_log_hazard(g)
    h_fn = as_log_hazard(h)
    n = len(data)
    times, wq = composite_nodes(data.y, subintervals, quad_order)
    kq = times.shape[1]
    flat_t = times.ravel()
    flat_x = np.repeat(data.x, kq, axis=0)
    gx = np.minimum(g_fn(flat_t, flat_x).reshape(n, kq), exp_clip)
    hx = h_fn(flat_t, flat_x).reshape(n, kq)
    integral = np.einsum("ij,ij->i", wq, np.exp(gx) * hx)
    event = data.delta * h_fn(data.y, data.x)
    return event - integral


def psi(g, h, z) -> float:
    """Influence functional for a single subject."""
    data = Dataset([z.y], [z.delta], z.x[None, :], tau=max(z.y, 1e-12))
    return float(psi_values(data, g, h)[0])


def _settings_from_fh(fh):
    if isinstance(fh, FittedHazard):
        return fh.quad_order, fh.lik_subintervals, fh.exp_clip
    return DEFAULT_QUAD_ORDER, DEFAULT_LIK_SUBINT, DEFAULT_EXP_CLIP


def influence_statistic(data: Dataset, g, spec: WeightSpec, weight_fn=None):
    """sqrt(n) * P_n psi(g)[W_n] and the plug-in sigma_hat, with W_n built from g.

    With g equal to the true log-hazard this is the oracle version of the
    one-sample statistic: mean zero with variance consistently estimated by
    sigma_hat^2 (the variance-estimator calibration check).
    """
    n = len(data)
    if weight_fn is None:
        weight_fn = FlemingHarringtonWeight(data.y, spec, sources=((1.0, g),), tau=data.tau)
    q, k, clip = _settings_from_fh(g)
    vals = psi_values(data, g, weight_fn, q, k, clip)
    stat = float(np.sqrt(n) * vals.mean())
    sigma2 = float(np.mean(vals ** 2))
    return stat, sigma2


def one_sample_test(data: Dataset, fh, g0, spec: WeightSpec,
                    alpha: float = 0.05) -> TestReport:
    """T_w = sqrt(n) P_n[Delta W_n (g_hat - g0)] against N(0, sigma_hat^2).

    The weight process W_n uses the fitted model's survival surface and the
    at-risk fraction of `data` (the evaluation sample).
    """
    n = len(data)
    if data.n_events < MIN_EVENTS_FOR_TEST:
        raise DegenerateTestError(
            f"one-sample test needs >= {MIN_EVENTS_FOR_TEST} events, got {data.n_events}")
    g_fn = as_log_hazard(fh)
    g0_fn = as_log_hazard(g0)
    weight_fn = FlemingHarringtonWeight(data.y, spec, sources=((1.0, fh),), tau=data.tau)
    w_obs = weight_fn(data.y, data.x)
    diff = g_fn(data.y, data.x) - g0_fn(data.y, data.x)
    stat = float(np.sqrt(n) * np.mean(data.delta * w_obs * diff))
    q, k, clip = _settings_from_fh(fh)
    psi_i = psi_values(data, fh, weight_fn, q, k, clip)
    sigma2 = float(np.mean(psi_i ** 2))
    return _report(stat, sigma2, alpha, spec, n,
                   details={"sigma_hat": float(np.sqrt(sigma2))})


def two_sample_test(data1: Dataset, data2: Dataset, fh1, fh2, spec: WeightSpec,
                    alpha: float = 0.05, variance_mode: str = "split",
                    pooled_fit=None) -> TestReport:
    """U_w = sqrt(n) P_n[Delta W_n (g1_hat - g2_hat)] over the pooled sample.

    variance_mode "split" (default) uses per-sample psi second moments with
    each sample's own fit: tau^2 = (n/n1) s1^2 + (n/n2) s2^2.  Mode "pooled"
    uses a fit on the pooled data: tau^2 = n^2/(n1 n2) * s^2, and requires
    `pooled_fit`.
    """
    if data1.p != data2.p:
        raise ShapeError("samples disagree on covariate dimension")
    n1, n2 = len(data1), len(data2)
    n = n1 + n2
    for k, d in (("sample 1", data1), ("sample 2", data2)):
        if d.n_events < MIN_EVENTS_FOR_TEST:
            raise DegenerateTestError(f"{k} has too few events for the two-sample test")
    y = np.concatenate([data1.y, data2.y])
    x = np.vstack([data1.x, data2.x])
    delta = np.concatenate([data1.delta, data2.delta])
    tau = max(data1.tau, data2.tau)
    if variance_mode == "split":
        sources = ((n1 / n, fh1), (n2 / n, fh2))
    elif variance_mode == "pooled":
        if pooled_fit is None:
            raise ConfigError("pooled variance mode requires pooled_fit")
        sources = ((1.0, pooled_fit),)
    else:
        raise ConfigError(f"unknown variance mode {variance_mode!r}")
    weight_fn = FlemingHarringtonWeight(y, spec, sources=sources, tau=tau)
    g1_fn, g2_fn = as_log_hazard(fh1), as_log_hazard(fh2)
    w_obs = weight_fn(y, x)
    stat = float(np.sqrt(n) * np.mean(delta * w_obs * (g1_fn(y, x) - g2_fn(y, x))))
    if variance_mode == "split":
        q1, k1, c1 = _settings_from_fh(fh1)
        q2, k2, c2 = _settings_from_fh(fh2)
        s1 = float(np.mean(psi_values(data1, fh1, weight_fn, q1, k1, c1) ** 2))
        s2 = float(np.mean(psi_values(data2, fh2, weight_fn, q2, k2, c2) ** 2))
        var = (n / n1) * s1 + (n / n2) * s2
        details = {"sigma2_1": s1, "sigma2_2": s2, "mode": "split"}
    else:
        pooled = Dataset(y, delta, x, tau=tau)
        q0, k0, c0 = _settings_from_fh(pooled_fit)
        s0 = float(np.mean(psi_values(pooled, pooled_fit, weight_fn, q0, k0, c0) ** 2))
        var = (n * n / (n1 * n2)) * s0
        details = {"sigma2_pooled": s0, "mode": "pooled"}
    return _report(stat, var, alpha, spec, n, n1=n1, n2=n2, details=details)


def gof_split(n: int, seed: int):
    """Random half split; odd n sends the extra subject to sample 1."""
    n1 = (n + 1) // 2
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x60F])))
    perm = rng.permutation(n)
    return np.sort(perm[:n1]), np.sort(perm[n1:])


def gof_test(data: Dataset, null_fitter, cfg: trainer_mod.TrainConfig, spec: WeightSpec,
             alpha: float = 0.05, seed: int = 0, dnn_fit=None) -> TestReport:
    """Sample-split goodness-of-fit test of a null model class.

    The network is fitted on sub-sample 1 (with its own internal
    train/validation split from cfg), the null model on sub-sample 2; the
    statistic runs over the full sample.  The null fitter must expose
    fit(dataset) -> object with log_hazard(t, x) and
    influence_values(eval_data, weight_fn).
    """
    n = len(data)
    idx1, idx2 = gof_split(n, seed)
    s1, s2 = data.subset(idx1), data.subset(idx2)
    if dnn_fit is None:
        sub_seed = int(np.random.SeedSequence([seed, 0xD, cfg.seed]).generate_state(1)[0])
        dnn_fit = trainer_mod.fit(s1, replace(cfg, seed=sub_seed))
    fh = dnn_fit.model
    null_fit = null_fitter.fit(s2)
    weight_fn = FlemingHarringtonWeight(data.y, spec, sources=((1.0, fh),), tau=data.tau)
    g_fn = as_log_hazard(fh)
    g0_fn = as_log_hazard(null_fit)
    w_obs = weight_fn(data.y, data.x)
    diff = g_fn(data.y, data.x) - g0_fn(data.y, data.x)
    stat = float(np.sqrt(n) * np.mean(data.delta * w_obs * diff))
    q, k, clip = _settings_from_fh(fh)
    # per-subsample second moments; the factor 2 restores the n/n_k inflation
    psi1 = psi_values(s1, fh, weight_fn, q, k, clip)
    s1w = float(np.mean(psi1 ** 2))
    phi2 = np.asarray(null_fitter_influence(null_fit, data, weight_fn), dtype=float)
    if phi2.shape[0] != len(s2):
        raise ShapeError("null fitter returned influence values of the wrong length")
    s2w = float(np.mean(phi2 ** 2))
    var = 2.0 * (s1w + s2w)
    return _report(stat, var, alpha, spec, n, n1=len(s1), n2=len(s2),
                   details={"sigma2_1w": s1w, "sigma2_2w": s2w,
                            "dnn": {"depth": dnn_fit.depth, "width": dnn_fit.width,
                                    "lr": dnn_fit.learning_rate,
                                    "epochs": dnn_fit.epochs_run}})


def null_fitter_influence(null_fit, eval_data: Dataset, weight_fn) -> np.ndarray:
    return null_fit.influence_values(eval_data, weight_fn)


@dataclass
class RejectionRateResult:
    rate: float
    ci_low: float
    ci_high: float
    n_reject: int
    n_used: int
    n_failed: int
    errors: list

    def to_dict(self) -> dict:
        return {
            "rate": self.rate, "ci_low": self.ci_low, "ci_high": self.ci_high,
            "n_reject": self.n_reject, "n_used": self.n_used,
            "n_failed": self.n_failed, "errors": self.errors,
        }


def exact_binomial_ci(k: int, n: int, level: float = 0.95):
    """Clopper-Pearson interval for a binomial proportion."""
    a = (1.0 - level) / 2.0
    lo = 0.0 if k == 0 else float(beta_dist.ppf(a, k, n - k + 1))
    hi = 1.0 if k == n else float(beta_dist.ppf(1.0 - a, k + 1, n - k))
    return lo, hi


def _limit_worker_threads():
    try:
        from threadpoolctl import threadpool_limits
        threadpool_limits(1)
    except Exception:
        pass


def _mc_one(args):
    closure, scenario, rep_seed = args
    return closure(scenario, rep_seed)


def monte_carlo_rejection_rate(scenario, test_closure, replications: int, seed: int,
                               workers: int = 1) -> RejectionRateResult:
    """Rejection fraction of a test over independent replications.

    test_closure(scenario, rep_seed) must return a TestReport (or any object
    with a boolean `reject`).  Hard errors are recorded and excluded; the
    returned interval is the exact binomial 95% CI.
    """
    if replications < 1:
        raise ConfigError("need at least one replication")
    rep_seeds = [int(s) for s in
                 np.random.SeedSequence([seed, 0x3C]).generate_state(replications)]
    args = [(test_closure, scenario, rs) for rs in rep_seeds]
    results = []
    if workers > 1:
        with cf.ProcessPoolExecutor(max_workers=workers,
                                    initializer=_limit_worker_threads) as ex:
            futures = [ex.submit(_mc_one, a) for a in args]
            for i, fut in enumerate(futures):
                try:
                    results.append((i, fut.result()))
                except Exception as exc:  # noqa: BLE001 - worker errors are data
                    results.append((i, exc))
    else:
        for i, a in enumerate(args):
            try:
                results.append((i, _mc_one(a)))
            except Exception as exc:  # noqa: BLE001
                results.append((i, exc))
    rejects, errors = [], []
    for i, res in sorted(results, key=lambda t: t[0]):
        if isinstance(res, Exception):
            errors.append(f"rep {i}: {type(res).__name__}: {res}")
        else:
            rejects.append(bool(res.reject))
    n_used = len(rejects)
    if n_used == 0:
        raise DegenerateTestError(f"all {replications} replications failed: {errors[:3]}")
    k = int(sum(rejects))
    lo, hi = exact_binomial_ci(k, n_used)
    return RejectionRateResult(k / n_used, lo, hi, k, n_used,
                               replications - n_used, errors)
