"""Classical comparator estimators sharing the Lambda(t|x) evaluation interface.

Three fits, each exposing cum_hazard(t_batch, x_batch):

  * Cox proportional hazards: Newton-Raphson on the Breslow partial
    likelihood, baseline cumulative hazard from the Breslow estimator.
  * Lin-Ying additive hazards: closed-form estimating equation, Aalen-type
    baseline with a running-maximum floor on the exported CHF.
  * Parametric normal AFT: censored log-normal maximum likelihood
    (no intercept, matching the simulation designs), Newton with analytic
    Hessian.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .errors import DataError, DomainError, EstimationError, PerfectSeparationError
from .hazard import Dataset

__all__ = ["CoxFit", "AhFit", "AftFit", "fit_cox", "fit_ah", "fit_aft_normal"]


def _require_events(data: Dataset, who: str):
    if data.n_events < 1:
        raise DataError(f"{who} needs at least one observed event")


# ---------------------------------------------------------------------------
# Cox proportional hazards, Breslow ties and baseline


@dataclass
class CoxFit:
    beta: np.ndarray
    cov: np.ndarray                 # inverse information at beta
    baseline_times: np.ndarray      # unique event times, increasing
    baseline_cum: np.ndarray        # Breslow cumulative baseline at those times
    loglik: float
    iterations: int
    score_norm: float

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))

    def baseline_cum_hazard(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.baseline_times, t, side="right")
        padded = np.concatenate([[0.0], self.baseline_cum])
        return padded[idx]

    def cum_hazard(self, t, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.baseline_cum_hazard(t) * np.exp(x @ self.beta)

    def to_dict(self) -> dict:
        return {
            "format": "survnn-cox-v1",
            "beta": self.beta.tolist(),
            "cov": self.cov.tolist(),
            "baseline_times": self.baseline_times.tolist(),
            "baseline_cum": self.baseline_cum.tolist(),
            "loglik": self.loglik,
        }


def _cox_sums(y, delta, x, beta):
    """Partial log-likelihood, score, and information under Breslow ties.

    Arrays must already be sorted by ascending y.  Risk-set sums are suffix
    cumulative sums over the sorted order.
    """
    n, p = x.shape
    w = np.exp(x @ beta)
    s0 = np.cumsum(w[::-1])[::-1]
    s1 = np.cumsum((w[:, None] * x)[::-1], axis=0)[::-1]
    xw = x * w[:, None]
    s2 = np.cumsum((xw[:, :, None] * x[:, None, :])[::-1], axis=0)[::-1]
    # risk set for an event at time t starts at the first index with y >= t
    first = np.searchsorted(y, y, side="left")
    ev = np.flatnonzero(delta == 1)
    fe = first[ev]
    s0e = s0[fe]
    s1e = s1[fe]
    loglik = float((x[ev] @ beta).sum() - np.log(s0e).sum())
    score = x[ev].sum(axis=0) - (s1e / s0e[:, None]).sum(axis=0)
    xbar = s1e / s0e[:, None]
    info = (s2[fe] / s0e[:, None, None]).sum(axis=0) - np.einsum("ki,kj->ij", xbar, xbar)
    return loglik, score, info


def fit_cox(data: Dataset, tol: float = 1e-8, max_iter: int = 100) -> CoxFit:
    """Newton-Raphson Cox partial-likelihood fit with the Breslow baseline."""
    _require_events(data, "Cox regression")
    order = np.argsort(data.y, kind="stable")
    y, delta, x = data.y[order], data.delta[order], data.x[order]
    if np.linalg.matrix_rank(x - x.mean(axis=0)) < x.shape[1]:
        raise EstimationError("collinear covariates in Cox regression")
    beta = np.zeros(data.p)
    loglik, score, info = _cox_sums(y, delta, x, beta)
    it = 0
    for it in range(1, max_iter + 1):
        if np.linalg.norm(score) < tol:
            break
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            step = score / max(np.abs(np.diag(info)).max(), 1.0)
        # step-halving line search on the partial likelihood
        scale = 1.0
        for _ in range(40):
            cand = beta + scale * step
            ll_new, sc_new, in_new = _cox_sums(y, delta, x, cand)
            if np.isfinite(ll_new) and ll_new >= loglik - 1e-12:
                beta, loglik, score, info = cand, ll_new, sc_new, in_new
                break
            scale *= 0.5
        else:
            raise EstimationError("Cox line search failed")
        if np.abs(beta).max() > 50:
            raise PerfectSeparationError(
                "monotone partial likelihood: a Cox coefficient is diverging")
    else:
        raise EstimationError(
            f"Cox Newton-Raphson did not reach |score| < {tol} in {max_iter} iterations")
    cov = np.linalg.inv(info)
    # Breslow baseline: jumps d_k / S0(t_k) at unique event times
    w = np.exp(x @ beta)
    s0 = np.cumsum(w[::-1])[::-1]
    first = np.searchsorted(y, y, side="left")
    ev = np.flatnonzero(delta == 1)
    times, counts = np.unique(y[ev], return_counts=True)
    jump_at = s0[np.searchsorted(y, times, side="left")]
    jumps = counts / jump_at
    return CoxFit(beta, cov, times, np.cumsum(jumps), loglik, it,
                  float(np.linalg.norm(score)))


# ---------------------------------------------------------------------------
# Lin-Ying additive hazards


@dataclass
class AhFit:
    beta: np.ndarray
    cov: np.ndarray
    knots: np.ndarray            # sorted follow-up times (unique), prepended 0
    base_at_knots: np.ndarray    # baseline CHF at the knots
    slopes: np.ndarray           # baseline drift slope on each inter-knot segment
    residual_norm: float
    floor_count: int = 0         # how often the monotone floor fired (diagnostic)

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))

    def baseline_cum_hazard(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        seg = np.clip(np.searchsorted(self.knots, t, side="right") - 1, 0, len(self.knots) - 1)
        return self.base_at_knots[seg] + self.slopes[seg] * (t - self.knots[seg])

    def raw_cum_hazard(self, t, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.baseline_cum_hazard(t) + (x @ self.beta) * np.asarray(t, dtype=float)

    def cum_hazard(self, t, x, chunk: int = 262144) -> np.ndarray:
        """Monotone (running-maximum) envelope of the raw Lin-Ying CHF."""
        t = np.asarray(t, dtype=float).ravel()
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[0] == 1 and t.shape[0] > 1:
            x = np.broadcast_to(x, (t.shape[0], x.shape[1]))
        raw = self.baseline_cum_hazard(t) + (x @ self.beta) * t
        a = x @ self.beta
        knot_vals = self.base_at_knots  # (K,)
        out = raw.copy()
        K = len(self.knots)
        step = max(1, chunk // max(K, 1))
        for start in range(0, t.shape[0], step):
            sl = slice(start, start + step)
            # value of the raw CHF at every knot <= t, per evaluation point
            vals = knot_vals[None, :] + a[sl, None] * self.knots[None, :]
            mask = self.knots[None, :] <= t[sl, None]
            vals = np.where(mask, vals, -np.inf)
            env = np.maximum(vals.max(axis=1), raw[sl])
            self.floor_count += int((env > raw[sl] + 1e-12).sum())
            out[sl] = env
        return np.maximum(out, 0.0)

    def to_dict(self) -> dict:
        return {
            "format": "survnn-ah-v1",
            "beta": self.beta.tolist(),
            "cov": self.cov.tolist(),
            "knots": self.knots.tolist(),
            "base_at_knots": self.base_at_knots.tolist(),
            "slopes": self.slopes.tolist(),
        }


def fit_ah(data: Dataset) -> AhFit:
    """Closed-form Lin-Ying estimator with the companion Aalen-type baseline."""
    _require_events(data, "additive-hazards regression")
    order = np.argsort(data.y, kind="stable")
    y, delta, x = data.y[order], data.delta[order], data.x[order]
    n, p = x.shape
    # suffix risk-set sums in sorted order
    cnt = n - np.arange(n)
    suf_x = np.cumsum(x[::-1], axis=0)[::-1]
    suf_xx = np.cumsum((x[:, :, None] * x[:, None, :])[::-1], axis=0)[::-1]
    first = np.searchsorted(y, y, side="left")
    # integral over inter-observation segments; X-bar is constant on each
    prev = np.concatenate([[0.0], y[:-1]])
    seg_len = y - prev
    fs = first
    seg_cnt = cnt[fs]
    A = np.einsum("k,kij->ij", seg_len, suf_xx[fs]) - np.einsum(
        "k,ki,kj->ij", seg_len / seg_cnt, suf_x[fs], suf_x[fs])
    ev = np.flatnonzero(delta == 1)
    fe = first[ev]
    centered = x[ev] - suf_x[fe] / cnt[fe][:, None]
    b = centered.sum(axis=0)
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > 1e12:
        raise EstimationError("singular design matrix in the Lin-Ying estimating equation")
    beta = np.linalg.solve(A, b)
    B = centered.T @ centered
    Ainv = np.linalg.inv(A)
    cov = Ainv @ B @ Ainv
    residual = float(np.linalg.norm(A @ beta - b))
    # baseline: sum of event jumps 1/|risk| minus the drift integral of xbar' beta
    xbar_slope = (suf_x[fs] / cnt[fs][:, None]) @ beta  # slope on segment ending at y_k
    uniq = np.unique(y)
    knots = np.concatenate([[0.0], uniq])
    jump_per_sorted = np.zeros(n)
    np.add.at(jump_per_sorted, fe, 1.0 / cnt[fe])
    cum_jump = np.cumsum(jump_per_sorted)
    cum_drift = np.cumsum(seg_len * xbar_slope)
    # value at each unique knot = value just after processing its tie block
    last_of_block = np.searchsorted(y, uniq, side="right") - 1
    base_vals = np.concatenate([[0.0], cum_jump[last_of_block] - cum_drift[last_of_block]])
    # drift slope on the segment starting at each knot; flat beyond the last
    next_first = np.searchsorted(y, uniq, side="right")
    slopes = np.empty(len(knots))
    slopes[0] = -xbar_slope[0]
    valid = next_first < n
    slopes[1:] = np.where(valid, -np.take(xbar_slope, np.minimum(next_first, n - 1)), 0.0)
    return AhFit(beta, cov, knots, base_vals, slopes, residual)


# ---------------------------------------------------------------------------
# Parametric normal AFT (censored log-normal MLE)


@dataclass
class AftFit:
    beta: np.ndarray
    sigma: float
    cov: np.ndarray              # inverse observed information over (beta, sigma)
    loglik: float
    iterations: int
    grad_norm: float

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))

    def cum_hazard(self, t, x) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        x = np.atleast_2d(np.asarray(x, dtype=float))
        m = x @ self.beta
        out = np.zeros(np.broadcast(t, m).shape)
        tb = np.broadcast_to(t, out.shape)
        pos = tb > 0
        z = (np.log(np.where(tb > 0, tb, 1.0)) - np.broadcast_to(m, out.shape)) / self.sigma
        out[pos] = -norm.logsf(z[pos])
        return out

    def to_dict(self) -> dict:
        return {
            "format": "survnn-aft-v1",
            "beta": self.beta.tolist(),
            "sigma": self.sigma,
            "cov": self.cov.tolist(),
            "loglik": self.loglik,
        }


def _aft_derivs(logy, delta, x, beta, sigma):
    """Censored normal log-likelihood with analytic gradient and Hessian.

    Parameters are theta = (beta, sigma); z = (log y - x'beta)/sigma.
    """
    n, p = x.shape
    z = (logy - x @ beta) / sigma
    ev = delta == 1
    ce = ~ev
    ll = float(norm.logpdf(z[ev]).sum() - ev.sum() * np.log(sigma)
               + norm.logsf(z[ce]).sum())
    grad = np.zeros(p + 1)
    H = np.zeros((p + 1, p + 1))
    xe, ze = x[ev], z[ev]
    grad[:p] += xe.T @ ze / sigma
    grad[p] += float(((ze ** 2 - 1.0) / sigma).sum())
    H[:p, :p] += -(xe.T @ xe) / sigma ** 2
    H[:p, p] += -(2.0 / sigma ** 2) * (xe.T @ ze)
    H[p, p] += float(((1.0 - 3.0 * ze ** 2) / sigma ** 2).sum())
    if ce.any():
        xc, zc = x[ce], z[ce]
        M = np.exp(norm.logpdf(zc) - norm.logsf(zc))  # normal hazard, stable
        grad[:p] += xc.T @ (M / sigma)
        grad[p] += float((M * zc / sigma).sum())
        dM = M * (M - zc)
        H[:p, :p] += -(xc * dM[:, None]).T @ xc / sigma ** 2
        H[:p, p] += -(xc.T @ (M * ((M - zc) * zc + 1.0))) / sigma ** 2
        H[p, p] += float((-(M * ((M - zc) * zc ** 2 + 2.0 * zc))).sum() / sigma ** 2)
    H[p, :p] = H[:p, p]
    return ll, grad, H


def fit_aft_normal(data: Dataset, tol: float = 1e-8, max_iter: int = 200) -> AftFit:
    """Censored log-normal AFT maximum likelihood, log T = x'beta + N(0, sigma^2)."""
    _require_events(data, "AFT regression")
    if np.any(data.y <= 0):
        raise DomainError("AFT requires strictly positive follow-up times")
    logy = np.log(data.y)
    x = data.x
    ev = data.delta == 1
    # uncensored least squares start
    beta, *_ = np.linalg.lstsq(x[ev], logy[ev], rcond=None)
    resid = logy[ev] - x[ev] @ beta
    sigma = max(float(resid.std()), 0.1)
    ll, grad, H = _aft_derivs(logy, data.delta, x, beta, sigma)
    it = 0
    for it in range(1, max_iter + 1):
        if np.linalg.norm(grad) < tol:
            break
        try:
            step = np.linalg.solve(-H, grad)
        except np.linalg.LinAlgError:
            step = grad / (abs(np.diag(H)).max() + 1.0)
        scale = 1.0
        for _ in range(50):
            nb = beta + scale * step[:-1]
            ns = sigma + scale * step[-1]
            if ns > 1e-8:
                ll_new, g_new, H_new = _aft_derivs(logy, data.delta, x, nb, ns)
                if np.isfinite(ll_new) and ll_new >= ll - 1e-12:
                    beta, sigma, ll, grad, H = nb, ns, ll_new, g_new, H_new
                    break
            scale *= 0.5
        else:
            raise EstimationError("AFT line search failed")
    else:
        raise EstimationError(
            f"AFT Newton did not reach |grad| < {tol} in {max_iter} iterations")
    cov = np.linalg.inv(-H)
    return AftFit(beta, float(sigma), cov, ll, it, float(np.linalg.norm(grad)))
