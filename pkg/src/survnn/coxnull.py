"""Null-model fitters for the goodness-of-fit test.

The default null is a log-linear Cox model with a flexible baseline:
g0(t, x) = B(t/tau)' a + x' beta, where B is a B-spline basis on scaled time.
This is a smooth parametric MLE, so the null fit exposes an evaluable log
hazard and closed-form per-subject influence values from standard
M-estimation theory.  A delete-group jackknife fitter provides model-agnostic
influence values for any other null fitter.
"""

from __future__ import annotations

import numpy as np
from scipy.interpolate import BSpline

from .errors import ConfigError, EstimationError
from .hazard import Dataset, as_log_hazard
from .quadrature import composite_nodes

__all__ = ["SplineCoxNullFitter", "JackknifeNullFitter", "FixedNullFitter"]


class _SplineBasis:
    """Clamped B-spline basis on [0, 1] with interior knots at event quantiles."""

    def __init__(self, interior: np.ndarray, degree: int):
        self.degree = int(degree)
        self.interior = np.asarray(interior, dtype=float)
        self.knots = np.concatenate([
            np.zeros(self.degree + 1), self.interior, np.ones(self.degree + 1)])
        self.n_basis = len(self.interior) + self.degree + 1

    @classmethod
    def from_event_times(cls, u_events: np.ndarray, n_knots: int, degree: int):
        """n_knots counts boundary + interior knots, matching 'K_n knots' usage."""
        n_interior = max(n_knots - 2, 0)
        if n_interior:
            qs = np.quantile(u_events, (np.arange(n_interior) + 1) / (n_interior + 1))
            qs = np.clip(qs, 1e-6, 1 - 1e-6)
            # degenerate quantiles (heavy ties) fall back to even spacing
            if np.any(np.diff(qs) <= 0):
                qs = (np.arange(n_interior) + 1) / (n_interior + 1)
        else:
            qs = np.empty(0)
        return cls(qs, degree)

    def design(self, u: np.ndarray) -> np.ndarray:
        u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
        return BSpline.design_matrix(u, self.knots, self.degree).toarray()


class SplineCoxNullFit:
    """Fitted null model with analytic influence machinery."""

    def __init__(self, basis: _SplineBasis, theta: np.ndarray, tau: float, p: int,
                 mean_information: np.ndarray, subject_scores: np.ndarray,
                 loglik: float, iterations: int):
        self.basis = basis
        self.theta = theta
        self.tau = tau
        self.p = p
        self.mean_information = mean_information
        self.subject_scores = subject_scores  # (n2, q), summing to ~0 at the MLE
        self.loglik = loglik
        self.iterations = iterations

    def features(self, t, x) -> np.ndarray:
        t = np.asarray(t, dtype=float).ravel()
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[0] == 1 and t.shape[0] > 1:
            x = np.broadcast_to(x, (t.shape[0], x.shape[1]))
        return np.hstack([self.basis.design(t / self.tau), x])

    def log_hazard(self, t, x) -> np.ndarray:
        return self.features(t, x) @ self.theta

    def influence_values(self, eval_data: Dataset, weight_fn) -> np.ndarray:
        """phi_hat_i = c' I^{-1} U_i with c = P_n[Delta W feature(Y, X)]."""
        w = weight_fn(eval_data.y, eval_data.x)
        feats = self.features(eval_data.y, eval_data.x)
        c = (feats * (eval_data.delta * w)[:, None]).mean(axis=0)
        direction = np.linalg.solve(self.mean_information, c)
        return self.subject_scores @ direction


class SplineCoxNullFitter:
    """Full-likelihood Cox null with spline log-baseline: g0 = B(t/tau)'a + x'b."""

    def __init__(self, n_knots: int = 5, degree: int = 3, quad_order: int = 8,
                 subintervals: int = 4, exp_clip: float = 30.0,
                 tol: float = 1e-8, max_iter: int = 100):
        if n_knots < 2:
            raise ConfigError("need at least the two boundary knots")
        self.n_knots = n_knots
        self.degree = degree
        self.quad_order = quad_order
        self.subintervals = subintervals
        self.exp_clip = exp_clip
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, data: Dataset) -> SplineCoxNullFit:
        if data.n_events < 1:
            raise EstimationError("null model fit needs at least one event")
        tau = data.tau
        u_events = data.y[data.delta == 1] / tau
        basis = _SplineBasis.from_event_times(u_events, self.n_knots, self.degree)
        m = len(data)
        times, wq = composite_nodes(data.y, self.subintervals, self.quad_order)
        kq = times.shape[1]
        node_feats = np.hstack([
            basis.design(times.ravel() / tau),
            np.repeat(data.x, kq, axis=0),
        ])
        event_feats = np.hstack([basis.design(data.y / tau), data.x])
        q = event_feats.shape[1]
        theta = np.zeros(q)
        wq_flat = wq.ravel()
        delta = data.delta.astype(float)

        def evaluate(th):
            eta = np.minimum(node_feats @ th, self.exp_clip)
            lam = np.exp(eta)
            integr = (wq_flat * lam).reshape(m, kq).sum(axis=1)
            ll = float(delta @ (event_feats @ th) - integr.sum())
            int_grad = node_feats.T @ (wq_flat * lam)
            score = event_feats.T @ delta - int_grad
            H = -(node_feats * (wq_flat * lam)[:, None]).T @ node_feats
            return ll, score, H, integr

        ll, score, H, integr = evaluate(theta)
        it = 0
        for it in range(1, self.max_iter + 1):
            if np.linalg.norm(score) < self.tol * max(1.0, m / 100.0):
                break
            try:
                step = np.linalg.solve(-H, score)
            except np.linalg.LinAlgError as exc:
                raise EstimationError(f"singular information in null-model fit: {exc}")
            scale = 1.0
            for _ in range(50):
                ll_new, sc_new, H_new, integr_new = evaluate(theta + scale * step)
                if np.isfinite(ll_new) and ll_new >= ll - 1e-12:
                    theta = theta + scale * step
                    ll, score, H, integr = ll_new, sc_new, H_new, integr_new
                    break
                scale *= 0.5
            else:
                raise EstimationError("null-model line search failed")
        else:
            raise EstimationError(
                f"null-model Newton did not converge in {self.max_iter} iterations")
        # per-subject scores and mean information at the MLE
        eta = np.minimum(node_feats @ theta, self.exp_clip)
        lam_w = wq_flat * np.exp(eta)
        int_grad_per = (node_feats * lam_w[:, None]).reshape(m, kq, q).sum(axis=1)
        scores = event_feats * delta[:, None] - int_grad_per
        mean_info = (node_feats * lam_w[:, None]).T @ node_feats / m
        return SplineCoxNullFit(basis, theta, tau, data.p, mean_info, scores, ll, it)


class _JackknifeNullFit:
    def __init__(self, base_fit, data: Dataset, base_fitter, groups: np.ndarray):
        self.base_fit = base_fit
        self._data = data
        self._fitter = base_fitter
        self._groups = groups

    def log_hazard(self, t, x) -> np.ndarray:
        return as_log_hazard(self.base_fit)(t, x)

    def influence_values(self, eval_data: Dataset, weight_fn) -> np.ndarray:
        """Delete-group pseudo-values of A = P_n[Delta W g0_hat(Y, X)]."""
        w_delta = eval_data.delta * weight_fn(eval_data.y, eval_data.x)

        def stat(fit):
            g = as_log_hazard(fit)(eval_data.y, eval_data.x)
            return float(np.mean(w_delta * g))

        a_full = stat(self.base_fit)
        labels = np.unique(self._groups)
        G = len(labels)
        if G < 2:
            raise ConfigError("jackknife needs at least two groups")
        pseudo = np.empty(G)
        for j, lab in enumerate(labels):
            keep = np.flatnonzero(self._groups != lab)
            refit = self._fitter.fit(self._data.subset(keep))
            pseudo[j] = (G - 1) * (a_full - stat(refit))
        pseudo -= pseudo.mean()
        per_subject = np.sqrt(G / (G - 1.0)) * pseudo[
            np.searchsorted(labels, self._groups)]
        return per_subject


class JackknifeNullFitter:
    """Wrap any null fitter; influence values come from a delete-group jackknife.

    n_groups = None refits leave-one-out (exact but n refits); smaller group
    counts trade accuracy for speed.
    """

    def __init__(self, base_fitter, n_groups: int | None = None, seed: int = 0):
        self.base_fitter = base_fitter
        self.n_groups = n_groups
        self.seed = seed

    def fit(self, data: Dataset) -> _JackknifeNullFit:
        n = len(data)
        G = n if self.n_groups is None else min(self.n_groups, n)
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([self.seed, 0x7ACC])))
        groups = rng.permutation(np.arange(n) % G)
        return _JackknifeNullFit(self.base_fitter.fit(data), data, self.base_fitter, groups)


class _FixedNullFit:
    def __init__(self, model, n2: int):
        self._g = as_log_hazard(model)
        self._n2 = n2

    def log_hazard(self, t, x):
        return self._g(t, x)

    def influence_values(self, eval_data: Dataset, weight_fn) -> np.ndarray:
        return np.zeros(self._n2)


class FixedNullFitter:
    """A known null log-hazard (no estimation, zero influence values)."""

    def __init__(self, model):
        self.model = model

    def fit(self, data: Dataset) -> _FixedNullFit:
        return _FixedNullFit(self.model, len(data))
