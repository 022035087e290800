"""Censored-data log-likelihood and the fitted conditional-hazard surface.

The conditional hazard is modeled as lambda(t|x) = exp{g(t,x)} with g an MLP
(or any callable in tests).  The per-subject log-likelihood is

    l(g; Z) = Delta * g(Y, X) - integral_0^Y exp{g(s, X)} ds,

with the integral approximated by composite Gauss-Legendre quadrature.
Cumulative hazards use an adaptive subinterval count K = ceil(t/tau * 16).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import ConfigError, DataError, DomainError, MetricUndefinedError, OptimizationError, ShapeError
from .quadrature import composite_nodes, get_rule

__all__ = [
    "Subject",
    "Dataset",
    "FittedHazard",
    "LikelihoodEvaluator",
    "log_likelihood",
    "neg_loglik_and_grad",
    "cum_hazard",
    "survival",
    "chf_discrepancy",
    "batched_cum_hazard",
]

DEFAULT_QUAD_ORDER = 8
DEFAULT_LIK_SUBINT = 4
DEFAULT_LAMBDA_SUBINT = 16
DEFAULT_EXP_CLIP = 30.0


@dataclass(frozen=True)
class Subject:
    """One observation: follow-up time, event indicator, covariate vector."""

    y: float
    delta: int
    x: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float).ravel())
        if not (np.isfinite(self.y) and self.y >= 0):
            raise DataError(f"follow-up time must be finite and >= 0, got {self.y}")
        if self.delta not in (0, 1):
            raise DataError(f"event indicator must be 0 or 1, got {self.delta}")
        if not np.isfinite(self.x).all():
            raise DataError("covariates must be finite")


class Dataset:
    """Right-censored sample stored as flat arrays (y, delta, x) plus a horizon tau.

    Raw covariates may live on any bounded range; models min-max scale them to
    [0,1] internally from their training split.  source_indices optionally
    records which rows of a parent dataset this one was split from.
    """

    def __init__(self, y, delta, x, tau=None, source_indices=None):
        self.y = np.asarray(y, dtype=float).ravel()
        self.delta = np.asarray(delta, dtype=np.int64).ravel()
        self.x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.x.shape[0] != self.y.shape[0] or self.delta.shape[0] != self.y.shape[0]:
            raise ShapeError("y, delta, x must agree on the number of subjects")
        if self.y.size and not np.isfinite(self.y).all():
            raise DataError("follow-up times must be finite")
        if self.y.size and self.y.min() < 0:
            raise DataError("follow-up times must be nonnegative")
        if not np.isin(self.delta, (0, 1)).all():
            raise DataError("event indicators must be 0 or 1")
        if not np.isfinite(self.x).all():
            raise DataError("covariates must be finite")
        if tau is None:
            tau = float(self.y.max()) if self.y.size else 1.0
        self.tau = float(tau)
        if not self.tau > 0:
            raise DataError("horizon tau must be positive")
        if self.y.size and self.y.max() > self.tau * (1 + 1e-12):
            raise DataError(f"max follow-up {self.y.max()} exceeds tau {self.tau}")
        self.source_indices = (
            None if source_indices is None else np.asarray(source_indices, dtype=np.int64)
        )

    @classmethod
    def from_subjects(cls, subjects, tau=None) -> "Dataset":
        subjects = list(subjects)
        if not subjects:
            raise DataError("empty subject list")
        return cls(
            [s.y for s in subjects],
            [s.delta for s in subjects],
            np.vstack([s.x for s in subjects]),
            tau=tau,
        )

    def __len__(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def n_events(self) -> int:
        return int(self.delta.sum())

    def subject(self, i: int) -> Subject:
        return Subject(float(self.y[i]), int(self.delta[i]), self.x[i])

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.y[idx], self.delta[idx], self.x[idx], tau=self.tau,
                       source_indices=idx)

    def with_tau(self, tau: float) -> "Dataset":
        """Copy with a (weakly larger) horizon, e.g. to share tau across samples."""
        return Dataset(self.y, self.delta, self.x, tau=tau,
                       source_indices=self.source_indices)


def as_log_hazard(g):
    """Normalize a model or callable into g(t_batch, x_batch) -> values."""
    if hasattr(g, "log_hazard"):
        return g.log_hazard
    if callable(g):
        return g
    raise TypeError(f"cannot interpret {type(g).__name__} as a log-hazard")


class FittedHazard:
    """A trained network plus normalization metadata; evaluates g, lambda, Lambda, S.

    Raw times are mapped by t -> t/tau and covariates min-max scaled into
    [0,1] before entering the network, so evaluation accepts raw units.
    """

    def __init__(self, net: nn.MlpNetwork, tau: float, cov_lo, cov_hi,
                 quad_order: int = DEFAULT_QUAD_ORDER,
                 lik_subintervals: int = DEFAULT_LIK_SUBINT,
                 lambda_subintervals: int = DEFAULT_LAMBDA_SUBINT,
                 exp_clip: float = DEFAULT_EXP_CLIP):
        self.net = net
        self.tau = float(tau)
        self.cov_lo = np.asarray(cov_lo, dtype=float).ravel()
        self.cov_hi = np.asarray(cov_hi, dtype=float).ravel()
        if net.input_dim != self.cov_lo.size + 1:
            raise ShapeError(
                f"network input dim {net.input_dim} != 1 + {self.cov_lo.size} covariates")
        if self.cov_lo.shape != self.cov_hi.shape:
            raise ShapeError("covariate scale bounds disagree")
        if quad_order < 2:
            raise ConfigError("quadrature order must be >= 2")
        if not self.tau > 0:
            raise ConfigError("tau must be positive")
        self.quad_order = int(quad_order)
        self.lik_subintervals = int(lik_subintervals)
        self.lambda_subintervals = int(lambda_subintervals)
        self.exp_clip = float(exp_clip)
        # diagnostic only: number of node evaluations hitting the exp clip
        self.clip_events = 0

    @property
    def p(self) -> int:
        return self.cov_lo.size

    def scale_inputs(self, t, x) -> np.ndarray:
        t = np.asarray(t, dtype=float).ravel()
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[0] == 1 and t.shape[0] > 1:
            x = np.broadcast_to(x, (t.shape[0], x.shape[1]))
        if x.shape[0] != t.shape[0]:
            raise ShapeError("t and x batches disagree")
        if x.shape[1] != self.p:
            raise ShapeError(f"{x.shape[1]} covariates, model expects {self.p}")
        span = np.where(self.cov_hi > self.cov_lo, self.cov_hi - self.cov_lo, 1.0)
        xs = (x - self.cov_lo) / span
        return np.column_stack([t / self.tau, xs])

    def log_hazard(self, t, x) -> np.ndarray:
        """g(t, x) on raw-unit inputs; t is (m,), x is (m,p) or a single (p,) row."""
        return nn.forward_batch(self.net, self.scale_inputs(t, x))

    def cum_hazard(self, t: float, x) -> float:
        return cum_hazard(self, t, x)

    def survival(self, t: float, x) -> float:
        return survival(self, t, x)

    def to_dict(self) -> dict:
        return {
            "format": "survnn-hazard-v1",
            "net": self.net.to_dict(),
            "tau": self.tau,
            "cov_lo": self.cov_lo.tolist(),
            "cov_hi": self.cov_hi.tolist(),
            "quad_order": self.quad_order,
            "lik_subintervals": self.lik_subintervals,
            "lambda_subintervals": self.lambda_subintervals,
            "exp_clip": self.exp_clip,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FittedHazard":
        return cls(
            nn.MlpNetwork.from_dict(doc["net"]),
            doc["tau"],
            doc["cov_lo"],
            doc["cov_hi"],
            quad_order=doc["quad_order"],
            lik_subintervals=doc["lik_subintervals"],
            lambda_subintervals=doc["lambda_subintervals"],
            exp_clip=doc["exp_clip"],
        )

    def save_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load_json(cls, path) -> "FittedHazard":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _settings_for(g):
    """(tau, order, K_lik, K_lambda, clip) for a model or plain callable."""
    if isinstance(g, FittedHazard):
        return (g.tau, g.quad_order, g.lik_subintervals, g.lambda_subintervals, g.exp_clip)
    return (None, DEFAULT_QUAD_ORDER, DEFAULT_LIK_SUBINT, DEFAULT_LAMBDA_SUBINT, DEFAULT_EXP_CLIP)


def log_likelihood(g, z: Subject, quad_order: int | None = None,
                   subintervals: int | None = None) -> float:
    """Censored log-likelihood of one subject under log-hazard g."""
    if z.y < 0:
        raise DomainError("follow-up time must be nonnegative")
    tau, order, K, _, clip = _settings_for(g)
    order = quad_order or order
    if order < 2:
        raise ConfigError("quadrature order must be >= 2")
    K = subintervals or K
    g_fn = as_log_hazard(g)
    times, weights = composite_nodes(z.y, K, order)
    gx = g_fn(times.ravel(), np.broadcast_to(z.x, (times.size, z.x.size)))
    integral = float(np.dot(weights.ravel(), np.exp(np.minimum(gx, clip))))
    event = float(g_fn(np.array([z.y]), z.x[None, :])[0]) if z.delta else 0.0
    return z.delta * event - integral


class LikelihoodEvaluator:
    """Precompiled workspace for repeated likelihood/gradient evaluation.

    The quadrature node layout over [0, Y_i] depends only on the data, so the
    scaled input matrix and node weights are built once; each call is then a
    single batched forward (and optional backward) pass.
    """

    def __init__(self, data: Dataset, tau: float, cov_lo, cov_hi,
                 quad_order: int = DEFAULT_QUAD_ORDER,
                 subintervals: int = DEFAULT_LIK_SUBINT,
                 exp_clip: float = DEFAULT_EXP_CLIP):
        if len(data) == 0:
            raise DataError("empty batch")
        m = len(data)
        self.m = m
        self.delta = data.delta.astype(float)
        self.exp_clip = float(exp_clip)
        self.clip_events = 0
        times, weights = composite_nodes(data.y, subintervals, quad_order)
        self.n_nodes = times.shape[1]
        span = np.where(np.asarray(cov_hi) > np.asarray(cov_lo),
                        np.asarray(cov_hi, dtype=float) - np.asarray(cov_lo, dtype=float), 1.0)
        xs = (data.x - np.asarray(cov_lo, dtype=float)) / span
        event_rows = np.column_stack([data.y / tau, xs])
        node_rows = np.column_stack([
            times.ravel() / tau,
            np.repeat(xs, self.n_nodes, axis=0),
        ])
        self.inputs = np.vstack([event_rows, node_rows])
        self.node_weights = weights  # (m, n_nodes), raw time scale

    def loss(self, net: nn.MlpNetwork) -> float:
        return self.loss_and_grad(net, with_grad=False)[0]

    def mean_loglik(self, net: nn.MlpNetwork) -> float:
        return -self.loss(net)

    def _rows_for(self, subject_indices):
        idx = np.asarray(subject_indices, dtype=np.int64)
        node_rows = self.m + (idx[:, None] * self.n_nodes + np.arange(self.n_nodes)).ravel()
        return np.concatenate([idx, node_rows]), idx

    def loss_and_grad(self, net: nn.MlpNetwork, with_grad: bool = True,
                      subject_indices=None):
        """Negative mean log-likelihood (over the selected subjects) and gradients."""
        if subject_indices is None:
            inputs, delta, node_w, m = self.inputs, self.delta, self.node_weights, self.m
        else:
            rows, idx = self._rows_for(subject_indices)
            inputs = self.inputs[rows]
            delta = self.delta[idx]
            node_w = self.node_weights[idx]
            m = idx.shape[0]
        if with_grad:
            out, _, acts = nn._forward_cached(net, inputs)
        else:
            out = nn.forward_batch(net, inputs)
            acts = None
        g_event = out[:m]
        g_nodes = out[m:].reshape(m, self.n_nodes)
        self.clip_events += int((g_nodes > self.exp_clip).sum())
        eg = np.exp(np.minimum(g_nodes, self.exp_clip))
        integrals = np.einsum("ij,ij->i", node_w, eg)
        loss = float(np.mean(integrals - delta * g_event))
        if not np.isfinite(loss):
            raise OptimizationError(
                "non-finite censored log-likelihood (exp overflow); lower the learning rate")
        if not with_grad:
            return loss, None
        cot = np.concatenate([-delta / m, (node_w * eg).ravel() / m])
        # reuse the cached activations instead of a second forward pass
        c = cot
        if net.output_bound is not None:
            c = c * (1.0 - (out / net.output_bound) ** 2)
        grads = [None] * len(net.weights)
        bp = c[:, None]
        for l in range(len(net.weights) - 1, -1, -1):
            grads[l] = (bp.T @ acts[l], bp.sum(axis=0))
            if l > 0:
                bp = (bp @ net.weights[l]) * (acts[l] > 0)
        return loss, grads


def neg_loglik_and_grad(fh: FittedHazard, batch: Dataset):
    """Negative mean log-likelihood over a batch and gradients w.r.t. fh.net."""
    ev = LikelihoodEvaluator(batch, fh.tau, fh.cov_lo, fh.cov_hi,
                             fh.quad_order, fh.lik_subintervals, fh.exp_clip)
    loss, grads = ev.loss_and_grad(fh.net)
    fh.clip_events += ev.clip_events
    return loss, grads


def batched_cum_hazard(g, t, x, tau: float | None = None, quad_order: int = DEFAULT_QUAD_ORDER,
                       max_subintervals: int = DEFAULT_LAMBDA_SUBINT,
                       exp_clip: float = DEFAULT_EXP_CLIP) -> np.ndarray:
    """Lambda(t_i | x_i) for a batch of (t, x) pairs via composite quadrature.

    The subinterval count K_i = ceil(t_i/tau * max_subintervals) adapts to the
    evaluation point; rows are grouped by K so each group is one batched
    forward pass.
    """
    g_fn = as_log_hazard(g)
    fh_tau, order, _, max_k, clip = _settings_for(g)
    if isinstance(g, FittedHazard):
        quad_order, max_subintervals, exp_clip = order, max_k, clip
    if tau is None:
        tau = fh_tau
    t = np.asarray(t, dtype=float).ravel()
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[0] == 1 and t.shape[0] > 1:
        x = np.broadcast_to(x, (t.shape[0], x.shape[1]))
    if tau is None:
        tau = float(t.max()) if t.size and t.max() > 0 else 1.0
    if t.size and t.min() < -1e-12:
        raise DomainError("cumulative hazard requested at negative time")
    if t.size and t.max() > tau * (1 + 1e-9):
        raise DomainError(f"cumulative hazard requested beyond the horizon tau={tau}")
    out = np.zeros(t.shape[0])
    ks = np.clip(np.ceil(t / tau * max_subintervals).astype(int), 1, max_subintervals)
    for k in np.unique(ks):
        sel = np.flatnonzero(ks == k)
        times, weights = composite_nodes(t[sel], int(k), quad_order)
        flat_t = times.ravel()
        flat_x = np.repeat(x[sel], times.shape[1], axis=0)
        gx = g_fn(flat_t, flat_x).reshape(times.shape)
        out[sel] = np.einsum("ij,ij->i", weights, np.exp(np.minimum(gx, exp_clip)))
    return out


def cum_hazard(fh, t: float, x) -> float:
    """Lambda(t|x) = integral_0^t exp{g(s,x)} ds; nondecreasing in t."""
    val = batched_cum_hazard(fh, np.array([t]), np.atleast_2d(np.asarray(x, dtype=float)))
    return float(val[0])


def survival(fh, t: float, x) -> float:
    """S(t|x) = exp(-Lambda(t|x)), in (0, 1]."""
    return math.exp(-cum_hazard(fh, t, x))


def chf_discrepancy(truth, estimate, data: Dataset) -> float:
    """Mean absolute error between two conditional CHFs at observed event times.

    truth and estimate are callables (t_batch, x_batch) -> Lambda values; only
    subjects with delta = 1 contribute.
    """
    events = np.flatnonzero(data.delta == 1)
    if events.size == 0:
        raise MetricUndefinedError("CHF discrepancy needs at least one event")
    t = data.y[events]
    x = data.x[events]
    return float(np.mean(np.abs(truth(t, x) - estimate(t, x))))
