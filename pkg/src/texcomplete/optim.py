"""ADAM and latent projection of a masked target image."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DivergedLoss, NonFiniteGradient, ShapeMismatch
from .losses import LossWeights, total_loss


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, d, **hyper) -> "AdamState":
        return cls(np.zeros(d), np.zeros(d), 0, **hyper)


def adam_step(state: AdamState, w, grad):
    """One bias-corrected ADAM update. Returns (new_state, new_w)."""
    w = np.asarray(w, dtype=np.float64)
    g = np.asarray(grad, dtype=np.float64)
    if w.shape != g.shape or w.shape != state.m.shape:
        raise ShapeMismatch(f"adam: w {w.shape}, grad {g.shape}, state {state.m.shape}")
    if not np.all(np.isfinite(g)):
        raise NonFiniteGradient("gradient contains NaN or Inf")
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * (g * g)
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_w = w - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return replace(state, m=m, v=v, step=t), new_w


@dataclass(frozen=True)
class OptimOptions:
    lr: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_iters: int = 400
    rel_tol: float = 1e-5
    window: int = 20
    diverge_at: float = 1e6


@dataclass
class ProjectionResult:
    latent: np.ndarray
    final_image: np.ndarray
    trace: list  # raw total loss per evaluated iterate
    iterations_run: int
    converged: bool
    term_trace: list = field(default_factory=list, repr=False)
    best_total: float = float("nan")

    @property
    def best_trace(self) -> np.ndarray:
        return np.minimum.accumulate(np.asarray(self.trace)) if self.trace else np.zeros(0)


def project(target, mask, lm_target, input_feat, plugins, weights: LossWeights, opts: OptimOptions = OptimOptions(), init=None):
    """Fit a latent whose generated image matches ``target`` under ``mask``.

    Starts from ``plugins.encoder(target)`` unless ``init`` is given, runs
    ADAM on the weighted loss and returns the best latent seen. Stops early
    once the best loss improved by less than ``rel_tol`` (relative) over the
    last ``window`` iterations.
    """
    W = np.array(plugins.encoder(target) if init is None else init, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    target_feat = plugins.perceptual.forward(target)
    state = AdamState.fresh(W.shape[0], lr=opts.lr, beta1=opts.beta1, beta2=opts.beta2, eps=opts.eps)
    best_w, best = W.copy(), np.inf
    trace, terms, best_hist = [], [], []
    converged = False
    for it in range(opts.max_iters):
        rep = total_loss(W, target, mask, lm_target, input_feat, plugins, weights, target_feat)
        if not np.isfinite(rep.total) or rep.total > opts.diverge_at:
            raise DivergedLoss(f"total loss {rep.total:g} at iteration {it}")
        trace.append(rep.total)
        terms.append(rep.per_term)
        if rep.total < best:
            best, best_w = rep.total, W.copy()
        best_hist.append(best)
        if it >= opts.window:
            ref = best_hist[it - opts.window]
            if ref - best <= opts.rel_tol * abs(ref):
                converged = True
                break
        state, W = adam_step(state, W, rep.grad_latent)
    return ProjectionResult(
        latent=best_w,
        final_image=plugins.generator.forward(best_w),
        trace=trace,
        iterations_run=len(trace),
        converged=converged,
        term_trace=terms,
        best_total=float(best) if trace else float("nan"),
    )
