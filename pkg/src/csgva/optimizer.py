"""Stochastic gradient ascent of the lower bound with Adam steps.

Each iteration draws fresh standard normal vectors, forms the path gradient
(one draw) or the doubly reparametrized gradient (K draws), and takes a
bias-corrected Adam step.  Per-iteration bound estimates are averaged over
non-overlapping windows; once enough window averages exist, an ordinary
least squares line is fitted to the most recent ones and the run stops when
its slope turns negative.  Importance weighted refits skip the slope test
and run a fixed short budget instead.

Evaluations that blow up (singular factor, non-finite bound or gradient)
reject the draw without touching the Adam state; a long streak of
consecutive rejections aborts the fit with the partial report attached.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import bounds
from .exceptions import EvaluationError, FitDivergedError
from .family import VariationalParams

__all__ = [
    "AdamState",
    "FitConfig",
    "FitReport",
    "adam_step",
    "convergence_check",
    "fit",
    "estimate_bound",
]

MAX_CONSECUTIVE_REJECTIONS = 100

# rng substream tags: training draws, bound estimation, posterior sampling,
# informative-initialization pre-fit
RNG_FIT, RNG_BOUND, RNG_POSTERIOR, RNG_INIT = 0, 1, 2, 3


@dataclass
class AdamState:
    """Exponential moving moments with bias correction."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    step_size: float = 0.001
    tau1: float = 0.9
    tau2: float = 0.99
    eps: float = 1e-8

    @classmethod
    def zeros(cls, size: int, **kw) -> "AdamState":
        return cls(m=np.zeros(size), v=np.zeros(size), **kw)


def adam_step(state: AdamState, grad: np.ndarray) -> np.ndarray:
    """Advance the moments by one gradient and return the ascent update.

    Mutates ``state`` in place; the returned update is
    step_size * mhat / (sqrt(vhat) + eps).
    """
    state.t += 1
    state.m = state.tau1 * state.m + (1.0 - state.tau1) * grad
    state.v = state.tau2 * state.v + (1.0 - state.tau2) * grad * grad
    mhat = state.m / (1.0 - state.tau1 ** state.t)
    vhat = state.v / (1.0 - state.tau2 ** state.t)
    return state.step_size * mhat / (np.sqrt(vhat) + state.eps)


def convergence_check(window_averages, kappa: int = 6) -> bool:
    """True once the OLS slope over the last ``kappa`` window averages is negative."""
    if len(window_averages) < kappa:
        return False
    y = np.asarray(window_averages[-kappa:], dtype=np.float64)
    x = np.arange(1.0, kappa + 1.0)
    xc = x - x.mean()
    slope = float(xc @ (y - y.mean())) / float(xc @ xc)
    return slope < 0.0


@dataclass
class FitConfig:
    """Hyperparameters of one optimization run."""

    method: str = "csgva"  # gva | csgva | iw
    K: int = 1
    max_iters: int = 100_000
    stop_window: int = 1000
    kappa: int = 6
    seed: int = 0
    init: str = "zero"  # zero | from_gva | from_file
    iw_iters: int = 1000
    step_size: float = 0.001
    tau1: float = 0.9
    tau2: float = 0.99
    eps: float = 1e-8
    freeze_F: bool = False

    def __post_init__(self):
        if self.method not in ("gva", "csgva", "iw"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.method == "iw" and self.K < 2:
            raise ValueError("importance weighted fits need K >= 2")
        if self.kappa < 2:
            raise ValueError("kappa must be at least 2")

    def to_dict(self) -> dict:
        return {
            "method": self.method, "K": self.K, "max_iters": self.max_iters,
            "stop_window": self.stop_window, "kappa": self.kappa, "seed": self.seed,
            "init": self.init, "iw_iters": self.iw_iters, "step_size": self.step_size,
            "tau1": self.tau1, "tau2": self.tau2, "eps": self.eps,
        }


@dataclass
class FitReport:
    """Everything a finished (or aborted) run produced."""

    lam: VariationalParams
    bound_trace: np.ndarray
    window_means: np.ndarray
    iterations: int
    stop_reason: str  # slope | max_iters | error
    wall_time_s: float = 0.0
    config: FitConfig | None = None

    def to_dict(self) -> dict:
        # wall time deliberately left out: reruns must be byte-identical
        out = {
            "lambda": self.lam.to_dict(),
            "iterations": self.iterations,
            "stop_reason": self.stop_reason,
            "window_means": np.asarray(self.window_means).tolist(),
            "bound_trace": np.asarray(self.bound_trace).tolist(),
        }
        if self.config is not None:
            out["fit_config"] = self.config.to_dict()
        return out


def _gradient_estimate(lam, model, samples, K, map_fn):
    if K == 1:
        return bounds.path_gradient(lam, model, samples[0])
    return bounds.dreg_gradient(lam, model, samples, map_fn=map_fn)


def fit(model, lam0: VariationalParams, config: FitConfig, threads: int = 1,
        rng_stream: int = RNG_FIT) -> FitReport:
    """Run the ascent from ``lam0`` until the stopping rule fires.

    ``threads`` only parallelizes the K per-draw evaluations inside one
    iteration; results are combined in draw order, so the trajectory is
    identical for any thread count.  ``rng_stream`` selects the substream of
    the seed (an informative-initialization pre-fit uses its own).
    """
    rng = np.random.default_rng([config.seed, rng_stream])
    lam = lam0.copy()
    layout = lam.layout
    dim = layout.G + layout.nL
    K = config.K if config.method == "iw" else 1
    freeze = config.freeze_F or lam.gaussian_mode or config.method == "gva"

    adam = AdamState.zeros(layout.size, step_size=config.step_size,
                           tau1=config.tau1, tau2=config.tau2, eps=config.eps)
    limit = config.iw_iters if config.method == "iw" else config.max_iters
    use_slope = config.method != "iw"

    trace: list = []
    window_means: list = []
    rejections = 0
    stop_reason = "max_iters"
    started = time.perf_counter()

    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 and K > 1 else None
    map_fn = pool.map if pool is not None else map
    try:
        t = 0
        while t < limit:
            samples = rng.standard_normal((K, dim))
            try:
                est = _gradient_estimate(lam, model, samples, K, map_fn)
                ok = np.isfinite(est.bound) and np.all(np.isfinite(est.grad))
            except EvaluationError:
                ok = False
            if not ok:
                rejections += 1
                if rejections >= MAX_CONSECUTIVE_REJECTIONS:
                    partial = FitReport(lam, np.asarray(trace), np.asarray(window_means),
                                        t, "error", time.perf_counter() - started, config)
                    raise FitDivergedError(
                        f"{rejections} consecutive rejected steps at iteration {t}", partial)
                continue
            rejections = 0

            grad = est.grad
            if freeze:
                grad = grad.copy()
                grad[layout.F_slice] = 0.0
            lam.data += adam_step(adam, grad)
            trace.append(est.bound)
            t += 1

            if t % config.stop_window == 0:
                window_means.append(float(np.mean(trace[-config.stop_window:])))
                if use_slope and convergence_check(window_means, config.kappa):
                    stop_reason = "slope"
                    break
    finally:
        if pool is not None:
            pool.shutdown()

    return FitReport(lam, np.asarray(trace), np.asarray(window_means), t,
                     stop_reason, time.perf_counter() - started, config)


def estimate_bound(lam, model, method: str, K: int = 1, reps: int = 1000,
                   seed: int = 0, threads: int = 1):
    """Mean and standard deviation of the bound over fresh replications.

    Plain methods average one-draw bound estimates; the importance weighted
    method averages K-draw bound estimates.  Randomness is a dedicated
    substream, independent of the training draws.
    """
    rng = np.random.default_rng([seed, RNG_BOUND])
    dim = lam.layout.G + lam.layout.nL
    K = K if method == "iw" else 1
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 and K > 1 else None
    map_fn = pool.map if pool is not None else map
    try:
        vals = np.empty(reps)
        for r in range(reps):
            samples = rng.standard_normal((K, dim))
            if K == 1:
                vals[r] = bounds.elbo_estimate(lam, model, samples[0])
            else:
                vals[r] = bounds.iwlb_estimate(lam, model, samples, map_fn=map_fn)
    finally:
        if pool is not None:
            pool.shutdown()
    return float(np.mean(vals)), float(np.std(vals, ddof=1))
