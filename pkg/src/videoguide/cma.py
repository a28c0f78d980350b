"""(mu/mu_w, lambda) CMA-ES with cumulative step-size adaptation and
rank-one plus rank-mu covariance updates.

Constants follow Hansen's canonical defaults (The CMA Evolution Strategy:
A Tutorial, 2016, Table 1). The search runs on coordinates scaled by a
per-coordinate ``sigma0`` so blocks with different units share one
isotropic initial distribution.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError

log = logging.getLogger(__name__)

EIG_FLOOR = 1e-12


@dataclass(frozen=True)
class CmaConfig:
    population: int = 128
    iterations: int = 5
    sigma0: tuple[float, ...] | float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.population < 4:
            raise ConfigurationError("CMA-ES population must be at least 4")
        if self.iterations < 1:
            raise ConfigurationError("CMA-ES needs at least one iteration")

    def scales(self, dim: int) -> np.ndarray:
        s = np.broadcast_to(np.asarray(self.sigma0, dtype=np.float64), (dim,)).copy()
        if np.any(s <= 0) or not np.all(np.isfinite(s)):
            raise ConfigurationError("sigma0 must be positive and finite")
        return s


@dataclass
class CmaState:
    mean: np.ndarray  # in real (unscaled) coordinates
    sigma: float
    C: np.ndarray  # covariance in scaled coordinates
    pc: np.ndarray
    ps: np.ndarray
    scales: np.ndarray
    rng: np.random.Generator
    weights: np.ndarray
    mu_eff: float
    cc: float
    cs: float
    c1: float
    cmu: float
    damps: float
    chi_n: float
    generation: int = 0
    evaluations: int = 0
    best_x: np.ndarray | None = None
    best_f: float = math.inf
    best_history: list = field(default_factory=list)
    repairs: int = 0
    _B: np.ndarray | None = None
    _D: np.ndarray | None = None
    _pending: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return len(self.mean)

    def eig(self):
        if self._B is None:
            vals, vecs = np.linalg.eigh(self.C)
            self._D = np.sqrt(np.maximum(vals, EIG_FLOOR))
            self._B = vecs
        return self._B, self._D


def recombination_weights(lam: int) -> np.ndarray:
    """Positive, strictly decreasing log weights over the best floor(lam/2), summing to 1."""
    mu = lam // 2
    w = math.log((lam + 1) / 2) - np.log(np.arange(1, mu + 1))
    return w / w.sum()


def cma_init(x0: Sequence[float], config: CmaConfig) -> CmaState:
    x0 = np.asarray(x0, dtype=np.float64).copy()
    n = len(x0)
    if n < 1:
        raise ConfigurationError("CMA-ES needs at least one dimension")
    lam = config.population
    w = recombination_weights(lam)
    mu_eff = 1.0 / float(np.sum(w ** 2))
    cc = (4 + mu_eff / n) / (n + 4 + 2 * mu_eff / n)
    cs = (mu_eff + 2) / (n + mu_eff + 5)
    c1 = 2 / ((n + 1.3) ** 2 + mu_eff)
    cmu = min(1 - c1, 2 * (mu_eff - 2 + 1 / mu_eff) / ((n + 2) ** 2 + mu_eff))
    damps = 1 + 2 * max(0.0, math.sqrt((mu_eff - 1) / (n + 1)) - 1) + cs
    chi_n = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n))
    return CmaState(x0, 1.0, np.eye(n), np.zeros(n), np.zeros(n), config.scales(n),
                    np.random.default_rng(config.seed), w, mu_eff, cc, cs, c1, cmu, damps, chi_n)


def cma_ask(state: CmaState, config: CmaConfig) -> np.ndarray:
    """Draw ``config.population`` candidates (rows) in real coordinates."""
    B, D = state.eig()
    z = state.rng.standard_normal((config.population, state.dim))
    y = (z * D) @ B.T
    state._pending = y
    return state.mean + state.sigma * y * state.scales


def cma_tell(state: CmaState, candidates: np.ndarray, costs: Sequence[float]) -> CmaState:
    """Update the distribution from evaluated candidates (in place; also returned).

    Ranking uses a stable sort, so equal costs keep candidate order.
    """
    X = np.asarray(candidates, dtype=np.float64)
    f = np.asarray(costs, dtype=np.float64)
    if X.shape[0] != len(f) or X.shape[1] != state.dim:
        raise ConfigurationError("candidate and cost counts disagree")
    if not np.all(np.isfinite(f)):
        raise ConfigurationError("costs must be finite; map diverged rollouts to a penalty first")
    n = state.dim
    # candidates may have been edited (injected); recover their steps from X
    Y = (X - state.mean) / (state.sigma * state.scales)
    B, D = state.eig()
    c_inv_sqrt = (B / D) @ B.T
    if state._pending is not None and state._pending.shape == Y.shape:
        injected = np.any(X != state.mean + state.sigma * state._pending * state.scales, axis=1)
    else:
        injected = np.ones(len(f), bool)
    if injected.any():
        # Hansen (2011), injecting external solutions: cap the Mahalanobis step length
        cap = math.sqrt(n) + 2 * n / (n + 2)
        norms = np.linalg.norm(Y[injected] @ c_inv_sqrt.T, axis=1)
        Y[injected] *= np.minimum(1.0, cap / np.maximum(norms, 1e-300))[:, None]
    order = np.argsort(f, kind="stable")
    mu = len(state.weights)
    ysel = Y[order[:mu]]
    yw = state.weights @ ysel
    state.evaluations += len(f)
    state.generation += 1
    if f[order[0]] < state.best_f:
        state.best_f = float(f[order[0]])
        state.best_x = X[order[0]].copy()
    state.best_history.append(state.best_f)

    state.mean = state.mean + state.sigma * yw * state.scales
    state.ps = (1 - state.cs) * state.ps + math.sqrt(state.cs * (2 - state.cs) * state.mu_eff) * (c_inv_sqrt @ yw)
    ps_norm = float(np.linalg.norm(state.ps))
    hsig = ps_norm / math.sqrt(1 - (1 - state.cs) ** (2 * state.generation)) / state.chi_n < 1.4 + 2 / (n + 1)
    state.pc = (1 - state.cc) * state.pc + hsig * math.sqrt(state.cc * (2 - state.cc) * state.mu_eff) * yw
    rank_mu = (ysel.T * state.weights) @ ysel
    delta = (1 - hsig) * state.cc * (2 - state.cc)
    state.C = ((1 - state.c1 - state.cmu + state.c1 * delta) * state.C
               + state.c1 * np.outer(state.pc, state.pc) + state.cmu * rank_mu)
    state.C = 0.5 * (state.C + state.C.T)
    state.sigma *= math.exp((state.cs / state.damps) * (ps_norm / state.chi_n - 1))
    vals, vecs = np.linalg.eigh(state.C)
    if vals.min() <= EIG_FLOOR:
        state.repairs += 1
        log.info("covariance lost positive definiteness (min eigenvalue %.3g); flooring", vals.min())
        vals = np.maximum(vals, EIG_FLOOR)
        state.C = (vecs * vals) @ vecs.T
    state._B, state._D = vecs, np.sqrt(vals)
    state._pending = None
    return state


def minimize(fn: Callable[[np.ndarray], float], x0, config: CmaConfig, max_evals: int | None = None,
             inject: Sequence[np.ndarray] = ()) -> CmaState:
    """Plain driver: ``config.iterations`` generations (or until ``max_evals``)."""
    state = cma_init(x0, config)
    gens = config.iterations
    if max_evals is not None:
        gens = max(1, max_evals // config.population)
    for g in range(gens):
        X = cma_ask(state, config)
        if g == 0:
            for i, x in enumerate(inject):
                X[i] = x
        cma_tell(state, X, [fn(x) for x in X])
    return state
