"""Noise generation, closed-loop simulation and cost/regret/safety metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .ltv_model import CostOperator, LtvSystem, NoiseBounds, SafetySpec
from .sls_core import ControlGains, ResponseMatrix

STOCHASTIC_KINDS = ("gaussian", "uniform", "gamma", "exponential", "bernoulli", "weibull", "poisson")
WORST_CASE = "worst-case"
NOISE_KINDS = STOCHASTIC_KINDS + (WORST_CASE,)

# Parameters are relative to each coordinate's box bound b.
DEFAULT_PARAMS = {
    "gaussian": {"sigma": 1 / 3},
    "uniform": {},
    "gamma": {"shape": 2.0, "scale": 1 / 4},
    "exponential": {"rate": 2.0},
    "bernoulli": {"p": 0.5},
    "weibull": {"shape": 1.5, "scale": 1 / 2},
    "poisson": {"lam": 1.0, "scale": 1 / 3},
    "worst-case": {},
}


@dataclass(frozen=True)
class NoiseModel:
    kind: str
    seed: int = 0
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}; expected one of {NOISE_KINDS}")
        merged = {**DEFAULT_PARAMS[self.kind], **dict(self.params)}
        for key, val in merged.items():
            if key == "p":
                if not 0.0 < val < 1.0:
                    raise ValueError(f"{self.kind}: p must lie in (0, 1), got {val}")
            elif not val > 0:
                raise ValueError(f"{self.kind}: parameter {key} must be positive, got {val}")
        object.__setattr__(self, "params", merged)


@dataclass(frozen=True)
class NoiseRealization:
    w: np.ndarray
    e: np.ndarray
    model: NoiseModel
    predicted_regret: Optional[float] = None

    @property
    def stacked(self) -> np.ndarray:
        return np.concatenate([self.w, self.e])


@dataclass(frozen=True)
class RolloutResult:
    x: np.ndarray
    u: np.ndarray
    y: np.ndarray
    cost: float
    safety_margin: float


def circumscribed_radius(bounds: NoiseBounds) -> float:
    """Radius of the smallest origin-centred ball containing the noise box (its corner norm)."""
    return float(np.linalg.norm(bounds.box))


def _centered_draw(kind: str, params, b: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = b.size
    if kind == "gaussian":
        return rng.normal(0.0, params["sigma"] * b, n)
    if kind == "uniform":
        return rng.uniform(-b, b, n)
    if kind == "gamma":
        k, theta = params["shape"], params["scale"] * b
        return rng.gamma(k, theta, n) - k * theta
    if kind == "exponential":
        scale = b / params["rate"]
        return rng.exponential(scale, n) - scale
    if kind == "bernoulli":
        return np.where(rng.random(n) < params["p"], b, -b)
    if kind == "weibull":
        k, lam = params["shape"], params["scale"] * b
        return lam * rng.weibull(k, n) - lam * math.gamma(1.0 + 1.0 / k)
    if kind == "poisson":
        return (rng.poisson(params["lam"], n) - params["lam"]) * params["scale"] * b
    raise ValueError(f"{kind!r} is not a stochastic noise kind")


def sample_noise(model: NoiseModel, bounds: NoiseBounds) -> NoiseRealization:
    """Draw i.i.d. mean-zero coordinates from the model's family, clipped to the box."""
    if model.kind == WORST_CASE:
        raise ValueError("worst-case noise depends on the controller; use worst_case_noise")
    b = bounds.box
    rng = np.random.default_rng(model.seed)
    v = np.clip(_centered_draw(model.kind, model.params, b, rng), -b, b)
    nw = bounds.box_w.size
    return NoiseRealization(v[:nw], v[nw:], model)


def _full_Mc(Mc: np.ndarray, n: int) -> np.ndarray:
    Mc = np.asarray(Mc, dtype=float)
    if Mc.shape == (n, n):
        return Mc
    out = np.zeros((n, n))
    out[: Mc.shape[0], : Mc.shape[1]] = Mc
    return out


def regret_matrix(phi: ResponseMatrix, cost: CostOperator, Mc) -> np.ndarray:
    """``Phi' D Phi - Mc``: its quadratic form in ``[w; e]`` is the realised regret."""
    Phi = phi.full
    M = Phi.T @ cost.D @ Phi - _full_Mc(Mc, Phi.shape[1])
    return 0.5 * (M + M.T)


def worst_case_noise(phi: ResponseMatrix, cost: CostOperator, Mc, bounds: NoiseBounds,
                     seed: int = 0, r: Optional[float] = None) -> NoiseRealization:
    """Top eigenvector of the regret matrix, scaled as far as the noise box allows.

    ``r`` caps the scale; it defaults to the radius of the ball circumscribing the box.
    """
    M = regret_matrix(phi, cost, Mc)
    vals, vecs = np.linalg.eigh(M)
    lam_max, v = vals[-1], vecs[:, -1]
    nw = phi.Pxw.shape[1]
    model = NoiseModel(WORST_CASE, seed)
    if lam_max <= 0:
        n = M.shape[0]
        return NoiseRealization(np.zeros(nw), np.zeros(n - nw), model, 0.0)
    # eigenvector sign is arbitrary; fix it for reproducibility
    if v[np.argmax(np.abs(v))] < 0:
        v = -v
    b = bounds.box
    nz = np.abs(v) > 0
    s = min(circumscribed_radius(bounds) if r is None else float(r), float(np.min(b[nz] / np.abs(v[nz]))))
    z = s * v
    return NoiseRealization(z[:nw], z[nw:], model, float(s * s * lam_max))


def evaluate_cost(x, u, cost: CostOperator) -> float:
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.size != cost.Q.shape[0] or u.size != cost.R.shape[0]:
        raise ValueError("trajectory dimensions do not match the cost weights")
    return float(x @ cost.Q @ x + u @ cost.R @ u)


def rollout(system: LtvSystem, gains: ControlGains, noise: NoiseRealization,
            safety: Optional[SafetySpec], cost: CostOperator) -> RolloutResult:
    """Simulate ``x_{t+1} = A_t x_t + B_t u_t + w_t``, ``u_t = sum_k K_{t,k} y_k`` step by step.

    The first block of ``noise.w`` is the initial state.
    """
    T, dx, du, dy = system.T, system.dx, system.du, system.dy
    w = noise.w.reshape(T, dx)
    e = noise.e.reshape(T, dy)
    x = np.zeros((T, dx))
    u = np.zeros((T, du))
    y = np.zeros((T, dy))
    x[0] = w[0]
    for t in range(T):
        y[t] = system.C[t] @ x[t] + e[t]
        for k in range(t + 1):
            u[t] += gains.block(t, k) @ y[k]
        if t + 1 < T:
            x[t + 1] = system.A[t] @ x[t] + system.B[t] @ u[t] + w[t + 1]
    xs, us = x.ravel(), u.ravel()
    margin = safety_margin(xs, us, safety)
    return RolloutResult(xs, us, y.ravel(), evaluate_cost(xs, us, cost), margin)


def safety_margin(x, u, safety: Optional[SafetySpec]) -> float:
    if safety is None:
        return float("inf")
    return float(np.min(safety.h - safety.H @ np.concatenate([x, u])))


def clairvoyant_cost(w, Mc) -> float:
    w = np.asarray(w, dtype=float)
    return float(w @ Mc @ w)


def evaluate_regret(realized_cost: float, w, Mc) -> float:
    """Realised cost minus the clairvoyant optimum ``w' Mc w`` (which ignores e)."""
    return float(realized_cost) - clairvoyant_cost(w, Mc)


def worst_case_regret_value(phi: ResponseMatrix, cost: CostOperator, Mc, r: float) -> float:
    """``r^2 max(0, lambda_max(Phi' D Phi - Mc))``: worst regret over the radius-r ball."""
    lam = float(np.linalg.eigvalsh(regret_matrix(phi, cost, Mc))[-1])
    return r * r * max(0.0, lam)


def verify_safety_exact(phi: ResponseMatrix, safety: SafetySpec, bounds: NoiseBounds) -> np.ndarray:
    """Per-row slack ``h_i - max_{box} (H Phi)_i [w; e]``; all nonnegative iff robustly safe."""
    if not bounds.is_box:
        raise NotImplementedError("exact safety verification supports symmetric box noise only")
    HPhi = safety.H @ phi.full
    return safety.h - np.abs(HPhi) @ bounds.box
