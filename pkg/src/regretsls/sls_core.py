"""System Level Synthesis algebra for output feedback on a finite horizon.

A causal controller ``u = K y`` and the closed-loop response ``Phi`` mapping
``[w; e]`` to ``[x; u]`` determine each other; this module converts between
the two, measures how far a candidate response is from the achievable affine
subspace, and applies a response to a noise realisation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ltv_model import LiftedSystem, _frozen


class NotAValidResponseError(ValueError):
    pass


def block_upper_max(M: np.ndarray, T: int, row_block: int, col_block: int) -> float:
    """Largest magnitude strictly above the block diagonal (0 when causal)."""
    M = np.asarray(M)
    if M.size == 0:
        return 0.0
    rows = np.arange(M.shape[0]) // row_block
    cols = np.arange(M.shape[1]) // col_block
    upper = cols[None, :] > rows[:, None]
    return float(np.max(np.abs(M[upper]), initial=0.0))


def block_lower_mask(T: int, row_block: int, col_block: int) -> np.ndarray:
    rows = np.arange(T * row_block) // row_block
    cols = np.arange(T * col_block) // col_block
    return cols[None, :] <= rows[:, None]


@dataclass(frozen=True)
class ControlGains:
    """Stacked output-feedback gain ``K`` with blocks ``K[t, k]`` of size du x dy."""

    K: np.ndarray
    T: int
    du: int
    dy: int

    def __post_init__(self):
        K = np.asarray(self.K, dtype=float)
        if K.shape != (self.du * self.T, self.dy * self.T):
            raise ValueError(f"K must be {self.du * self.T}x{self.dy * self.T}, got {K.shape}")
        if block_upper_max(K, self.T, self.du, self.dy) != 0.0:
            raise ValueError("K is not block-lower-triangular (controller would use future measurements)")
        object.__setattr__(self, "K", _frozen(K))

    def block(self, t: int, k: int) -> np.ndarray:
        return self.K[t * self.du:(t + 1) * self.du, k * self.dy:(k + 1) * self.dy]

    @classmethod
    def zeros(cls, T: int, du: int, dy: int) -> "ControlGains":
        return cls(np.zeros((du * T, dy * T)), T, du, dy)


@dataclass(frozen=True)
class ResponseMatrix:
    Pxw: np.ndarray
    Pxe: np.ndarray
    Puw: np.ndarray
    Pue: np.ndarray
    T: int
    dx: int
    du: int
    dy: int

    def __post_init__(self):
        T, dx, du, dy = self.T, self.dx, self.du, self.dy
        shapes = {
            "Pxw": (dx * T, dx * T),
            "Pxe": (dx * T, dy * T),
            "Puw": (du * T, dx * T),
            "Pue": (du * T, dy * T),
        }
        for name, shape in shapes.items():
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
            object.__setattr__(self, name, _frozen(arr))

    @property
    def full(self) -> np.ndarray:
        return np.block([[self.Pxw, self.Pxe], [self.Puw, self.Pue]])

    @property
    def w_columns(self) -> np.ndarray:
        return np.vstack([self.Pxw, self.Puw])

    @classmethod
    def from_full(cls, Phi: np.ndarray, T: int, dx: int, du: int, dy: int) -> "ResponseMatrix":
        nx, ny = dx * T, dy * T
        return cls(Phi[:nx, :nx], Phi[:nx, nx:nx + ny], Phi[nx:, :nx], Phi[nx:, nx:nx + ny], T, dx, du, dy)


def _block_forward_solve(L: np.ndarray, RHS: np.ndarray, T: int, n: int) -> np.ndarray:
    """Solve ``L X = RHS`` for block-lower-triangular ``L`` with n x n diagonal blocks.

    Block-lower structure in ``RHS`` carries over to ``X`` with exact zeros.
    """
    X = np.zeros_like(RHS, dtype=float)
    for t in range(T):
        rows = slice(t * n, (t + 1) * n)
        acc = RHS[rows] - L[rows, : t * n] @ X[: t * n]
        X[rows] = np.linalg.solve(L[rows, rows], acc)
    return X


def response_from_gains(lifted: LiftedSystem, gains: ControlGains) -> ResponseMatrix:
    T, dx = lifted.T, lifted.dx
    K = gains.K
    # I - ZA - ZB K C is unit block-lower-triangular
    M = np.eye(lifted.nx) - lifted.ZA - lifted.ZB @ K @ lifted.calC
    Pxw = _block_forward_solve(M, np.eye(lifted.nx), T, dx)
    Pxe = Pxw @ lifted.ZB @ K
    Puw = K @ lifted.calC @ Pxw
    Pue = K @ lifted.calC @ Pxe + K
    return ResponseMatrix(Pxw, Pxe, Puw, Pue, T, dx, lifted.du, lifted.dy)


def gains_from_response(phi: ResponseMatrix, tol: float = 1e-6) -> ControlGains:
    """Recover ``K = Pue - Puw Pxw^{-1} Pxe``."""
    T, dx = phi.T, phi.dx
    eye = np.eye(dx)
    for t in range(T):
        blk = phi.Pxw[t * dx:(t + 1) * dx, t * dx:(t + 1) * dx]
        dev = np.max(np.abs(blk - eye))
        if dev > tol:
            raise NotAValidResponseError(f"Pxw diagonal block {t} deviates from identity by {dev:.3e}")
    # Solver noise above the block diagonal is discarded so the recovered K is causal.
    mask_xw = block_lower_mask(T, dx, dx)
    mask_xe = block_lower_mask(T, dx, phi.dy)
    mask_ue = block_lower_mask(T, phi.du, phi.dy)
    mask_uw = block_lower_mask(T, phi.du, dx)
    X = _block_forward_solve(np.where(mask_xw, phi.Pxw, 0.0), np.where(mask_xe, phi.Pxe, 0.0), T, dx)
    K = np.where(mask_ue, phi.Pue, 0.0) - np.where(mask_uw, phi.Puw, 0.0) @ X
    return ControlGains(np.where(mask_ue, K, 0.0), T, phi.du, phi.dy)


def affine_residuals(lifted: LiftedSystem, phi: ResponseMatrix):
    """Residuals of the achievability conditions.

    ``r1 = [I - ZA, -ZB] Phi - [I, 0]`` and ``r2 = Phi [I - ZA; -C] - [I; 0]``.
    """
    nx, nu, ny = lifted.nx, lifted.nu, lifted.ny
    IZA = np.eye(nx) - lifted.ZA
    Phi = phi.full
    left = np.hstack([IZA, -lifted.ZB])
    r1 = left @ Phi - np.hstack([np.eye(nx), np.zeros((nx, ny))])
    right = np.vstack([IZA, -lifted.calC])
    r2 = Phi @ right - np.vstack([np.eye(nx), np.zeros((nu, nx))])
    return r1, r2


def causality_violation(phi: ResponseMatrix) -> float:
    T, dx, du, dy = phi.T, phi.dx, phi.du, phi.dy
    return max(
        block_upper_max(phi.Pxw, T, dx, dx),
        block_upper_max(phi.Pxe, T, dx, dy),
        block_upper_max(phi.Puw, T, du, dx),
        block_upper_max(phi.Pue, T, du, dy),
    )


def apply_response(phi: ResponseMatrix, w, e):
    w = np.asarray(w, dtype=float).ravel()
    e = np.asarray(e, dtype=float).ravel()
    if w.size != phi.Pxw.shape[1] or e.size != phi.Pxe.shape[1]:
        raise ValueError(
            f"noise dimensions ({w.size}, {e.size}) do not match response "
            f"({phi.Pxw.shape[1]}, {phi.Pxe.shape[1]})"
        )
    x = phi.Pxw @ w + phi.Pxe @ e
    u = phi.Puw @ w + phi.Pue @ e
    return x, u
