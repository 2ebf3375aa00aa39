"""Time-varying linear systems, cost weights, noise/safety polytopes and the
lifted (stacked-trajectory) operators built from them.

Conventions used throughout the package:

* time is 0-based, ``t = 0, ..., T-1``;
* stacked process noise is ``w = [x0; w_0; ...; w_{T-2}]`` so the first block
  of ``w`` carries the initial state;
* lifted matrices act on trajectories stacked time-major, i.e. block ``t`` of
  ``x`` is ``x[t*dx:(t+1)*dx]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import block_diag


class InvalidHorizonError(ValueError):
    pass


class IndefiniteWeightError(ValueError):
    pass


class InvalidBoundError(ValueError):
    pass


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


def _stack(mats, name: str) -> np.ndarray:
    arr = np.array([np.atleast_2d(np.asarray(m, dtype=float)) for m in mats])
    if arr.ndim != 3:
        raise ValueError(f"{name}: matrices in the sequence have inconsistent shapes")
    return arr


@dataclass(frozen=True)
class LtvSystem:
    """``x_{t+1} = A_t x_t + B_t u_t + w_t``, ``y_t = C_t x_t + e_t``.

    ``A``, ``B`` and ``C`` are stored as read-only arrays of shape
    ``(T, rows, cols)``.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        T = len(self.A)
        if T < 1:
            raise InvalidHorizonError("horizon must be at least 1")
        A = _stack(self.A, "A")
        B = _stack(self.B, "B")
        C = _stack(self.C, "C")
        if len(B) != T or len(C) != T:
            raise ValueError(f"A, B, C must all have length T={T}; got {len(A)}, {len(B)}, {len(C)}")
        dx = A.shape[1]
        if A.shape[2] != dx:
            raise ValueError(f"A_t must be square, got {A.shape[1:]}")
        if B.shape[1] != dx:
            raise ValueError(f"B_t must have {dx} rows, got {B.shape[1]}")
        if C.shape[2] != dx:
            raise ValueError(f"C_t must have {dx} columns, got {C.shape[2]}")
        for name, arr in (("A", A), ("B", B), ("C", C)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")
        object.__setattr__(self, "A", _frozen(A))
        object.__setattr__(self, "B", _frozen(B))
        object.__setattr__(self, "C", _frozen(C))

    @classmethod
    def constant(cls, A, B, C, T: int) -> "LtvSystem":
        if T < 1:
            raise InvalidHorizonError(f"horizon must be at least 1, got {T}")
        return cls([A] * T, [B] * T, [C] * T)

    @property
    def T(self) -> int:
        return self.A.shape[0]

    @property
    def dx(self) -> int:
        return self.A.shape[1]

    @property
    def du(self) -> int:
        return self.B.shape[2]

    @property
    def dy(self) -> int:
        return self.C.shape[1]

    def __eq__(self, other):
        if not isinstance(other, LtvSystem):
            return NotImplemented
        return (
            np.array_equal(self.A, other.A)
            and np.array_equal(self.B, other.B)
            and np.array_equal(self.C, other.C)
        )

    __hash__ = None


@dataclass(frozen=True)
class LiftedSystem:
    calA: np.ndarray
    calB: np.ndarray
    calC: np.ndarray
    ZA: np.ndarray
    ZB: np.ndarray
    T: int
    dx: int
    du: int
    dy: int

    @property
    def nx(self) -> int:
        return self.dx * self.T

    @property
    def nu(self) -> int:
        return self.du * self.T

    @property
    def ny(self) -> int:
        return self.dy * self.T


def downshift(T: int, n: int) -> np.ndarray:
    """Block downshift operator: identity blocks on the first block subdiagonal."""
    return np.kron(np.eye(T, k=-1), np.eye(n))


def lift(system: LtvSystem) -> LiftedSystem:
    T, dx, du = system.T, system.dx, system.du
    A_blocks = list(system.A[: T - 1]) + [np.zeros((dx, dx))]
    B_blocks = list(system.B[: T - 1]) + [np.zeros((dx, du))]
    calA = block_diag(*A_blocks)
    calB = block_diag(*B_blocks)
    calC = block_diag(*system.C)
    Z = downshift(T, dx)
    return LiftedSystem(
        calA=_frozen(calA),
        calB=_frozen(calB),
        calC=_frozen(calC),
        ZA=_frozen(Z @ calA),
        ZB=_frozen(Z @ calB),
        T=T,
        dx=dx,
        du=du,
        dy=system.dy,
    )


@dataclass(frozen=True)
class CostOperator:
    Q: np.ndarray
    R: np.ndarray
    D: np.ndarray = field(repr=False)
    D_sqrt: np.ndarray = field(repr=False)


def _psd_sqrt(M: np.ndarray, name: str) -> np.ndarray:
    vals, vecs = np.linalg.eigh(M)
    if vals.min(initial=0.0) < -1e-10:
        raise IndefiniteWeightError(f"{name} is not positive semidefinite (min eigenvalue {vals.min():.3e})")
    vals = np.clip(vals, 0.0, None)
    S = (vecs * np.sqrt(vals)) @ vecs.T
    return 0.5 * (S + S.T)


def _tile(M, n_step: int, T: int, name: str) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape == (n_step, n_step):
        return np.kron(np.eye(T), M)
    if M.shape == (n_step * T, n_step * T):
        return M
    raise ValueError(f"{name} must be {n_step}x{n_step} per step or {n_step * T}x{n_step * T} lifted, got {M.shape}")


def build_cost(Q_step, R_step, T: int, dx: Optional[int] = None, du: Optional[int] = None) -> CostOperator:
    """Lifted quadratic cost ``x'Qx + u'Ru``.

    ``Q_step``/``R_step`` are either per-step weights (tiled over the horizon)
    or already-lifted matrices. ``dx``/``du`` default to the per-step shape.
    """
    Q_step = np.atleast_2d(np.asarray(Q_step, dtype=float))
    R_step = np.atleast_2d(np.asarray(R_step, dtype=float))
    dx = Q_step.shape[0] if dx is None else dx
    du = R_step.shape[0] if du is None else du
    Q = _tile(Q_step, dx, T, "Q")
    R = _tile(R_step, du, T, "R")
    Q = 0.5 * (Q + Q.T)
    R = 0.5 * (R + R.T)
    if np.linalg.eigvalsh(R).min() <= 0:
        raise IndefiniteWeightError("R must be positive definite")
    Q_sqrt = _psd_sqrt(Q, "Q")
    R_sqrt = _psd_sqrt(R, "R")
    return CostOperator(
        Q=_frozen(Q),
        R=_frozen(R),
        D=_frozen(block_diag(Q, R)),
        D_sqrt=_frozen(block_diag(Q_sqrt, R_sqrt)),
    )


@dataclass(frozen=True)
class SafetySpec:
    """Polytopic constraint ``H [x; u] <= h`` on the stacked trajectories."""

    H: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        h = np.asarray(self.h, dtype=float).ravel()
        if H.shape[0] != h.shape[0]:
            raise ValueError(f"H has {H.shape[0]} rows but h has length {h.shape[0]}")
        if not (np.all(np.isfinite(H)) and np.all(np.isfinite(h))):
            raise ValueError("safety data contains non-finite entries")
        object.__setattr__(self, "H", _frozen(H))
        object.__setattr__(self, "h", _frozen(h))


def _box(bound: np.ndarray):
    n = bound.size
    return np.vstack([np.eye(n), -np.eye(n)]), np.concatenate([bound, bound])


def build_box_safety(x_bound, u_bound, T: int, dx: int, du: int) -> SafetySpec:
    """``|x_t| <= x_bound`` and ``|u_t| <= u_bound`` elementwise for every t."""
    xb = np.broadcast_to(np.asarray(x_bound, dtype=float), (dx,))
    ub = np.broadcast_to(np.asarray(u_bound, dtype=float), (du,))
    H, h = _box(np.concatenate([np.tile(xb, T), np.tile(ub, T)]))
    return SafetySpec(H, h)


@dataclass(frozen=True)
class NoiseBounds:
    Hw: np.ndarray
    hw: np.ndarray
    He: np.ndarray
    he: np.ndarray
    box_w: Optional[np.ndarray] = None
    box_e: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("Hw", "hw", "He", "he", "box_w", "box_e"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, _frozen(val))
        if np.any(self.hw <= 0) or np.any(self.he <= 0):
            raise InvalidBoundError("noise polytopes must contain the origin in their interior")
        for box, Hm, hv in ((self.box_w, self.Hw, self.hw), (self.box_e, self.He, self.he)):
            if box is not None:
                Hb, hb = _box(box)
                if not (np.array_equal(Hb, Hm) and np.array_equal(hb, hv)):
                    raise ValueError("box bound disagrees with its (H, h) description")

    @property
    def is_box(self) -> bool:
        return self.box_w is not None and self.box_e is not None

    @property
    def box(self) -> np.ndarray:
        """Stacked per-coordinate bound of ``[w; e]``."""
        if not self.is_box:
            raise NotImplementedError("only symmetric box noise sets carry per-coordinate bounds")
        return np.concatenate([self.box_w, self.box_e])


def build_box_bounds(bw, be, T: int, dx: Optional[int] = None, dy: Optional[int] = None) -> NoiseBounds:
    """Symmetric boxes ``|w_i| <= bw``, ``|e_i| <= be`` tiled over the horizon.

    ``bw``/``be`` may be scalars (then ``dx``/``dy`` are required) or per-step
    vectors. The first block of ``w`` (the initial state) gets the same box.
    """
    bw = np.atleast_1d(np.asarray(bw, dtype=float))
    be = np.atleast_1d(np.asarray(be, dtype=float))
    if dx is not None:
        bw = np.broadcast_to(bw, (dx,))
    if dy is not None:
        be = np.broadcast_to(be, (dy,))
    if np.any(bw <= 0) or np.any(be <= 0):
        raise InvalidBoundError("noise bounds must be strictly positive")
    box_w = np.tile(bw, T)
    box_e = np.tile(be, T)
    Hw, hw = _box(box_w)
    He, he = _box(box_e)
    return NoiseBounds(Hw, hw, He, he, box_w, box_e)


SYNTHETIC_A = np.array([[0.7, 0.2, 0.0], [0.3, 0.7, -0.1], [0.0, -0.2, 0.8]])
SYNTHETIC_B = np.array([[1.0, 0.2], [2.0, 0.3], [1.5, 0.5]])
SYNTHETIC_C = (
    np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
    np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]),
)


def build_synthetic_system(rho: float, T: int) -> LtvSystem:
    """Three-state, two-input synthetic system scaled by ``rho``.

    The measurement matrix alternates between observing states (1, 2) at
    even t and states (2, 3) at odd t.
    """
    if T < 2:
        raise InvalidHorizonError(f"horizon must be at least 2, got {T}")
    A = rho * SYNTHETIC_A
    return LtvSystem([A] * T, [SYNTHETIC_B] * T, [SYNTHETIC_C[t % 2] for t in range(T)])


def quadrotor_matrices():
    dt = 0.1
    A = np.eye(6)
    A[:3, 3:] = dt * np.eye(3)
    B = np.zeros((6, 3))
    B[0, 0], B[1, 1], B[2, 2] = -0.0491, 0.0491, 0.005
    B[3, 0], B[4, 1], B[5, 2] = -0.981, 0.981, 0.1
    C_gps = np.hstack([np.eye(3), np.zeros((3, 3))])
    C_imu = np.hstack([np.zeros((3, 3)), np.eye(3)])
    return A, B, C_gps, C_imu


def build_quadrotor_system(T: int) -> LtvSystem:
    """Linearised hovering quadrotor (position, velocity; roll, pitch, thrust).

    GPS (position) is measured when ``t % 3 == 0``, IMU (velocity) otherwise.
    """
    if T < 2:
        raise InvalidHorizonError(f"horizon must be at least 2, got {T}")
    A, B, C_gps, C_imu = quadrotor_matrices()
    Cs: Sequence[np.ndarray] = [C_gps if t % 3 == 0 else C_imu for t in range(T)]
    return LtvSystem([A] * T, [B] * T, Cs)
