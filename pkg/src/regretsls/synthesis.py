"""Controller synthesis over closed-loop responses.

Four controllers are produced on a common footing:

* the clairvoyant (noncausal) benchmark, from an equality-constrained least
  squares problem solved in closed form;
* the safe regret-optimal controller, minimising the worst-case dynamic
  regret against that benchmark subject to robust polytopic safety;
* safe H2 and safe H-infinity baselines over the same achievable, causal and
  safe set of responses.

Robust safety ``H Phi [w; e] <= h`` for all noise in the polytopes is
enforced through a nonnegative multiplier matrix ``Z`` (LP duality row by row).
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Dict, Optional

import cvxpy as cp
import numpy as np
from scipy.linalg import block_diag

from . import conic
from .ltv_model import CostOperator, LiftedSystem, NoiseBounds, SafetySpec, _frozen
from .sls_core import ControlGains, ResponseMatrix, block_lower_mask, gains_from_response


@dataclass(frozen=True)
class ClairvoyantResponse:
    """Noncausal optimum; only the w-columns are nonzero.

    ``Mc`` is the w-block of ``Phi_c' D Phi_c`` so that ``w' Mc w`` is the
    clairvoyant cost for process noise ``w``.
    """

    Pxw: np.ndarray
    Puw: np.ndarray
    Mc: np.ndarray

    def as_response(self, lifted: LiftedSystem) -> ResponseMatrix:
        return ResponseMatrix(
            self.Pxw,
            np.zeros((lifted.nx, lifted.ny)),
            self.Puw,
            np.zeros((lifted.nu, lifted.ny)),
            lifted.T, lifted.dx, lifted.du, lifted.dy,
        )

    def full_Mc(self, ny: int) -> np.ndarray:
        """``Mc`` padded with zero e-rows/columns to act on ``[w; e]``."""
        return block_diag(self.Mc, np.zeros((ny, ny)))

    @property
    def objective(self) -> float:
        return float(np.trace(self.Mc))


@dataclass
class SynthesisResult:
    controller: str
    status: str
    phi: Optional[ResponseMatrix] = None
    gains: Optional[ControlGains] = None
    lam: Optional[float] = None
    gamma: Optional[float] = None
    duals_Z: Optional[np.ndarray] = None
    objective: float = float("nan")
    solve_time: float = 0.0
    residuals: Optional[Dict[str, float]] = None

    @property
    def optimal(self) -> bool:
        return self.status == conic.OPTIMAL


def solve_clairvoyant(lifted: LiftedSystem, cost: CostOperator) -> ClairvoyantResponse:
    """Minimise ``||D^{1/2} Phi||_F^2`` s.t. ``[I - ZA, -ZB] Phi = [I, 0]`` with no causality.

    Every column is an independent equality-constrained least-squares
    problem; all are solved at once through the KKT system
    ``[[2D, E'], [E, 0]] [phi; nu] = [0; I]``.
    """
    nx, nu = lifted.nx, lifted.nu
    E = np.hstack([np.eye(nx) - lifted.ZA, -lifted.ZB])
    n = nx + nu
    kkt = np.block([[2.0 * cost.D, E.T], [E, np.zeros((nx, nx))]])
    rhs = np.vstack([np.zeros((n, nx)), np.eye(nx)])
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError(f"clairvoyant KKT system is singular: {exc}") from exc
    Phi_w = sol[:n]
    Mc = Phi_w.T @ cost.D @ Phi_w
    Mc = 0.5 * (Mc + Mc.T)
    return ClairvoyantResponse(_frozen(Phi_w[:nx]), _frozen(Phi_w[nx:]), _frozen(Mc))


def _declare_response(prog: conic.ConicProgram, lifted: LiftedSystem) -> cp.Expression:
    T, dx, du, dy = lifted.T, lifted.dx, lifted.du, lifted.dy
    lbt = "lower-block-triangular"
    Pxw = prog.add_variable("Pxw", (dx * T, dx * T), lbt, (dx, dx))
    Pxe = prog.add_variable("Pxe", (dx * T, dy * T), lbt, (dx, dy))
    Puw = prog.add_variable("Puw", (du * T, dx * T), lbt, (du, dx))
    Pue = prog.add_variable("Pue", (du * T, dy * T), lbt, (du, dy))
    return cp.bmat([[Pxw, Pxe], [Puw, Pue]])


def _response_mask(lifted: LiftedSystem, rows: str, cols: str) -> np.ndarray:
    dims = {"x": lifted.dx, "u": lifted.du, "y": lifted.dy}
    blocks = [[block_lower_mask(lifted.T, dims[r], dims[c]) for c in cols] for r in rows]
    return np.block(blocks)


def _masked(expr, mask: np.ndarray):
    # entries outside the mask vanish identically for block-lower-triangular Phi;
    # emitting them would only add rank-deficient 0 = 0 rows
    idx = np.flatnonzero(mask.ravel(order="F"))
    return cp.vec(expr, order="F")[idx]


def achievability_constraints(prog: conic.ConicProgram, lifted: LiftedSystem, Phi) -> None:
    """``[I - ZA, -ZB] Phi = [I, 0]`` and ``Phi [I - ZA; -C] = [I; 0]``.

    For block-lower-triangular ``Phi`` the x-rows of the right-hand condition,
    ``Pxw (I - ZA) - Pxe C = I``, follow from the other three block equations
    (``Pxe = F ZB Pue``, ``Puw = Pue C F``, ``Pxw = F + F ZB Puw`` with
    ``F = (I - ZA)^{-1}``). Emitting them makes the equality system rank
    deficient and stalls interior-point solvers, so only the u-rows are
    passed; :func:`regretsls.sls_core.affine_residuals` checks both after
    the solve.
    """
    nx, ny = lifted.nx, lifted.ny
    IZA = np.eye(nx) - lifted.ZA
    left = np.hstack([IZA, -lifted.ZB])
    r1 = left @ Phi - np.hstack([np.eye(nx), np.zeros((nx, ny))])
    r2_u = Phi[nx:, :] @ np.vstack([IZA, -lifted.calC])
    prog.add_equality(_masked(r1, _response_mask(lifted, "x", "xy")), "achievable-left")
    prog.add_equality(_masked(r2_u, _response_mask(lifted, "u", "x")), "achievable-right-u")


def dualize_safety(prog: conic.ConicProgram, safety: SafetySpec, bounds: NoiseBounds, Phi,
                   name: str = "Z") -> cp.Expression:
    """Robust ``H Phi [w; e] <= h`` over the noise polytopes via multipliers ``Z >= 0``.

    Emits ``Z'[hw; he] <= h``, ``H Phi = Z' blkdiag(Hw, He)`` and ``Z >= 0``;
    returns the ``Z`` expression, shape ``(rows(Hw) + rows(He), rows(H))``.
    """
    H_noise = block_diag(bounds.Hw, bounds.He)
    h_noise = np.concatenate([bounds.hw, bounds.he])
    m = safety.H.shape[0]
    if safety.H.shape[1] != Phi.shape[0]:
        raise ValueError(f"H has {safety.H.shape[1]} columns but Phi has {Phi.shape[0]} rows")
    if H_noise.shape[1] != Phi.shape[1]:
        raise ValueError(f"noise polytope dimension {H_noise.shape[1]} != Phi columns {Phi.shape[1]}")
    Z = prog.add_variable(name, (H_noise.shape[0], m))
    prog.add_inequality(safety.h - Z.T @ h_noise, "safety-budget")
    prog.add_equality(safety.H @ Phi - Z.T @ H_noise, "safety-match")
    prog.add_inequality(Z, "safety-dual-nonneg")
    return Z


def regret_lmi(prog: conic.ConicProgram, D_sqrt, Phi, Mc_full, lam) -> None:
    """``lam >= 0`` and ``[[I, D^{1/2} Phi], [Phi' D^{1/2}, lam I + Mc]] >= 0``.

    By a Schur complement this is ``lam I >= Phi' D Phi - Mc``.
    """
    Phi = conic._as_expr(Phi)
    n_out, n_in = Phi.shape
    top = D_sqrt @ Phi
    lmi = cp.bmat([
        [np.eye(n_out), top],
        [top.T, lam * np.eye(n_in) + Mc_full],
    ])
    prog.add_inequality(lam, "lambda-positive")
    prog.add_psd(lmi, "regret-lmi")


def _base_program(lifted, safety, bounds):
    prog = conic.ConicProgram()
    Phi = _declare_response(prog, lifted)
    achievability_constraints(prog, lifted, Phi)
    if safety is not None:
        if bounds is None:
            raise ValueError("safety constraints need noise bounds")
        dualize_safety(prog, safety, bounds, Phi)
    return prog, Phi


def _finish(controller, prog, sol: conic.ConicSolution, lifted, t0, **extra) -> SynthesisResult:
    elapsed = time.perf_counter() - t0
    if not sol.optimal:
        return SynthesisResult(controller, sol.status, solve_time=elapsed)
    v = sol.values
    phi = ResponseMatrix(v["Pxw"], v["Pxe"], v["Puw"], v["Pue"], lifted.T, lifted.dx, lifted.du, lifted.dy)
    gains = gains_from_response(phi)
    kw = {k: (float(sol.values[name]) if name in sol.values else None) for k, name in extra.items()}
    return SynthesisResult(
        controller,
        sol.status,
        phi=phi,
        gains=gains,
        duals_Z=v.get("Z"),
        objective=sol.objective_value,
        solve_time=elapsed,
        residuals=sol.residuals,
        **kw,
    )


def solve_regret_optimal(lifted: LiftedSystem, cost: CostOperator, safety: Optional[SafetySpec],
                         bounds: Optional[NoiseBounds], clairvoyant: Optional[ClairvoyantResponse] = None,
                         tol: float = conic.DEFAULT_TOL, backend: str = "CLARABEL") -> SynthesisResult:
    """Minimise the regret bound ``lam`` over causal, achievable, safe responses."""
    t0 = time.perf_counter()
    if clairvoyant is None:
        clairvoyant = solve_clairvoyant(lifted, cost)
    prog, Phi = _base_program(lifted, safety, bounds)
    lam = prog.add_variable("lambda", structure="scalar")
    regret_lmi(prog, cost.D_sqrt, Phi, clairvoyant.full_Mc(lifted.ny), lam)
    prog.minimize(lam)
    sol = prog.solve(tol=tol, backend=backend)
    return _finish("regret", prog, sol, lifted, t0, lam="lambda")


def solve_safe_h2(lifted: LiftedSystem, cost: CostOperator, safety: Optional[SafetySpec],
                  bounds: Optional[NoiseBounds], tol: float = conic.DEFAULT_TOL,
                  backend: str = "CLARABEL") -> SynthesisResult:
    """Minimise ``||D^{1/2} Phi||_F^2`` (epigraph ``t >= ||D^{1/2} Phi||_F``)."""
    t0 = time.perf_counter()
    prog, Phi = _base_program(lifted, safety, bounds)
    t = prog.add_variable("t", structure="scalar")
    prog.add_soc(t, cost.D_sqrt @ Phi, "frobenius-epigraph")
    prog.minimize(t)
    sol = prog.solve(tol=tol, backend=backend)
    res = _finish("h2", prog, sol, lifted, t0)
    if res.optimal:
        res.objective = float(np.sum((cost.D_sqrt @ res.phi.full) ** 2))
    return res


def solve_safe_hinf(lifted: LiftedSystem, cost: CostOperator, safety: Optional[SafetySpec],
                    bounds: Optional[NoiseBounds], tol: float = conic.DEFAULT_TOL,
                    backend: str = "CLARABEL") -> SynthesisResult:
    """Minimise ``gamma`` with ``[[gamma I, (D^{1/2} Phi)'], [D^{1/2} Phi, gamma I]] >= 0``."""
    t0 = time.perf_counter()
    prog, Phi = _base_program(lifted, safety, bounds)
    gamma = prog.add_variable("gamma", structure="scalar")
    G = cost.D_sqrt @ Phi
    n_out, n_in = G.shape
    prog.add_psd(cp.bmat([[gamma * np.eye(n_in), G.T], [G, gamma * np.eye(n_out)]]), "hinf-lmi")
    prog.minimize(gamma)
    sol = prog.solve(tol=tol, backend=backend)
    return _finish("hinf", prog, sol, lifted, t0, gamma="gamma")


def clairvoyant_program(lifted: LiftedSystem, cost: CostOperator) -> conic.ConicProgram:
    """The clairvoyant least-squares problem posed as a conic program (cross-check route).

    The objective is the Frobenius norm (not squared); square it to compare.
    """
    nx, nu = lifted.nx, lifted.nu
    prog = conic.ConicProgram()
    Pxw = prog.add_variable("Pxw", (nx, nx))
    Puw = prog.add_variable("Puw", (nu, nx))
    Phi_w = cp.vstack([Pxw, Puw])
    E = np.hstack([np.eye(nx) - lifted.ZA, -lifted.ZB])
    prog.add_equality(E @ Phi_w - np.eye(nx), "achievable-left")
    t = prog.add_variable("t", structure="scalar")
    prog.add_soc(t, cost.D_sqrt @ Phi_w, "frobenius-epigraph")
    prog.minimize(t)
    return prog


SOLVERS = {
    "regret": solve_regret_optimal,
    "h2": solve_safe_h2,
    "hinf": solve_safe_hinf,
}


def synthesize(controller: str, lifted, cost, safety, bounds, clairvoyant=None, tol=conic.DEFAULT_TOL,
               backend="CLARABEL") -> SynthesisResult:
    if controller == "regret":
        return solve_regret_optimal(lifted, cost, safety, bounds, clairvoyant, tol=tol, backend=backend)
    if controller in SOLVERS:
        return SOLVERS[controller](lifted, cost, safety, bounds, tol=tol, backend=backend)
    raise ValueError(f"unknown controller {controller!r}")
