"""A small conic-program container backed by cvxpy.

Programs are built from named variables and four constraint families
(affine equalities, elementwise nonnegativity, second-order cones and PSD
blocks). Block-lower-triangular matrix variables are parameterised by their
free entries only, so causality holds with exact zeros.

Infeasibility, unboundedness and numerical trouble come back as a status on
the :class:`ConicSolution`, never as an exception.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import cvxpy as cp
import numpy as np
import scipy.sparse as sp

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL_FAILURE = "numerical-failure"

STRUCTURES = ("free", "lower-block-triangular", "scalar")
DEFAULT_TOL = 1e-8
DEFAULT_GAP_TOL = 1e-7
BACKENDS = ("CLARABEL", "CVXOPT", "SCS")


class DuplicateVariableError(KeyError):
    pass


@dataclass
class _Var:
    name: str
    shape: Tuple[int, ...]
    structure: str
    free: cp.Variable
    expr: cp.Expression
    scatter: Optional[sp.csc_matrix] = None


@dataclass
class ConicSolution:
    status: str
    values: Dict[str, np.ndarray]
    objective_value: float
    residuals: Dict[str, float]
    solve_time: float
    backend: str

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def lower_block_scatter(shape, blocks) -> Tuple[sp.csc_matrix, int]:
    """Map the free entries of a block-lower-triangular matrix to ``vec(X)`` (column-major)."""
    rows, cols = shape
    rb, cb = blocks
    r_idx = np.arange(rows) // rb
    c_idx = np.arange(cols) // cb
    mask = c_idx[None, :] <= r_idx[:, None]
    flat = np.flatnonzero(mask.ravel(order="F"))
    n_free = flat.size
    S = sp.csc_matrix((np.ones(n_free), (flat, np.arange(n_free))), shape=(rows * cols, n_free))
    return S, n_free


@dataclass
class ConicProgram:
    variables: Dict[str, _Var] = field(default_factory=dict)
    equalities: List[Tuple[str, cp.Expression]] = field(default_factory=list)
    inequalities: List[Tuple[str, cp.Expression]] = field(default_factory=list)
    socs: List[Tuple[str, cp.Expression, cp.Expression]] = field(default_factory=list)
    psds: List[Tuple[str, cp.Expression]] = field(default_factory=list)
    objective: Optional[cp.Expression] = None

    def add_variable(self, name: str, shape=(), structure: str = "free", blocks=None) -> cp.Expression:
        """Register a variable and return the expression standing for it.

        ``structure="lower-block-triangular"`` needs ``blocks=(row_block, col_block)``;
        entries above the block diagonal are not decision variables.
        """
        if name in self.variables:
            raise DuplicateVariableError(f"variable {name!r} already declared")
        if structure not in STRUCTURES:
            raise ValueError(f"unknown structure {structure!r}; expected one of {STRUCTURES}")
        shape = tuple(shape)
        if structure == "scalar":
            if shape not in ((), (1,), (1, 1)):
                raise ValueError(f"scalar variable {name!r} cannot have shape {shape}")
            free = cp.Variable(name=name)
            var = _Var(name, (), structure, free, free)
        elif structure == "free":
            free = cp.Variable(shape, name=name)
            var = _Var(name, shape, structure, free, free)
        else:
            if blocks is None or len(shape) != 2:
                raise ValueError("lower-block-triangular variables need a 2-D shape and block sizes")
            S, n_free = lower_block_scatter(shape, blocks)
            free = cp.Variable(n_free, name=name)
            expr = cp.reshape(S @ free, shape, order="F")
            var = _Var(name, shape, structure, free, expr, S)
        self.variables[name] = var
        return var.expr

    def __getitem__(self, name: str) -> cp.Expression:
        return self.variables[name].expr

    def free_count(self, name: Optional[str] = None) -> int:
        names = [name] if name is not None else list(self.variables)
        return sum(self.variables[n].free.size for n in names)

    def add_equality(self, expr, label: str = "eq"):
        """``expr == 0``."""
        self.equalities.append((label, _as_expr(expr)))

    def add_inequality(self, expr, label: str = "ineq"):
        """``expr >= 0`` elementwise."""
        self.inequalities.append((label, _as_expr(expr)))

    def add_soc(self, t, expr, label: str = "soc"):
        """``||vec(expr)||_2 <= t``."""
        self.socs.append((label, _as_expr(t), _as_expr(expr)))

    def add_psd(self, expr, label: str = "psd"):
        """``expr`` (square, affine, symmetric) is positive semidefinite."""
        expr = _as_expr(expr)
        if expr.ndim != 2 or expr.shape[0] != expr.shape[1]:
            raise ValueError(f"PSD constraint {label!r} needs a square matrix, got shape {expr.shape}")
        if not self._structurally_symmetric(expr):
            raise ValueError(f"PSD constraint {label!r} is not symmetric")
        self.psds.append((label, expr))

    def minimize(self, expr):
        self.objective = _as_expr(expr)

    def _structurally_symmetric(self, expr: cp.Expression) -> bool:
        # an affine map is symmetric-valued iff it is at a generic point and at zero
        rng = np.random.default_rng(0)
        free_vars = expr.variables()
        saved = [v.value for v in free_vars]
        try:
            ok = True
            for trial in range(2):
                for v in free_vars:
                    v.value = np.zeros(v.shape) if trial == 0 else rng.standard_normal(v.shape)
                M = np.asarray(expr.value, dtype=float)
                scale = 1.0 + np.max(np.abs(M), initial=0.0)
                ok &= bool(np.max(np.abs(M - M.T), initial=0.0) <= 1e-9 * scale)
            return ok
        finally:
            for v, val in zip(free_vars, saved):
                v.value = val

    def _cvx_constraints(self):
        cons = []
        for _, e in self.equalities:
            cons.append(e == 0)
        for _, e in self.inequalities:
            cons.append(e >= 0)
        for _, t, e in self.socs:
            cons.append(cp.SOC(t, cp.vec(e, order="F")))
        for _, e in self.psds:
            cons.append(0.5 * (e + e.T) >> 0)
        return cons

    def _problem(self) -> cp.Problem:
        if self.objective is None:
            raise ValueError("no objective set")
        return cp.Problem(cp.Minimize(self.objective), self._cvx_constraints())

    def residuals(self) -> Dict[str, float]:
        """Constraint violations at the current variable values."""
        eq = max((float(np.max(np.abs(e.value), initial=0.0)) for _, e in self.equalities), default=0.0)
        ineq = max((float(max(0.0, -np.min(e.value))) for _, e in self.inequalities), default=0.0)
        soc = max(
            (float(max(0.0, np.linalg.norm(np.ravel(e.value)) - float(t.value))) for _, t, e in self.socs),
            default=0.0,
        )
        psd = 0.0
        for _, e in self.psds:
            M = np.asarray(e.value, dtype=float)
            psd = max(psd, float(max(0.0, -np.linalg.eigvalsh(0.5 * (M + M.T)).min())))
        return {"equality": eq, "inequality": ineq, "soc": soc, "psd": psd}

    def solve(self, tol: float = DEFAULT_TOL, backend: str = "CLARABEL", gap_tol: float = DEFAULT_GAP_TOL,
              verbose: bool = False) -> ConicSolution:
        backend = backend.upper()
        if backend not in BACKENDS:
            raise ValueError(f"unknown backend {backend!r}; expected one of {BACKENDS}")
        prob = self._problem()
        t0 = time.perf_counter()
        try:
            prob.solve(solver=backend, verbose=verbose, **_solver_options(backend, tol, gap_tol))
        except cp.error.SolverError:
            return ConicSolution(NUMERICAL_FAILURE, {}, float("nan"), {}, time.perf_counter() - t0, backend)
        elapsed = time.perf_counter() - t0
        status = prob.status
        if status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
            return ConicSolution(INFEASIBLE, {}, float("inf"), {}, elapsed, backend)
        if status in (cp.UNBOUNDED, cp.UNBOUNDED_INACCURATE):
            return ConicSolution(UNBOUNDED, {}, float("-inf"), {}, elapsed, backend)
        if status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) or self.objective.value is None:
            return ConicSolution(NUMERICAL_FAILURE, {}, float("nan"), {}, elapsed, backend)
        res = self.residuals()
        values = {name: np.array(v.expr.value, dtype=float) for name, v in self.variables.items()}
        # inaccurate solutions are kept only if they still meet the feasibility contract
        if status == cp.OPTIMAL_INACCURATE and max(res.values()) > 10 * tol * _scale(self):
            return ConicSolution(NUMERICAL_FAILURE, values, float(self.objective.value), res, elapsed, backend)
        return ConicSolution(OPTIMAL, values, float(self.objective.value), res, elapsed, backend)

    def dump(self, path) -> Path:
        """Write the program in the sparse-triplet text format described in ``dump_format``."""
        path = Path(path)
        offsets = {}
        col = 0
        for name, v in self.variables.items():
            offsets[v.free.id] = (name, col)
            col += v.free.size
        lines = [DUMP_HEADER.rstrip("\n")]
        lines.append("[variables]")
        for name, v in self.variables.items():
            shape = "x".join(str(s) for s in v.shape) or "1"
            lines.append(f"{name} {shape} {v.structure} offset={offsets[v.free.id][1]} free={v.free.size}")
        # a vacuous row keeps the objective section a valid conic problem; only c is read from it
        vacuous = [self.objective - self.objective >= -1.0]
        sections = [("objective", "objective", cp.Problem(cp.Minimize(self.objective), vacuous))]
        for kind, items in (("equality", self.equalities), ("inequality", self.inequalities)):
            for label, e in items:
                con = e == 0 if kind == "equality" else e >= 0
                sections.append((kind, label, cp.Problem(cp.Minimize(0), [con])))
        for label, t, e in self.socs:
            sections.append(("soc", label, cp.Problem(cp.Minimize(0), [cp.SOC(t, cp.vec(e, order="F"))])))
        for label, e in self.psds:
            sections.append(("psd", label, cp.Problem(cp.Minimize(0), [0.5 * (e + e.T) >> 0])))
        n_aux = 0
        for kind, label, prob in sections:
            data, _, _ = prob.get_problem_data(cp.SCS)
            colmap = _global_columns(data["param_prob"], offsets, col + n_aux)
            n_aux += sum(1 for c in colmap if c >= col + n_aux)
            if kind == "objective":
                c = np.asarray(data["c"]).ravel()
                nz = np.flatnonzero(c)
                lines.append(f"[objective] nnz={nz.size} offset={_num(data.get('offset', 0.0))}")
                lines.extend(f"{colmap[j]} {_num(c[j])}" for j in nz)
                continue
            A = sp.coo_matrix(data["A"])
            b = np.asarray(data["b"]).ravel()
            dims = data["dims"]
            lines.append(f"[{kind} {label}] rows={A.shape[0]} nnz={A.nnz} cones={_cone_summary(dims)}")
            lines.extend(f"A {i} {colmap[j]} {_num(v)}" for i, j, v in zip(A.row, A.col, A.data))
            lines.extend(f"b {i} {_num(b[i])}" for i in np.flatnonzero(b))
        path.write_text("\n".join(lines) + "\n")
        return path


DUMP_HEADER = """\
# conic program dump v1
# Columns index the concatenated free entries of the declared variables
# (column-major within each variable); columns past the declared total are
# auxiliary variables introduced by canonicalisation, local to their section.
# Each constraint section lists triplets 'A row col value' and 'b row value'
# meaning  b - A x  lies in the section's cones (SCS convention: zero cone
# rows first, then nonnegative, second-order and scaled lower-triangle PSD).
"""


def _num(v) -> str:
    return "%.17g" % float(v)


def dump_format() -> str:
    return DUMP_HEADER


def _global_columns(param_prob, offsets, aux_start):
    n_cols = param_prob.x.size
    colmap = np.full(n_cols, -1, dtype=int)
    aux = aux_start
    for var_id, start in sorted(param_prob.var_id_to_col.items(), key=lambda kv: kv[1]):
        size = next(v.size for v in param_prob.variables if v.id == var_id)
        if var_id in offsets:
            colmap[start:start + size] = offsets[var_id][1] + np.arange(size)
        else:
            colmap[start:start + size] = aux + np.arange(size)
            aux += size
    return colmap


def _cone_summary(dims) -> str:
    parts = [f"zero:{dims.zero}", f"nonneg:{dims.nonneg}"]
    if dims.soc:
        parts.append("soc:" + ",".join(map(str, dims.soc)))
    if dims.psd:
        parts.append("psd:" + ",".join(map(str, dims.psd)))
    return ";".join(parts)


def _as_expr(x) -> cp.Expression:
    if isinstance(x, cp.Expression):
        return x
    return cp.Constant(np.asarray(x, dtype=float))


def _scale(prog: ConicProgram) -> float:
    vals = [np.max(np.abs(v.expr.value), initial=0.0) for v in prog.variables.values() if v.expr.value is not None]
    return 1.0 + max(vals, default=0.0)


def _solver_options(backend: str, tol: float, gap_tol: float) -> dict:
    if backend == "CLARABEL":
        return {
            "tol_feas": tol,
            "tol_gap_abs": gap_tol,
            "tol_gap_rel": gap_tol,
            "max_iter": 500,
            # merging cliques along the clique graph roughly halves LMI solve time here
            "chordal_decomposition_merge_method": "clique_graph",
        }
    if backend == "CVXOPT":
        return {"feastol": tol, "abstol": gap_tol, "reltol": gap_tol, "max_iters": 500}
    return {"eps_abs": tol, "eps_rel": tol, "max_iters": 200000}
