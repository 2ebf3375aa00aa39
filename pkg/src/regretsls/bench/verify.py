"""Property checks run by ``regretsls verify`` on a single scenario and horizon."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List

import numpy as np

from .. import conic
from ..evaluation import (
    STOCHASTIC_KINDS,
    NoiseModel,
    evaluate_regret,
    regret_matrix,
    rollout,
    sample_noise,
    verify_safety_exact,
    worst_case_noise,
    worst_case_regret_value,
    circumscribed_radius,
)
from ..sls_core import affine_residuals, apply_response, causality_violation, response_from_gains
from ..synthesis import clairvoyant_program, solve_clairvoyant, synthesize
from .scenarios import ScenarioConfig, build_scenario


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str


@dataclass
class VerifyOutcome:
    solver_status: str
    checks: List[Check] = field(default_factory=list)

    def add(self, name: str, value: float, limit: float, higher_is_better: bool = False):
        ok = value >= limit if higher_is_better else value <= limit
        rel = ">=" if higher_is_better else "<="
        self.checks.append(Check(name, bool(ok), f"{value:.3e} (need {rel} {limit:.0e})"))


def run_checks(cfg: ScenarioConfig, T: int) -> VerifyOutcome:
    sc = build_scenario(cfg, T)
    clair = solve_clairvoyant(sc.lifted, sc.cost)
    out = VerifyOutcome(conic.OPTIMAL)

    sol = clairvoyant_program(sc.lifted, sc.cost).solve(tol=cfg.tol, backend=cfg.backend)
    if sol.optimal:
        out.add("clairvoyant closed form vs conic", abs(sol.objective_value ** 2 - clair.objective), 1e-5)

    results = {}
    for c in ("regret", "h2", "hinf"):
        res = synthesize(c, sc.lifted, sc.cost, sc.safety, sc.bounds, clair, tol=cfg.tol, backend=cfg.backend)
        if not res.optimal:
            out.checks.append(Check(f"{c} synthesis", False, res.status))
            out.solver_status = res.status if out.solver_status == conic.OPTIMAL else out.solver_status
            continue
        results[c] = res
        r1, r2 = affine_residuals(sc.lifted, res.phi)
        out.add(f"{c} achievability residual", max(np.abs(r1).max(), np.abs(r2).max()), 1e-6)
        out.add(f"{c} causality", causality_violation(res.phi), 1e-9)
        rt = response_from_gains(sc.lifted, res.gains)
        out.add(f"{c} gain round trip", float(np.abs(rt.full - res.phi.full).max()), 1e-6)
        if sc.safety is not None:
            margin = verify_safety_exact(res.phi, sc.safety, sc.bounds)
            out.add(f"{c} robust safety margin", float(margin.min()), -1e-6, higher_is_better=True)

    Mc = clair.Mc
    if "regret" in results:
        lam = results["regret"].lam
        M = regret_matrix(results["regret"].phi, sc.cost, Mc)
        out.add("regret bound certificate", float(np.linalg.eigvalsh(lam * np.eye(len(M)) - M)[0]), -1e-6,
                higher_is_better=True)
        for c in ("h2", "hinf"):
            if c in results:
                other = float(np.linalg.eigvalsh(regret_matrix(results[c].phi, sc.cost, Mc))[-1])
                out.add(f"regret dominance over {c}", lam - other, 1e-4)

    worst_rollout = 0.0
    min_regret = np.inf
    min_margin = np.inf
    wc_gap = -np.inf
    r = circumscribed_radius(sc.bounds)
    for c, res in results.items():
        wc = worst_case_noise(res.phi, sc.cost, Mc, sc.bounds)
        wc_gap = max(wc_gap, wc.predicted_regret - worst_case_regret_value(res.phi, sc.cost, Mc, r))
        for trial in range(cfg.trials):
            for kind in STOCHASTIC_KINDS:
                noise = sample_noise(NoiseModel(kind, cfg.base_seed + trial), sc.bounds)
                ro = rollout(sc.system, res.gains, noise, sc.safety, sc.cost)
                x, u = apply_response(res.phi, noise.w, noise.e)
                worst_rollout = max(worst_rollout, np.abs(ro.x - x).max(), np.abs(ro.u - u).max())
                min_regret = min(min_regret, evaluate_regret(ro.cost, noise.w, Mc))
                min_margin = min(min_margin, ro.safety_margin)
    if results:
        out.add("rollout vs response map", worst_rollout, 1e-8)
        out.add("sampled regret nonnegative", min_regret, -1e-6, higher_is_better=True)
        out.add("worst-case noise below analytic bound", wc_gap, 1e-8)
        if sc.safety is not None:
            out.add("sampled rollouts safe", min_margin, -1e-6, higher_is_better=True)
    return out
