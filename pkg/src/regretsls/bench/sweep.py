"""Horizon/noise sweeps over Monte-Carlo trials and their summary statistics."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .. import conic
from ..evaluation import (
    NOISE_KINDS,
    WORST_CASE,
    NoiseModel,
    NoiseRealization,
    evaluate_cost,
    evaluate_regret,
    rollout,
    safety_margin,
    sample_noise,
    worst_case_noise,
)
from ..sls_core import apply_response
from ..synthesis import ClairvoyantResponse, SynthesisResult, solve_clairvoyant, synthesize
from .scenarios import CONTROLLERS, Scenario, ScenarioConfig, build_scenario

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExperimentRecord:
    scenario: str
    controller: str
    T: int
    noise: str
    trial: int
    seed: int
    cost: float
    regret: float
    safety_margin: float
    solve_time: float
    status: str

    def sort_key(self):
        return (self.scenario, CONTROLLERS.index(self.controller), self.T, NOISE_KINDS.index(self.noise),
                self.trial)


@dataclass(frozen=True)
class SynthesisRecord:
    scenario: str
    controller: str
    T: int
    status: str
    objective: float
    solve_time: float


@dataclass(frozen=True)
class SummaryRow:
    scenario: str
    controller: str
    T: int
    noise: str
    mean_cost: float
    sd_cost: float
    mean_regret: float
    sd_regret: float
    trials: int
    infeasible: int

    @property
    def se_cost(self) -> float:
        n = self.trials - self.infeasible
        return self.sd_cost / math.sqrt(n) if n > 0 else float("nan")


@dataclass
class SweepResult:
    records: List[ExperimentRecord]
    syntheses: List[SynthesisRecord]

    @property
    def worst_status(self) -> str:
        statuses = {s.status for s in self.syntheses}
        failed = statuses - {conic.OPTIMAL, conic.INFEASIBLE}
        if failed:
            return sorted(failed)[0]
        return conic.INFEASIBLE if conic.INFEASIBLE in statuses else conic.OPTIMAL


def _synthesis_job(args) -> Tuple[int, str, SynthesisResult]:
    config, T, controller = args
    sc = build_scenario(config, T)
    res = synthesize(controller, sc.lifted, sc.cost, sc.safety, sc.bounds, tol=config.tol,
                     backend=config.backend)
    return T, controller, res


def synthesize_all(config: ScenarioConfig, jobs: int = 1,
                   progress: Optional[Callable[[str], None]] = None) -> Dict[Tuple[int, str], SynthesisResult]:
    """One synthesis per (T, causal controller); parallel across jobs when ``jobs > 1``."""
    tasks = [(config, T, c) for T in config.horizons for c in config.controllers if c != "clairvoyant"]
    out: Dict[Tuple[int, str], SynthesisResult] = {}
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = pool.map(_synthesis_job, tasks)
            for T, c, res in results:
                out[(T, c)] = res
                if progress:
                    progress(f"T={T} {c}: {res.status} ({res.solve_time:.1f}s)")
    else:
        for task in tasks:
            T, c, res = _synthesis_job(task)
            out[(T, c)] = res
            if progress:
                progress(f"T={T} {c}: {res.status} ({res.solve_time:.1f}s)")
    return out


def _clairvoyant_trajectory(sc: Scenario, clair: ClairvoyantResponse, noise: NoiseRealization):
    x, u = apply_response(clair.as_response(sc.lifted), noise.w, noise.e)
    return x, u


def _adversary(controller: str, results: Dict[str, SynthesisResult]) -> Optional[str]:
    # the clairvoyant has no regret of its own; it faces the regret controller's adversary
    if controller != "clairvoyant":
        return controller
    for c in CONTROLLERS:
        if c in results and results[c].optimal:
            return c
    return None


def rollouts_for_horizon(config: ScenarioConfig, T: int, results: Dict[str, SynthesisResult],
                         clair: ClairvoyantResponse) -> List[ExperimentRecord]:
    sc = build_scenario(config, T)
    Mc = clair.Mc
    records: List[ExperimentRecord] = []
    worst: Dict[str, NoiseRealization] = {}
    for c, res in results.items():
        if res.optimal:
            worst[c] = worst_case_noise(res.phi, sc.cost, Mc, sc.bounds)
    for kind in config.noise:
        for trial in range(config.trials):
            seed = config.base_seed + trial
            sampled = None if kind == WORST_CASE else sample_noise(NoiseModel(kind, seed), sc.bounds)
            for c in config.controllers:
                if c == "clairvoyant":
                    status, solve_time = conic.OPTIMAL, 0.0
                else:
                    status, solve_time = results[c].status, results[c].solve_time
                noise = sampled
                if kind == WORST_CASE:
                    adv = _adversary(c, results)
                    noise = worst.get(adv) if adv else None
                if status != conic.OPTIMAL or noise is None:
                    nan = float("nan")
                    records.append(ExperimentRecord(sc.name, c, T, kind, trial, seed, nan, nan, nan, solve_time,
                                                    status if status != conic.OPTIMAL else conic.INFEASIBLE))
                    continue
                if c == "clairvoyant":
                    x, u = _clairvoyant_trajectory(sc, clair, noise)
                    cost, margin = evaluate_cost(x, u, sc.cost), safety_margin(x, u, sc.safety)
                else:
                    out = rollout(sc.system, results[c].gains, noise, sc.safety, sc.cost)
                    cost, margin = out.cost, out.safety_margin
                regret = evaluate_regret(cost, noise.w, Mc)
                records.append(ExperimentRecord(sc.name, c, T, kind, trial, seed, cost, regret, margin,
                                                solve_time, status))
    return records


def run_sweep(config: ScenarioConfig, jobs: int = 1,
              progress: Optional[Callable[[str], None]] = None) -> SweepResult:
    """Synthesize every controller once per horizon, then roll out each noise kind ``trials`` times.

    Trial k of every kind uses seed ``base_seed + k``. Records come back in
    canonical order regardless of ``jobs``.
    """
    synth = synthesize_all(config, jobs, progress)
    records: List[ExperimentRecord] = []
    syntheses: List[SynthesisRecord] = []
    for T in config.horizons:
        sc = build_scenario(config, T)
        clair = solve_clairvoyant(sc.lifted, sc.cost)
        results = {c: synth[(T, c)] for c in config.controllers if c != "clairvoyant"}
        for c in config.controllers:
            if c == "clairvoyant":
                syntheses.append(SynthesisRecord(sc.name, c, T, conic.OPTIMAL, clair.objective, 0.0))
            else:
                r = results[c]
                syntheses.append(SynthesisRecord(sc.name, c, T, r.status, r.objective, r.solve_time))
        records.extend(rollouts_for_horizon(config, T, results, clair))
    records.sort(key=ExperimentRecord.sort_key)
    return SweepResult(records, syntheses)


def _mean_sd(vals: Sequence[float]) -> Tuple[float, float]:
    if not vals:
        return float("nan"), float("nan")
    arr = np.asarray(vals, dtype=float)
    sd = float(np.std(arr, ddof=1)) if arr.size > 1 else 0.0
    return float(np.mean(arr)), sd


def summarize(records: Iterable[ExperimentRecord]) -> List[SummaryRow]:
    """Mean and sample standard deviation of cost and regret per (scenario, controller, T, noise)."""
    groups: Dict[tuple, List[ExperimentRecord]] = {}
    for r in records:
        groups.setdefault((r.scenario, r.controller, r.T, r.noise), []).append(r)
    if not groups:
        raise ValueError("cannot summarise an empty record set")
    rows = []
    for key in sorted(groups, key=lambda k: (k[0], CONTROLLERS.index(k[1]), k[2], NOISE_KINDS.index(k[3]))):
        grp = groups[key]
        ok = [r for r in grp if r.status == conic.OPTIMAL]
        mc, sc = _mean_sd([r.cost for r in ok])
        mr, sr = _mean_sd([r.regret for r in ok])
        rows.append(SummaryRow(*key, mc, sc, mr, sr, len(grp), len(grp) - len(ok)))
    return rows


def summary_lookup(rows: Iterable[SummaryRow]) -> Dict[Tuple[str, int, str], SummaryRow]:
    return {(r.controller, r.T, r.noise): r for r in rows}
