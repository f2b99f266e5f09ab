"""Experiment orchestration: unroll, check axioms, reduce, verify the semigroup law, classify."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path as FsPath
from typing import Sequence

import numpy as np

from .clairaut import ClairautRule, classify_process, lattice_samples
from .config import ExperimentConfig
from .funnel import BranchRule, check_axioms, unroll
from .functionals import enumerate_functional
from .local import (
    LocalSemiProcess,
    check_LS3,
    check_TT,
    gap_sensitivity_bound,
    ls3_defect,
    reduce_local,
    unroll_local,
    zeta_local,
)
from .paths import TimeGrid, path_to_csv
from .problems import LogBlowupRule, RiccatiRule, SqrtAbsRule, SyntheticRule
from .selection import (
    ReductionParams,
    SelectionOutcome,
    SemiProcess,
    max_workers,
    parallel_map,
    verify_semigroup,
)

log = logging.getLogger(__name__)

PHASES = ("axioms", "reduce", "semigroup", "clairaut", "local")
DEFAULT_ROOTS = {
    "clairaut": [1.0],
    "sqrt_abs": [0.0],
    "riccati_blowup": [0.5],
    "synthetic_tree": [0.0, 0.0],
}
SEMIGROUP_TOL = 1e-9


class UsageError(ValueError):
    pass


@dataclass
class CheckResult:
    name: str
    ok: bool
    worst: float | None = None
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "ok": self.ok, "worst": self.worst, "details": self.details}


@dataclass
class RunReport:
    config: dict
    phases: list[str]
    checks: list[CheckResult] = field(default_factory=list)
    artifacts: list[str] = field(default_factory=list)
    runtime: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    def to_dict(self, include_runtime: bool = False) -> dict:
        d = {
            "config": self.config,
            "phases": self.phases,
            "ok": self.ok,
            "checks": [c.to_dict() for c in self.checks],
            "artifacts": self.artifacts,
        }
        if include_runtime:
            d["runtime"] = self.runtime
        return d

    def to_json(self, include_runtime: bool = False) -> str:
        return json.dumps(self.to_dict(include_runtime), indent=2, sort_keys=True)

    def summary_lines(self) -> list[str]:
        out = []
        for c in self.checks:
            worst = "" if c.worst is None else f" worst={c.worst:.3g}"
            out.append(f"{'PASS' if c.ok else 'FAIL'} {c.name}{worst}")
        return out


# --- problem wiring --------------------------------------------------------------

def rule_for(cfg: ExperimentConfig) -> BranchRule:
    if cfg.problem == "clairaut":
        return ClairautRule()
    if cfg.problem == "sqrt_abs":
        return SqrtAbsRule()
    if cfg.problem == "riccati_blowup":
        return RiccatiRule()
    return SyntheticRule(cfg.samples.seed, max_branching=3, dim=2)


def reduction_params(cfg: ExperimentConfig, dim: int | None = None) -> ReductionParams:
    r = cfg.reduction
    enum = cfg.phi.enumeration(cfg.dim if dim is None else dim)
    return ReductionParams(r.n_max, r.eta_tie, r.eps_singleton, enum, r.refine, r.max_paths)


def _grid_times(cfg: ExperimentConfig, last: int) -> list[float]:
    return [cfg.grid.t_start + k * cfg.grid.delta for k in range(last + 1)]


def random_anchor(cfg: ExperimentConfig, rng: np.random.Generator, t0: float) -> list[float]:
    """Admissible random state at ``t0``; a fixed share lands exactly on the branching set."""
    on_edge = rng.random() < 0.3
    if cfg.problem == "clairaut":
        return [-0.25 * t0 * t0 + (0.0 if on_edge else float(rng.uniform(0.0, 2.0)))]
    if cfg.problem == "sqrt_abs":
        return [0.0 if on_edge else float(rng.uniform(0.0, 2.0))]
    return [float(v) for v in rng.normal(size=cfg.dim)]


def sample_nodes(cfg: ExperimentConfig, rng: np.random.Generator, latest: int) -> list[tuple[float, list[float]]]:
    times = _grid_times(cfg, latest)
    out = []
    for _ in range(cfg.samples.n_nodes):
        t0 = times[int(rng.integers(0, len(times)))]
        out.append((t0, random_anchor(cfg, rng, t0)))
    return out


def sample_triples(cfg: ExperimentConfig, rng: np.random.Generator, n_steps: int,
                   n: int) -> list[tuple[float, float, float, list[float]]]:
    times = _grid_times(cfg, n_steps)
    out = []
    for _ in range(n):
        i, j, k = sorted(int(v) for v in rng.integers(0, len(times), 3))
        out.append((times[i], times[j], times[k], random_anchor(cfg, rng, times[i])))
    return out


# --- artifacts ---------------------------------------------------------------------

def emit_plot_data(outcome: SelectionOutcome, path: str | FsPath) -> tuple[FsPath, FsPath]:
    """Trajectory CSV at ``path`` and stagewise diameters next to it (``<stem>_diameter.csv``)."""
    path = FsPath(path)
    diam_path = path.with_name(path.stem + "_diameter.csv")
    path.write_text(path_to_csv(outcome.selected))
    with diam_path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stage", "n", "lambda", "survivors", "diameter"])
        for s in outcome.trace.stages:
            w.writerow([s.stage, s.n, s.lam, s.survivors, repr(float(s.diameter))])
    return path, diam_path


class _Artifacts:
    def __init__(self, out_dir: FsPath | None):
        self.out_dir = out_dir
        self.names: list[str] = []
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)

    def write(self, name: str, text: str) -> None:
        if self.out_dir is None:
            return
        (self.out_dir / name).write_text(text)
        self.names.append(name)

    def plot(self, name: str, outcome: SelectionOutcome) -> None:
        if self.out_dir is None:
            return
        a, b = emit_plot_data(outcome, self.out_dir / name)
        self.names.extend([a.name, b.name])


# --- phases ------------------------------------------------------------------------

def _phase_axioms(cfg, rule, rng, workers) -> CheckResult:
    steps = min(cfg.samples.axiom_steps, cfg.grid.n_steps)
    nodes = sample_nodes(cfg, rng, cfg.grid.n_steps - steps)
    max_paths = cfg.reduction.max_paths

    def work(node):
        t0, a = node
        f = unroll(rule, t0, a, TimeGrid(t0, cfg.grid.delta, steps), max_paths)
        reps = check_axioms(f, rule, max_paths=max_paths)
        return sum(r.n_checked for r in reps), [v.to_dict() | {"axiom": r.axiom, "node": [t0, a]}
                                                 for r in reps for v in r.violations]

    res = parallel_map(work, nodes, workers)
    n_checked = sum(r[0] for r in res)
    viol = [v for r in res for v in r[1]]
    return CheckResult("axioms_S3_S4", not viol, float(len(viol)),
                       {"nodes": len(nodes), "steps": steps, "checks": n_checked, "violations": viol[:20]})


def _root(cfg) -> list[float]:
    return list(cfg.samples.root) if cfg.samples.root is not None else DEFAULT_ROOTS[cfg.problem]


def _phase_reduce(cfg, process, arts) -> CheckResult:
    if cfg.reduction.n_max == 0:
        return CheckResult("reduce", True, None, {"skipped": "n_max is 0"})
    out = process.select(cfg.grid.t_start, _root(cfg))
    arts.plot("reduce_root.csv", out)
    d = out.to_json_dict()
    d.pop("selected_path_csv")
    final = out.trace.stages[-1].diameter if out.trace.stages else 0.0
    return CheckResult("reduce", out.converged, final, d)


def _phase_semigroup(cfg, process, rng, workers) -> CheckResult:
    if cfg.reduction.n_max == 0:
        return CheckResult("semigroup", True, None, {"skipped": "n_max is 0"})
    n_steps = round((process.t_end - cfg.grid.t_start) / cfg.grid.delta)
    triples = sample_triples(cfg, rng, n_steps, cfg.samples.n_triples)
    rep = verify_semigroup(process, triples, SEMIGROUP_TOL, workers)
    return CheckResult("semigroup", rep.ok, rep.worst, rep.to_dict())


def _phase_clairaut(cfg, process, arts) -> CheckResult:
    g = cfg.grid
    t_values = [g.t_start + 2 * j * g.delta for j in range(3) if 2 * j < g.n_steps]
    samples = lattice_samples(t_values, g.delta, max_back=2)
    pc = classify_process(process, samples)
    for i, (t0, x0) in enumerate(samples):
        arts.write(f"clairaut_traj_{i:02d}.csv", path_to_csv(process.select(t0, [x0]).selected))
    arts.write("classification.json", json.dumps({"tag": pc.tag, "evidence": pc.to_dict()["evidence"]},
                                                 indent=2, sort_keys=True))
    node = cfg.samples.dump_node or [g.t_start, 1.0]
    steps = min(cfg.samples.axiom_steps, g.n_steps)
    f = unroll(process.rule, node[0], [node[1]], TimeGrid(node[0], g.delta, steps), cfg.reduction.max_paths)
    arts.write("funnel_dump.json", f.to_json())
    return CheckResult("clairaut_classification", pc.ok, max(
        (min(e.deviations.values()) for e in pc.evidence), default=0.0), pc.to_dict())


def _phase_local(cfg, params) -> list[CheckResult]:
    lc = cfg.local
    ric = RiccatiRule()
    results = []
    tt_samples = [(t, [a]) for t in (0.0, 0.5) for a in lc.anchors]
    tt = check_TT(ric.terminal_time, tt_samples)
    results.append(CheckResult("local_TT", tt.ok, float(len(tt.violations)), tt.to_dict()))

    defects, ls3_viol, exact_start, gap_worst = [], 0, True, 0.0
    gap_records = []
    for a in lc.anchors:
        lf = unroll_local(ric, 0.0, [a], lc.delta, lc.guard_gap)
        n = lf.funnel.grid.n_steps
        for k in sorted({1, n // 2, n}):
            ls3_viol += len(check_LS3(lf, ric, k).violations)
            defects.append(ls3_defect(lf, ric, k))
        out = reduce_local(lf, params)
        exact_start &= bool(np.array_equal(out.selected.samples[0], np.array([a])))
        w_long = lf.funnel.path(0)
        for gap in (10 * lc.guard_gap, 100 * lc.guard_gap):
            short = unroll_local(ric, 0.0, [a], lc.delta, gap).funnel.path(0)
            for m in range(6):
                fun = enumerate_functional(m, params.enumeration)
                diff = abs(zeta_local(short, lf.terminal_T, fun) - zeta_local(w_long, lf.terminal_T, fun))
                bound = gap_sensitivity_bound(short, w_long, lf.terminal_T, fun)
                gap_worst = max(gap_worst, diff / bound if bound > 0 else (0.0 if diff == 0 else math.inf))
                gap_records.append({"anchor": a, "gap": gap, "n": m, "diff": diff, "bound": bound})
    worst_defect = max(defects)
    results.append(CheckResult("local_LS3", ls3_viol == 0 and worst_defect <= 1e-9, worst_defect,
                               {"violations": ls3_viol, "max_equality_defect": worst_defect}))
    results.append(CheckResult("local_start_exact", exact_start, None, {}))
    results.append(CheckResult("local_guard_gap", gap_worst <= 1.0, gap_worst,
                               {"records": gap_records[:12]}))

    # branching local rule: every path blows up at the same time
    lb = LogBlowupRule(lc.t_blow)
    proc = LocalSemiProcess(lb, 0.25, lc.guard_gap, params)
    rng = np.random.default_rng(cfg.samples.seed)
    n = unroll_local(lb, 0.0, [0.0], 0.25, lc.guard_gap).funnel.grid.n_steps
    triples = []
    for _ in range(max(cfg.samples.n_triples // 2, 1)):
        i, j, k = sorted(int(v) for v in rng.integers(0, n + 1, 3))
        triples.append((0.25 * i, 0.25 * j, 0.25 * k, [float(rng.integers(-3, 4))]))
    rep = verify_semigroup(proc, triples, SEMIGROUP_TOL)
    results.append(CheckResult("local_semigroup", rep.ok, rep.worst, rep.to_dict()))
    return results


# --- driver --------------------------------------------------------------------------

def phases_for(problem: str) -> list[str]:
    if problem == "clairaut":
        return ["axioms", "reduce", "semigroup", "clairaut"]
    if problem == "riccati_blowup":
        return ["local"]
    return ["axioms", "reduce", "semigroup"]


def run(cfg: ExperimentConfig, phases: Sequence[str] | None = None, out_dir: str | FsPath | None = None,
        workers: int | None = None) -> RunReport:
    """Run the requested phases (default: every phase that applies to ``cfg.problem``)."""
    phases = list(phases_for(cfg.problem) if phases is None else phases)
    for ph in phases:
        if ph not in PHASES:
            raise UsageError(f"unknown phase {ph!r}; expected one of {PHASES}")
    if "clairaut" in phases and cfg.problem != "clairaut":
        raise UsageError("the clairaut phase needs problem = clairaut")
    if cfg.problem == "riccati_blowup":
        phases = ["local"]  # unique solutions with blow-up: only the local suite applies
    report = RunReport(cfg.to_dict(), phases)
    arts = _Artifacts(FsPath(out_dir) if out_dir is not None else None)
    workers = max_workers() if workers is None else workers
    report.runtime["threads"] = workers
    rng = np.random.default_rng(cfg.samples.seed)
    rule = rule_for(cfg)
    params = reduction_params(cfg)
    process = None
    if cfg.problem != "riccati_blowup":
        process = SemiProcess(rule, cfg.grid.delta, cfg.grid.t_start + cfg.horizon, params)

    for ph in phases:
        start = time.perf_counter()
        log.info("phase %s", ph)
        if ph == "axioms":
            report.checks.append(_phase_axioms(cfg, rule, rng, workers))
        elif ph == "reduce":
            report.checks.append(_phase_reduce(cfg, process, arts))
        elif ph == "semigroup":
            report.checks.append(_phase_semigroup(cfg, process, rng, workers))
        elif ph == "clairaut":
            report.checks.append(_phase_clairaut(cfg, process, arts))
        elif ph == "local":
            report.checks.extend(_phase_local(cfg, reduction_params(cfg, dim=1)))
        report.runtime[ph] = round(time.perf_counter() - start, 3)
    report.artifacts = list(arts.names)
    if arts.out_dir is not None:
        (arts.out_dir / "report.json").write_text(report.to_json())
        (arts.out_dir / "timing.json").write_text(json.dumps(report.runtime, indent=2, sort_keys=True))
    return report
