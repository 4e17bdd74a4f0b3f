"""Single manufactured-solution runs and refinement sweeps."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path

from .analysis import ErrorReport, RateTable, error_report, rate, write_rate_csv
from .assembly import (BlockSystem, FaceClassification, PenaltyConfig, RhsAssembler,
                       assemble_system)
from .mesh import PolyMesh, agglomerate_mesh, build_structured_mesh, read_mesh
from .model import ManufacturedCase, boundary_data_from_exact
from .timestepper import TimeConfig, TransientResult, initialize_state, run_transient

log = logging.getLogger(__name__)


@dataclass
class CaseRun:
    system: BlockSystem
    rhs: RhsAssembler
    result: TransientResult
    report: ErrorReport
    seconds: float


def run_case(mesh: PolyMesh, case: ManufacturedCase, p: int, q: int, time_config: TimeConfig,
             penalty: PenaltyConfig | None = None, solver: str = "auto", observers=(),
             neumann_u=(), neumann_p=None) -> CaseRun:
    """Assemble, integrate from the exact initial data to ``T`` and measure the errors."""
    start = time.perf_counter()
    boundary = boundary_data_from_exact(case, neumann_u, neumann_p)
    faces = FaceClassification.from_boundary_data(mesh, boundary)
    system = assemble_system(mesh, case.params, p, q, penalty, faces)
    rhs = RhsAssembler(system, boundary, case.f, case.g)
    state = initialize_state(system, rhs, case)
    result = run_transient(system, rhs, state, time_config, observers, solver)
    report = error_report(result.final, case, system)
    seconds = time.perf_counter() - start
    log.info("P%d-P%d h=%.4g: err_u=%.3e err_p=%.3e (%.1fs, %s)", q, p, mesh.mesh_size,
             report.err_u_dg, report.err_p_l2, seconds, result.solver_method)
    return CaseRun(system, rhs, result, report, seconds)


def build_mesh(spec, divisions: int | None = None, seed: int | None = None) -> PolyMesh:
    """Mesh from a :class:`~mpetdg.config.MeshSpec` (file or structured, optionally agglomerated)."""
    seed = spec.seed if seed is None else seed
    if spec.file:
        mesh = read_mesh(spec.file)
    else:
        div = divisions if divisions is not None else spec.divisions
        if div is None:
            raise ValueError("mesh.divisions (or a mesh file) is required")
        mesh = build_structured_mesh(spec.box, div, spec.dim)
    if spec.agglomerate:
        mesh = agglomerate_mesh(mesh, spec.agglomerate, seed)
    return mesh


def rate_table(pairing: str, hs, reports) -> RateTable:
    """Rate table tolerating failed runs (``None`` reports); rates skip failures."""
    eu = [r.err_u_dg if r is not None else None for r in reports]
    ep = [r.err_p_l2 if r is not None else None for r in reports]
    roc_u, roc_p = [None], [None]
    for i in range(1, len(hs)):
        ok = reports[i] is not None and reports[i - 1] is not None
        roc_u.append(rate(eu[i - 1], eu[i], hs[i - 1], hs[i]) if ok else None)
        roc_p.append(rate(ep[i - 1], ep[i], hs[i - 1], hs[i]) if ok else None)
    return RateTable(pairing, list(hs), eu, ep, roc_u, roc_p)


@dataclass
class StudyResult:
    mode: str
    tables: list
    csv_path: Path
    figure_path: Path | None
    failures: list


P_COLUMNS = ("pairing", "degree", "h", "err_u_dg", "err_p_l2")


def _fmt(v):
    if v is None:
        return ""
    return f"{v:.6e}" if isinstance(v, float) and not math.isnan(v) else str(v)


def run_convergence_study(config, output_dir=None, seed: int | None = None) -> StudyResult:
    """h- or p-refinement sweep described by ``config.study``; writes CSV and a figure."""
    from .plotting import plot_h_convergence, plot_p_convergence

    study = config.study
    out = Path(output_dir or config.output.directory)
    case = config.case()
    failures = []
    if study.mode == "h":
        if not study.divisions:
            raise ValueError("study.divisions is empty")
        pairings = study.pairings or [(config.q, config.p)]
        meshes = [build_mesh(config.mesh, d, seed) for d in study.divisions]
        tables = []
        for q, p in pairings:
            reports = []
            for d, mesh in zip(study.divisions, meshes):
                try:
                    run = run_case(mesh, case, p, q, config.time, config.penalty, config.solver,
                                   neumann_u=config.neumann_u, neumann_p=config.neumann_p)
                    reports.append(run.report)
                except Exception as exc:  # keep sweeping; the row records the failure
                    log.error("P%d-P%d divisions=%d failed: %s", q, p, d, exc)
                    failures.append((f"P{q}-P{p}", d, str(exc)))
                    reports.append(None)
            tables.append(rate_table(f"P{q}-P{p}", [m.mesh_size for m in meshes], reports))
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / config.output.csv
        write_rate_csv(tables, csv_path)
        fig = plot_h_convergence(tables, csv_path.with_suffix(".png")) if config.output.figure else None
        return StudyResult("h", tables, csv_path, fig, failures)

    if not study.degrees:
        raise ValueError("study.degrees is empty")
    mesh = build_mesh(config.mesh, seed=seed)
    rows = []
    for q in study.degrees:
        p = q + study.p_offset
        try:
            rep = run_case(mesh, case, p, q, config.time, config.penalty, config.solver,
                           neumann_u=config.neumann_u, neumann_p=config.neumann_p).report
            rows.append((f"P{q}-P{p}", q, mesh.mesh_size, rep.err_u_dg, rep.err_p_l2))
        except Exception as exc:
            log.error("degree %d failed: %s", q, exc)
            failures.append((f"P{q}-P{p}", q, str(exc)))
            rows.append((f"P{q}-P{p}", q, mesh.mesh_size, None, None))
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / config.output.csv
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(P_COLUMNS)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    fig = None
    good = [r for r in rows if r[3] is not None]
    if config.output.figure and good:
        fig = plot_p_convergence([r[1] for r in good], [r[3] for r in good], [r[4] for r in good],
                                 csv_path.with_suffix(".png"), f"{mesh.n_elements} elements")
    return StudyResult("p", rows, csv_path, fig, failures)
