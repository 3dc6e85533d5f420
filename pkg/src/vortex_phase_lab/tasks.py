"""Task implementations behind the command line; each writes files into ``out``."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from . import io
from .config import ConfigError, RunConfig
from .errors import DomainError


class NoTransition(Exception):
    """The transition task ran but found no first-order transition."""


def parse_selector(text: str):
    """'0' -> 0-branch, '2,3' -> k-branch with those components on the + root, 'merged:k'."""
    from .branches import KBranch, MergedBranch

    t = text.strip()
    if t.startswith("merged:"):
        try:
            return MergedBranch(int(t.split(":", 1)[1]))
        except ValueError:
            raise ConfigError(f"bad merged selector {text!r}", "params.selector") from None
    if t in ("0", ""):
        return KBranch(frozenset())
    try:
        return KBranch(frozenset(int(x) for x in t.split(",")))
    except ValueError:
        raise ConfigError(f"bad selector {text!r}", "params.selector") from None


def _meta(cfg: RunConfig, **extra):
    return io.sidecar(cfg.config_hash, cfg.task, **extra)


def branch_rows(curve):
    N = curve.N
    cols = ["mu", "gamma", "beta", "lambda", "Z", "E", "S"]
    cols += [f"mu_{i + 1}" for i in range(N)] + [f"M_{i + 1}" for i in range(N)] + [f"E_{i + 1}" for i in range(N)]
    c = curve.columns
    rows = []
    for j in range(len(curve)):
        rows.append([c["mu"][j], c["gamma"][j], c["beta"][j], c["lam"][j], c["Z"][j], c["E"][j], c["S"][j],
                     *c["mu_i"][j], *c["M_i"][j], *c["E_i"][j]])
    return cols, rows


def task_branch(cfg: RunConfig, out: Path):
    from .branches import sample_branch

    dom = cfg.domain_spec()
    mu = cfg.params["mu"]
    grid = np.linspace(mu.get("start", 1e-6), mu.get("stop", 1 - 1e-6), mu.get("n", 2000)) if isinstance(mu, dict) else mu
    sel = parse_selector(cfg.params["selector"])
    curve = sample_branch(dom, sel, grid)
    cols, rows = branch_rows(curve)
    return io.write_csv(out / "branch.csv", cols, rows,
                        _meta(cfg, selector=sel.label, area_scale=dom.scale, dropped=len(curve.dropped)))


def task_envelope(cfg: RunConfig, out: Path):
    from .transitions import default_energy_grid, entropy_envelope

    dom = cfg.domain_spec()
    p = cfg.params
    sels = None if p["selectors"] is None else [parse_selector(s) for s in p["selectors"]]
    env = entropy_envelope(dom, sels, default_energy_grid(dom, p["n"], p["lo"], p["hi"]))
    rows = [[r["E"], r["S"], r["beta"], r["winner"], r["gap"]] for r in env.rows()]
    return io.write_csv(out / "envelope.csv", ["E", "S", "beta", "winner", "gap"], rows,
                        _meta(cfg, E_m=env.E_m, S_m=env.S_m, area_scale=dom.scale,
                              segments=[s.id for s in env.segments]))


def task_transition(cfg: RunConfig, out: Path):
    from .transitions import transition_for_domain

    dom = cfg.domain_spec()
    rep = transition_for_domain(dom)
    payload = _meta(cfg, area_scale=dom.scale)
    payload["report"] = rep.as_dict()
    files = [io.write_json(out / "transition.json", payload)]
    if not rep.found:
        raise NoTransition(rep.reason or "no transition")
    return files


def task_classify(cfg: RunConfig, out: Path):
    from .branches import KBranch, sample_branch
    from .disk import EIGHT_PI
    from .transitions import classify_kind

    dom = cfg.domain_spec()
    curve = sample_branch(dom, KBranch(frozenset()))
    payload = _meta(cfg, kind=classify_kind(dom, curve), min_beta=float(np.min(curve.beta)),
                    min_beta_over_8pi=float(np.min(curve.beta)) / EIGHT_PI)
    return [io.write_json(out / "classify.json", payload)]


def task_high_energy(cfg: RunConfig, out: Path):
    from .high_energy import branch_state, locate_high_energy_transitions, plan_sequences

    p = cfg.params
    plan = plan_sequences(p["N"], p["eta"], tuple(p["window"]))
    dom = plan.domain()
    reports, info = locate_high_energy_transitions(dom, plan, samples=int(p["samples"]))
    payload = _meta(cfg, plan=plan.as_dict(), transitions=[r.as_dict() for r in reports], **info)
    files = [io.write_json(out / "high_energy.json", payload)]
    lo, hi = plan.window
    gammas = np.geomspace(lo / 2.0, min(2.0 * hi, 0.2), 200)
    rows = []
    for i in range(1, plan.N + 1):
        for g in gammas:
            E, S, beta = branch_state(dom, i, float(g))
            rows.append([f"B{i}", g, E, S, beta])
    files += io.write_csv(out / "high_energy_branches.csv", ["branch", "gamma", "E", "S", "beta"], rows, _meta(cfg))
    return files


def task_oracle(cfg: RunConfig, out: Path):
    p = cfg.params
    if p["mode"] == "radial":
        return _radial_oracle(cfg, out)
    from .oracle import OracleReport, grid_mvp
    from .transitions import entropy_envelope, uniform_point

    dom = cfg.domain_spec()
    E_m, _ = uniform_point(dom)
    energies = np.asarray(p["energies"]) if p["energies"] is not None else np.geomspace(p["lo"] * E_m, p["hi"] * E_m, p["n"])
    env = entropy_envelope(dom, E_grid=energies, refine=False)
    S_env = np.array([float(s) for s in env.S_values])
    opt = [grid_mvp(dom, float(E), mass_grid=int(p["mass_grid"]), refine_rounds=int(p["refine_rounds"])) for E in energies]
    S_orc = np.array([o.entropy for o in opt])
    N = dom.N
    cols = ["E", "S_envelope", "S_oracle", "abs_err", "winner"] + [f"M_{i + 1}" for i in range(N)]
    rows = [[E, a, b, abs(a - b), "|".join(w), *o.masses] for E, a, b, w, o in zip(energies, S_env, S_orc, env.winner, opt)]
    files = io.write_csv(out / "oracle.csv", cols, rows, _meta(cfg, area_scale=dom.scale))
    rep = OracleReport.compare("entropy_envelope", S_env, S_orc, energies=energies.tolist())
    files.append(io.write_json(out / "oracle.json", _meta(cfg, report=rep.as_dict())))
    return files


def _radial_oracle(cfg: RunConfig, out: Path):
    from .disk import EIGHT_PI, disk_energy_of_beta, disk_partition_of_beta, stream_profile
    from .oracle import OracleReport, radial_mfe_solve

    p = cfg.params
    area = cfg.domain["areas"][0] if cfg.domain else 1.0
    rows, ref_E, orc_E = [], [], []
    for beta in p["betas"]:
        sol = radial_mfe_solve(beta, area, int(p["nodes"]))
        prof = stream_profile(-beta / EIGHT_PI, sol.profile.radius, sol.profile.r)
        sup = float(np.max(np.abs(prof.psi - sol.profile.psi)))
        E_cf = float(disk_energy_of_beta(beta))
        Z_cf = float(disk_partition_of_beta(beta, area))
        rows.append([beta, E_cf, sol.E, abs(sol.E - E_cf) / E_cf, Z_cf, sol.Z, sup])
        ref_E.append(E_cf)
        orc_E.append(sol.E)
    cols = ["beta", "E_closed", "E_ode", "E_rel_err", "Z_closed", "Z_ode", "psi_sup_err"]
    files = io.write_csv(out / "radial.csv", cols, rows, _meta(cfg, area=area))
    rep = OracleReport.compare("disk_energy_of_beta", ref_E, orc_E, betas=list(p["betas"]),
                               psi_sup_err=[r[-1] for r in rows])
    files.append(io.write_json(out / "radial.json", _meta(cfg, report=rep.as_dict())))
    return files


def _geometry(cfg: RunConfig):
    from .pde import GeometrySpec

    g = cfg.geometry
    if g["kind"] == "disk":
        return GeometrySpec.disk(g["area"])
    if g["kind"] == "conformal":
        return GeometrySpec.unit_disk(g["epsilon"])
    return GeometrySpec.dumbbell(g["areas"], g["width"], g["gap"])


def _pde_rows(sols):
    cols = ["lambda", "beta", "Z", "E", "E_grad", "S", "U_max", "residual", "iterations", "tag"]
    return cols, [[s.summary()[k] for k in cols] for s in sols]


def task_pde(cfg: RunConfig, out: Path):
    from .pde import (continue_branch, dumbbell_convergence, dumbbell_transition, rasterize,
                      seed_for_lambda, solve_lambda)

    p = cfg.params
    g = cfg.geometry
    if p["mode"] == "transition":
        if g["kind"] != "dumbbell" or g["width"] is None:
            raise ConfigError("mode 'transition' needs a dumbbell geometry with a channel width", "geometry.width")
        tr = dumbbell_transition(g["areas"], g["width"], p["h"], p["mu_left"], p["mu_right"], g["gap"])
        cols = ["E", "S_left", "S_right", "dS", "beta_left", "beta_right", "lambda_left", "lambda_right",
                "E_left", "E_right"]
        rows = tr.rows()
        meta = _meta(cfg, h=p["h"], found=tr.found, E_star=tr.E_star, message=tr.message,
                     mu_left_used=tr.mu_left, mu_right_used=tr.mu_right)
        files = io.write_csv(out / "dumbbell_transition.csv", cols, [[r[c] for c in cols] for r in rows], meta)
        if not tr.found:
            raise NoTransition(tr.message)
        return files
    if p["mode"] == "dumbbell":
        if g["kind"] != "dumbbell":
            raise ConfigError("mode 'dumbbell' needs a dumbbell geometry", "geometry.kind")
        mu = 0.3 if p["mu"] is None else p["mu"]
        rows = dumbbell_convergence(g["areas"], p["widths"], p["h"], mu, g["gap"], tol=p["tol"])
        cols = ["width", "n", "lambda", "beta", "Z", "E", "S", "ref_beta", "ref_Z", "ref_E", "ref_S",
                "err_beta", "err_Z", "err_E", "err_S"]
        return io.write_csv(out / "dumbbell.csv", cols, [[r[c] for c in cols] for r in rows],
                            _meta(cfg, h=p["h"], mu=mu))
    geo = _geometry(cfg)
    mesh = rasterize(geo, p["h"])
    if p["lambda"] is not None:
        lam = p["lambda"]
    else:
        from .disk import EIGHT_PI

        a1 = max(d.area for d in geo.disks) if geo.disks else math.pi
        lam = EIGHT_PI * p["mu"] * (1.0 - p["mu"]) / a1
    sol = solve_lambda(mesh, lam, seed_for_lambda(mesh, lam), tol=p["tol"])
    sols = [sol]
    extra = {}
    if p["mode"] == "continue":
        res = continue_branch(mesh, sol, ds=p["ds"], steps=int(p["steps"]), tol=p["tol"])
        sols = res.solutions
        extra = {"complete": res.complete, "message": res.message}
    cols, rows = _pde_rows(sols)
    meta = _meta(cfg, h=p["h"], unknowns=mesh.n, mesh_area=mesh.area, **extra)
    files = io.write_csv(out / "pde.csv", cols, rows, meta)
    if p["export_field"]:
        x, y = mesh.nodes
        last = sols[-1]
        files += io.write_csv(out / "pde_field.csv", ["x", "y", "U"], zip(x, y, last.U),
                              _meta(cfg, h=p["h"], **{"lambda": last.lam}))
    return files


def task_appendix(cfg: RunConfig, out: Path):
    from .deformed import g_of_beta
    from .pde import deformed_free_energy_check, richardson_slope

    p = cfg.params
    rows, summary = [], []
    for beta in p["betas"]:
        res = deformed_free_energy_check(p["epsilons"], beta, p["h"])
        for r in res:
            rows.append([beta, r.epsilon, r.F, r.E, r.Z, r.residual, r.iterations])
        entry = {"beta": beta, "g": float(g_of_beta(beta)), "target": -float(g_of_beta(beta)) / beta}
        try:
            entry.update(richardson_slope(res))
            entry["slopes"] = {format(k, ".17g"): v for k, v in entry["slopes"].items()}
            entry["relative_error"] = abs(entry["extrapolated"] - entry["target"]) / abs(entry["target"])
        except DomainError as exc:  # fewer than two non-zero amplitudes
            entry["note"] = str(exc)
        summary.append(entry)
    cols = ["beta", "epsilon", "F", "E", "Z", "residual", "iterations"]
    files = io.write_csv(out / "appendix.csv", cols, rows, _meta(cfg, h=p["h"]))
    files.append(io.write_json(out / "appendix.json", _meta(cfg, h=p["h"], results=summary)))
    return files


TASK_FUNCS = {
    "branch": task_branch,
    "envelope": task_envelope,
    "transition": task_transition,
    "classify": task_classify,
    "high-energy": task_high_energy,
    "oracle": task_oracle,
    "pde": task_pde,
    "appendix-check": task_appendix,
}


def run_task(cfg: RunConfig, out: Path):
    return TASK_FUNCS[cfg.task](cfg, Path(out))
