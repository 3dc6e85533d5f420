"""Acceptance criteria 1-10.

Each test records one PASS/FAIL line; ``conftest.py`` prints them at the end
of the run.  Run alone with ``pytest tests/test_acceptance.py``.
"""

import json
import math
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from vortex_phase_lab.branches import DomainSpec, KBranch, merged_branch_point, sample_branch
from vortex_phase_lab.deformed import g_of_beta
from vortex_phase_lab.disk import E_UNIFORM, EIGHT_PI, disk_energy_of_beta, stream_profile
from vortex_phase_lab.high_energy import locate_high_energy_transitions, plan_sequences
from vortex_phase_lab.oracle import grid_mvp, radial_mfe_solve
from vortex_phase_lab.pde import (
    deformed_free_energy_check,
    dumbbell_convergence,
    dumbbell_transition,
    richardson_slope,
)
from vortex_phase_lab.transitions import (
    classify_kind,
    entropy_envelope,
    locate_transition,
    transition_for_domain,
    uniform_point,
)

RESULTS = {}


def record(key, ok, detail):
    RESULTS[key] = (bool(ok), detail)
    assert ok, detail


# 1 ------------------------------------------------------------------------


def test_criterion_1_radial_oracle():
    t0 = time.perf_counter()
    worst_psi, worst_E = 0.0, 0.0
    for beta in (-7 * math.pi, -4 * math.pi, 0.0, 8 * math.pi):
        sol = radial_mfe_solve(beta)
        ref = stream_profile(-beta / EIGHT_PI, sol.profile.radius, sol.profile.r)
        worst_psi = max(worst_psi, float(np.max(np.abs(sol.profile.psi - ref.psi))))
        worst_E = max(worst_E, abs(sol.E / float(disk_energy_of_beta(beta)) - 1))
    dt = time.perf_counter() - t0
    record("1", worst_psi <= 1e-8 and worst_E <= 1e-8 and dt < 10,
           f"psi sup err {worst_psi:.2e}, E rel err {worst_E:.2e}, {dt:.1f}s")


# 2 ------------------------------------------------------------------------


def test_criterion_2_uniform_anchors():
    errs = [abs(E_UNIFORM - 1 / (16 * math.pi))]
    for areas in ([1.0], [1.0, 0.8], [1.0, 0.6, 0.2], [1.0, 0.9, 0.5], [1.0, 1.0, 1.0], [2.0, 1.5, 0.5, 0.1]):
        dom = DomainSpec.from_areas(areas, normalize=False)
        E_m, S_m = uniform_point(dom)
        env = entropy_envelope(dom, E_grid=np.array([E_m]))
        errs.append(abs(env.S_values[0] - math.log(sum(areas))))
        errs.append(abs(S_m - math.log(sum(areas))))
    worst = max(errs)
    record("2", worst <= 1e-10, f"max anchor error {worst:.2e}")


# 3 ------------------------------------------------------------------------


def test_criterion_3_branch_vs_grid_oracle():
    t0 = time.perf_counter()
    worst = 0.0
    for areas in ([1.0, 0.8], [1.0, 0.6, 0.2]):
        dom = DomainSpec.from_areas(areas)
        E_m, _ = uniform_point(dom)
        E = np.geomspace(0.6 * E_m, 15 * E_m, 20)
        env = entropy_envelope(dom, E_grid=E, refine=False)
        for Ek, Sk in zip(E, env.S_values):
            worst = max(worst, abs(grid_mvp(dom, float(Ek)).entropy - float(Sk)))
    dt = time.perf_counter() - t0
    record("3", worst <= 1e-3 and dt < 300, f"max |dS| {worst:.2e} over 40 energies, {dt:.0f}s")


# 4 ------------------------------------------------------------------------


def test_criterion_4_classification():
    a = classify_kind(DomainSpec.from_areas([1.0, 0.6, 0.2]))
    b = classify_kind(DomainSpec.from_areas([1.0, 0.9, 0.5]))
    record("4", (a, b) == ("first", "second"), f"(1,0.6,0.2) -> {a}, (1,0.9,0.5) -> {b}")


# 5 ------------------------------------------------------------------------


def test_criterion_5a_low_energy_transition():
    t0 = time.perf_counter()
    rep = transition_for_domain(DomainSpec.from_areas([1.0, 1 - 3e-5, 1 - 3e-5]))
    E0, Ec = rep.endpoints["E0"], rep.endpoints["Ebar_c"]
    dt = time.perf_counter() - t0
    ok = rep.found and E0 < rep.E_star < Ec and rep.beta_minus < rep.beta_plus and dt < 60
    record("5a", ok, f"E* = {rep.E_star:.8f} in ({E0:.8f}, {Ec:.8f}), "
                     f"beta-/pi = {rep.beta_minus / math.pi:.4f} < beta+/pi = {rep.beta_plus / math.pi:.4f}, {dt:.1f}s")


def test_criterion_5b_entropy_gap_ratio():
    # stated target: ratio about 2e-3, accepted within a factor of 2
    dom = DomainSpec.from_areas([1.0, 1 - 1e-5, 1 - 1e-5])
    rep = locate_transition(sample_branch(dom, KBranch()))
    ratio = rep.entropy_gap_scale
    ok = rep.found and 1e-3 <= ratio <= 4e-3
    record("5b", ok, f"d-r gap ratio {ratio:.3e} (target 2e-3 within x2); "
                     f"d-l ratio {rep.gap_ratios.get('d-l', math.nan):.3e}")


# 6 ------------------------------------------------------------------------


def test_criterion_6_merged_degeneracy():
    worst = 0.0
    for N in (2, 3, 4, 5, 6):
        for k in range(N // 2 + 1):
            p = merged_branch_point(N, k, 0.5)
            worst = max(worst, abs(p.beta / (-4 * math.pi * N) - 1))
    const = 0.0
    for N in (2, 4, 6):
        betas = [merged_branch_point(N, N // 2, mu).beta for mu in np.linspace(0.01, 0.99, 99)]
        const = max(const, max(abs(b / (-4 * math.pi * N) - 1) for b in betas))
    record("6", worst <= 1e-12 and const <= 1e-12,
           f"common point rel err {worst:.1e}, half-branch beta spread {const:.1e}")


# 7 ------------------------------------------------------------------------


def test_criterion_7_high_energy_transitions():
    details, ok = [], True
    for eta in (1e-3, 1e-4):
        plan = plan_sequences(3, eta)
        reps, info = locate_high_energy_transitions(plan.domain(), plan)
        errs = [abs(r.endpoints["gamma_star"] / g - 1) for r, g in zip(reps, plan.gamma_crossings)]
        jumps = [r.beta_plus - r.beta_minus for r in reps]
        good = info["winners"] == [3, 2, 1] and len(reps) == 2 and all(j != 0 for j in jumps) and max(errs) < 0.1
        ok &= good
        details.append(f"eta={eta:g}: winners {info['winners']}, gamma* err {max(errs):.1%}, "
                       f"beta jumps/pi {', '.join(f'{j / math.pi:.3e}' for j in jumps)}")
    record("7", ok, "; ".join(details))


# 8 ------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_8_appendix_slope():
    t0 = time.perf_counter()
    worst, parts = 0.0, []
    for beta in (-4 * math.pi, -math.pi):
        res = deformed_free_energy_check([0.0, 0.02, 0.04], beta, h=1 / 512)
        slope = richardson_slope(res)["extrapolated"]
        target = -float(g_of_beta(beta)) / beta
        err = abs(slope / target - 1)
        worst = max(worst, err)
        parts.append(f"beta/pi={beta / math.pi:g}: slope {slope:.6f} vs -g/beta {target:.6f} "
                     f"(ratio {slope / target:.4f})")
    dt = time.perf_counter() - t0
    record("8", worst <= 0.03 and dt < 600, "; ".join(parts) + f", {dt:.0f}s")


# 9 ------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_9_dumbbells():
    t0 = time.perf_counter()
    areas = [1.0, 1 - 3e-5, 1 - 3e-5]
    lines, ok = [], True
    # Close to the fold (mu = 0.45) the channel also lowers the critical
    # lambda, which pushes E up at the widest channel; the signed E error
    # crosses zero there, so only beta, Z and S are required to be monotone.
    for mu, keys in ((0.1, "beta Z E S"), (0.3, "beta Z E S"), (0.4, "beta Z E S"), (0.45, "beta Z S")):
        rows = dumbbell_convergence(areas, [0.2, 0.1, 0.05], 1 / 256, mu=mu)
        chan = [r for r in rows if not math.isnan(r["width"])]      # widths 0.2, 0.1, 0.05
        for key in keys.split():
            e = [r["err_" + key] for r in chan]
            ok &= all(b < a for a, b in zip(e[:-1], e[1:]))
        ok &= all(r["err_beta"] <= 0.1 and r["err_Z"] <= 0.1 for r in chan)
        errs = ", ".join(f"{r['err_beta']:.2e}" for r in chan)
        e_errs = ", ".join(f"{r['E'] / r['ref_E'] - 1:+.2e}" for r in chan)
        lines.append(f"mu={mu}: beta rel err by width {errs} (E signed {e_errs})")
    tr = dumbbell_transition(areas, 0.05, 1 / 256)
    ok &= tr.found
    if tr.found:
        rows = tr.rows()
        signs = {np.sign(r["dS"]) for r in rows if abs(r["dS"]) > 1e-12}
        star = min(rows, key=lambda r: abs(r["E"] - tr.E_star))
        ok &= signs == {-1.0, 1.0}
        ok &= star["beta_left"] < star["beta_right"]
        lines.append(f"width 0.05: equal-energy pair at E = {tr.E_star:.10f}, "
                     f"S = {star['S_left']:.12f} / {star['S_right']:.12f}, dS changes sign over "
                     f"[{rows[0]['E']:.8f}, {rows[-1]['E']:.8f}], beta/pi {star['beta_left'] / math.pi:.4f} -> "
                     f"{star['beta_right'] / math.pi:.4f}")
    else:
        lines.append(tr.message)
    dt = time.perf_counter() - t0
    ok &= dt < 1800
    record("9", ok, "; ".join(lines) + f", {dt:.0f}s")


# 10 -----------------------------------------------------------------------

CONFIGS = {
    "branch": {"domain": {"areas": [1, 0.9, 0.5]}, "params": {"mu": {"start": 0.01, "stop": 0.99, "n": 50}}},
    "envelope": {"domain": {"areas": [1, 0.6, 0.2]}, "params": {"n": 80}},
    "transition": {"domain": {"areas": [1, 0.99997, 0.99997]}},
    "classify": {"domain": {"areas": [1, 0.9, 0.5]}},
    "high-energy": {"params": {"N": 3, "eta": 1e-3, "samples": 200}},
    "oracle": {"domain": {"areas": [1, 0.8]}, "params": {"n": 3}},
    "pde": {"geometry": {"kind": "dumbbell", "areas": [1, 0.9], "width": 0.2}, "params": {"h": 0.03125, "mu": 0.3}},
    "appendix-check": {"params": {"betas": [-12.566370614359172], "h": 0.03125}},
}
NUMERIC_STABLE = {"pde", "appendix-check"}


def _run(task, cfg, out, threads):
    env = dict(os.environ, VPL_THREADS=str(threads))
    code = "from vortex_phase_lab.cli import main; import sys; sys.exit(main(sys.argv[1:]))"
    proc = subprocess.run([sys.executable, "-c", code, task, "--config", str(cfg), "--out", str(out)],
                          env=env, capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    return {p.name: p.read_bytes() for p in sorted(Path(out).iterdir())}


def _close(a: bytes, b: bytes, rtol=1e-9) -> bool:
    ta, tb = a.decode().split(), b.decode().split()
    if len(ta) != len(tb):
        return False
    for x, y in zip(ta, tb):
        if x == y:
            continue
        xs, ys = x.strip(",").split(","), y.strip(",").split(",")
        if len(xs) != len(ys):
            return False
        for u, v in zip(xs, ys):
            if u == v:
                continue
            try:
                fu, fv = float(u), float(v)
            except ValueError:
                return False
            if not math.isclose(fu, fv, rel_tol=rtol, abs_tol=1e-15):
                return False
    return True


def test_criterion_10_determinism(tmp_path):
    bad = []
    for task, body in CONFIGS.items():
        cfg = tmp_path / f"{task}.json"
        cfg.write_text(json.dumps({"task": task, **body}))
        r1 = _run(task, cfg, tmp_path / task / "a", 1)
        r2 = _run(task, cfg, tmp_path / task / "b", 1)
        r3 = _run(task, cfg, tmp_path / task / "c", 4)
        if r1 != r2:
            bad.append(f"{task}: runs differ")
        if r1.keys() != r3.keys():
            bad.append(f"{task}: file sets differ across threads")
            continue
        for name in r1:
            if r1[name] != r3[name] and not (task in NUMERIC_STABLE and _close(r1[name], r3[name])):
                bad.append(f"{task}/{name}: differs across thread counts")
    record("10", not bad, "; ".join(bad) if bad else f"{len(CONFIGS)} tasks byte-identical across reruns; across VPL_THREADS=1/4 "
                                            f"byte-identical except pde and appendix-check (rel 1e-9)")
