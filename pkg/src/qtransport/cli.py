"""Command line front end.

Exit codes: 0 success, 1 verification failure, 2 invalid config or budget
exceeded, 3 numerical abort or escalated norm drift.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import automaton as au
from . import extended as ex
from . import grid as gr
from . import wavefunction as wf
from .config import ConfigError, LoadedConfig, ModelCfg, SpectrumCfg, load_config
from .errors import BudgetError, ContractError, InvertibilityError, QTransportError
from .evolution import EvolutionAborted, EvolutionPlan, evolve
from .model import ForceField, builtin, polynomial
from .observables import build_operator, conservation_scan, parse_observable
from .operators import DENSE_CAP, hamiltonian, spectrum

log = logging.getLogger("qtransport")

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
OUTPUT_ENV = "QTRANSPORT_OUTPUT"
PAIRING_TOL = 1e-10


class Context:
    def __init__(self, loaded: LoadedConfig, outdir: Path, seed: int, quiet: bool):
        self.loaded, self.cfg = loaded, loaded.cfg
        self.outdir, self.seed, self.quiet = outdir, seed, quiet
        self.rng = np.random.default_rng(seed)
        self.formats = set(self.cfg.output.formats)
        outdir.mkdir(parents=True, exist_ok=True)

    @property
    def header(self) -> dict:
        return {"config_sha256": self.loaded.sha256, "seed": self.seed}

    def say(self, msg: str):
        if not self.quiet:
            print(msg)

    def write_csv(self, name: str, columns: list[str], rows) -> Path | None:
        if "csv" not in self.formats:
            return None
        buf = io.StringIO()
        buf.write(f"# config_sha256={self.loaded.sha256}\n# seed={self.seed}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(x) for x in row])
        path = self.outdir / name
        path.write_text(buf.getvalue())
        return path

    def write_json(self, name: str, payload: dict) -> Path | None:
        if "json" not in self.formats:
            return None
        path = self.outdir / name
        path.write_text(json.dumps(dict(self.header, **payload), sort_keys=True, indent=2,
                                   default=_json_default) + "\n")
        return path

    def write_snapshot(self, name: str, g, values, basis="sigma", time=0.0, meta=None):
        if "snapshot" not in self.formats:
            return None
        path = self.outdir / name
        gr.write_snapshot(path, g, values, basis=basis, time=time, meta=dict(self.header, **(meta or {})))
        return path


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (complex, np.complexfloating)):
        return f"{float(x.real)!r}{float(x.imag):+}j"
    return str(x)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, complex):
        return {"re": o.real, "im": o.imag}
    return str(o)


# builders ------------------------------------------------------------------

def build_model(m: ModelCfg) -> ForceField:
    if m.name == "polynomial":
        tr = np.asarray(m.time_reversal, dtype=float) if m.time_reversal is not None else None
        return polynomial(m.dim, [t.model_dump() for t in m.terms], time_reversal=tr)
    params = {k: (int(v) if k == "dim" else v) for k, v in m.params.items()}
    try:
        return builtin(m.name, **params)
    except TypeError as exc:
        raise ContractError(f"bad parameters for model {m.name!r}: {exc}") from None


def build_grid(ctx: Context):
    c = ctx.cfg.grid
    return gr.ConfigurationGrid(c.dim, c.n, c.L)


def build_initial(ctx: Context, g):
    ini = ctx.cfg.initial
    signs = None
    if ini.signs is not None:
        if ini.signs.axis > g.dim:
            raise ContractError(f"sign mask axis {ini.signs.axis} exceeds grid dimension {g.dim}")
        coord = np.broadcast_to(g.coord(ini.signs.axis - 1), g.shape)
        signs = np.where(coord < ini.signs.threshold, -1.0, 1.0)
    if ini.family == "uniform":
        q = wf.uniform(g)
        return q.with_values(q.values * signs) if signs is not None else q
    if ini.family == "gaussian":
        return wf.gaussian(g, ini.mean, ini.cov, signs)
    if ini.family == "mixture":
        return wf.mixture(g, ini.weights, ini.means, ini.covs, signs)
    path = ctx.loaded.resolve(ini.path)
    if not path.exists():
        raise ConfigError(f"snapshot file {path} does not exist", ctx.loaded.line_of("initial", "path"))
    sg, values, header = gr.read_snapshot(path)
    if sg != g:
        raise ContractError("snapshot grid differs from the configured grid")
    if np.iscomplexobj(values):
        return wf.to_real(wf.ComplexWaveFunction(g, values, header.get("time", 0.0)))
    return wf.RealWaveFunction(g, values, header.get("time", 0.0))


# commands ------------------------------------------------------------------

def cmd_evolve(ctx: Context) -> int:
    ctx.loaded.require("model", "grid", "initial", "run")
    run = ctx.cfg.run
    f = build_model(ctx.cfg.model)
    g = build_grid(ctx)
    q0 = build_initial(ctx, g)
    monitors = []
    for name in run.monitors:
        spec = parse_observable(name, conserved=name in run.conserved)
        monitors.append(build_operator(spec, f, g, rng=ctx.rng))
    try:
        plan = EvolutionPlan(f, g, run.step_size, run.num_steps, run.scheme, monitors,
                             run.monitor_every, run.snapshot_every, renormalize=run.renormalize,
                             reverse=run.reverse)
    except InvertibilityError as exc:
        raise ConfigError(str(exc), ctx.loaded.line_of("run", "step_size"), "run.step_size") from None
    initial = wf.to_complex(q0) if run.scheme == "step_operator_gamma" else q0
    code = EXIT_OK
    try:
        rec = evolve(plan, initial)
    except EvolutionAborted as exc:
        rec = exc.record
        code = EXIT_NUMERIC
        log.error("evolution aborted: %s", exc)
    if rec.escalated:
        code = EXIT_NUMERIC
    labels = [m.label for m in monitors]
    mon_at = {t: i for i, t in enumerate(rec.monitor_times)}
    rows = []
    for t, nrm in zip(rec.times, rec.norms):
        i = mon_at.get(t)
        vals = [rec.monitor_values[lab][i] if i is not None else None for lab in labels]
        rows.append([t, nrm] + vals)
    ctx.write_csv("evolution.csv", ["time", "norm"] + labels, rows)
    for step, t, values in rec.snapshots:
        basis = "gamma" if np.iscomplexobj(values) else "sigma"
        ctx.write_snapshot(f"snapshot_{step:06d}.qts", g, values, basis, t)
    if rec.final_state is not None:
        basis = "gamma" if np.iscomplexobj(rec.final_state.values) else "sigma"
        ctx.write_snapshot("final.qts", g, rec.final_state.values, basis, rec.final_state.time)
    reports = conservation_scan(rec, labels) if labels and len(rec.times) > 1 else []
    ctx.write_json("conservation.json", {
        "scheme": run.scheme, "step_size": run.step_size, "num_steps": run.num_steps,
        "steps_done": rec.steps_done, "max_norm_drift": rec.max_norm_drift,
        "max_constraint_defect": max(rec.constraint_defects, default=0.0),
        "escalated": rec.escalated, "warnings": rec.warnings,
        "observables": [r.as_dict() for r in reports],
        "hints": {m.label: {"residual": m.meta.get("hint_residual"), "verified": m.meta.get("hint_verified")}
                  for m in monitors if "hint_residual" in m.meta},
    })
    ctx.say(f"evolve: {rec.steps_done}/{run.num_steps} steps, max |norm-1| = {rec.max_norm_drift:.3e}")
    for r in reports:
        ctx.say(f"  {r.label:>10s}  drift {r.max_drift:.3e}  {r.verdict}")
    for w in rec.warnings:
        ctx.say(f"  warning: {w}")
    return code


def cmd_spectrum(ctx: Context) -> int:
    ctx.loaded.require("model", "grid")
    sc = ctx.cfg.spectrum or SpectrumCfg()
    f = build_model(ctx.cfg.model)
    g = build_grid(ctx)
    if g.size > DENSE_CAP:
        raise BudgetError(f"grid has n^dim = {g.size} > {DENSE_CAP} samples; dense diagonalization is "
                          "capped, reduce n (iterative eigensolvers are not configured)")
    h = hamiltonian(f, g)
    gen = None
    if sc.generator:
        gen = build_operator(parse_observable(sc.generator), f, g)
    s = spectrum(h, sc.k, generator=gen)
    verdict = "pass" if s.pairing_defect < PAIRING_TOL else "fail"
    rows = []
    for i, (e, r) in enumerate(zip(s.eigenvalues, s.residuals)):
        row = [i, e, r]
        if gen is not None:
            row.append(s.generator_values[i])
        rows.append(row)
    cols = ["index", "E", "residual"] + ([f"<{gen.label}>"] if gen is not None else [])
    ctx.write_csv("spectrum.csv", cols, rows)
    for i in range(min(sc.snapshots, len(s.eigenvalues))):
        ctx.write_snapshot(f"eigenvector_{i:03d}.qts", g, s.eigenvectors[i], "sigma", 0.0,
                           {"E": float(s.eigenvalues[i])})
    ctx.write_json("spectrum.json", {"pairing_defect": s.pairing_defect, "pairing_verdict": verdict,
                                     "max_residual": float(s.residuals.max()),
                                     "eigenvalues": s.eigenvalues.tolist()})
    ctx.say(f"spectrum: {len(s.eigenvalues)} eigenpairs, max residual {s.residuals.max():.2e}, "
            f"pairing defect {s.pairing_defect:.2e} ({verdict})")
    return EXIT_OK if verdict == "pass" and s.residuals.max() < 1e-8 else EXIT_VERIFY


def _automaton_from_cfg(ac) -> au.DiscreteAutomaton:
    if ac.permutation is not None:
        return au.DiscreteAutomaton.from_permutation(ac.permutation)
    return au.DiscreteAutomaton.from_cycles(ac.num_states, ac.cycles)


def _initial_discrete(ac, m: int, rng) -> au.DiscreteWaveFunction:
    probs = ac.exact_probabilities()
    if probs is None:
        return au.random_wave_function(m, rng, exact=True)
    if len(probs) != m:
        raise ContractError(f"'probabilities' has {len(probs)} entries for {m} states")
    return au.DiscreteWaveFunction.from_probabilities(probs, ac.signs)


def cmd_automaton(ctx: Context) -> int:
    ctx.loaded.require("automaton")
    ac = ctx.cfg.automaton
    a = _automaton_from_cfg(ac)
    q = _initial_discrete(ac, a.num_states, ctx.rng)
    w = au.overall_distribution(a, q, ac.horizon)
    rows = [[" ".join(map(str, tr)), p] for tr, p in w.support]
    ctx.write_csv("overall_distribution.csv", ["trajectory", "probability"], rows)
    rep = au.equivalence_report(a, q, ac.horizon, ctx.rng, corrupt=ac.corrupt)
    ctx.write_json("automaton.json", {"partition_sum": str(w.partition_sum),
                                      "order": a.order(), "equivalence": rep.as_dict()})
    ctx.say(f"automaton: M={a.num_states}, T={ac.horizon}, Z={w.partition_sum}, "
            f"equivalence {'pass' if rep.passed else 'FAIL'}")
    return EXIT_OK if rep.passed else EXIT_VERIFY


def _extended_checks(ctx: Context, ec) -> dict:
    space = ex.CyclicSpace(ec.modulus, ec.horizon, ec.epsilon)
    if ec.permutation is not None:
        force = ex.CycleForce.from_permutation(space, ec.permutation)
    elif ec.force is not None:
        force = ex.CycleForce.from_force_field(space, build_model(ec.force))
    else:
        force = ex.CycleForce.free(space)
    if ec.q_in is not None:
        q_in = np.asarray(ec.q_in, dtype=float)
        q_in = q_in / np.linalg.norm(q_in)
    else:
        q_in = ctx.rng.normal(size=ec.modulus)
        q_in /= np.linalg.norm(q_in)
    w = ex.extended_weight(space, q_in, force, include_delta=ec.include_delta)
    z = w.total()
    out = {"modulus": ec.modulus, "horizon": ec.horizon, "include_delta": ec.include_delta,
           "force_kind": force.kind, "Z": {"re": z.real, "im": z.imag}, "norm_defect": abs(z - 1),
           "dense": w.dense is not None, "kernel_resolution_defect": space.resolution_defect()}
    if w.dense is not None:
        mg = ex.marginal_gamma(w)
        chain = ex.gamma_chain(space, q_in, w.q_f, force, ec.include_delta)
        out["gamma_marginal_residual"] = float(np.max(np.abs(mg - chain)))
        try:
            ms = ex.marginal_sigma(w)
            out["sigma_marginal_min"] = float(ms.min())
            if force.kind == "permutation" and ec.modulus <= au.DENSE_MAX_STATES \
                    and ec.horizon <= au.DENSE_MAX_HORIZON:
                a = au.DiscreteAutomaton(tuple(int(i) for i in ec.permutation)) if ec.permutation \
                    else au.DiscreteAutomaton(tuple(range(ec.modulus)))
                dq = au.DiscreteWaveFunction(q_in)
                out["sigma_marginal_residual"] = float(np.max(np.abs(ms - au.dense_overall_weights(a, dq, ec.horizon))))
        except QTransportError as exc:
            out["sigma_marginal_error"] = str(exc)
        if ec.modulus <= 4 and "csv" in ctx.formats:
            m, t = ec.modulus, ec.horizon
            rows = []
            for flat, val in enumerate(w.dense.ravel()):
                if abs(val) < 1e-15:
                    continue
                idx = np.unravel_index(flat, w.dense.shape)
                sig = [idx[a] for a in w.sigma_axes]
                gam = [int(space.gamma[idx[a]]) for a in w.gamma_axes]
                rows.append([" ".join(map(str, sig)), " ".join(map(str, gam)), val.real, val.imag])
            ctx.write_csv("extended_paths.csv", ["sigma_path", "gamma_path", "re", "im"], rows)
    tol = 1e-10
    passed = out["norm_defect"] < tol and out.get("gamma_marginal_residual", 0.0) < tol \
        and out.get("sigma_marginal_residual", 0.0) < tol and out.get("sigma_marginal_min", 0.0) >= -tol \
        and "sigma_marginal_error" not in out
    out["passed"] = bool(passed)
    return out


def cmd_extended(ctx: Context) -> int:
    ctx.loaded.require("extended")
    rep = _extended_checks(ctx, ctx.cfg.extended)
    ctx.write_json("extended.json", rep)
    ctx.say(f"extended: Z-1 = {rep['norm_defect']:.3e}, {'pass' if rep['passed'] else 'FAIL'}")
    return EXIT_OK if rep["passed"] else EXIT_VERIFY


def cmd_verify(ctx: Context) -> int:
    if ctx.cfg.automaton is None and ctx.cfg.extended is None:
        raise ConfigError("verify needs an 'automaton' and/or 'extended' section")
    report: dict = {}
    ok = True
    if ctx.cfg.automaton is not None:
        ac = ctx.cfg.automaton
        a = _automaton_from_cfg(ac)
        q = _initial_discrete(ac, a.num_states, ctx.rng)
        rep = au.equivalence_report(a, q, ac.horizon, ctx.rng, corrupt=ac.corrupt)
        report["automaton"] = rep.as_dict()
        ok &= rep.passed
        if ac.random is not None and ac.random.count:
            rc = ac.random
            worst, zs, minw, allpass = 0.0, [], np.inf, True
            for _ in range(rc.count):
                m = int(ctx.rng.integers(1, rc.max_states + 1))
                t = int(ctx.rng.integers(0, rc.max_horizon + 1))
                ra = au.random_automaton(m, ctx.rng)
                rq = au.random_wave_function(m, ctx.rng, exact=rc.exact)
                r = au.equivalence_report(ra, rq, t, ctx.rng, corrupt=ac.corrupt)
                worst = max(worst, r.max_residual)
                zs.append(r.partition_sum)
                minw = min(minw, r.min_weight)
                allpass &= r.passed
            report["random_automata"] = {"count": rc.count, "max_residual": worst,
                                         "max_partition_defect": float(max(abs(z - 1) for z in zs)),
                                         "min_weight": float(minw), "passed": bool(allpass)}
            ok &= allpass
    if ctx.cfg.extended is not None:
        rep = _extended_checks(ctx, ctx.cfg.extended)
        report["extended"] = rep
        ok &= rep["passed"]
    report["passed"] = bool(ok)
    ctx.write_json("verify.json", report)
    ctx.say(f"verify: {'pass' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_VERIFY


COMMANDS = {"evolve": cmd_evolve, "spectrum": cmd_spectrum, "verify": cmd_verify,
            "automaton": cmd_automaton, "extended": cmd_extended}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qtransport", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="YAML run configuration")
        sp.add_argument("--output", help="output directory (overrides config and $%s)" % OUTPUT_ENV)
        sp.add_argument("--seed", type=int, help="random seed (overrides run.seed)")
        sp.add_argument("--quiet", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        loaded = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    cfg = loaded.cfg
    outdir = Path(args.output or os.environ.get(OUTPUT_ENV) or loaded.resolve(cfg.output.directory))
    seed = args.seed if args.seed is not None else (cfg.run.seed if cfg.run is not None else 0)
    ctx = Context(loaded, outdir, seed, args.quiet)
    try:
        return COMMANDS[args.command](ctx)
    except (ConfigError, ContractError, BudgetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except QTransportError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
