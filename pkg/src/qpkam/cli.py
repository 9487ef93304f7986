"""Command line front end: ``qpkam <group> <command> [options]``.

Every run writes into ``--out`` (default ``out``) together with a
``manifest.json`` carrying the config hash.  Outputs are byte-deterministic:
floats are written in repr form and each task draws its seed from the run
seed and its task index, so the worker count does not change any byte.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from . import torusmap as tm
from .arith import verify_dc
from .dynamics import Cocycle, is_uniformly_hyperbolic, lyapunov, rotation_number
from .errors import CertificateViolation, ConfigError, QPKamError
from .kam import (KamParams, ScaleSchedule, conjugacy_defect, kam_loop, kam_loop_ck, kam_step,
                  verify_scale_ledger, window_covering)
from .mat2 import rotation
from .schrodinger import (SchrodingerModel, SpectralCurve, curve_csv, curve_svg, holder_fit, locate_gap,
                          spectral_sweep, thouless_check)
from .torusmap import TorusPoly

THREADS_ENV = "QPKAM_MAX_THREADS"
GOLDEN = (math.sqrt(5) - 1) / 2

DEFAULTS = {
    "mode": "desk",
    "seed": 20240601,
    "alpha": GOLDEN,
    "tau": 1.2,
    "kappa": None,
    "N_max": 10000,
    "A": {"rotation": 0.7},
    "perturbation": {"n_modes": 160, "amplitude": 1e-4, "decay": 30.0},
    "step": {"r": 0.02, "r_prime": 0.01},
    "kam": {"n_scales": 3, "sigma": 0.1, "D": 2, "k": 8.0, "M": 10, "c_small": 1.0, "C0": 1e3},
    "model": {"potential": "amo", "lam": 0.5},
    "energies": {"start": -3.0, "stop": 3.0, "num": 241},
    "budget": {"n_iters": 10000, "samples": 8, "ids_iters": 100000},
    "holder": {"gap_label": 1, "eps_log10": [-6.0, -3.0, 7], "target": "IDS", "n_iters": 1000000},
    "thouless": {"energies": {"start": -2.9, "stop": 2.9, "num": 50}, "tolerance": 5e-2},
}

PRESETS = {
    "paper-faithful": {"mode": "paper-faithful", "tau": 1.5,
                       "kam": {"sigma": 0.1, "D": 110, "k": 825.0, "M": 10 ** 10, "c_small": 1e-3, "C0": 1e3},
                       "ledger": {"j_max": 20, "A_norm": 1.0}},
    "desk": {"mode": "desk"},
    "amo-half": {"model": {"potential": "amo", "lam": 0.5}},
    "amo-quarter": {"model": {"potential": "amo", "lam": 0.25}},
    "free": {"model": {"potential": "free", "lam": 0.0}},
}

# reduced budgets for the reproduction presets (kept small so the run is quick)
REPRO = {
    "thm11": {"A": {"rotation": 0.7}, "perturbation": {"n_modes": 160, "amplitude": 1e-4, "decay": 30.0},
              "kam": {"n_scales": 3}},
    "thm12": {"energies": {"start": -3.0, "stop": 3.0, "num": 121},
              "budget": {"n_iters": 4000, "samples": 8, "ids_iters": 40000},
              "holder": {"gap_label": 1, "eps_log10": [-5.0, -3.0, 5], "target": "IDS", "n_iters": 200000}},
}


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# config
# --------------------------------------------------------------------------

def _merge(base, extra):
    out = dict(base)
    for k, v in (extra or {}).items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def load_config(path=None, preset=None, overrides=None):
    cfg = dict(DEFAULTS)
    if preset is not None:
        if preset not in PRESETS:
            raise UsageError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        cfg = _merge(cfg, PRESETS[preset])
    if path is not None:
        text = Path(path).read_text()
        data = yaml.safe_load(text)
        if not data:
            raise UsageError("empty config")
        if not isinstance(data, dict):
            raise ConfigError("config must be a mapping")
        cfg = _merge(cfg, data)
    cfg = _merge(cfg, overrides)
    if cfg["mode"] not in ("desk", "paper-faithful"):
        raise ConfigError("mode must be paper-faithful or desk")
    return cfg


def config_hash(cfg):
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=repr)
    return hashlib.sha256(blob.encode()).hexdigest()


def task_seed(seed, index):
    """64-bit seed for task ``index``: counter-based split of the run seed."""
    ss = np.random.SeedSequence(entropy=int(seed) & (2 ** 64 - 1), spawn_key=(int(index),))
    return int(ss.generate_state(1, np.uint64)[0])


def effective_workers(requested):
    cap = os.environ.get(THREADS_ENV)
    w = max(1, int(requested))
    if cap:
        w = min(w, max(1, int(cap)))
    return w


def _pmap(fn, items, workers):
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


# --------------------------------------------------------------------------
# builders
# --------------------------------------------------------------------------

def _alpha_dc(cfg):
    return verify_dc(cfg["alpha"], cfg["kappa"], cfg["tau"], int(cfg["N_max"]))


def _params(cfg):
    k = cfg["kam"]
    return KamParams(sigma=float(k["sigma"]), D=int(k["D"]), c_small=float(k["c_small"]), k=float(k["k"]),
                     M=int(k["M"]), mode=cfg["mode"], C0=float(k["C0"]))


def _matrix(cfg):
    A = cfg["A"]
    if isinstance(A, dict) and "rotation" in A:
        return rotation(float(A["rotation"]))
    if isinstance(A, dict) and "diag" in A:
        return np.diag([float(A["diag"]), 1.0 / float(A["diag"])])
    M = np.asarray(A, dtype=float)
    if M.shape != (2, 2) or abs(np.linalg.det(M) - 1) > 1e-10:
        raise ConfigError("A must be a 2x2 matrix of determinant 1")
    return M


def _perturbation(cfg, seed):
    """Real sl(2)-valued trigonometric polynomial with exponentially decaying modes."""
    p = cfg["perturbation"]
    if "file" in p:
        return tm.loads(Path(p["file"]).read_text())
    rng = np.random.default_rng(seed)
    terms = {}
    for n in range(1, int(p["n_modes"]) + 1):
        a, b, c = rng.normal(size=3) * float(p["amplitude"]) * math.exp(-n / float(p["decay"]))
        X = np.array([[a, b + c], [b - c, -a]], dtype=complex)
        terms[(n,)] = X / 2
        terms[(-n,)] = X / 2
    return TorusPoly.from_dict(terms, period=1, value_kind="algebra")


def _model(cfg):
    m = cfg["model"]
    adc = cfg["alpha"]
    if m["potential"] == "amo":
        return SchrodingerModel.almost_mathieu(float(m["lam"]), adc)
    if m["potential"] == "free":
        return SchrodingerModel.free(adc)
    if m["potential"] == "cos":
        terms = {}
        for n, a in m["terms"].items():
            terms[(int(n),)] = terms.get((int(n),), 0) + float(a) / 2
            terms[(-int(n),)] = terms.get((-int(n),), 0) + float(a) / 2
        V = TorusPoly.from_dict(terms, period=1, value_kind="scalar")
        return SchrodingerModel(V, float(m["lam"]), adc)
    raise ConfigError(f"unknown potential {m['potential']!r}")


def _grid(spec):
    if isinstance(spec, dict):
        return np.linspace(float(spec["start"]), float(spec["stop"]), int(spec["num"]))
    return np.asarray(spec, dtype=float)


# --------------------------------------------------------------------------
# output
# --------------------------------------------------------------------------

class Run:
    def __init__(self, args, cfg):
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.cfg = cfg
        self.hash = config_hash(cfg)
        self.workers = effective_workers(args.workers)
        self.files = []

    def write(self, name, text):
        (self.out / name).write_text(text)
        self.files.append(name)

    def csv(self, name, header, rows):
        lines = [f"# config_hash={self.hash}", ",".join(header)]
        lines += [",".join(_fmt(v) for v in row) for row in rows]
        self.write(name, "\n".join(lines) + "\n")

    def finish(self, command, status):
        man = {"command": command, "config_hash": self.hash, "files": sorted(self.files),
               "status": status, "version": __version__}
        (self.out / "manifest.json").write_text(json.dumps(man, sort_keys=True, indent=1) + "\n")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_arith_dc(args):
    try:
        adc = verify_dc(args.alpha, args.kappa, args.tau, args.nmax)
    except QPKamError as exc:
        print(f"not Diophantine: {exc}")
        return 1
    print(f"alpha={adc.alpha!r} kappa={adc.kappa!r} tau={adc.tau!r} verified_up_to={adc.verified_up_to}")
    return 0


def cmd_ledger(args, cfg):
    run = Run(args, cfg)
    led = cfg.get("ledger", {"j_max": 20, "A_norm": 1.0})
    params = _params(cfg)
    rep = verify_scale_ledger(params, float(cfg["tau"]), float(led["A_norm"]), int(led["j_max"]))
    cover = window_covering(params, int(led["j_max"]))
    lines = [f"config_hash {run.hash}"]
    for name in ("i", "ii", "iii", "iv"):
        lines.append(f"chain {name} holds={rep.chains[name]} first_failure={rep.first_failure[name]} "
                     f"min_slack={min(rep.slack[name])!r}")
    lines.append(f"window_covering {cover}")
    lines.append(f"M_admissible {rep.admissible_M}")
    ok = rep.all_hold and cover
    lines.append(f"verdict {'all chains hold' if ok else 'FAIL'} for j <= {rep.j_max}")
    text = "\n".join(lines) + "\n"
    run.write("ledger.txt", text)
    print(text, end="")
    run.finish("ledger", "ok" if ok else "fail")
    return 0 if ok else 1


def cmd_kam(args, cfg):
    run = Run(args, cfg)
    seed = task_seed(cfg["seed"], 0)
    A = _matrix(cfg)
    f = _perturbation(cfg, seed)
    params = _params(cfg)
    adc = _alpha_dc(cfg)
    sched = ScaleSchedule.build(params, float(np.linalg.norm(A, 2)), int(cfg["kam"]["n_scales"]))
    status = "ok"
    if args.action == "step":
        try:
            st = kam_step(A, f, float(cfg["step"]["r"]), float(cfg["step"]["r_prime"]), params, adc)
        except CertificateViolation as exc:
            st, status = exc.step, "fail"
        defect = conjugacy_defect(A, f, adc.alpha_vec, st.B, st.A_plus, st.f_plus)
        site = "-" if st.resonance is None or st.resonance.site is None else ",".join(map(str, st.resonance.site))
        lines = [f"config_hash {run.hash}", f"branch {st.branch}", f"site {site}", f"eps {st.eps!r}",
                 f"N {st.N!r}", f"conjugacy_defect {defect!r}"]
        for k in sorted(k for k in st.certificates if k != "bounds"):
            lines.append(f"cert {k} {st.certificates[k]!r} bound {st.certificates['bounds'].get(k)!r}")
        lines.append(f"violations {'|'.join(st.violations) or '-'}")
        run.write("step.txt", "\n".join(lines) + "\n")
        run.write("B.txt", tm.dumps(st.B))
        run.write("f_plus.txt", tm.dumps(st.f_plus))
        if st.violations:
            status = "fail"
    else:
        try:
            if args.action == "loop":
                cert = kam_loop(A, f, sched, params=params, alpha_dc=adc)
            else:
                cert = kam_loop_ck(A, f, params, sched, alpha_dc=adc)
        except CertificateViolation as exc:
            print(f"certificate violation: {exc}", file=sys.stderr)
            run.finish(f"kam {args.action}", "fail")
            return 1
        run.write("certificate.txt", f"config_hash {run.hash}\n" + cert.to_text())
        if cert.violations and params.paper:
            status = "fail"
    run.finish(f"kam {args.action}", status)
    print(f"kam {args.action}: {status} ({run.out})")
    return 0 if status == "ok" else 1


def _dyn_task(item):
    action, cfg, E, seed = item
    model = _model(cfg)
    coc = Cocycle.schrodinger_family(model.V, model.lam, float(E), model.alpha)
    b = cfg["budget"]
    n = int(b["n_iters"])
    if action == "le":
        est = lyapunov(coc, n, int(b["samples"]), seed)
        return (float(E), est.value, est.error_bar, n)
    if action == "rot":
        rho = rotation_number(coc, True, n, int(b["samples"]), seed)
        return (float(E), rho, 1.0 / n, n)
    verdict, _ = is_uniformly_hyperbolic(coc, horizon=16, grid=256, seed=seed)
    return (float(E), verdict, "-", 16)


def cmd_dyn(args, cfg):
    run = Run(args, cfg)
    E = _grid(cfg["energies"])
    items = [(args.action, cfg, float(e), task_seed(cfg["seed"], i)) for i, e in enumerate(E)]
    rows = _pmap(_dyn_task, items, run.workers)
    run.csv(f"dyn_{args.action}.csv", ["parameter", "value", "error_bar", "n_iters"], rows)
    run.finish(f"dyn {args.action}", "ok")
    print(f"dyn {args.action}: {len(rows)} rows ({run.out})")
    return 0


def _sweep_task(item):
    cfg, E, seed = item
    b = dict(cfg["budget"], seed=seed)
    return spectral_sweep(_model(cfg), np.atleast_1d(E), b)


def _sweep(cfg, workers, seed):
    """Sweep split into contiguous chunks; the IDS uses one seed for all energies
    so it stays exactly monotone, the LE is per-energy."""
    E = _grid(cfg["energies"])
    chunks = np.array_split(E, max(1, min(len(E), 4 * workers)))
    parts = _pmap(_sweep_task, [(cfg, c, seed) for c in chunks if len(c)], workers)
    curve = SpectralCurve(np.concatenate([p.energies for p in parts]),
                          np.concatenate([p.L_values for p in parts]),
                          np.concatenate([p.N_values for p in parts]),
                          {"budget": parts[0].metadata["budget"]},
                          np.concatenate([p.L_err for p in parts]),
                          tuple(v for p in parts for v in p.uh_verdicts))
    drops = np.flatnonzero(np.diff(curve.N_values) < -1e-6)
    curve.metadata["monotonicity_violations"] = [float(curve.energies[i + 1]) for i in drops]
    return curve


def _write_curve(run, curve):
    run.write("sweep.csv", f"# config_hash={run.hash}\n" + curve_csv(curve))
    run.write("N.svg", curve_svg(curve, "N"))
    run.write("L.svg", curve_svg(curve, "L"))


def _holder_targets(cfg, seed):
    h = cfg["holder"]
    model = _model(cfg)
    lo, hi, num = h["eps_log10"]
    eps = np.logspace(float(lo), float(hi), int(num))
    if "E0" in h:
        E0s = [float(e) for e in np.atleast_1d(h["E0"])]
    else:
        level = (int(h["gap_label"]) * float(cfg["alpha"])) % 1.0
        E0s = list(locate_gap(model, level, int(h["n_iters"]), int(cfg["budget"]["samples"]), seed))
    return model, eps, E0s


def _holder_task(item):
    cfg, E0, eps, seed = item
    h = cfg["holder"]
    fit = holder_fit(_model(cfg), E0, eps, h["target"], int(h["n_iters"]), int(cfg["budget"]["samples"]), seed)
    return fit


def _holder(cfg, workers):
    seed = task_seed(cfg["seed"], 0)
    _, eps, E0s = _holder_targets(cfg, seed)
    fits = _pmap(_holder_task, [(cfg, e, eps, seed) for e in E0s], workers)
    return [json.loads(f.to_json()) for f in fits]


def cmd_spec(args, cfg):
    run = Run(args, cfg)
    seed = task_seed(cfg["seed"], 0)
    status = "ok"
    if args.action == "sweep":
        curve = _sweep(cfg, run.workers, seed)
        _write_curve(run, curve)
        if curve.metadata["monotonicity_violations"]:
            status = "fail"
    elif args.action == "thouless":
        curve = _sweep(cfg, run.workers, seed)
        tol = float(cfg["thouless"]["tolerance"])
        rows = []
        for e in _grid(cfg["thouless"]["energies"]):
            ld, lt, d = thouless_check(curve, float(e))
            rows.append((float(e), ld, lt, d))
        run.csv("thouless.csv", ["E", "L_direct", "L_thouless", "defect"], rows)
        if max(r[3] for r in rows) > tol:
            status = "fail"
    else:
        fits = _holder(cfg, run.workers)
        run.write("holder.json", json.dumps({"config_hash": run.hash, "fits": fits}, sort_keys=True, indent=1) + "\n")
    run.finish(f"spec {args.action}", status)
    print(f"spec {args.action}: {status} ({run.out})")
    return 0 if status == "ok" else 1


def cmd_repro(args, cfg):
    cfg = _merge(cfg, REPRO[args.experiment])
    run = Run(args, cfg)
    if args.experiment == "thm11":
        adc = _alpha_dc(cfg)
        params = _params(cfg)
        A = _matrix(cfg)
        f = _perturbation(cfg, task_seed(cfg["seed"], 0))
        sched = ScaleSchedule.build(params, float(np.linalg.norm(A, 2)), int(cfg["kam"]["n_scales"]))
        cert = kam_loop_ck(A, f, params, sched, alpha_dc=adc, uh_cross_check=False)
        run.write("certificate.txt", f"config_hash {run.hash}\n" + cert.to_text())
        F = [s.F_norm0 for s in cert.scales]
        ok = (len(F) >= 1 and all(b < a for a, b in zip(F, F[1:]))
              and all(s.sharp_product <= 8 * cert.A_norm for s in cert.scales))
    else:
        curve = _sweep(cfg, run.workers, task_seed(cfg["seed"], 0))
        _write_curve(run, curve)
        fits = _holder(cfg, run.workers)
        run.write("holder.json", json.dumps({"config_hash": run.hash, "fits": fits}, sort_keys=True, indent=1) + "\n")
        ok = not curve.metadata["monotonicity_violations"]
    run.finish(f"repro {args.experiment}", "ok" if ok else "fail")
    print(f"repro {args.experiment}: {'ok' if ok else 'fail'} ({run.out})")
    return 0 if ok else 1


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def _common(p):
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--preset", help=f"named preset: {', '.join(sorted(PRESETS))}")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--workers", type=int, default=1, help=f"worker processes (capped by ${THREADS_ENV})")
    p.add_argument("--seed", type=int, help="64-bit run seed")
    p.add_argument("--mode", choices=["desk", "paper-faithful"])


def build_parser():
    ap = argparse.ArgumentParser(prog="qpkam", description="KAM almost-reducibility and spectral tools")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="group")

    kam = sub.add_parser("kam", help="KAM step / multi-scale loop / C^k loop")
    kam.add_argument("action", choices=["step", "loop", "ck"])
    _common(kam)

    led = sub.add_parser("ledger", help="check the constant chains")
    _common(led)

    dyn = sub.add_parser("dyn", help="Lyapunov exponent, rotation number, UH verdict over an energy grid")
    dyn.add_argument("action", choices=["le", "rot", "uh"])
    _common(dyn)

    spec = sub.add_parser("spec", help="spectral sweep, Thouless check, Hoelder fit")
    spec.add_argument("action", choices=["sweep", "thouless", "holder"])
    _common(spec)

    rep = sub.add_parser("repro", help="reproduction presets")
    rep.add_argument("experiment", choices=sorted(REPRO))
    _common(rep)

    ar = sub.add_parser("arith", help="Diophantine checks")
    ar.add_argument("action", choices=["dc"])
    ar.add_argument("--alpha", type=float, required=True)
    ar.add_argument("--kappa", type=float)
    ar.add_argument("--tau", type=float, required=True)
    ar.add_argument("--nmax", type=int, default=10 ** 4)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.group is None:
        ap.print_usage(sys.stderr)
        return 2
    try:
        if args.group == "arith":
            return cmd_arith_dc(args)
        over = {}
        if args.seed is not None:
            over["seed"] = args.seed
        if args.mode is not None:
            over["mode"] = args.mode
        cfg = load_config(args.config, args.preset, over)
        handler = {"kam": cmd_kam, "ledger": cmd_ledger, "dyn": cmd_dyn, "spec": cmd_spec,
                   "repro": cmd_repro}[args.group]
        return handler(args, cfg)
    except UsageError as exc:
        ap.print_usage(sys.stderr)
        print(f"qpkam: error: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"qpkam: config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
