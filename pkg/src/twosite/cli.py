"""Batch command-line interface.

Every experiment is a subcommand reading a JSON configuration and emitting
deterministic CSV/JSON artifacts plus a run manifest into the output
directory:

    twosite zero-dynamics --config fig4.json --out out/fig4
    twosite scan --kind eigQ --config fig6b.json --out out/fig6b
    twosite stabilize --config fig7a.json --out out/fig7a
    twosite track --config fig8.json --out out/fig8
    twosite equilibrium --y1 1.0 --yhat2 0.0 --out out/eq

Exit codes: 0 success, 1 configuration/validation error, 2 numerical failure.
Configurations reproducing the packaged demonstration scenarios ship with the
package (``twosite.data.configs``).
"""

import argparse
import itertools
import json
import math
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import analysis, controller, model, normal_form, sim, zero_dynamics
from .artifacts import RunManifest, file_sha256, write_csv, write_json
from .params import ParameterError, SystemParams, load_params


class ValidationError(ValueError):
    """Configuration or argument error (exit code 1)."""


NUMERICAL_ERRORS = (
    analysis.NoEquilibriumError,
    normal_form.NonConvergenceError,
    normal_form.SingularityError,
    controller.ControllerFault,
    zero_dynamics.ZeroDynamicsFault,
    sim.IntegrationError,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def _cfg_get(cfg, key, kind, source, default=None, required=False):
    if key not in cfg:
        if required:
            raise ValidationError(f"{source}: missing required key {key!r}")
        return default
    val = cfg[key]
    if kind is float:
        if not isinstance(val, (int, float)) or isinstance(val, bool):
            raise ValidationError(f"{source}: {key}: expected a number, got {val!r}")
        return float(val)
    if kind is int:
        if not isinstance(val, int) or isinstance(val, bool):
            raise ValidationError(f"{source}: {key}: expected an integer, got {val!r}")
        return val
    if kind is str:
        if not isinstance(val, str):
            raise ValidationError(f"{source}: {key}: expected a string, got {val!r}")
        return val
    if kind is list:
        if not isinstance(val, list):
            raise ValidationError(f"{source}: {key}: expected a list, got {val!r}")
        return val
    raise TypeError(kind)


def _load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh), str(path)
    except FileNotFoundError:
        raise ValidationError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from None


def _load_params_arg(path):
    if path is None:
        ref = resources.files("twosite.data").joinpath("params_table1.txt")
        with resources.as_file(ref) as real:
            return SystemParams.table1(), "builtin:params_table1.txt", file_sha256(real)
    try:
        p = load_params(path)
    except FileNotFoundError:
        raise ValidationError(f"parameter file not found: {path}") from None
    except ParameterError as exc:
        raise ValidationError(str(exc)) from None
    return p, str(path), file_sha256(path)


def _poles(cfg, key, source, default):
    raw = cfg.get(key)
    if raw is None:
        return default
    if not isinstance(raw, list) or not raw:
        raise ValidationError(f"{source}: {key}: expected a non-empty list of roots")
    roots = []
    for item in raw:
        if isinstance(item, (int, float)) and not isinstance(item, bool):
            roots.append(complex(item))
        elif (isinstance(item, list) and len(item) == 2
              and all(isinstance(v, (int, float)) for v in item)):
            roots.append(complex(item[0], item[1]))
        else:
            raise ValidationError(
                f"{source}: {key}: each root must be a number or [re, im], got {item!r}")
    return roots


def _integrator(cfg, source, horizon, sample_dt, rtol=1e-8, atol=1e-10):
    return sim.IntegratorConfig(
        rtol=_cfg_get(cfg, "rtol", float, source, default=rtol),
        atol=_cfg_get(cfg, "atol", float, source, default=atol),
        max_step=_cfg_get(cfg, "max_step", float, source, default=math.inf),
        horizon=_cfg_get(cfg, "horizon", float, source, default=horizon),
        sample_dt=_cfg_get(cfg, "sample_dt", float, source, default=sample_dt))


def _expand_initial_conditions(cfg, source):
    raw = cfg.get("initial_conditions")
    if raw is None:
        raise ValidationError(f"{source}: missing required key 'initial_conditions'")
    if isinstance(raw, list):
        if not raw:
            raise ValidationError(f"{source}: initial_conditions: list is empty")
        out = []
        for i, item in enumerate(raw):
            if not (isinstance(item, list) and len(item) == 4):
                raise ValidationError(
                    f"{source}: initial_conditions[{i}]: expected 4 numbers")
            out.append(np.asarray(item, dtype=float))
        return out
    if isinstance(raw, dict):
        axes = []
        for key in ("eta1", "eta2", "eta3", "eta4"):
            if key not in raw:
                raise ValidationError(f"{source}: initial_conditions: missing {key!r}")
            v = raw[key]
            axes.append([float(x) for x in v] if isinstance(v, list) else [float(v)])
        out = [np.array(combo) for combo in itertools.product(*axes)]
        if not out:
            raise ValidationError(f"{source}: initial_conditions: grid is empty")
        return out
    raise ValidationError(
        f"{source}: initial_conditions: expected a list or an axis mapping")


def _outdir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(args, command, cfg, params_path, params_sha):
    return RunManifest(command=command, argv=sys.argv[1:], config=cfg,
                       params_path=params_path, params_sha256=params_sha,
                       seed=args.seed, workers=args.workers)


# ---------------------------------------------------------------------------
# Subcommands.
# ---------------------------------------------------------------------------

def cmd_zero_dynamics(args):
    p, ppath, psha = _load_params_arg(args.params)
    cfg, source = _load_config(args.config)
    y1ref = _cfg_get(cfg, "y1ref", float, source, required=True)
    y2ref = _cfg_get(cfg, "y2ref", float, source, required=True)
    method = _cfg_get(cfg, "method", str, source, default="reduced")
    if method not in ("reduced", "full_state"):
        raise ValidationError(f"{source}: method: must be 'reduced' or 'full_state'")
    icfg = _integrator(cfg, source, horizon=120.0, sample_dt=0.2,
                       rtol=1e-7, atol=1e-9)
    etas = _expand_initial_conditions(cfg, source)
    out = _outdir(args)
    man = _manifest(args, "zero-dynamics", cfg, ppath, psha)

    summary = {"y1ref": y1ref, "y2ref": y2ref, "method": method,
               "trajectories": []}
    for i, eta0 in enumerate(etas):
        traj = zero_dynamics.simulate_zero_dynamics(p, eta0, y1ref, y2ref,
                                                    cfg=icfg, method=method)
        eta = traj.channels["eta"]
        F = traj.channels["F"]
        path = out / f"traj_{i:03d}.csv"
        write_csv(path, {
            "t": traj.t,
            "eta1": eta[:, 0], "eta2": eta[:, 1],
            "eta3": eta[:, 2], "eta4": eta[:, 3],
            "F1": F[:, 0], "F2": F[:, 1], "F3": F[:, 2], "F4": F[:, 3],
        })
        man.add_output(path)
        n = len(eta)
        tail = slice(int(0.8 * n), n)
        drift = float(np.polyfit(traj.t[tail], eta[tail, 3], 1)[0])
        converged = bool(np.ptp(eta[tail, :3], axis=0).max() < 1e-3)
        summary["trajectories"].append({
            "file": path.name,
            "eta0": eta0,
            "converged": converged,
            "eta4_drift_rate": drift,
            "max_residual_tail": float(np.abs(F[tail, :3]).max()),
        })
    man.add_output(write_json(out / "summary.json", summary))
    man.write(out / "manifest.json")
    return 0


def _scan_singularity(p, cfg, source, out, man, workers):
    variant = _cfg_get(cfg, "variant", str, source, default="redefined")
    if variant not in ("original", "redefined"):
        raise ValidationError(f"{source}: variant: must be 'original' or 'redefined'")
    n1 = _cfg_get(cfg, "n1", int, source, default=201)
    n2 = _cfg_get(cfg, "n2", int, source, default=201)
    if n1 < 1 or n2 < 1:
        raise ValidationError(f"{source}: n1/n2: grid sizes must be >= 1")
    lo = _cfg_get(cfg, "lo", float, source, default=-math.pi)
    hi = _cfg_get(cfg, "hi", float, source, default=math.pi)
    scan = normal_form.singularity_scan(p, variant=variant, n1=n1, n2=n2,
                                        lo=lo, hi=hi, workers=workers)
    rows = list(scan.rows())
    path = out / "singularity.csv"
    write_csv(path, {
        "x_e1": [r[0] for r in rows],
        "x_e3": [r[1] for r in rows],
        "detA": [r[2] for r in rows],
        "detDPhi": [r[3] for r in rows],
        "flags": [r[4] for r in rows],
    })
    man.add_output(path)
    man.add_output(write_json(out / "summary.json", scan.summary()))


def _scan_eig(p, cfg, source, out, man, kind):
    if kind == "eigQ":
        lo = _cfg_get(cfg, "y1_min", float, source, default=0.6)
        hi = _cfg_get(cfg, "y1_max", float, source, default=1.32)
        step = _cfg_get(cfg, "step", float, source, default=0.01)
        values = np.arange(lo, hi + 0.5 * step, step)
        rows = analysis.scan_references(
            p, "Q", values, yhat2ref=_cfg_get(cfg, "yhat2ref", float, source,
                                              default=0.0))
        stem, nev = "eigq", 5
    else:
        y1ref = _cfg_get(cfg, "y1ref", float, source, default=1.0)
        lo = _cfg_get(cfg, "y2_min", float, source, default=0.1)
        hi = _cfg_get(cfg, "y2_max", float, source, default=5.2)
        step = _cfg_get(cfg, "step", float, source, default=0.05)
        K = _cfg_get(cfg, "K", float, source, default=0.01)
        values = np.arange(lo, hi + 0.5 * step, step)
        rows = analysis.scan_references(p, "Qtilde", values, K=K, y1ref=y1ref)
        stem, nev = "eigqtilde", 5
    cols = {"ref": [r["ref"] for r in rows],
            "status": [0 if r["status"] == "ok" else 1 for r in rows],
            "max_re": [r.get("max_re", math.nan) for r in rows],
            "stable": [r.get("stable", False) for r in rows],
            "in_dhat": [r.get("in_dhat", False) for r in rows]}
    for k in range(nev):
        cols[f"re{k + 1}"] = [_eig(r, k).real for r in rows]
        cols[f"im{k + 1}"] = [_eig(r, k).imag for r in rows]
    path = out / f"{stem}.csv"
    write_csv(path, cols)
    man.add_output(path)
    ok = [r for r in rows if r["status"] == "ok"]
    summary = {
        "kind": kind,
        "points": len(rows),
        "failures": len(rows) - len(ok),
        "crossing": analysis.locate_sign_change(rows),
        "first_unstable": next((r["ref"] for r in ok if not r["stable"]), None),
        "first_outside_dhat": next((r["ref"] for r in ok if not r["in_dhat"]), None),
    }
    man.add_output(write_json(out / "summary.json", summary))


def _eig(row, k):
    if row["status"] != "ok":
        return complex(math.nan, math.nan)
    order = np.argsort(-row["eig_re"])
    return complex(row["eig_re"][order[k]], row["eig_im"][order[k]])


def cmd_scan(args):
    p, ppath, psha = _load_params_arg(args.params)
    cfg, source = _load_config(args.config)
    kind = args.kind or _cfg_get(cfg, "kind", str, source, required=True)
    if kind not in ("singularity", "eigQ", "eigQtilde"):
        raise ValidationError(
            f"{source}: kind: must be 'singularity', 'eigQ' or 'eigQtilde'")
    out = _outdir(args)
    man = _manifest(args, f"scan:{kind}", cfg, ppath, psha)
    if kind == "singularity":
        _scan_singularity(p, cfg, source, out, man, args.workers)
    else:
        _scan_eig(p, cfg, source, out, man, kind)
    man.write(out / "manifest.json")
    return 0


def _initial_state(p, cfg, source):
    raw = cfg.get("initial", {"equilibrium": [1.0, 0.0]})
    if not isinstance(raw, dict):
        raise ValidationError(f"{source}: initial: expected an object")
    if "equilibrium" in raw:
        pair = raw["equilibrium"]
        if not (isinstance(pair, list) and len(pair) == 2):
            raise ValidationError(
                f"{source}: initial.equilibrium: expected [y1ref, yhat2ref]")
        eq = analysis.solve_equilibrium(p, float(pair[0]), float(pair[1]))
        return eq.x
    if "state" in raw:
        state = raw["state"]
        if not (isinstance(state, list) and len(state) == model.NX):
            raise ValidationError(
                f"{source}: initial.state: expected {model.NX} numbers")
        return np.asarray(state, dtype=float)
    raise ValidationError(f"{source}: initial: needs 'equilibrium' or 'state'")


def _run_closed_loop(args, forced_K=None):
    p, ppath, psha = _load_params_arg(args.params)
    cfg, source = _load_config(args.config)
    y1ref = _cfg_get(cfg, "y1ref", float, source, required=True)
    y2ref = _cfg_get(cfg, "y2ref", float, source, default=0.0)
    K = forced_K if forced_K is not None else _cfg_get(cfg, "K", float, source,
                                                       default=0.01)
    try:
        ccfg = controller.ControllerConfig.from_poles(
            y1ref=y1ref, y2ref=y2ref, K=K,
            poles_e=_poles(cfg, "poles_e", source, controller.DEFAULT_POLES_E),
            poles_h=_poles(cfg, "poles_h", source, controller.DEFAULT_POLES_H))
    except controller.ConfigError as exc:
        raise ValidationError(f"{source}: {exc}") from None
    icfg = _integrator(cfg, source, horizon=120.0, sample_dt=0.05)
    x0 = _initial_state(p, cfg, source)
    sigma0 = cfg.get("sigma0", [0.0, 0.0])
    if not (isinstance(sigma0, list) and len(sigma0) == 2):
        raise ValidationError(f"{source}: sigma0: expected [sigma1, sigma2]")
    out = _outdir(args)
    command = "stabilize" if forced_K == 0.0 else "track"
    man = _manifest(args, command, cfg, ppath, psha)
    traj = controller.simulate_closed_loop(p, ccfg, x0, sigma0, icfg)
    cols = {"t": traj.t, "y1": traj.channels["y1"], "y2": traj.channels["y2"],
            "yhat2ref": traj.channels["yhat2ref"]}
    for i in range(model.NX):
        cols[f"x{i + 1}"] = traj.channels["x"][:, i]
    cols["u1"] = traj.channels["u"][:, 0]
    cols["u2"] = traj.channels["u"][:, 1]
    cols["sigma1"] = traj.channels["sigma"][:, 0]
    cols["sigma2"] = traj.channels["sigma"][:, 1]
    path = out / "trajectory.csv"
    write_csv(path, cols)
    man.add_output(path)
    y1 = traj.channels["y1"]
    y2 = traj.channels["y2"]
    summary = {
        "mode": ccfg.mode,
        "y1ref": y1ref, "y2ref": y2ref, "K": K,
        "y1_final_error": float(abs(y1[-1] - y1ref)),
        "y2_final_error": float(abs(y2[-1] - y2ref)),
        "u_min": traj.channels["u_range"][0],
        "u_max": traj.channels["u_range"][1],
        "u_within_nominal": bool(traj.channels["u_range"][0] >= 0.0
                                 and traj.channels["u_range"][1] <= 1.0),
        "steps": traj.nsteps,
    }
    man.add_output(write_json(out / "summary.json", summary))
    man.write(out / "manifest.json")
    return 0


def cmd_stabilize(args):
    return _run_closed_loop(args, forced_K=0.0)


def cmd_track(args):
    return _run_closed_loop(args, forced_K=None)


def cmd_equilibrium(args):
    p, ppath, psha = _load_params_arg(args.params)
    out = _outdir(args)
    man = _manifest(args, "equilibrium", {"y1": args.y1, "yhat2": args.yhat2},
                    ppath, psha)
    eq = analysis.solve_equilibrium(p, args.y1, args.yhat2)
    dec = normal_form.decoupling(eq.x, p, "redefined")
    det_dphi, _ = normal_form.det_with_scale(normal_form.dphi_hat(eq.x, p))
    payload = {
        "y1ref": eq.y1ref,
        "yhat2ref": eq.yhat2ref,
        "x": eq.x,
        "u": eq.u,
        "residual": eq.residual,
        "y2": float(p.flow_coeff * eq.x[model.XH2]),
        "in_dhat": bool(normal_form.in_dhat(eq.x, p)),
        "det_decoupling": dec.det,
        "det_dphi_hat": det_dphi,
    }
    man.add_output(write_json(out / "solution.json", payload))
    man.write(out / "manifest.json")
    return 0


# ---------------------------------------------------------------------------
# Entry point.
# ---------------------------------------------------------------------------

def build_parser():
    parser = _Parser(prog="twosite",
                     description="Two-site CHP analysis and control experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        sp.add_argument("--params", default=None,
                        help="parameter file (default: packaged table)")
        if config:
            sp.add_argument("--config", required=True, help="JSON configuration")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--workers", type=int, default=None,
                        help="parallel workers for grid scans (default: cores)")
        sp.add_argument("--seed", type=int, default=None,
                        help="seed recorded in the manifest (sampling commands)")

    sp = sub.add_parser("zero-dynamics", help="simulate pinned-output internal dynamics")
    common(sp)
    sp.set_defaults(func=cmd_zero_dynamics)

    sp = sub.add_parser("scan", help="singularity or eigenvalue scans")
    sp.add_argument("--kind", choices=("singularity", "eigQ", "eigQtilde"),
                    default=None)
    common(sp)
    sp.set_defaults(func=cmd_scan)

    sp = sub.add_parser("stabilize", help="closed loop with frozen reference (K = 0)")
    common(sp)
    sp.set_defaults(func=cmd_stabilize)

    sp = sub.add_parser("track", help="closed loop with heat-flow tracking")
    common(sp)
    sp.set_defaults(func=cmd_track)

    sp = sub.add_parser("equilibrium", help="solve one pinned equilibrium")
    sp.add_argument("--y1", type=float, required=True)
    sp.add_argument("--yhat2", type=float, default=0.0)
    common(sp, config=False)
    sp.set_defaults(func=cmd_equilibrium)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.workers is None:
            import os
            args.workers = os.cpu_count() or 1
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
