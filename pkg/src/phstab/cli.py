"""Command-line front end: ``phstab {certify,simulate,tune,demo}``.

Exit codes: 0 success (certified), 2 well-formed but infeasible, 1 error.
"""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass
from typing import Optional

import numpy as np

from phstab.certify import Certificate, CertificateInfeasible, make_certificate
from phstab.config import PHI_NAMES, ConfigError, RunConfig, load_config
from phstab.core import State
from phstab.expr import ExprError
from phstab.models import BUILTIN_MODELS, MSD1_GRID, ModelBundle, builtin, custom_model
from phstab.pidpbc import GainSet, build_closed_loop
from phstab.plvcc import map_state, to_canonical
from phstab.region import Region
from phstab.sim import IntegrationError, empirical_decay_rate, energy_audit, simulate
from phstab.tune import diagonal_grid, grid_search, predict_ordering

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE = 0, 1, 2
DEMOS = {"pera-fig2a": ("S1", "S2"), "pera-fig2b": ("S1", "S3")}
DEMO_HORIZON = 1.5


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with 1; exit code 2 is reserved for infeasibility."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_ERROR)


def _floats(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="configuration file ([model], [gains], [region], [integrator], [output])")
    p.add_argument("--model", help=f"built-in model: {', '.join(BUILTIN_MODELS)}")
    p.add_argument("--gains", help="named gain scenario, e.g. s1")
    p.add_argument("--kp", type=_floats, help="K_P diagonal (one value means c I)")
    p.add_argument("--ki", type=_floats, help="K_I diagonal")
    p.add_argument("--kd", type=_floats, help="K_D diagonal")
    p.add_argument("--qstar", type=_floats, help="desired configuration")
    p.add_argument("--qr", type=_floats, help="configuration radii of the certified box")
    p.add_argument("--pr", type=_floats, help="momentum radii of the certified box")
    p.add_argument("--grid-points", type=int, dest="grid_points", help="grid points per axis (default 7)")
    p.add_argument("--extra", type=int, help="extra Sobol samples")
    p.add_argument("--seed", type=int, help="seed for extra samples")
    p.add_argument("--phi", choices=sorted(PHI_NAMES), help="Phi = A^T (at) or A^-1 (ainv)")
    p.add_argument("--h", type=float, help="RK4 step (default: 1e-4 for pera, 1e-3 otherwise)")
    p.add_argument("--horizon", type=float, help="simulation horizon in seconds")
    p.add_argument("--every", type=int, help="store every k-th step in CSV output")
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="phstab", description="Certified exponential stability for PID-PBC loops.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True
    p = sub.add_parser("certify", help="certify the closed loop on a box and write certificate.txt")
    _common(p)
    p = sub.add_parser("simulate", help="simulate the closed loop and write trajectory.csv")
    _common(p)
    rep = p.add_mutually_exclusive_group()
    rep.add_argument("--canonical", action="store_true", help="integrate the canonical form")
    rep.add_argument("--controller", action="store_true", help="integrate the plant with the control law")
    p.add_argument("--lyapunov", action="store_true", help="certify first and record S in the CSV")
    p = sub.add_parser("tune", help="rank gain sets by certified rate and write tuning.csv")
    _common(p)
    p.add_argument("--sets", help="comma-separated scenario names, e.g. s1,s2,s3")
    p.add_argument("--grid", choices=["default"], help="search the model's default diagonal grid")
    p = sub.add_parser("demo", help=f"bundled comparisons: {', '.join(DEMOS)}")
    p.add_argument("name")
    p.add_argument("--out", help="output directory")
    p.add_argument("--h", type=float)
    p.add_argument("--horizon", type=float)
    return parser


def _merge(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "model", None):
        if args.model != cfg.model:
            cfg.model_params, cfg.inertia_exprs = {}, {}
        cfg.model = args.model
    overrides = {"gains": "scenario", "kp": "kp", "ki": "ki", "kd": "kd", "qstar": "qstar", "qr": "qr",
                 "pr": "pr", "grid_points": "grid", "extra": "extra", "seed": "seed", "phi": "phi",
                 "h": "h", "horizon": "horizon", "every": "every", "out": "out"}
    for arg, key in overrides.items():
        val = getattr(args, arg, None)
        if val is not None:
            setattr(cfg, key, val)
    return cfg.validate()


@dataclass
class Resolved:
    bundle: ModelBundle
    gains: GainSet
    label: str
    region: Region


def _bundle(cfg: RunConfig) -> ModelBundle:
    if cfg.model == "custom":
        params = dict(cfg.model_params)
        n = int(params["n"])
        m = int(params.get("m", n))
        sys_ = custom_model(n, m, cfg.inertia_exprs, params["U"], params.get("damping"))
        q_star = np.zeros(n)
        return ModelBundle(sys_, q_star, State(np.full(n, 0.1), np.zeros(n)),
                           {"kp": 1.0, "ki": 10.0, "kd": 0.0}, meta={"model": "custom", "U": params["U"]})
    return builtin(cfg.model, cfg.model_params)


def _resolve(cfg: RunConfig) -> Resolved:
    bundle = _bundle(cfg)
    n = bundle.system.n
    if cfg.scenario:
        key = cfg.scenario.lower()
        if key not in bundle.scenarios:
            raise ConfigError(f"model {cfg.model!r} has no gain scenario {cfg.scenario!r}"
                              + (f"; available: {', '.join(sorted(bundle.scenarios))}" if bundle.scenarios else ""))
        gains, label = bundle.scenarios[key], key.upper()
        if cfg.qstar is not None:
            gains = GainSet(gains.K_P, gains.K_I, gains.K_D, cfg.qstar)
    else:
        d = bundle.default_gains
        m = bundle.system.m
        pick = lambda v, k: _gain(v if v is not None else d[k], m)
        q_star = cfg.qstar if cfg.qstar is not None else bundle.q_star
        gains, label = GainSet(pick(cfg.kp, "kp"), pick(cfg.ki, "ki"), pick(cfg.kd, "kd"), q_star), "custom"
    region = Region(_radii(cfg.qr, n, "qr"), _radii(cfg.pr, n, "pr"),
                    grid_points_per_axis=cfg.grid, extra_samples=cfg.extra, seed=cfg.seed)
    return Resolved(bundle, gains, label, region)


def _gain(v, m: int):
    """One value means ``c I_m``; otherwise a diagonal or full matrix as given."""
    v = np.asarray(v, dtype=float)
    return float(v.reshape(-1)[0]) * np.eye(m) if v.size == 1 else v


def _radii(v, n, name):
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if v.size == 1:
        return np.full(n, float(v[0]))
    if v.size != n:
        raise ConfigError(f"{name} needs 1 or {n} values, got {v.size}")
    return v


def _metadata(cfg: RunConfig, res: Resolved) -> dict:
    meta = {k: (np.asarray(v).tolist() if isinstance(v, (tuple, np.ndarray)) else v)
            for k, v in res.bundle.meta.items()}
    g = res.gains
    meta.update({
        "gains": res.label,
        "K_P": np.diag(g.K_P).tolist(), "K_I": np.diag(g.K_I).tolist(), "K_D": np.diag(g.K_D).tolist(),
        "q_star": g.q_star.tolist(),
    })
    return meta


def _certify(res: Resolved, cfg: RunConfig) -> tuple[Certificate, object]:
    cl = build_closed_loop(res.bundle.system, res.gains)
    csys = to_canonical(cl)
    cert = make_certificate(csys, res.region, cfg.phi_choice)
    cert.metadata = _metadata(cfg, res)
    return cert, csys


def _outdir(cfg: RunConfig) -> str:
    os.makedirs(cfg.out, exist_ok=True)
    return cfg.out


def cmd_certify(cfg: RunConfig) -> int:
    res = _resolve(cfg)
    try:
        cert, _ = _certify(res, cfg)
    except CertificateInfeasible as exc:
        print(f"infeasible: {exc}")
        return EXIT_INFEASIBLE
    path = os.path.join(_outdir(cfg), "certificate.txt")
    with open(path, "w", newline="\n") as fh:
        fh.write(cert.to_text())
    print(f"certified: epsilon = {cert.epsilon:.6g}, mu = {cert.mu:.6g}")
    print(f"rate_paper = {cert.rate_paper:.6g}")
    print(f"rate_sound = {cert.rate_sound:.6g}")
    print(f"wrote {path}")
    return EXIT_OK


def _every(cfg: RunConfig, h: float) -> int:
    return cfg.every if cfg.every is not None else max(1, int(round(1e-3 / h)))


def cmd_simulate(cfg: RunConfig, canonical: bool = False, controller: bool = False,
                 lyapunov: bool = False) -> int:
    res = _resolve(cfg)
    h = cfg.h if cfg.h is not None else res.bundle.h
    cl = build_closed_loop(res.bundle.system, res.gains)
    cert = None
    if lyapunov:
        try:
            cert, _ = _certify(res, cfg)
        except CertificateInfeasible as exc:
            print(f"infeasible: {exc}")
            return EXIT_INFEASIBLE
    s0 = res.bundle.initial
    kw = dict(horizon=cfg.horizon, h=h, certificate=cert, record_every=_every(cfg, h))
    if canonical:
        traj = simulate(to_canonical(cl), map_state(cl, s0), **kw)
    elif controller:
        traj = simulate(res.bundle.system, s0, gains=res.gains, **kw)
    else:
        traj = simulate(cl, s0, **kw)
    path = os.path.join(_outdir(cfg), "trajectory.csv")
    traj.to_csv(path)
    qerr = traj.q[-1] if canonical else traj.q[-1] - res.gains.q_star
    print(f"representation = {traj.representation}, h = {h:g}, steps = {int(round(cfg.horizon / h))}")
    print(f"final |q - q_star| = {np.linalg.norm(qerr):.6g}, final |x| = {traj.normx[-1]:.6g}")
    print(energy_audit(traj).summary())
    print(f"wrote {path}")
    return EXIT_OK


def cmd_tune(cfg: RunConfig, sets: Optional[str] = None, grid: Optional[str] = None) -> int:
    res = _resolve(cfg)
    sys_ = res.bundle.system
    if grid == "default" or (sets is None and not res.bundle.scenarios):
        if cfg.model != "msd1" and grid == "default":
            raise ConfigError(f"no default grid for model {cfg.model!r} (available for msd1)")
        spec = MSD1_GRID if cfg.model == "msd1" else {"kp": (0.5, 1.0, 2.0), "ki": (2.0, 8.0), "kd": (0.0,)}
        cands = diagonal_grid(spec["kp"], spec["ki"], spec["kd"], res.gains.q_star)
        try:
            label, _, report = grid_search(sys_, cands, res.region, phi_choice=cfg.phi_choice)
        except CertificateInfeasible as exc:
            print(f"infeasible: {exc}")
            return EXIT_INFEASIBLE
        headline = f"best = {label}"
    else:
        names = [s.strip() for s in (sets.split(",") if sets else sorted(res.bundle.scenarios))]
        unknown = [s for s in names if s.lower() not in res.bundle.scenarios]
        if unknown:
            raise ConfigError(f"unknown scenarios {unknown}; available: {', '.join(sorted(res.bundle.scenarios))}")
        gain_sets = {s.upper(): res.bundle.scenarios[s.lower()] for s in names}
        order, report = predict_ordering(sys_, gain_sets, res.region, cfg.phi_choice)
        if not order:
            for e in report.entries:
                print(f"{e.label}: {e.reason}")
            print("infeasible: no gain set certified")
            report.to_csv(os.path.join(_outdir(cfg), "tuning.csv"))
            return EXIT_INFEASIBLE
        headline = f"ordering = {' > '.join(order)}"
    path = os.path.join(_outdir(cfg), "tuning.csv")
    report.to_csv(path)
    for e in report.entries:
        status = f"rate_paper = {e.rate_paper:.6g}, rate_sound = {e.rate_sound:.6g}" if e.certified \
            else f"not certified ({e.reason})"
        print(f"{e.label}: beta_max = {e.beta_max:g}, {status}")
    print(headline)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_demo(name: str, out: Optional[str] = None, h: Optional[float] = None,
             horizon: Optional[float] = None) -> int:
    if name not in DEMOS:
        print(f"error: unknown demo {name!r}; available demos: {', '.join(DEMOS)}", file=sys.stderr)
        return EXIT_ERROR
    cfg = RunConfig(model="pera", out=out or os.path.join(".", name))
    res = _resolve(cfg)
    h = h or res.bundle.h
    horizon = horizon or DEMO_HORIZON
    outdir = _outdir(cfg)
    labels = DEMOS[name]
    gain_sets = {lab: res.bundle.scenarios[lab.lower()] for lab in labels}
    order, report = predict_ordering(res.bundle.system, gain_sets, res.region, cfg.phi_choice)
    report.to_csv(os.path.join(outdir, "tuning.csv"))
    lines = [f"# demo {name}: PERA, default inertias, rest at q = 0, h = {h:g}, horizon = {horizon:g}"]
    rates = {}
    for lab in labels:
        entry = report.entry(lab)
        if entry.certificate is not None:
            entry.certificate.metadata = {"model": "pera", "gains": lab}
            with open(os.path.join(outdir, f"certificate_{lab}.txt"), "w", newline="\n") as fh:
                fh.write(entry.certificate.to_text())
        cl = build_closed_loop(res.bundle.system, gain_sets[lab])
        traj = simulate(cl, res.bundle.initial, horizon=horizon, h=h, record_every=_every(cfg, h))
        traj.to_csv(os.path.join(outdir, f"trajectory_{lab}.csv"))
        rates[lab] = empirical_decay_rate(traj).rate
        lines.append(f"{lab}: empirical_rate = {rates[lab]:.6g}, rate_paper = {entry.rate_paper:.6g}, "
                     f"rate_sound = {entry.rate_sound:.6g}, beta_max = {entry.beta_max:g}")
    a, b = labels
    lines.append(f"predicted ordering = {' > '.join(order)}")
    lines.append(f"simulated: {a} {'faster' if rates[a] > rates[b] else 'not faster'} than {b}")
    text = "\n".join(lines) + "\n"
    with open(os.path.join(outdir, "summary.txt"), "w", newline="\n") as fh:
        fh.write(text)
    print(text, end="")
    print(f"wrote {outdir}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "demo":
            return cmd_demo(args.name, args.out, args.h, args.horizon)
        cfg = _merge(args)
        if args.command == "certify":
            return cmd_certify(cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.canonical, args.controller, args.lyapunov)
        return cmd_tune(cfg, args.sets, args.grid)
    except (ConfigError, ExprError, ValueError, IntegrationError, OSError) as exc:
        if isinstance(exc, ValueError) and "not stabilizable" in str(exc):
            print(f"infeasible: {exc}")
            return EXIT_INFEASIBLE
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
