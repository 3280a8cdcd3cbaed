"""Command line: ``predeso {check,synthesize,simulate,verify-certificate}``.

Exit codes: 0 success, 2 configuration error, 3 assumption failure,
4 infeasibility, 5 divergence.
"""

import argparse
from dataclasses import asdict, dataclass
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__
from . import matcore as mc
from . import scenario as sc
from .errors import ConfigError, DivergenceError, PredesoError
from .netgraph import Topology
from .simcore import metrics, run, write_metrics
from .sysmodel import (GainSet, Plant, build_augmented, compute_certificate, synthesize_gains_thm1,
                       synthesize_gains_thm2, validate_assumptions)

OUT_ENV = "PREDESO_OUT"
DEFAULT_OUT = "predeso_out"

log = logging.getLogger("predeso")


@dataclass
class RunManifest:
    scenario: str
    scenario_hash: str
    seed: int
    dt: float
    horizon: float
    sample_every: int
    mode: str
    gain_provenance: str
    version: str
    csv: str
    metrics: str
    complete: bool = True


def _source(cfg_path, preset):
    if preset and cfg_path:
        raise ConfigError("give either a config path or --preset, not both")
    if preset:
        return sc.preset(preset)
    if not cfg_path:
        raise ConfigError("a config path or --preset is required")
    return sc.load(cfg_path)


def _dump(obj, path):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def synthesize(cfg, theorem=None):
    """Gains for a scenario (theorem from the config unless overridden)."""
    theorem = cfg.gains.theorem if theorem is None else int(theorem)
    g = cfg.gains
    if theorem == 1:
        return synthesize_gains_thm1(cfg.plant, g.poles, topo=cfg.topology, K1=g.K1, decay=g.decay)
    return synthesize_gains_thm2(
        cfg.plant, g.poles, mu=g.mu, alpha=g.alpha, beta1=g.beta1, eps=g.eps, sigma=g.sigma,
        leader_bound=cfg.leader_bound(), topo=cfg.topology, q_min_eig=g.q_min_eig, K1=g.K1)


def residual_report(gains, plant):
    """``lambda_max`` of each design residual (negative means strictly feasible)."""
    aug = build_augmented(plant)
    out = {"lmi": mc.lambda_max(mc.lmi_residual(gains.P, aug.A_T, aug.T, 0.0))}
    if gains.mode == "thm2":
        out["lmi_mu"] = mc.lambda_max(mc.lmi_residual(gains.P, aug.A_T, aug.T, gains.mu))
        A_cl = plant.A + plant.B @ gains.K1
        out["lyapunov_Q"] = mc.lambda_max(gains.Q @ A_cl + A_cl.T @ gains.Q)
        out["Q_minus_I"] = -mc.lambda_min(gains.Q - np.eye(plant.n))
    return out


def gains_document(gains, cfg, certificate=None):
    doc = {"gains": gains.to_json(), "plant": cfg.plant.to_json(),
           "topology": cfg.topology.to_json(), "scenario": cfg.name, "version": __version__}
    if certificate is not None:
        doc["certificate"] = certificate.to_json()
    return doc


def load_gains(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} col {exc.colno}: {exc.msg}") from exc
    body = doc.get("gains", doc)
    try:
        gains = GainSet.from_json(body)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return gains, doc


def cmd_check(args):
    cfg = _source(args.config, args.preset)
    lb = cfg.leader_bound() if cfg.leader_input.active else None
    rep = validate_assumptions(cfg.plant, cfg.topology, leader_bound=lb)
    for line in rep.lines():
        print(line)
    if not rep.ok:
        print("failed: " + ", ".join(rep.failed()), file=sys.stderr)
        return 3
    return 0


def cmd_synthesize(args):
    cfg = _source(args.config, args.preset)
    theorem = args.theorem or cfg.gains.theorem
    if args.mu is not None:
        from dataclasses import replace
        cfg = sc.ScenarioConfig(cfg.plant, cfg.topology, replace(cfg.gains, mu=args.mu),
                                cfg.sim, cfg.leader_input, cfg.init, cfg.name)
    gains = synthesize(cfg, theorem)
    cert = None
    if gains.mode == "thm2":
        cert = compute_certificate(gains, cfg.topology, cfg.plant, leader_bound=cfg.leader_bound())
    for k, v in residual_report(gains, cfg.plant).items():
        print(f"lambda_max[{k}] = {v:.6e}")
    print("K1 =", np.array2string(gains.K1, precision=6))
    print("closed-loop poles:", np.sort_complex(mc.eigenvalues(cfg.plant.A + cfg.plant.B @ gains.K1)))
    if cert is not None:
        print(f"residual_radius = {cert.residual_radius[0]:.6g}")
    out = args.out or os.path.join(os.environ.get(OUT_ENV, DEFAULT_OUT), f"{cfg.name}_gains.json")
    _dump(gains_document(gains, cfg, cert), out)
    print(f"wrote {out}")
    return 0


def cmd_simulate(args):
    cfg = _source(args.config, args.preset)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.horizon is not None or args.dt is not None:
        cfg = cfg.with_sim(horizon=args.horizon or cfg.sim.horizon,
                           dt=args.dt or cfg.sim.dt).validate()
    if args.gains:
        gains, _ = load_gains(args.gains)
        if gains.provenance == "computed":
            gains.provenance = f"file:{os.path.basename(args.gains)}"
    else:
        gains = synthesize(cfg)
    cert = None
    if gains.mode == "thm2":
        lb = max(gains.leader_bound, cfg.leader_bound())
        cert = compute_certificate(gains, cfg.topology, cfg.plant, leader_bound=lb)

    out_dir = args.out or os.environ.get(OUT_ENV, DEFAULT_OUT)
    os.makedirs(out_dir, exist_ok=True)
    stem = f"{cfg.name}_seed{cfg.sim.seed}"
    csv_path = os.path.join(out_dir, stem + ".csv")
    met_path = os.path.join(out_dir, stem + ".metrics.json")
    man_path = os.path.join(out_dir, stem + ".manifest.json")

    t0 = time.perf_counter()
    traj = run(cfg, gains)
    elapsed = time.perf_counter() - t0
    traj.to_csv(csv_path)
    rep = metrics(traj, cert, mode=gains.mode, tau=cfg.plant.tau)
    manifest = RunManifest(
        scenario=cfg.name, scenario_hash=cfg.digest(), seed=cfg.sim.seed, dt=cfg.sim.dt,
        horizon=cfg.sim.horizon, sample_every=cfg.sim.sample_every, mode=gains.mode,
        gain_provenance=gains.provenance, version=__version__, csv=os.path.basename(csv_path),
        metrics=os.path.basename(met_path), complete=traj.complete)
    write_metrics(rep, met_path, extra={"manifest": os.path.basename(man_path),
                                        "error": traj.error})
    _dump(asdict(manifest), man_path)

    print(f"{cfg.name} seed={cfg.sim.seed} mode={gains.mode} steps={cfg.steps} "
          f"time={elapsed:.1f}s")
    print("tail sup |x~_i| =", " ".join(f"{v:.3e}" for v in rep.tail_sup_err))
    if rep.containment is not None:
        print(f"residual_radius = {rep.residual_radius:.4g}, containment =",
              " ".join(f"{v:.3f}" for v in rep.containment))
    print(f"wrote {csv_path}")
    if traj.error is not None:
        print(f"divergence: {traj.error['message']} (agent {traj.error['agent']}, "
              f"t={traj.error['t']:.4g})", file=sys.stderr)
        return DivergenceError.exit_code
    return 0


def _topology_from(path):
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno} col {exc.colno}: {exc.msg}") from exc
    return Topology.from_json(doc.get("topology", doc))


def cmd_verify_certificate(args):
    gains, doc = load_gains(args.gains)
    if "plant" not in doc:
        raise ConfigError(f"{args.gains} has no plant section; write it with `synthesize`")
    plant = Plant.from_json(doc["plant"])
    if args.topology:
        topo = _topology_from(args.topology)
    elif "topology" in doc:
        topo = Topology.from_json(doc["topology"])
    else:
        raise ConfigError("no topology given")
    lb = gains.leader_bound if args.leader_bound is None else args.leader_bound
    cert = compute_certificate(gains, topo, plant, leader_bound=lb)
    body = cert.to_json()
    for k in ("lambda0", "beta", "beta1", "kappa1", "kappa2", "gamma1", "mu", "Xi1", "Xi2",
              "chi", "leader_bound", "bound_Z", "bound_ehat", "bound_wtil", "sigma_min_L1"):
        print(f"{k:>14} = {body[k]:.6g}")
    print(f"{'residual_radius':>14} = {cert.residual_radius[0]:.6g}")
    for note in cert.notes:
        print("note:", note)
    if args.out:
        _dump(body, args.out)
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="predeso", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    def source(p):
        p.add_argument("config", nargs="?", help="scenario JSON file")
        p.add_argument("--preset", choices=sc.PRESETS)

    p = sub.add_parser("check", help="validate the standing assumptions")
    source(p)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("synthesize", help="compute gains (and the certificate for theorem 2)")
    source(p)
    p.add_argument("--theorem", type=int, choices=(1, 2))
    p.add_argument("--mu", type=float)
    p.add_argument("--out", help="gain JSON path")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("simulate", help="run a scenario and write CSV + metrics")
    source(p)
    p.add_argument("--gains", help="gain JSON from `synthesize` (synthesized inline if omitted)")
    p.add_argument("--seed", type=int)
    p.add_argument("--horizon", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify-certificate", help="recompute the ultimate-bound certificate")
    p.add_argument("gains")
    p.add_argument("topology", nargs="?", help="topology or scenario JSON (default: from gains)")
    p.add_argument("--leader-bound", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify_certificate)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except PredesoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())
