"""Command-line entry point: ``mpct {simulate,validate,sample-size,linearize}``."""

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import config as cfgmod
from . import report
from .errors import ConfigError, InvalidParameters, MPCTError
from .experiment import CstrController, Scenario, operating_point, run_campaign, run_experiment
from .model import controllability_index
from .offset_free import augmented_matrices, estimator_spectral_radius
from .validation import check_binomial_condition, min_sample_size

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3
SIMULATE_STREAM = 2

log = logging.getLogger("mpct")


def _load(args):
    cfg = cfgmod.load(args.config) if args.config else cfgmod.RunConfig()
    over = {"seed": args.seed, "out": args.out}
    if hasattr(args, "jobs"):
        over["jobs"] = args.jobs
    if getattr(args, "iter_budget", None) is not None:
        over["controller.iter_budget"] = args.iter_budget
    if getattr(args, "ns", None) is not None:
        over["validation.N_s"] = args.ns
    if getattr(args, "verify", None) is not None:
        over["validation.verify"] = args.verify
    return cfgmod.with_overrides(cfg, **over)


def _scenario(cfg):
    sim, spec = cfg.simulate, cfg.scenario
    op = operating_point(cfg.plant)
    if sim.kind == "equilibrium":
        base = Scenario.steady(op.y_eq, spec.N_t, spec.init_steps)
    else:
        base = spec.draw(cfg.seed, (SIMULATE_STREAM, sim.index))
    noise = base.noise if sim.noise else np.zeros_like(base.noise)
    return replace(base,
                   y_r1=np.asarray(sim.y_r1, float) if sim.y_r1 is not None else base.y_r1,
                   y_r2=np.asarray(sim.y_r2, float) if sim.y_r2 is not None else base.y_r2,
                   t_r=sim.t_r if sim.t_r is not None else base.t_r,
                   noise=noise)


def cmd_simulate(args):
    cfg = _load(args)
    digest = cfgmod.digest(cfg)
    controller = CstrController(cfg.controller, cfg.plant)
    scenario = _scenario(cfg)
    record = run_experiment(scenario, controller, cfg.plant, cfg.indicators)
    path = os.path.join(cfg.out, "trajectory.csv")
    report.write_trajectory(path, record, digest, cfg.seed, cfg.controller.label(), scenario)
    with open(os.path.join(cfg.out, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(cfgmod.serialize(cfg))
    print(f"controller {cfg.controller.label()}")
    print(f"phi1 = {record.phi1:.6g}  phi2 = {record.phi2}  feasible = {record.feasible}")
    print(f"trajectory written to {path}")
    return EXIT_NUMERICAL if record.failed_step is not None else EXIT_OK


def cmd_validate(args):
    cfg = _load(args)
    digest = cfgmod.digest(cfg)
    plan = cfg.plan()
    grid = cfg.controllers()
    verify = cfg.validation.verify
    if not plan.certified:
        log.warning("N_s=%d does not satisfy the binomial condition for M=%d, K=%d; "
                    "bounds are reported as not certified", plan.N_s, plan.M, plan.K)
    writer = report.CampaignWriter(cfg.out, plan, digest, cfg.seed, verify > 0)
    with open(os.path.join(cfg.out, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(cfgmod.serialize(cfg))
    try:
        rep = run_campaign(plan, grid, cfg.seed, cfg.plant, cfg.indicators, cfg.scenario,
                           jobs=cfg.jobs, verify=verify, on_controller=writer.add)
    except KeyboardInterrupt:
        writer.abort()
        print("interrupted; partial results in summary.partial.json", file=sys.stderr)
        return 130
    writer.finish()
    print(f"plan: M={plan.M} K={plan.K} N_s={plan.N_s} r={plan.r} "
          f"certified={str(plan.certified).lower()}")
    print(report.format_table(rep.controllers, verify > 0))
    return EXIT_OK


def cmd_sample_size(args):
    for name in ("eps", "delta"):
        v = getattr(args, name)
        if not 0 < v < 1:
            raise ConfigError(name, "must lie in (0, 1)")
    n = args.ns if args.ns is not None else min_sample_size(args.eps, args.delta, args.r,
                                                            args.M, args.K)
    ok = check_binomial_condition(n, args.eps, args.r, args.M, args.K, args.delta)
    print(n)
    print(f"binomial condition: {'pass' if ok else 'fail'}")
    return EXIT_OK


def cmd_linearize(args):
    cfg = _load(args)
    op = operating_point(cfg.plant)
    controller = CstrController(cfg.controller, cfg.plant)
    gains, model = controller.gains, controller.model
    radius = estimator_spectral_radius(model, gains)
    idx = controllability_index(op.A, op.B)
    A_aug, B_aug, _ = augmented_matrices(model)
    idx_aug = controllability_index(A_aug, B_aug)
    out = {
        "config_sha256": cfgmod.digest(cfg), "seed": cfg.seed, "Ts": cfg.plant.Ts,
        "x_eq": op.x_eq.tolist(), "u_eq": op.u_eq.tolist(), "y_eq": op.y_eq.tolist(),
        "A": op.A.tolist(), "B": op.B.tolist(), "C": op.C.tolist(),
        "Lx": gains.Lx.tolist(), "Ld": gains.Ld.tolist(),
        "observer_spectral_radius": radius,
        "controllability_index": idx,
        "augmented_controllability_index": idx_aug,
    }
    os.makedirs(cfg.out, exist_ok=True)
    path = os.path.join(cfg.out, "model.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(out, fh, indent=2)
        fh.write("\n")
    np.set_printoptions(precision=6, suppress=False, linewidth=120)
    print("equilibrium x =", op.x_eq)
    print("A =\n", op.A, "\nB =\n", op.B, "\nC =\n", op.C, sep="")
    print(f"observer spectral radius = {radius:.6f}")
    print(f"controllability index (A, B) = {idx}  (horizon N = {cfg.controller.N})")
    print("augmented model controllable:", "no (disturbance states)" if idx_aug is None
          else f"yes, index {idx_aug}")
    print(f"written to {path}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="mpct", description="Embedded MPCT toolkit for the CSTR.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, jobs=False):
        sp.add_argument("--config", help="configuration file (key.path = json value)")
        sp.add_argument("--seed", type=int, help="master seed")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--iter-budget", type=int, help="ADMM iterations per resume call")
        if jobs:
            sp.add_argument("--jobs", type=int, help="worker processes")

    sp = sub.add_parser("simulate", help="one closed-loop run, trajectory to CSV")
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("validate", help="probabilistic validation campaign")
    common(sp, jobs=True)
    sp.add_argument("--ns", type=int, help="experiments per controller")
    sp.add_argument("--verify", type=int, help="fresh verification runs per controller")
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("sample-size", help="required number of experiments")
    sp.add_argument("--eps", type=float, default=0.03)
    sp.add_argument("--delta", type=float, default=1e-6)
    sp.add_argument("--r", type=int, default=5)
    sp.add_argument("--M", type=int, default=54)
    sp.add_argument("--K", type=int, default=2)
    sp.add_argument("--ns", type=int, help="check this N_s instead of the minimum")
    sp.set_defaults(func=cmd_sample_size)

    sp = sub.add_parser("linearize", help="discrete model and observer design")
    common(sp)
    sp.set_defaults(func=cmd_linearize)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, InvalidParameters) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MPCTError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
