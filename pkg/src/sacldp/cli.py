"""Command-line entry point ``sacldp``.

Subcommands: ``simulate``, ``rate-flow``, ``rate-ac``, ``mc-scan``,
``report``, ``verify`` and ``grr``.  Every run writes its artifacts atomically
into ``--out`` together with ``manifest_<command>.json`` (config hash, seed, versions
and artifact hashes).  Exit status: 0 success, 1 runtime error, 2 invalid
configuration.
"""

import argparse
import logging
import platform
import sys
from concurrent.futures import ThreadPoolExecutor
from functools import partial
from pathlib import Path

import numpy as np
import scipy

from . import __version__, analysis, io, rng
from .config import ExperimentConfig, load, validate
from .errors import ConfigError, SacldpError
from .field import realize, sample_path
from .flow import integrate_stratonovich, invert_flow
from .ldp import (ScanTable, deterministic_interfaces, ldp_report, mc_probability_scan, minimize_rate_ac,
                  minimize_rate_flow)
from .pde import pull_back, solve_direct_spde, solve_transformed
from .transform import build_coefficients

log = logging.getLogger("sacldp")

COMMANDS = ("simulate", "rate-flow", "rate-ac", "mc-scan", "report", "verify", "grr")


def _common(parser):
    parser.add_argument("--config", type=Path, help="TOML experiment configuration (defaults if omitted)")
    parser.add_argument("--seed", type=int, help="master seed (overrides the configuration)")
    parser.add_argument("--out", type=Path, help="output directory (overrides the configuration)")
    parser.add_argument("--threads", type=int, default=1, help="worker threads for Monte Carlo rungs")
    parser.add_argument("--route", choices=("flow", "direct"), help="field simulation route")
    parser.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="sacldp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "one path through both routes with a route-difference report",
        "rate-flow": "minimise the rate of a flow-level event",
        "rate-ac": "minimise the rate of a field-level event",
        "mc-scan": "Monte Carlo probability scan over the sigma ladder",
        "report": "rate plus scan, juxtaposed in one JSON report",
        "verify": "run the invariant suite",
        "grr": "Hölder and GRR reports on Brownian-field paths",
    }
    for name in COMMANDS:
        _common(sub.add_parser(name, help=helps[name]))
    return parser


class Run:
    """Output directory plus manifest bookkeeping for one command."""

    def __init__(self, cfg: ExperimentConfig, command, threads):
        self.cfg = cfg
        self.command = command
        self.threads = threads
        self.out = Path(cfg.out)
        self.artifacts = {}

    def path(self, name):
        return self.out / name

    def record(self, name):
        self.artifacts[name] = io.sha256_file(self.path(name))

    def json(self, name, obj):
        io.write_json(self.path(name), obj)
        self.record(name)

    def csv(self, name, writer):
        io.via_tempfile(self.path(name), writer)
        self.record(name)

    def npz(self, name, **arrays):
        io.write_npz(self.path(name), **arrays)
        self.record(name)

    def manifest(self, status):
        io.write_json(self.path(f"manifest_{self.command}.json"), {
            "command": self.command,
            "status": status,
            "config_sha256": self.cfg.digest(),
            "config": self.cfg.to_dict(),
            "seed": self.cfg.seed,
            "route": self.cfg.route,
            "threads": self.threads,
            "versions": {"sacldp": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                         "python": platform.python_version()},
            "artifacts": dict(sorted(self.artifacts.items())),
        })


def cmd_simulate(run: Run):
    cfg = run.cfg
    spec, space, times, u0 = cfg.make_modes(), cfg.make_space(), cfg.make_times(), cfg.make_initial()
    path = sample_path(spec, times, cfg.noise.sigma, cfg.seed)
    flow = integrate_stratonovich(spec, path, space)
    inverse = invert_flow(flow)
    coeffs = build_coefficients(flow, inverse)
    w = solve_transformed(coeffs, u0)
    u_flow = pull_back(w, inverse)
    u_direct = solve_direct_spde(spec, path, u0, space)
    diff = np.abs(u_flow.values - u_direct.values).reshape(u_flow.values.shape[0], -1).max(axis=1)
    stride = max(1, times.steps // 100)
    run.csv("field_path.csv", path.to_csv)
    run.csv("flow.csv", flow.to_csv)
    run.csv("coefficients_final.csv", partial(coeffs.to_csv, step=-1))
    run.csv("u_flow.csv", partial(u_flow.to_csv, stride=stride))
    run.csv("u_direct.csv", partial(u_direct.to_csv, stride=stride))
    run.npz("trajectories.npz", times=times.times, flow=flow.positions, inverse=inverse.positions,
            w=w.values, u_flow=u_flow.values, u_direct=u_direct.values)
    report = {"sigma": cfg.noise.sigma, "max_route_difference": float(diff.max()),
              "final_route_difference": float(diff[-1]), "coefficients": coeffs.report(),
              "inversion_residual": inverse.residual, "max_w": w.sup_norm(),
              "interfaces_flow": u_flow.interfaces().tolist() if space.dim == 1 else None,
              "interfaces_direct": u_direct.interfaces().tolist() if space.dim == 1 else None}
    run.json("route_difference.json", report)
    print(f"max route difference {report['max_route_difference']:.3e}")
    return 0


def _field_event(cfg):
    event = cfg.make_event()
    if event.observable == "interface" and not event.reference:
        ref = deterministic_interfaces(cfg.make_modes(), cfg.make_initial(), cfg.make_space(), cfg.make_times())
        event = event.with_reference([(float(r),) for r in ref])
    return event


def _rate(cfg):
    spec, times = cfg.make_modes(), cfg.make_times()
    if cfg.make_event().level == "field":
        event = _field_event(cfg)
        return event, minimize_rate_ac(event, spec, cfg.make_initial(), cfg.make_space(), times,
                                       cfg.make_rate_options())
    event = cfg.make_event()
    return event, minimize_rate_flow(event, spec, times, cfg.make_rate_options())


def cmd_rate(run: Run, level):
    cfg = run.cfg
    spec, times = cfg.make_modes(), cfg.make_times()
    opts = cfg.make_rate_options()
    if level == "flow":
        event = cfg.make_event()
        result = minimize_rate_flow(event, spec, times, opts)
    else:
        event = _field_event(cfg)
        result = minimize_rate_ac(event, spec, cfg.make_initial(), cfg.make_space(), times, opts)
    run.json(f"rate_{level}.json", {"event": event.to_dict(), "result": result.to_dict()})
    print(f"cost {result.cost:.6g}  distance {result.achieved_target_distance:.3e}  converged {result.converged}")
    return 0


def _scan(run: Run, event):
    cfg = run.cfg
    spec, times = cfg.make_modes(), cfg.make_times()
    space = cfg.make_space() if event.level == "field" else None
    u0 = cfg.make_initial() if event.level == "field" else None
    scan_one = partial(mc_probability_scan, event, spec, samples=cfg.noise.samples, seed=cfg.seed, times=times,
                       space=space, u0=u0, route=cfg.route)
    if run.threads > 1:
        with ThreadPoolExecutor(run.threads) as pool:
            parts = list(pool.map(lambda s: scan_one([s]), cfg.noise.sigmas))
    else:
        parts = [scan_one(list(cfg.noise.sigmas))]
    rows = tuple(r for p in parts for r in p.rows)
    return ScanTable(rows, event.to_dict(), cfg.route, cfg.seed)


def cmd_scan(run: Run):
    event = _field_event(run.cfg) if run.cfg.make_event().level == "field" else run.cfg.make_event()
    table = _scan(run, event)
    run.csv("mc_scan.csv", table.to_csv)
    run.json("mc_scan.json", table.to_dict())
    for r in table.rows:
        print(f"sigma {r.sigma:g}: {r.hits}/{r.samples} hits, sigma log P {r.sigma_log_p}")
    return 0


def cmd_report(run: Run):
    event, rate = _rate(run.cfg)
    table = _scan(run, event)
    report = ldp_report(table, rate)
    run.csv("mc_scan.csv", table.to_csv)
    run.json("ldp_report.json", report)
    print(f"-cost {-rate.cost:.6g}; extrapolation {report['extrapolation']}")
    return 0


def cmd_verify(run: Run):
    from .verify import run_checks

    checks = run_checks(run.cfg)
    run.json("verify.json", {"checks": [c.to_dict() for c in checks]})
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.value:.3e} (bound {c.bound:.3e}) {c.detail}")
    return 0 if all(c.passed for c in checks) else 1


def cmd_grr(run: Run):
    cfg = run.cfg
    spec, space, times = cfg.make_modes(), cfg.make_space(), cfg.make_times()
    a = cfg.analysis
    stride = max(1, times.steps // 500)
    t = times.times[::stride]
    ensemble = []
    for i in range(a.paths):
        path = sample_path(spec, times, cfg.noise.sigma, rng.derive_seed(cfg.seed, "grr", i))
        ensemble.append(realize(spec, path, space.nodes)[::stride, ..., 0])
    ensemble = np.stack(ensemble)
    spacing = space.spacing if a.norm == "c1" else None
    C, ratios = analysis.grr_constant(ensemble, a.alpha, a.p, t, a.norm, spacing)
    moments = analysis.moment_holder_check(ensemble, a.p, a.q, t, a.norm, spacing)
    rows = []
    for i, path in enumerate(ensemble):
        h = analysis.holder_seminorm(path, a.alpha, t, a.norm, spacing).seminorm
        rows.append((i, h, analysis.grr_rhs(path, a.alpha, a.p, t, a.norm, spacing), float(ratios[i])))
    run.csv("grr_paths.csv", lambda p: io.write_csv(p, ["path", "holder", "grr_rhs", "ratio"], rows))
    run.json("grr.json", {"alpha": a.alpha, "p": a.p, "grr_constant": C, "moments": moments.to_dict(),
                          "time_stride": stride})
    print(f"GRR constant {C:.4g}; moment slope {moments.slope:.4g} (expected {moments.expected_slope:g})")
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load(args.config) if args.config else validate(ExperimentConfig())
        cfg = cfg.with_overrides(args.seed, str(args.out) if args.out else None, args.route)
        if args.threads < 1:
            raise ConfigError("--threads must be positive", field="threads")
    except ConfigError as exc:
        print(f"sacldp: config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"sacldp: cannot read configuration: {exc}", file=sys.stderr)
        return 2
    run = Run(cfg, args.command, args.threads)
    handlers = {
        "simulate": cmd_simulate,
        "rate-flow": partial(cmd_rate, level="flow"),
        "rate-ac": partial(cmd_rate, level="ac"),
        "mc-scan": cmd_scan,
        "report": cmd_report,
        "verify": cmd_verify,
        "grr": cmd_grr,
    }
    try:
        status = handlers[args.command](run)
    except SacldpError as exc:
        print(f"sacldp {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        run.manifest("error")
        return 1
    run.manifest("ok" if status == 0 else "failed")
    return status


if __name__ == "__main__":
    sys.exit(main())
