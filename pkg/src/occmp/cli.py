"""Command-line entry point.

Exit status: 0 on success, 2 on a configuration error, 3 when a simulation
invariant is violated.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .dynamics import InvariantViolation
from .experiment import (
    ControllerSpec,
    ScenarioConfig,
    apc_sweep,
    config_from_dict,
    config_hash,
    cv_sweep,
    load_config,
    matrix_sweep,
    output_path,
    run_apc_sweep,
    run_cv_sweep,
    run_matrix,
    run_scenario,
)
from .network import ConfigurationError

log = logging.getLogger("occmp")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INVARIANT = 3


def _seed_list(text: str) -> tuple[int, ...]:
    """Parse ``1,2,5`` or ``1-10`` (inclusive) or a mix of both."""
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            a, b = part.split("-", 1)
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    return tuple(out)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _load(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else config_from_dict({})
    over = {}
    if args.seeds is not None:
        try:
            over["seeds"] = _seed_list(args.seeds)
        except ValueError:
            raise ConfigurationError(f"--seeds: cannot parse {args.seeds!r}") from None
    if args.workers is not None:
        over["workers"] = args.workers
    if args.output is not None:
        over["output_dir"] = args.output
    if getattr(args, "full", False):
        over["preset"] = "full"
    return replace(cfg, **over) if over else cfg


def _common(p: argparse.ArgumentParser, config: bool = True) -> None:
    if config:
        p.add_argument("config", nargs="?", help="scenario YAML file (default: built-in desk preset)")
    p.add_argument("--seeds", help="seed list, e.g. 1-10 or 1,3,5 (default: 1-10)")
    p.add_argument("--workers", type=int, help="worker processes (default: 1)")
    p.add_argument("--output", help="output directory (default: results)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress and controller decisions")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="occmp", description=__doc__.splitlines()[0],
                                     formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    parser.add_argument("--version", action="version", version=f"occmp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one scenario for every controller and seed")
    _common(p)
    p.add_argument("--full", action="store_true", help="use the 8x8 grid with a 3 h horizon")

    p = sub.add_parser("matrix", help="sweep the eight demand/bus sub-scenarios")
    _common(p)
    p.add_argument("--full", action="store_true", help="use the 8x8 grid with a 3 h horizon")
    p.add_argument("--sub-scenarios", default="1-8", help="sub-scenario indices")

    p = sub.add_parser("apc-sweep", help="sweep APC error sigma (percent of true occupancy)")
    _common(p)
    p.add_argument("--full", action="store_true", help="use the 8x8 grid with a 3 h horizon")
    p.add_argument("--sigmas", default="0,10,20,30,40", help="sigma values in percent")
    p.add_argument("--controllers", default="occmp", help="controller ids")

    p = sub.add_parser("cv-sweep", help="sweep connected-vehicle penetration")
    _common(p)
    p.add_argument("--full", action="store_true", help="use the 8x8 grid with a 3 h horizon")
    p.add_argument("--penetrations", default="0.2,0.4,0.6,0.8,1.0", help="penetration fractions in (0, 1]")

    p = sub.add_parser("stability", help="isolated-intersection demand-scale sweep")
    _common(p, config=False)
    p.add_argument("--kappas", default="0.8,1.2", help="demand scales relative to the feasibility boundary")
    p.add_argument("--controllers", default="occmp,qmp,rbmp", help="controller ids")
    p.add_argument("--horizon", type=int, default=20000, help="steps per trial (>= 5000)")

    p = sub.add_parser("validate", help="check a scenario file and print its resolved form")
    p.add_argument("config", help="scenario YAML file")
    return parser


def _report(records) -> None:
    for r in records:
        m = r.metrics
        log.info("%s %s seed=%d sigma=%g p=%g private_vtt=%.3f bus_vtt=%.3f ptt=%.3f",
                 r.scenario, r.controller, r.seed, r.apc_sigma_pct, r.cv_penetration,
                 m.private_vtt_h, m.bus_vtt_h, m.ptt_h)


def _stability(args) -> Path:
    from .controllers import make_controller
    from .stability import run_stability_trial, write_stability_csv

    seeds = _seed_list(args.seeds) if args.seeds else tuple(range(10))
    kappas = _floats(args.kappas)
    names = [c.strip() for c in args.controllers.split(",") if c.strip()]
    try:
        ctrls = [make_controller(n) for n in names]
    except ValueError as exc:
        raise ConfigurationError(f"--controllers: {exc}") from None
    results = []
    for c in ctrls:
        for k in kappas:
            results.extend(run_stability_trial(c, k, args.horizon, seeds))
    spec = {"kind": "stability", "kappas": list(kappas), "controllers": names, "horizon": args.horizon,
            "seeds": list(seeds)}
    h = hashlib.sha256(json.dumps(spec, sort_keys=True).encode()).hexdigest()[:12]
    d = Path(args.output or "results") / f"stability-{h}"
    d.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    write_stability_csv(buf, results)
    (d / "stability.csv").write_text(buf.getvalue())
    manifest = dict(spec, config_hash=h, code_version=__version__, files=["stability.csv"], complete=True)
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    for r in results:
        log.info("%s kappa=%g seed=%d %s ratio=%.3f slope=%.4f", r.controller, r.kappa, r.seed, r.verdict,
                 r.ratio, r.slope)
    return d


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(message)s")
    try:
        if args.command == "validate":
            cfg = load_config(args.config)
            print(json.dumps({"config_hash": config_hash(cfg), "config": cfg.to_dict()}, indent=2, sort_keys=True))
            return EXIT_OK
        if args.command == "stability":
            print(_stability(args))
            return EXIT_OK
        cfg = _load(args)
        if args.command == "run":
            records = run_scenario(cfg, log_decisions=args.verbose)
            path = output_path(cfg, "run")
        elif args.command == "matrix":
            subs = _seed_list(args.sub_scenarios)
            if not subs or any(not 1 <= k <= 8 for k in subs):
                raise ConfigurationError("--sub-scenarios: indices must lie in 1..8")
            records = run_matrix(cfg, subs)
            path = output_path(cfg, "matrix", matrix_sweep(subs))
        elif args.command == "apc-sweep":
            ctrls = [ControllerSpec(c.strip()) for c in args.controllers.split(",") if c.strip()]
            for c in ctrls:
                c.build()
            sigmas = _floats(args.sigmas)
            if not sigmas or any(x < 0 for x in sigmas):
                raise ConfigurationError("--sigmas: values must be >= 0")
            records = run_apc_sweep(cfg, sigmas, ctrls)
            path = output_path(cfg, "apc", apc_sweep(sigmas, ctrls))
        else:
            pens = _floats(args.penetrations)
            records = run_cv_sweep(cfg, pens)
            path = output_path(cfg, "cv", cv_sweep(pens, cfg.controllers))
        _report(records)
        print(path)
        return EXIT_OK
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
