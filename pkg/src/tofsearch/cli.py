"""Command-line entry points.

Subcommands: linear, tof, oracle (run a search and persist manifest +
event log), bench (scaling curves), fit (geometric-decay fit of a curve),
protocol-check (worker conformance).  Exit codes: 0 success, 2 config
error, 3 worker fault, 64 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import analysis, backends, engine, plots, reporting
from .core import ConfigError, ProtocolError, config_from_json, validate_config
from .generator import GeneratorFault
from .protocol import (
    SubprocessTransport,
    WorkerError,
    WorkerGenerator,
    WorkerTimeout,
    WorkerVerifier,
    protocol_check,
    replay_transcript,
    worker_decomposer,
    worker_session,
)
from .verifiers import decompose_prompt

log = logging.getLogger(__name__)

EX_OK = 0
EX_CONFIG = 2
EX_WORKER = 3
EX_USAGE = 64


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        self.exit(EX_USAGE, f"{self.prog}: error: {message}\n")


def _setup_logging() -> None:
    level = os.environ.get("TOF_LOG_LEVEL", "info").lower()
    logging.basicConfig(
        level={"error": logging.ERROR, "info": logging.INFO,
               "debug": logging.DEBUG}.get(level, logging.INFO),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="run config JSON path")
    p.add_argument("--seed", type=int, default=None,
                   help="override master_seed (u64)")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--workers", action="append", default=[],
                   metavar="CMD", help="worker command to attach (repeatable)")
    p.add_argument("--threads", type=int, default=1,
                   help="engine worker threads")
    p.add_argument("--format", choices=("json", "table", "svg"),
                   default="json", help="report format for bench/fit")
    p.add_argument("--timestamps", action="store_true",
                   help="embed wall timestamps in the manifest "
                        "(breaks byte-reproducibility)")


def build_parser() -> _Parser:
    parser = _Parser(prog="tofsearch", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    for name, blurb in (
        ("linear", "best-of-N linear search"),
        ("tof", "tree-of-frames search"),
        ("oracle", "exhaustive enumeration (prune_rule none, desk scale)"),
    ):
        p = sub.add_parser(name, help=blurb)
        _add_run_flags(p)

    p = sub.add_parser("bench", help="scaling experiment over a sample grid")
    _add_run_flags(p)
    p.add_argument("--grid", default="n=1..16", metavar="SPEC",
                   help="sample grid, e.g. n=1..16 or n=1,2,4,8")

    p = sub.add_parser("fit", help="geometric-decay fit of a curve JSON")
    p.add_argument("curve", help="curve JSON produced by bench")
    p.add_argument("--out", default="out")
    p.add_argument("--format", choices=("json", "table", "svg"),
                   default="json")

    p = sub.add_parser("protocol-check", help="worker protocol conformance")
    p.add_argument("--workers", action="append", required=True, metavar="CMD")
    p.add_argument("--transcript", default=None,
                   help="golden transcript JSONL to replay byte-for-byte")
    p.add_argument("--timeout", type=float, default=30.0)
    return parser


def parse_grid(spec: str) -> list[int]:
    """Accepts n=1..16 (inclusive range) or n=1,2,4,8 (explicit list)."""
    body = spec.split("=", 1)[1] if "=" in spec else spec
    if ".." in body:
        lo, hi = body.split("..", 1)
        values = list(range(int(lo), int(hi) + 1))
    else:
        values = [int(x) for x in body.split(",") if x]
    if not values or values != sorted(set(values)):
        raise ConfigError([f"grid spec {spec!r} must be strictly increasing"])
    return values


def _load_config(args):
    text = Path(args.config).read_text(encoding="utf-8")
    config = config_from_json(text)
    if getattr(args, "seed", None) is not None:
        config = dataclasses.replace(config, master_seed=args.seed)
    if args.command in ("linear", "tof", "oracle"):
        config = dataclasses.replace(config, algorithm=args.command)
    if getattr(args, "workers", None):
        config = dataclasses.replace(config,
                                     worker_endpoints=tuple(args.workers))
    return validate_config(config)


def _attach_workers(config):
    """Spawn configured workers; returns (generator, ensemble, decomposer,
    sessions, nondeterministic flag) with synthetic fallbacks for any role
    no worker provides."""
    sessions = []
    generator = None
    verifiers = []
    decomposer = None
    nondeterministic = False
    for cmd in config.worker_endpoints or ():
        session = worker_session(SubprocessTransport(cmd))
        sessions.append(session)
        caps = session.capabilities
        nondeterministic = nondeterministic or not caps.deterministic
        if caps.generator and generator is None:
            generator = WorkerGenerator(
                session.client,
                depth=config.schedule.depth,
                step_budget=config.schedule.denoise_steps_per_frame,
                temporal_length=config.schedule.latent_temporal_length,
            )
        if caps.verifier:
            verifiers.append(WorkerVerifier(session.client))
        if caps.decompose and decomposer is None:
            decomposer = worker_decomposer(session.client)
    if generator is None:
        generator = backends.build_synthetic_generator(config)
    elif not verifiers:
        # Worker latents are opaque handles; in-process verifiers cannot
        # score them.
        raise ConfigError(
            ["a worker-backed generator requires a worker-backed verifier"]
        )
    if not verifiers:
        verifiers = backends.build_synthetic_ensemble(config)
    return generator, verifiers, decomposer, sessions, nondeterministic


def _cmd_search(args) -> int:
    config = _load_config(args)
    generator, ensemble, decomposer, sessions, nondet = _attach_workers(config)
    try:
        staged = decompose_prompt(config.prompt, decomposer)
        search = (engine.tof_search if config.algorithm == "tof"
                  else engine.random_linear_search)
        result = search(config, generator, ensemble, threads=args.threads,
                        staged_prompts=staged)
        paths = reporting.write_run_outputs(
            Path(args.out), result,
            workers_attached=len(sessions),
            nondeterministic_workers=nondet,
            with_timestamps=args.timestamps,
        )
    finally:
        for session in sessions:
            session.close()
    print(f"best_score={result.best_score!r}")
    print(f"nfe={result.ledger.nfe_total}")
    print(f"manifest={paths['manifest']}")
    return EX_OK


def _cmd_oracle(args) -> int:
    config = _load_config(args)
    if config.schedule.prune_rule != "none":
        config = dataclasses.replace(
            config,
            schedule=dataclasses.replace(config.schedule, prune_rule="none",
                                         fixed_k=None),
        )
    landscape = backends.build_landscape(config)
    try:
        oracle = analysis.brute_force_oracle(
            landscape, config.schedule, config.master_seed
        )
    except analysis.OracleBudgetError as e:
        print(f"oracle refused: {e}", file=sys.stderr)
        return EX_CONFIG
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = reporting.build_oracle_manifest(
        config, oracle, with_timestamps=args.timestamps
    )
    (out / reporting.MANIFEST_NAME).write_text(
        reporting.manifest_to_json(manifest), encoding="utf-8"
    )
    print(f"best_score={oracle.best_score!r}")
    print(f"paths_enumerated={oracle.paths_enumerated}")
    print(f"manifest={out / reporting.MANIFEST_NAME}")
    return EX_OK


def _cmd_bench(args) -> int:
    config = _load_config(args)
    grid = parse_grid(args.grid)
    curve = analysis.run_scaling_experiment(config, grid, threads=args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    curve_path = out / "curve.json"
    curve_path.write_text(json.dumps(curve.to_dict(), sort_keys=True, indent=2)
                          + "\n", encoding="utf-8")
    written = [curve_path]
    if args.format == "table":
        table_path = out / "curve.tsv"
        table_path.write_text(curve.to_table(), encoding="utf-8")
        written.append(table_path)
    elif args.format == "svg":
        written.append(plots.save_curve_svg(curve, out / "curve.svg"))
    for p in written:
        print(f"wrote={p}")
    print(curve.to_table(), end="")
    return EX_OK


def _cmd_fit(args) -> int:
    data = json.loads(Path(args.curve).read_text(encoding="utf-8"))
    curve = analysis.ScalingCurve.from_dict(data)
    fit = analysis.fit_geometric_decay(curve)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fit_path = out / "fit.json"
    payload = {
        "s_inf": fit.s_inf,
        "amplitude": fit.amplitude,
        "ratio": fit.ratio,
        "residual_rms": fit.residual_rms,
        "degenerate": fit.degenerate,
    }
    fit_path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n",
                        encoding="utf-8")
    print(f"wrote={fit_path}")
    if args.format == "svg":
        svg = plots.save_curve_svg(curve, out / "fit.svg", fit=fit)
        print(f"wrote={svg}")
    print(json.dumps(payload, sort_keys=True))
    return EX_OK


def _cmd_protocol_check(args) -> int:
    failed = False
    for cmd in args.workers:
        if args.transcript:
            pairs = [
                json.loads(line)
                for line in Path(args.transcript).read_text(
                    encoding="utf-8").splitlines()
                if line.strip()
            ]
            transport = SubprocessTransport(cmd)
            mismatches = replay_transcript(transport, pairs)
            transport.close()
            for m in mismatches:
                print(f"TRANSCRIPT MISMATCH [{cmd}]: {m}")
            failed = failed or bool(mismatches)
            print(f"transcript[{cmd}]: "
                  f"{'ok' if not mismatches else 'FAILED'} "
                  f"({len(pairs)} pairs)")
        report = protocol_check(SubprocessTransport(cmd),
                                request_timeout=args.timeout)
        for v in report["violations"]:
            print(f"VIOLATION [{cmd}]: {v}")
        print(f"protocol-check[{cmd}]: "
              f"{'ok' if report['passed'] else 'FAILED'} "
              f"({len(report['checks'])} checks)")
        failed = failed or not report["passed"]
    return EX_WORKER if failed else EX_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command in ("linear", "tof"):
            return _cmd_search(args)
        if args.command == "oracle":
            return _cmd_oracle(args)
        if args.command == "bench":
            return _cmd_bench(args)
        if args.command == "fit":
            return _cmd_fit(args)
        if args.command == "protocol-check":
            return _cmd_protocol_check(args)
        parser.error(f"unknown command {args.command!r}")
    except ConfigError as e:
        print("config error:", file=sys.stderr)
        for violation in e.violations:
            print(f"  - {violation}", file=sys.stderr)
        return EX_CONFIG
    except analysis.OracleBudgetError as e:
        print(f"oracle refused: {e}", file=sys.stderr)
        return EX_CONFIG
    except (WorkerError, WorkerTimeout, ProtocolError, GeneratorFault,
            engine.RunError) as e:
        print(f"worker fault: {e}", file=sys.stderr)
        return EX_WORKER
    return EX_OK


if __name__ == "__main__":
    sys.exit(main())
