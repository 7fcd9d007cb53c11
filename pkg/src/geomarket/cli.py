"""Command-line entry point: ``geomarket <subcommand> ...``.

A JSON config file given with ``--config`` supplies defaults; keys are
either flag names (``logL``, ``h_max``, ...) at the top level or grouped
under a subcommand name.  Flags on the command line win.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import bench
from .encoding import LA_BBOX, BBox
from .ledger import GasSchedule
from .marketplace import load_scenario, run_scenario

log = logging.getLogger("geomarket")


def _ints(text: str) -> list[int]:
    return [int(x) for x in str(text).split(",") if x.strip()]


def _sizes(text: str) -> list[tuple[float, float]]:
    out = []
    for part in str(text).split(","):
        w, h = part.lower().split("x")
        out.append((float(w), float(h)))
    return out


def _bbox(args) -> BBox:
    if args.bbox:
        return BBox(*[float(v) for v in args.bbox.split(",")])
    return LA_BBOX


def _dataset(args) -> bench.Dataset:
    bbox = _bbox(args)
    if args.dataset:
        ds = bench.load_checkins(args.dataset, bbox)
    else:
        ds = bench.synthetic_checkins(args.synthetic, bbox, seed=args.seed)
    if args.objects and args.objects < len(ds):
        ds = bench.nested_samples(ds, [args.objects], seed=args.seed)[args.objects]
    return ds


def _workload(args, ds) -> bench.QueryWorkload:
    if getattr(args, "workload", None):
        return bench.QueryWorkload.from_dict(json.loads(Path(args.workload).read_text()))
    return bench.gen_workload(ds, _sizes(args.sizes), args.count, seed=args.seed)


def cmd_ingest(args) -> int:
    ds = bench.load_checkins(args.input, _bbox(args)) if args.input else bench.synthetic_checkins(
        args.synthetic, _bbox(args), seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sizes = [s for s in _ints(args.samples) if s <= len(ds)]
    samples = bench.nested_samples(ds, sizes, seed=args.seed) if sizes else {}
    ds.write_csv(out / "checkins.csv")
    for size, sub in samples.items():
        sub.write_csv(out / f"sample_{size}.csv")
    print(json.dumps({"checkins": len(ds), "samples": sorted(samples)}))
    return 0


def cmd_workload(args) -> int:
    ds = _dataset(args)
    wl = _workload(args, ds)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(wl.to_dict(), indent=1))
    print(json.dumps({"queries": len(wl.queries), "side_fractions": wl.side_fractions()}))
    return 0


def _emit(report, args) -> int:
    path = bench.emit_report(report, args.format, args.out)
    print(path)
    return 0


def cmd_bench_sse(args) -> int:
    ds = _dataset(args)
    report = bench.run_sse_bench(ds, _workload(args, ds), _ints(args.logL), _ints(args.h_max), seed=args.seed)
    return _emit(report, args)


def cmd_bench_hve(args) -> int:
    ds = _dataset(args)
    report = bench.run_hve_bench(
        ds, _workload(args, ds), key_bits=args.key_bits, logL=_ints(args.logL)[0], h_maxes=_ints(args.h_max),
        workers=_ints(args.workers), backend=args.backend, seed=args.seed,
    )
    return _emit(report, args)


def cmd_bench_cost(args) -> int:
    schedule = GasSchedule.from_dict(args.schedule or {})
    if args.gas_price_gwei is not None:
        schedule = GasSchedule.from_dict({**schedule.to_dict(), "gas_price_wei": None,
                                          "gas_price_gwei": args.gas_price_gwei})
    return _emit(bench.run_cost_bench(schedule, seed=args.seed), args)


def cmd_scenario(args) -> int:
    result = run_scenario(load_scenario(args.script))
    text = json.dumps(result, indent=1)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "scenario.json").write_text(text)
    print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="geomarket", description="Private location-data marketplace toolkit")
    p.add_argument("--config", help="JSON file with default flag values")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", default="out")
        sp.add_argument("--format", choices=["csv", "json"], default="csv")
        sp.add_argument("--bbox", help="min_lat,max_lat,min_lon,max_lon")
        if data:
            sp.add_argument("--dataset", help="check-in CSV or Gowalla TSV; synthetic data when omitted")
            sp.add_argument("--synthetic", type=int, default=10000, help="synthetic check-ins to generate")
            sp.add_argument("--objects", type=int, help="use a sample of this many check-ins")
            sp.add_argument("--workload", help="workload JSON from the workload subcommand")
            sp.add_argument("--sizes", default="400x550,800x1100,1600x2200")
            sp.add_argument("--count", type=int, default=20, help="anchors per range size")

    sp = sub.add_parser("ingest", help="filter check-ins to the bbox and write nested samples")
    common(sp, data=False)
    sp.add_argument("--input")
    sp.add_argument("--synthetic", type=int, default=10000)
    sp.add_argument("--samples", default="1000,2000,5000,10000")
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("workload", help="draw query anchors and write a workload file")
    common(sp)
    sp.set_defaults(func=cmd_workload, out="out/workload.json")

    sp = sub.add_parser("bench-sse", help="index build and query measurements")
    common(sp)
    sp.add_argument("--logL", default="10")
    sp.add_argument("--h-max", dest="h_max", default="0")
    sp.set_defaults(func=cmd_bench_sse, objects=2000)

    sp = sub.add_parser("bench-hve", help="encryption, token and matching measurements")
    common(sp)
    sp.add_argument("--logL", default="10")
    sp.add_argument("--h-max", dest="h_max", default="0")
    sp.add_argument("--key-bits", dest="key_bits", type=int, default=128)
    sp.add_argument("--workers", default="1,2,4")
    sp.add_argument("--backend", choices=["exponent", "curve"], default="exponent")
    sp.set_defaults(func=cmd_bench_hve, objects=1000, count=5)

    sp = sub.add_parser("bench-cost", help="gas and USD for the setup and purchase sequences")
    common(sp, data=False)
    sp.add_argument("--gas-price-gwei", dest="gas_price_gwei", type=float)
    sp.set_defaults(func=cmd_bench_cost, schedule=None)

    sp = sub.add_parser("scenario", help="run a JSON scenario script")
    sp.add_argument("script")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_scenario)
    return p


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not args.config:
        return args
    cfg = json.loads(Path(args.config).read_text())
    defaults = {k: v for k, v in cfg.items() if not isinstance(v, dict) or k == "schedule"}
    defaults.update(cfg.get(args.command, {}))
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    subparsers.choices[args.command].set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = _apply_config(parser, list(sys.argv[1:] if argv is None else argv))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (bench.BenchError, OSError, ValueError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
