"""`bench`: single-threaded latency of conv3x3, FourierSR and windowed attention"""
import argparse

from app.api.common import emit
from app.api.complexity import add_spec_arguments, spec_from_args
from app.models.schemas import LayerKind
from app.services.complexity import BENCH_HEADER, bench, bench_row
from app.services.serialization import write_csv

BENCH_KINDS = (LayerKind.CONV, LayerKind.WTRANS, LayerKind.FOURIERSR)


def register(subparsers) -> None:
    parser = subparsers.add_parser("bench", help="time one token-mixing layer on random input")
    add_spec_arguments(parser, BENCH_KINDS)
    parser.add_argument("--repeats", type=int, default=None)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", help="CSV report path")
    parser.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> int:
    if args.kind == LayerKind.CONV.value and args.k is None:
        args.k = 3
    spec = spec_from_args(args)
    latency = bench(spec.kind, spec, args.repeats, seed=args.seed)
    row = bench_row(spec, latency)
    if args.out:
        write_csv(args.out, BENCH_HEADER, [[row[h] for h in BENCH_HEADER]])
    emit([",".join(BENCH_HEADER)])
    emit([row[h] for h in BENCH_HEADER])
    return 0
