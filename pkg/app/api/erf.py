"""`erf`: effective receptive field heatmap of a trained checkpoint"""
import argparse

from app.api.common import emit, int_pair
from app.services.srnet import erf_map, load_checkpoint, support_fraction, write_erf


def register(subparsers) -> None:
    parser = subparsers.add_parser("erf", help="write the input-gradient heatmap of one output pixel")
    parser.add_argument("--model", required=True, help="checkpoint directory")
    parser.add_argument("--pos", required=True, type=int_pair, help="output position y,x")
    parser.add_argument("--out", required=True, help="PGM path")
    parser.add_argument("--size", type=int_pair, default=(16, 16), help="LR input size h,w")
    parser.add_argument("--seed", type=int, default=0)
    parser.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> int:
    model = load_checkpoint(args.model)
    heatmap = erf_map(model, args.pos, size=args.size, seed=args.seed)
    write_erf(heatmap, args.out)
    emit(["y,x,support_fraction,path"])
    emit([args.pos[0], args.pos[1], f"{support_fraction(heatmap):.6f}", args.out])
    return 0
