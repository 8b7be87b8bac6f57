"""`complexity`: closed-form FLOPs / params of one token-mixing layer"""
import argparse

from app.api.common import emit
from app.core.errors import ConfigurationError
from app.models.schemas import ComplexitySpec, LayerKind, parse_config
from app.services.complexity import cost_of, plugin_overhead


def add_spec_arguments(parser: argparse.ArgumentParser, kinds) -> None:
    parser.add_argument("--kind", required=True, choices=[k.value for k in kinds])
    parser.add_argument("--C", type=int, required=True)
    parser.add_argument("--H", type=int)
    parser.add_argument("--W", type=int)
    parser.add_argument("--rho", type=int)
    parser.add_argument("--k", type=int)
    parser.add_argument("--M", type=int)


def spec_from_args(args: argparse.Namespace, **extra) -> ComplexitySpec:
    values = {name: getattr(args, name) for name in ("kind", "C", "H", "W", "rho", "k", "M")}
    values.update(extra)
    return parse_config(ComplexitySpec, {k: v for k, v in values.items() if v is not None})


def register(subparsers) -> None:
    parser = subparsers.add_parser("complexity", help="print the cost model of a layer")
    add_spec_arguments(parser, LayerKind)
    parser.add_argument("--scale", type=int, default=1)
    parser.add_argument("--hr-height", type=int)
    parser.add_argument("--hr-width", type=int)
    parser.add_argument("--ctm", type=int, default=1, help="number of channel token mixes (fouriersr)")
    parser.add_argument("--plugins", type=int, help="report the overhead of this many fouriersr plugins")
    parser.add_argument("--backbone-params", type=float, help="backbone parameters in K")
    parser.add_argument("--backbone-flops", type=float, help="backbone FLOPs in G")
    parser.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> int:
    spec = spec_from_args(
        args, scale=args.scale, hr_height=args.hr_height, hr_width=args.hr_width, ctm=args.ctm
    )
    report = cost_of(spec)
    derived = "" if report.params_shape_derived is None else f"{report.params_shape_derived:.3f}"
    emit(["kind,flops_G,params_K,params_shape_K"])
    emit([report.kind.value, f"{report.flops:.3f}", f"{report.params:.3f}", derived])
    print(f"flops_G={report.flops:.3f} params_K={report.params:.3f}  ({report.formula_text})")

    if args.plugins is not None:
        if args.backbone_params is None or args.backbone_flops is None:
            raise ConfigurationError("--plugins needs --backbone-params and --backbone-flops")
        params_pct, flops_pct = plugin_overhead(
            args.backbone_params * 1e3, args.backbone_flops * 1e9, args.plugins, spec
        )
        emit(["plugins,params_pct,flops_pct"])
        emit([args.plugins, f"{params_pct:.3f}", f"{flops_pct:.3f}"])
    return 0
