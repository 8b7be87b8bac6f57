"""`verify`: equivalence of the FFT pipeline and the spatial oracle"""
import argparse
import logging

from app.api.common import current_precision, emit, read_config, split_config
from app.core.config import settings
from app.models.schemas import VerifyConfig, parse_config
from app.models.tensor import Precision
from app.services.fourier_ops import verify_equivalence

logger = logging.getLogger(__name__)

FIELDS = "seeds,max_abs_diff,max_rel_diff,tolerance,passed,drop_fft,control_min_rel_diff"


def register(subparsers) -> None:
    parser = subparsers.add_parser("verify", help="check fourier_sr_forward against the spatial oracle")
    parser.add_argument("--seeds", type=int, default=settings.VERIFY_SEEDS)
    parser.add_argument("--tol", type=float, default=None, help="relative L-inf tolerance")
    parser.add_argument("--drop-fft", action="store_true", help="negative control: replace the FFTs by identities")
    parser.add_argument("--config", help="key=value file with VerifyConfig fields")
    parser.add_argument("--seed", type=int, default=None)
    parser.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> int:
    (values,) = split_config(read_config(args.config), VerifyConfig)
    if args.seed is not None:
        values["seed"] = args.seed
    config = parse_config(VerifyConfig, values)
    precision = current_precision()
    tolerance = args.tol
    if tolerance is None:
        double = precision is Precision.DOUBLE
        tolerance = settings.VERIFY_TOLERANCE_DOUBLE if double else settings.VERIFY_TOLERANCE_SINGLE

    report = verify_equivalence(config, args.seeds, tolerance, drop_fft=args.drop_fft, precision=precision)
    emit([FIELDS])
    emit([report.csv_row()])
    return 0 if report.passed else 1
