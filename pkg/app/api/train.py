"""`train`: desk-scale SR training with optional FourierSR plugins"""
import argparse
import logging
import os

from app.api.common import current_precision, emit, read_config, split_config
from app.models.schemas import SRModelConfig, TrainConfig, parse_config
from app.services.srnet import save_checkpoint, train_run, write_history

logger = logging.getLogger(__name__)

HISTORY_FILE = "history.csv"
CHECKPOINT_DIR = "checkpoint"


def register(subparsers) -> None:
    parser = subparsers.add_parser("train", help="train the SR backbone on synthetic data")
    parser.add_argument("--config", help="key=value file with model and training fields")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--plugin-positions", help="block indices (0,1), 'random:N' or '' for none")
    parser.add_argument("--steps", type=int)
    parser.add_argument("--seed", type=int)
    parser.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> int:
    model_values, train_values = split_config(read_config(args.config), SRModelConfig, TrainConfig)
    if args.plugin_positions is not None:
        model_values["plugin_positions"] = args.plugin_positions
    if args.steps is not None:
        train_values["steps"] = args.steps
    if args.seed is not None:
        model_values["seed"] = train_values["seed"] = args.seed
    model_cfg = parse_config(SRModelConfig, model_values)
    train_cfg = parse_config(TrainConfig, train_values)

    model, history = train_run(model_cfg, train_cfg, current_precision())
    os.makedirs(args.out, exist_ok=True)
    write_history(history, os.path.join(args.out, HISTORY_FILE))
    save_checkpoint(model, os.path.join(args.out, CHECKPOINT_DIR))

    emit(["steps,final_loss,val_psnr,bicubic_psnr,parameters"])
    emit([
        history.steps[-1],
        f"{history.loss[-1]:.6f}",
        "" if history.last_val_psnr is None else f"{history.last_val_psnr:.4f}",
        "" if history.bicubic_psnr is None else f"{history.bicubic_psnr:.4f}",
        model.graph.parameter_count(),
    ])
    return 0
