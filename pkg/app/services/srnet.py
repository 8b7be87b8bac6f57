"""
Desk-scale super-resolution: the residual backbone with FourierSR insertion,
its SGD trainer, checkpoints and the effective-receptive-field map
"""
from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.core.errors import ConfigurationError, DimensionError, DivergenceError
from app.models.schemas import LossKind, SRModelConfig, TrainConfig, TrainingHistory, parse_config
from app.models.tensor import Precision, Tensor
from app.services.autodiff import Graph
from app.services.fourier_ops import identity_params, random_params
from app.services.imaging import SamplePair, bicubic_resize, psnr, synth_dataset
from app.services.serialization import load_archive, save_archive, write_csv, write_pgm

logger = logging.getLogger(__name__)

HISTORY_HEADER = ("step", "loss", "val_psnr")


@dataclass
class SRModel:
    """A built graph plus the node ids the trainer and ERF maps need"""
    graph: Graph
    input: int
    output: int
    scale: int
    config: Optional[SRModelConfig] = None
    plugins: List[str] = field(default_factory=list)
    losses: Dict[LossKind, int] = field(default_factory=dict)

    @property
    def precision(self) -> Precision:
        return self.graph.precision

    def loss_node(self, kind: LossKind) -> int:
        """Attach (once) a loss against the `hr` input"""
        if kind not in self.losses:
            g = self.graph
            target = g.inputs.get("hr")
            if target is None:
                target = g.input("hr", (None, 1, None, None))
            attach = g.l1_loss if kind is LossKind.L1 else g.mse_loss
            self.losses[kind] = attach(self.output, target, name=f"loss_{kind.value}")
        return self.losses[kind]

    def predict(self, lr: np.ndarray) -> np.ndarray:
        """Run the network on an (N, 1, h, w) or (1, h, w) batch"""
        batch = np.asarray(lr)
        squeeze = batch.ndim == 3
        if squeeze:
            batch = batch[None]
        (out,) = self.graph.forward({"lr": batch}, [self.output])
        return out[0] if squeeze else out


def _conv_params(g: Graph, rng: np.random.Generator, name: str, in_ch: int, out_ch: int):
    bound = 1.0 / math.sqrt(9 * in_ch)
    weight = g.parameter(f"{name}.weight", rng.uniform(-bound, bound, (out_ch, in_ch, 3, 3)))
    bias = g.parameter(f"{name}.bias", rng.uniform(-bound, bound, out_ch))
    return weight, bias


def _conv(g: Graph, rng: np.random.Generator, x: int, name: str, in_ch: int, out_ch: int) -> int:
    weight, bias = _conv_params(g, rng, name, in_ch, out_ch)
    return g.conv3x3(x, weight, bias, name=name)


def _plugin(g: Graph, x: int, name: str, params) -> int:
    filters = {entry: g.parameter(f"{name}.{entry}", value) for entry, value in params.arrays().items()}
    return g.fourier_sr(x, filters, params.flags(), name=name)


def _shift(g: Graph, x: int, name: str, offset: float) -> int:
    scale = g.constant(f"{name}.scale", np.ones(1))
    shift = g.constant(f"{name}.shift", np.full(1, offset))
    return g.affine(x, scale, shift, name=name)


def build_model(cfg: SRModelConfig, precision: Precision = Precision.DOUBLE) -> SRModel:
    """
    head conv3x3 -> `blocks` residual blocks (conv-act-conv, skip) ->
    tail conv3x3 + pixel shuffle. A FourierSR block is appended inside every
    block listed in `plugin_positions`. The identity and zero-branch starts leave
    the network output unchanged; the near-identity start scales the block by 1.1.
    """
    rng = np.random.default_rng(cfg.seed)
    g = Graph(precision)
    c, s = cfg.channels, cfg.scale

    lr = g.input("lr", (None, 1, None, None))
    h = _shift(g, lr, "normalize", -0.5)
    head = _conv(g, rng, h, "head", 1, c)

    h = head
    plugins = []
    for b in range(cfg.blocks):
        r = _conv(g, rng, h, f"block{b}.conv1", c, c)
        r = g.leaky_relu(r, name=f"block{b}.act")
        r = _conv(g, rng, r, f"block{b}.conv2", c, c)
        if b in cfg.plugin_positions:
            name = f"block{b}.fsr"
            params = identity_params(c, cfg.rho, precision, init=cfg.plugin_init)
            r = _plugin(g, r, name, params)
            plugins.append(name)
        h = g.add(h, r, name=f"block{b}.skip")
    if cfg.blocks:
        h = g.add(h, head, name="body.skip")

    t = _conv(g, rng, h, "tail", c, s * s)
    t = g.pixel_shuffle(t, s, name="upsample")
    out = _shift(g, t, "denormalize", 0.5)

    logger.info(
        f"Built SR model C={c} blocks={cfg.blocks} x{s} plugins={cfg.plugin_positions} "
        f"({g.parameter_count()} parameters)"
    )
    return SRModel(graph=g, input=lr, output=out, scale=s, config=cfg, plugins=plugins)


# ---------------------------------------------------------------------------
# small models for receptive-field checks
# ---------------------------------------------------------------------------

def build_conv_stack(layers: int, channels: int = 4, seed: int = 0) -> SRModel:
    """`layers` conv3x3 layers with activations between, 1 -> channels -> ... -> 1"""
    if layers < 1:
        raise ConfigurationError("conv stack needs at least one layer")
    rng = np.random.default_rng(seed)
    g = Graph(Precision.DOUBLE)
    x = g.input("lr", (None, 1, None, None))
    h = x
    for i in range(layers):
        in_ch = 1 if i == 0 else channels
        out_ch = 1 if i == layers - 1 else channels
        h = _conv(g, rng, h, f"conv{i}", in_ch, out_ch)
        if i < layers - 1:
            h = g.leaky_relu(h, name=f"act{i}")
    return SRModel(graph=g, input=x, output=h, scale=1)


def build_plugin_block(channels: int = 1, rho: int = 1, seed: int = 0) -> SRModel:
    """A single FourierSR block with random filters and residual on"""
    rng = np.random.default_rng(seed)
    g = Graph(Precision.DOUBLE)
    x = g.input("lr", (None, channels, None, None))
    params = random_params(channels, rho, rng, Precision.DOUBLE, residual=True)
    y = _plugin(g, x, "fsr", params)
    return SRModel(graph=g, input=x, output=y, scale=1, plugins=["fsr"])


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def _stack(images: Sequence[Tensor]) -> np.ndarray:
    return np.stack([t.data for t in images])


def evaluate(model: SRModel, pairs: Sequence[SamplePair]) -> float:
    """Mean PSNR of the clipped model output over full validation images"""
    if not pairs:
        return float("nan")
    prediction = np.clip(model.predict(_stack([p.lr for p in pairs])), 0.0, 1.0)
    return float(np.mean([psnr(prediction[i], pair.hr) for i, pair in enumerate(pairs)]))


def bicubic_baseline(pairs: Sequence[SamplePair]) -> float:
    scores = []
    for pair in pairs:
        _, height, width = pair.hr.shape
        up = np.clip(bicubic_resize(pair.lr, height, width), 0.0, 1.0)
        scores.append(psnr(up, pair.hr))
    return float(np.mean(scores)) if scores else float("nan")


def _sample_batch(
    rng: np.random.Generator, dataset: Sequence[SamplePair], cfg: TrainConfig, scale: int
) -> Tuple[np.ndarray, np.ndarray]:
    p = cfg.patch_size
    lr_batch, hr_batch = [], []
    for index in rng.integers(len(dataset), size=cfg.batch_size):
        pair = dataset[int(index)]
        _, h, w = pair.lr.shape
        top = int(rng.integers(h - p + 1))
        left = int(rng.integers(w - p + 1))
        lr_batch.append(pair.lr.data[:, top : top + p, left : left + p])
        hr_batch.append(pair.hr.data[:, scale * top : scale * (top + p), scale * left : scale * (left + p)])
    return np.stack(lr_batch), np.stack(hr_batch)


def train(
    model: SRModel,
    dataset: Sequence[SamplePair],
    cfg: TrainConfig,
    val_set: Optional[Sequence[SamplePair]] = None,
) -> TrainingHistory:
    """SGD with momentum on random LR/HR patch pairs"""
    if not dataset:
        raise ConfigurationError("training set is empty")
    s = model.scale
    for pair in dataset:
        _, h, w = pair.lr.shape
        if min(h, w) < cfg.patch_size:
            raise ConfigurationError(f"LR image {h}x{w} smaller than patch size {cfg.patch_size}")
        if pair.hr.shape != (1, s * h, s * w):
            raise DimensionError(f"HR {pair.hr.shape} is not x{s} of LR {pair.lr.shape}", pair.hr.shape, pair.lr.shape)

    g = model.graph
    loss = model.loss_node(cfg.loss)
    rng = np.random.default_rng(cfg.seed)
    velocity = {name: np.zeros_like(v) for name, v in g.parameter_values().items()}
    history = TrainingHistory()
    if val_set:
        history.bicubic_psnr = bicubic_baseline(val_set)
        logger.info(f"Bicubic validation PSNR {history.bicubic_psnr:.3f} dB")

    logger.info(f"Training {cfg.steps} steps (batch {cfg.batch_size}, patch {cfg.patch_size}, lr {cfg.learning_rate})")
    for step in range(1, cfg.steps + 1):
        lr_batch, hr_batch = _sample_batch(rng, dataset, cfg, s)
        (value,) = g.forward({"lr": lr_batch, "hr": hr_batch}, [loss])
        value = float(value)
        if not math.isfinite(value):
            logger.error(f"Training diverged at step {step}")
            raise DivergenceError(step, value)
        grads = g.backward(loss)
        for name, current in g.parameter_values().items():
            velocity[name] = cfg.momentum * velocity[name] + grads[name]
            g.set_parameter(name, current - cfg.learning_rate * velocity[name])

        val_psnr = None
        if val_set and (step % cfg.val_every == 0 or step == cfg.steps):
            val_psnr = evaluate(model, val_set)
            logger.info(f"step {step}: loss {value:.6f} val PSNR {val_psnr:.3f} dB")
        history.record(step, value, val_psnr)

    final = history.last_val_psnr
    if final is not None and history.bicubic_psnr is not None and final < history.bicubic_psnr:
        logger.warning(f"Validation PSNR {final:.3f} dB is below the bicubic baseline {history.bicubic_psnr:.3f} dB")
    return history


def write_history(history: TrainingHistory, path: str) -> None:
    rows = (
        (step, repr(loss), "" if val is None else repr(val))
        for step, loss, val in zip(history.steps, history.loss, history.val_psnr)
    )
    write_csv(path, HISTORY_HEADER, rows)


def train_run(model_cfg: SRModelConfig, train_cfg: TrainConfig, precision: Precision = Precision.DOUBLE):
    """Build a model, generate train/validation sets from the train seed and train"""
    model = build_model(model_cfg, precision)
    dataset = synth_dataset(train_cfg.seed, train_cfg.dataset_size, train_cfg.hr_size, model_cfg.scale)
    val_set = synth_dataset(
        train_cfg.seed, train_cfg.val_size, train_cfg.hr_size, model_cfg.scale, start=train_cfg.dataset_size
    )
    history = train(model, dataset, train_cfg, val_set)
    return model, history


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(model: SRModel, directory: str) -> None:
    if model.config is None:
        raise ConfigurationError("only models built from an SRModelConfig can be checkpointed")
    entries = {name: Tensor(value, model.precision) for name, value in model.graph.parameter_values().items()}
    meta = model.config.model_dump()
    meta["precision"] = model.precision.value
    save_archive(directory, entries, meta)


def load_checkpoint(directory: str) -> SRModel:
    entries, meta = load_archive(directory)
    precision = Precision.parse(meta.pop("precision", Precision.DOUBLE.value))
    model = build_model(parse_config(SRModelConfig, meta), precision)
    expected = set(model.graph.parameters)
    if set(entries) != expected:
        missing = sorted(expected - set(entries))
        extra = sorted(set(entries) - expected)
        raise ConfigurationError(f"checkpoint {directory} does not match its config (missing {missing}, extra {extra})")
    for name, tensor in entries.items():
        model.graph.set_parameter(name, tensor.data)
    return model


# ---------------------------------------------------------------------------
# effective receptive field
# ---------------------------------------------------------------------------

def erf_map(
    model: SRModel,
    position: Tuple[int, int],
    size: Tuple[int, int] = (16, 16),
    seed: int = 0,
) -> Tensor:
    """
    |d out[position] / d input| over every input pixel, normalized to max 1
    (an all-zero gradient stays zero). Evaluated at a seeded random input.
    """
    g = model.graph
    channels = g.node(model.input).shape[1] or 1
    height, width = size
    out_h, out_w = height * model.scale, width * model.scale
    y, x = position
    if not (0 <= y < out_h and 0 <= x < out_w):
        raise DimensionError(f"position {position} outside the {out_h}x{out_w} output", (out_h, out_w))

    rng = np.random.default_rng(seed)
    name = g.nodes[model.input].name
    (out,) = g.forward({name: rng.uniform(0.0, 1.0, (1, channels, height, width))}, [model.output])
    seed_grad = np.zeros_like(out)
    seed_grad[0, 0, y, x] = 1.0
    grad = np.abs(g.vjp(model.output, seed_grad)[name][0]).sum(axis=0)
    peak = grad.max()
    return Tensor(grad / peak if peak > 0 else grad, Precision.DOUBLE)


def write_erf(heatmap: Tensor, path: str) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    write_pgm(path, heatmap.data)


def support_fraction(heatmap: Tensor, threshold: float = 1e-12) -> float:
    """Share of pixels above `threshold` times the peak"""
    data = heatmap.data
    peak = data.max()
    if peak <= 0:
        return 0.0
    return float(np.mean(data > threshold * peak))


__all__ = [
    "SRModel",
    "build_model",
    "build_conv_stack",
    "build_plugin_block",
    "train",
    "train_run",
    "evaluate",
    "bicubic_baseline",
    "write_history",
    "save_checkpoint",
    "load_checkpoint",
    "erf_map",
    "write_erf",
    "support_fraction",
]
