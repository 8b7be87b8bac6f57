"""
Closed-form cost model of token-mixing layers and a CPU latency benchmark

FLOPs follow the printed layer formulas literally (no multiply-add
doubling); H and W are LR extents.
"""
from __future__ import annotations

import logging
import math
import time
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from app.core.config import settings
from app.core.errors import CapabilityError, ConfigurationError
from app.models.schemas import ComplexitySpec, CostReport, LayerKind, SRModelConfig
from app.services.autodiff import conv3x3_forward
from app.services.fourier_ops import forward_arrays, random_params

logger = logging.getLogger(__name__)

BENCH_HEADER = ("kind", "C", "H", "W", "rho", "k", "M", "flops_G", "params_K", "latency_ms")

_FLOPS_FORMULAS = {
    LayerKind.CONV: "k^2 C^2 HW",
    LayerKind.WTRANS: "4 C^2 HW + 2 M^2 CHW",
    LayerKind.FFC: "k^2 C^2 HW + 2 CHW log2(HW)",
    LayerKind.GFNET: "CHW + 2 CHW log2(HW)",
    LayerKind.AFNO: "8 C^2 HW / rho + 2 CHW log2(HW)",
    LayerKind.AFFNET: "8 C^2 HW / rho + 2 CHW log2(HW)",
    LayerKind.FOURIERSR: "ctm C^2 HW / rho + 2 CHW log2(HW)",
}

_PARAMS_FORMULAS = {
    LayerKind.CONV: "k^2 C^2",
    LayerKind.WTRANS: "4 C^2",
    LayerKind.FFC: "k^2 C^2",
    LayerKind.GFNET: "CHW",
    LayerKind.AFNO: "(1 + 4/rho) C^2 + 4C",
    LayerKind.AFFNET: "(1 + 4/rho) C^2 + 4C",
    LayerKind.FOURIERSR: "(6 + rho) C",
}


def _require(spec: ComplexitySpec, *names: str) -> Tuple:
    missing = [n for n in names if getattr(spec, n) is None]
    if missing:
        raise ConfigurationError(f"{spec.kind.value} needs {', '.join(missing)}")
    return tuple(getattr(spec, n) for n in names)


def flops_of(spec: ComplexitySpec) -> float:
    """FLOPs of one layer (raw count, not G)"""
    kind = spec.kind
    c = spec.C
    h, w = _require(spec, "H", "W")
    hw = h * w
    fft_term = 2 * c * hw * math.log2(hw)
    if kind is LayerKind.CONV:
        (k,) = _require(spec, "k")
        return float(k * k * c * c * hw)
    if kind is LayerKind.WTRANS:
        (m,) = _require(spec, "M")
        return float(4 * c * c * hw + 2 * m * m * c * hw)
    if kind is LayerKind.FFC:
        (k,) = _require(spec, "k")
        return k * k * c * c * hw + fft_term
    if kind is LayerKind.GFNET:
        return c * hw + fft_term
    (rho,) = _require(spec, "rho")
    if kind in (LayerKind.AFNO, LayerKind.AFFNET):
        return 8 * c * c * hw / rho + fft_term
    return spec.ctm * c * c * hw / rho + fft_term


def params_of(spec: ComplexitySpec) -> float:
    """Closed-form parameter count of one layer (raw count, not K)"""
    kind = spec.kind
    c = spec.C
    if kind in (LayerKind.CONV, LayerKind.FFC):
        (k,) = _require(spec, "k")
        return float(k * k * c * c)
    if kind is LayerKind.WTRANS:
        return float(4 * c * c)
    if kind is LayerKind.GFNET:
        h, w = _require(spec, "H", "W")
        return float(c * h * w)
    (rho,) = _require(spec, "rho")
    if kind in (LayerKind.AFNO, LayerKind.AFFNET):
        return (1 + 4 / rho) * c * c + 4 * c
    return float((6 + rho) * c)


def fouriersr_param_count(channels: int, rho: int, ctm: int = 1) -> int:
    """Scalars actually stored by a block: ctm C^2/rho (mix) + 4C (filters) + 2C (fusion)"""
    if channels % rho:
        raise ConfigurationError(f"rho={rho} does not divide C={channels}")
    return ctm * channels * channels // rho + 6 * channels


def cost_of(spec: ComplexitySpec) -> CostReport:
    params = params_of(spec)
    derived = None
    text = f"FLOPs {_FLOPS_FORMULAS[spec.kind]}; params {_PARAMS_FORMULAS[spec.kind]}"
    if spec.kind is LayerKind.FOURIERSR:
        derived = fouriersr_param_count(spec.C, spec.rho, spec.ctm) / 1e3
        text += "; stored ctm C^2/rho + 6C"
    return CostReport(
        kind=spec.kind,
        flops=flops_of(spec) / 1e9,
        params=params / 1e3,
        params_shape_derived=derived,
        formula_text=text,
    )


def model_param_count(cfg: SRModelConfig) -> int:
    """Closed-form count of the SR backbone built by srnet.build_model"""
    c, s = cfg.channels, cfg.scale
    head = 9 * c + c
    body = cfg.blocks * 2 * (9 * c * c + c)
    tail = 9 * c * s * s + s * s
    plugins = len(cfg.plugin_positions) * fouriersr_param_count(c, cfg.rho)
    return head + body + tail + plugins


def plugin_overhead(
    backbone_params: float,
    backbone_flops: float,
    n_plugins: int,
    spec: ComplexitySpec,
) -> Tuple[float, float]:
    """Percentage (params, FLOPs) increase from inserting `n_plugins` FourierSR blocks"""
    if backbone_params <= 0 or backbone_flops <= 0:
        raise ConfigurationError("backbone costs must be positive")
    if spec.kind is not LayerKind.FOURIERSR:
        raise ConfigurationError(f"overhead is defined for fouriersr plugins, got {spec.kind.value}")
    added_params = n_plugins * fouriersr_param_count(spec.C, spec.rho, spec.ctm)
    added_flops = n_plugins * flops_of(spec)
    return 100.0 * added_params / backbone_params, 100.0 * added_flops / backbone_flops


# ---------------------------------------------------------------------------
# latency benchmark
# ---------------------------------------------------------------------------

def _softmax(scores: np.ndarray) -> np.ndarray:
    e = np.exp(scores - scores.max())
    return e / e.sum()


def windowed_attention(x: np.ndarray, wq: np.ndarray, wk: np.ndarray, wv: np.ndarray, window: int) -> np.ndarray:
    """Single-head attention inside non-overlapping M x M windows, one query at a time"""
    c, h, w = x.shape
    tokens = x.reshape(c, h * w).T
    q, k, v = tokens @ wq, tokens @ wk, tokens @ wv
    scale = 1.0 / math.sqrt(c)
    out = np.empty_like(tokens)
    for top in range(0, h, window):
        for left in range(0, w, window):
            rows = np.arange(top, min(top + window, h))
            cols = np.arange(left, min(left + window, w))
            members = (rows[:, None] * w + cols[None, :]).ravel()
            for t in members:
                out[t] = _softmax(k[members] @ q[t] * scale) @ v[members]
    return out.T.reshape(c, h, w)


def _bench_callable(kind: LayerKind, spec: ComplexitySpec, rng: np.random.Generator) -> Callable[[], object]:
    c = spec.C
    h, w = _require(spec, "H", "W")
    x = rng.standard_normal((1, c, h, w))
    if kind is LayerKind.CONV:
        if (spec.k or 3) != 3:
            raise CapabilityError(f"conv benchmark is implemented for k=3 only, got k={spec.k}")
        weight = rng.standard_normal((c, c, 3, 3)) / math.sqrt(9 * c)
        bias = np.zeros(c)
        return lambda: conv3x3_forward(x, weight, bias)
    if kind is LayerKind.FOURIERSR:
        (rho,) = _require(spec, "rho")
        params = random_params(c, rho, rng, residual=True)
        return lambda: forward_arrays(x, params)
    if kind is LayerKind.WTRANS:
        (m,) = _require(spec, "M")
        wq, wk, wv = (rng.standard_normal((c, c)) / math.sqrt(c) for _ in range(3))
        return lambda: windowed_attention(x[0], wq, wk, wv, m)
    raise CapabilityError(f"no benchmark kernel for {kind.value}")


def bench(kind: LayerKind, spec: ComplexitySpec, repeats: Optional[int] = None, seed: int = 0) -> float:
    """Median wall time in milliseconds over `repeats` runs after the warm-up runs"""
    repeats = settings.BENCH_REPEATS if repeats is None else repeats
    if repeats < 1:
        raise ConfigurationError("repeats must be >= 1")
    run = _bench_callable(LayerKind(kind), spec, np.random.default_rng(seed))
    for _ in range(settings.BENCH_WARMUP):
        run()
    timings = []
    for _ in range(repeats):
        started = time.perf_counter()
        run()
        timings.append((time.perf_counter() - started) * 1e3)
    median = float(np.median(timings))
    logger.info(f"bench {LayerKind(kind).value} C={spec.C} {spec.H}x{spec.W}: {median:.3f} ms (median of {repeats})")
    return median


def bench_row(spec: ComplexitySpec, latency_ms: float) -> Dict[str, object]:
    """One record of the benchmark CSV"""
    report = cost_of(spec)
    return {
        "kind": spec.kind.value,
        "C": spec.C,
        "H": spec.H,
        "W": spec.W,
        "rho": "" if spec.rho is None else spec.rho,
        "k": "" if spec.k is None else spec.k,
        "M": "" if spec.M is None else spec.M,
        "flops_G": f"{report.flops:.3f}",
        "params_K": f"{report.params:.3f}",
        "latency_ms": f"{latency_ms:.3f}",
    }
