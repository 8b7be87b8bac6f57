"""
FourierSR token-mix operator

Pipeline for an input X of shape (C, H, W):

    Z  = rfft2(X)                          half spectrum (C, H, W//2+1)
    T  = omega_m (.) tokenize(Z, rho)      channel token mix per group
    Xu = irfft2(omega_u * conj(T))         upper branch, global conv of flip(X^)
    Xl = irfft2(omega_l * T)               lower branch, global conv of X^
    Y  = fuse_a * Xu + fuse_b * Xl (+ X)

`spatial_oracle` evaluates the same operator in the spatial domain with
direct circular convolutions, which is what `verify_equivalence` compares
against.
"""
from __future__ import annotations

import enum
import logging
import math
import time
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from app.core.config import settings
from app.core.errors import ConfigurationError, DimensionError
from app.models.schemas import EquivalenceReport, PluginInit, VerifyConfig
from app.models.tensor import ComplexTensor, Precision, Tensor, broadcast_mul, reshape
from app.services.fft import (
    Spectrum2D,
    circular_conv2d_array,
    flip_array,
    half_width,
    hermitian_weights,
    irfft2,
    irfft2_array,
    rfft2,
    rfft2_array,
)
from app.services.serialization import load_archive, save_archive

logger = logging.getLogger(__name__)

PARAM_ENTRIES = ("omega_m", "omega_u_re", "omega_u_im", "omega_l_re", "omega_l_im", "fuse_a", "fuse_b")
_FLAGS = ("residual", "real_filter_mode", "use_ctm", "use_upper", "use_lower", "share_filter")


class Branch(str, enum.Enum):
    UPPER = "upper"
    LOWER = "lower"


def _check_rho(channels: int, rho: int) -> None:
    if rho < 1 or channels % rho:
        raise ConfigurationError(f"rho={rho} must be >= 1 and divide C={channels}")


@dataclass(frozen=True)
class TokenView:
    """Fourier tokens grouped as (rho, C/rho, H, W//2+1)"""
    tokens: ComplexTensor
    rho: int
    full_width: int

    def __post_init__(self):
        if self.tokens.ndim != 4 or self.tokens.shape[0] != self.rho or self.rho < 1:
            raise DimensionError(
                f"tokens of shape {self.tokens.shape} do not form {self.rho} groups", self.tokens.shape
            )

    @property
    def group_size(self) -> int:
        return self.tokens.shape[1]


@dataclass(frozen=True)
class FourierSRParams:
    """Learnable filters of one FourierSR block plus its structural switches"""
    omega_m: Tensor  # (rho, C/rho, C/rho)
    omega_u: ComplexTensor  # (rho, C/rho)
    omega_l: ComplexTensor  # (rho, C/rho)
    fuse_a: Tensor  # (C,)
    fuse_b: Tensor  # (C,)
    residual: bool = False
    real_filter_mode: bool = False
    use_ctm: bool = True
    use_upper: bool = True
    use_lower: bool = True
    share_filter: bool = False

    def __post_init__(self):
        if self.omega_m.ndim != 3 or self.omega_m.shape[1] != self.omega_m.shape[2]:
            raise DimensionError(f"omega_m must be (rho, C/rho, C/rho), got {self.omega_m.shape}", self.omega_m.shape)
        rho, group = self.omega_m.shape[:2]
        channels = rho * group
        for name in ("omega_u", "omega_l"):
            shape = getattr(self, name).shape
            if shape != (rho, group):
                raise DimensionError(f"{name} must be {(rho, group)}, got {shape}", shape)
        for name in ("fuse_a", "fuse_b"):
            shape = getattr(self, name).shape
            if shape != (channels,):
                raise DimensionError(f"{name} must be ({channels},), got {shape}", shape)
        if self.real_filter_mode:
            for name in ("omega_u", "omega_l"):
                omega = getattr(self, name)
                object.__setattr__(self, name, ComplexTensor(omega.re, Tensor.zeros(omega.shape, omega.precision)))

    @property
    def rho(self) -> int:
        return self.omega_m.shape[0]

    @property
    def group_size(self) -> int:
        return self.omega_m.shape[1]

    @property
    def channels(self) -> int:
        return self.rho * self.group_size

    @property
    def precision(self) -> Precision:
        return self.omega_m.precision

    def parameter_count(self) -> int:
        """Learnable scalars: C^2/rho + 6C"""
        return (
            self.omega_m.size
            + 2 * self.omega_u.size
            + 2 * self.omega_l.size
            + self.fuse_a.size
            + self.fuse_b.size
        )

    def flags(self) -> Dict[str, bool]:
        return {name: getattr(self, name) for name in _FLAGS}

    def arrays(self) -> Dict[str, np.ndarray]:
        """Real parameter leaves keyed by archive entry name"""
        return {
            "omega_m": self.omega_m.data,
            "omega_u_re": self.omega_u.re.data,
            "omega_u_im": self.omega_u.im.data,
            "omega_l_re": self.omega_l.re.data,
            "omega_l_im": self.omega_l.im.data,
            "fuse_a": self.fuse_a.data,
            "fuse_b": self.fuse_b.data,
        }

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray], **flags) -> "FourierSRParams":
        return cls(
            omega_m=Tensor(arrays["omega_m"]),
            omega_u=ComplexTensor(Tensor(arrays["omega_u_re"]), Tensor(arrays["omega_u_im"])),
            omega_l=ComplexTensor(Tensor(arrays["omega_l_re"]), Tensor(arrays["omega_l_im"])),
            fuse_a=Tensor(arrays["fuse_a"]),
            fuse_b=Tensor(arrays["fuse_b"]),
            **flags,
        )


def identity_params(
    channels: int,
    rho: int,
    precision: Precision = Precision.DOUBLE,
    init: PluginInit = PluginInit.IDENTITY,
    **flags,
) -> FourierSRParams:
    """omega_m = I, omega_l = 1, omega_u = 0, fuse_a = 0; exact identity map for PluginInit.IDENTITY

    ZERO_BRANCH also sets omega_u = 1 and fuse_b = 0 with the residual on, so the
    block is an exact identity whose fusion weights still receive gradient.
    """
    _check_rho(channels, rho)
    group = channels // rho
    near = init is PluginInit.NEAR_IDENTITY
    zero_branch = init is PluginInit.ZERO_BRANCH
    flags.setdefault("residual", near or zero_branch)
    zeros = np.zeros((rho, group))
    upper = np.ones((rho, group)) if zero_branch else zeros
    fuse_b = 0.0 if zero_branch else 0.1 if near else 1.0
    return FourierSRParams(
        omega_m=Tensor(np.broadcast_to(np.eye(group), (rho, group, group)), precision),
        omega_u=ComplexTensor(Tensor(upper, precision), Tensor(zeros, precision)),
        omega_l=ComplexTensor(Tensor(np.ones((rho, group)), precision), Tensor(zeros, precision)),
        fuse_a=Tensor(np.zeros(channels), precision),
        fuse_b=Tensor(np.full(channels, fuse_b), precision),
        **flags,
    )


def random_params(
    channels: int,
    rho: int,
    rng: np.random.Generator,
    precision: Precision = Precision.DOUBLE,
    **flags,
) -> FourierSRParams:
    """Standard-normal filters; omega_m scaled to keep outputs O(1)"""
    _check_rho(channels, rho)
    group = channels // rho
    arrays = {
        "omega_m": rng.standard_normal((rho, group, group)) / np.sqrt(group),
        "omega_u_re": rng.standard_normal((rho, group)),
        "omega_u_im": rng.standard_normal((rho, group)),
        "omega_l_re": rng.standard_normal((rho, group)),
        "omega_l_im": rng.standard_normal((rho, group)),
        "fuse_a": rng.standard_normal(channels),
        "fuse_b": rng.standard_normal(channels),
    }
    arrays = {k: v.astype(precision.dtype) for k, v in arrays.items()}
    return FourierSRParams.from_arrays(arrays, **flags)


def save_params(p: FourierSRParams, directory: str) -> None:
    entries = {name: Tensor(arr) for name, arr in p.arrays().items()}
    save_archive(directory, entries, p.flags())


def load_params(directory: str) -> FourierSRParams:
    entries, meta = load_archive(directory, PARAM_ENTRIES)
    flags = {name: meta.get(name, "false").lower() == "true" for name in _FLAGS if name in meta}
    return FourierSRParams.from_arrays({k: v.data for k, v in entries.items()}, **flags)


# ---------------------------------------------------------------------------
# pipeline stages
# ---------------------------------------------------------------------------

def tokenize(s: Spectrum2D, rho: int) -> TokenView:
    """Split the channel axis into rho groups (pure reshape)"""
    if s.data.ndim != 3:
        raise DimensionError(f"tokenize expects a (C, H, W//2+1) spectrum, got {s.shape}", s.shape)
    channels, height, width = s.shape
    _check_rho(channels, rho)
    tokens = reshape(s.data, (rho, channels // rho, height, width))
    return TokenView(tokens=tokens, rho=rho, full_width=s.full_width)


def detokenize(tv: TokenView) -> Spectrum2D:
    rho, group, height, width = tv.tokens.shape
    return Spectrum2D(data=reshape(tv.tokens, (rho * group, height, width)), full_width=tv.full_width)


def channel_token_mix(tv: TokenView, omega_m: Tensor) -> TokenView:
    """out[g, j] = sum_i omega_m[g, j, i] * tokens[g, i], real matrix on each plane"""
    rho, group = tv.tokens.shape[:2]
    if omega_m.shape != (rho, group, group):
        raise DimensionError(
            f"omega_m {omega_m.shape} does not match tokens {tv.tokens.shape}", omega_m.shape, tv.tokens.shape
        )
    w = omega_m.data
    re = np.einsum("gji,gihw->gjhw", w, tv.tokens.re.data)
    im = np.einsum("gji,gihw->gjhw", w, tv.tokens.im.data)
    mixed = ComplexTensor(Tensor(re, tv.tokens.precision), Tensor(im, tv.tokens.precision))
    return TokenView(tokens=mixed, rho=tv.rho, full_width=tv.full_width)


def filter_product(tv: TokenView, omega: ComplexTensor, branch: Branch) -> TokenView:
    """omega broadcast over all frequencies; the upper branch multiplies the conjugate"""
    rho, group = tv.tokens.shape[:2]
    if omega.shape != (rho, group):
        raise DimensionError(f"filter {omega.shape} does not match tokens {tv.tokens.shape}", omega.shape, tv.tokens.shape)
    expanded = reshape(omega, (rho, group, 1, 1))
    tokens = tv.tokens.conj() if Branch(branch) is Branch.UPPER else tv.tokens
    return TokenView(tokens=broadcast_mul(expanded, tokens), rho=tv.rho, full_width=tv.full_width)


def _check_input(x: Tensor, p: FourierSRParams) -> None:
    if x.ndim != 3 or x.shape[0] != p.channels:
        raise DimensionError(f"input {x.shape} does not match C={p.channels}", x.shape)


def fourier_sr_forward(x: Tensor, p: FourierSRParams, drop_fft: bool = False) -> Tensor:
    """Frequency-domain evaluation of the operator on one (C, H, W) tensor"""
    _check_input(x, p)
    if drop_fft:
        y, _ = forward_arrays(x.data, p, drop_fft=True)
        return Tensor(y, x.precision)

    channels, height, width = x.shape
    tv = tokenize(rfft2(x), p.rho)
    if p.use_ctm:
        tv = channel_token_mix(tv, p.omega_m)

    y = np.zeros(x.shape, dtype=x.precision.dtype)
    if p.use_upper:
        x_u = irfft2(detokenize(filter_product(tv, p.omega_u, Branch.UPPER)), height, width)
        y = y + p.fuse_a.data[:, None, None] * x_u.data
    if p.use_lower:
        omega_l = p.omega_u if p.share_filter else p.omega_l
        x_l = irfft2(detokenize(filter_product(tv, omega_l, Branch.LOWER)), height, width)
        y = y + p.fuse_b.data[:, None, None] * x_l.data
    if p.residual:
        y = y + x.data
    return Tensor(y, x.precision)


def spatial_channel_mix(x: Tensor, omega_m: Tensor) -> Tensor:
    """Per-group channel mix applied to a spatial (C, H, W) tensor"""
    rho, group = omega_m.shape[:2]
    channels, height, width = x.shape
    _check_rho(channels, rho)
    grouped = x.data.reshape(rho, group, height, width)
    return Tensor(np.einsum("gji,gihw->gjhw", omega_m.data, grouped).reshape(x.shape), x.precision)


def materialize_kernel(omega: ComplexTensor, height: int, width: int, real_filter_mode: bool = False) -> np.ndarray:
    """Spatial (C, H, W) kernel of a per-channel filter broadcast over all frequencies"""
    channels = omega.size
    if real_filter_mode:
        # a constant real spectrum is a delta at the origin
        kernel = np.zeros((channels, height, width), dtype=omega.precision.dtype)
        kernel[:, 0, 0] = omega.re.data.reshape(channels)
        return kernel
    spectrum = np.broadcast_to(
        omega.to_complex().reshape(channels, 1, 1), (channels, height, half_width(width))
    )
    return irfft2_array(np.ascontiguousarray(spectrum), height, width)


def spatial_oracle(x: Tensor, p: FourierSRParams) -> Tensor:
    """Same operator via direct circular convolutions (no FFT on the data path)"""
    _check_input(x, p)
    channels, height, width = x.shape
    x_hat = spatial_channel_mix(x, p.omega_m).data if p.use_ctm else x.data

    y = np.zeros(x.shape, dtype=x.precision.dtype)
    if p.use_upper:
        k_u = materialize_kernel(p.omega_u, height, width, p.real_filter_mode)
        y = y + p.fuse_a.data[:, None, None] * circular_conv2d_array(flip_array(x_hat), k_u)
    if p.use_lower:
        omega_l = p.omega_u if p.share_filter else p.omega_l
        k_l = materialize_kernel(omega_l, height, width, p.real_filter_mode)
        y = y + p.fuse_b.data[:, None, None] * circular_conv2d_array(x_hat, k_l)
    if p.residual:
        y = y + x.data
    return Tensor(y, x.precision)


# ---------------------------------------------------------------------------
# batched array path with analytic adjoint (used by autodiff)
# ---------------------------------------------------------------------------

@dataclass
class ForwardCache:
    x: np.ndarray
    tokens: np.ndarray  # (..., rho, C/rho, H, Wz) spectrum before the mix
    mixed: np.ndarray  # after the mix
    x_u: Optional[np.ndarray] = None
    x_l: Optional[np.ndarray] = None
    drop_fft: bool = False


def _complex_filter(p: FourierSRParams, name: str) -> np.ndarray:
    omega = getattr(p, name)
    return omega.to_complex()[..., None, None]


def _group_mix(omega_m: np.ndarray, tokens: np.ndarray) -> np.ndarray:
    """(..., rho, C/rho, H, Wz) tokens mixed per group by (rho, C/rho, C/rho) matrices"""
    flat = tokens.reshape(tokens.shape[:-2] + (-1,))
    return np.matmul(omega_m.astype(tokens.dtype), flat).reshape(tokens.shape)


def forward_arrays(x: np.ndarray, p: FourierSRParams, drop_fft: bool = False) -> Tuple[np.ndarray, ForwardCache]:
    """Operator over (..., C, H, W) arrays; returns the output and what backward needs"""
    if x.ndim < 3 or x.shape[-3] != p.channels:
        raise DimensionError(f"input {x.shape} does not match C={p.channels}", x.shape)
    lead = x.shape[:-3]
    channels, height, width = x.shape[-3:]

    z = x.astype(Precision.of(x.dtype).complex_dtype) if drop_fft else rfft2_array(x)
    tokens = z.reshape(lead + (p.rho, p.group_size, height, z.shape[-1]))
    if p.use_ctm:
        mixed = _group_mix(p.omega_m.data, tokens)
    else:
        mixed = tokens

    def to_spatial(spec):
        spec = spec.reshape(lead + (channels, height, spec.shape[-1]))
        return spec.real.copy() if drop_fft else irfft2_array(spec, height, width)

    cache = ForwardCache(x=x, tokens=tokens, mixed=mixed, drop_fft=drop_fft)
    y = np.zeros_like(x)
    if p.use_upper:
        cache.x_u = to_spatial(_complex_filter(p, "omega_u") * np.conj(mixed))
        y = y + p.fuse_a.data[:, None, None] * cache.x_u
    if p.use_lower:
        omega_l = _complex_filter(p, "omega_u" if p.share_filter else "omega_l")
        cache.x_l = to_spatial(omega_l * mixed)
        y = y + p.fuse_b.data[:, None, None] * cache.x_l
    if p.residual:
        y = y + x
    return y, cache


def backward_arrays(cache: ForwardCache, p: FourierSRParams, gy: np.ndarray) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    """Reverse-mode adjoint of forward_arrays: input gradient and per-entry parameter gradients"""
    x = cache.x
    lead = x.shape[:-3]
    channels, height, width = x.shape[-3:]
    sum_axes = tuple(range(len(lead))) + (-2, -1)
    real_dtype = x.dtype
    grads = {name: np.zeros_like(arr) for name, arr in p.arrays().items()}

    def to_spectral_grad(g):
        # conj-gradient (dL/dRe + i dL/dIm) of the half spectrum feeding the spatial map
        if cache.drop_fft:
            spec = g.astype(cache.mixed.dtype)
        else:
            spec = rfft2_array(g) * (hermitian_weights(width) / (height * width)).astype(real_dtype)
        return spec.reshape(lead + (p.rho, p.group_size, height, spec.shape[-1]))

    g_mixed = np.zeros_like(cache.mixed)
    g_omega_u = np.zeros((p.rho, p.group_size), dtype=cache.mixed.dtype)
    g_omega_l = np.zeros_like(g_omega_u)
    tok_axes = tuple(range(len(lead))) + (-2, -1)

    if p.use_upper:
        grads["fuse_a"] = np.sum(gy * cache.x_u, axis=sum_axes)
        g_u = to_spectral_grad(p.fuse_a.data[:, None, None] * gy)
        g_mixed += _complex_filter(p, "omega_u") * np.conj(g_u)
        g_omega_u += np.sum(cache.mixed * g_u, axis=tok_axes)
    if p.use_lower:
        grads["fuse_b"] = np.sum(gy * cache.x_l, axis=sum_axes)
        g_l = to_spectral_grad(p.fuse_b.data[:, None, None] * gy)
        omega_l = _complex_filter(p, "omega_u" if p.share_filter else "omega_l")
        g_mixed += np.conj(omega_l) * g_l
        g_filter = np.sum(np.conj(cache.mixed) * g_l, axis=tok_axes)
        if p.share_filter:
            g_omega_u += g_filter
        else:
            g_omega_l += g_filter

    grads["omega_u_re"], grads["omega_u_im"] = g_omega_u.real.copy(), g_omega_u.imag.copy()
    grads["omega_l_re"], grads["omega_l_im"] = g_omega_l.real.copy(), g_omega_l.imag.copy()
    if p.real_filter_mode:
        grads["omega_u_im"][:] = 0
        grads["omega_l_im"][:] = 0

    if p.use_ctm:
        g_tokens = _group_mix(np.swapaxes(p.omega_m.data, -1, -2), g_mixed)
        # Re sum over batch and frequencies of g_mixed[j] * conj(tokens[i])
        flat = (-1, p.rho, p.group_size, height * g_mixed.shape[-1])
        outer = np.matmul(g_mixed.reshape(flat), np.swapaxes(np.conj(cache.tokens).reshape(flat), -1, -2))
        grads["omega_m"] = outer.sum(axis=0).real
    else:
        g_tokens = g_mixed
    g_z = g_tokens.reshape(lead + (channels, height, g_tokens.shape[-1]))

    if cache.drop_fft:
        gx = g_z.real.copy()
    else:
        # adjoint of the half-spectrum rfft2: HW * irfft2(g / multiplicity)
        gx = (height * width) * irfft2_array(g_z / hermitian_weights(width).astype(real_dtype), height, width)
    if p.residual:
        gx = gx + gy
    return gx.astype(real_dtype, copy=False), {k: v.astype(real_dtype, copy=False) for k, v in grads.items()}


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------

def _relative_linf(a: np.ndarray, b: np.ndarray) -> Tuple[float, float]:
    abs_diff = float(np.max(np.abs(a - b)))
    scale = float(np.max(np.abs(b)))
    return abs_diff, abs_diff / max(scale, np.finfo(np.float64).tiny)


def draw_instance(config: VerifyConfig, index: int, precision: Precision) -> Tuple[Tensor, FourierSRParams]:
    """Seeded random (input, params) pair from the configured family"""
    rng = np.random.default_rng([config.seed, index])
    channels = config.channels or int(rng.choice(config.channel_choices))
    if config.rho is not None:
        rho = config.rho
    else:
        divisors = [d for d in range(1, channels + 1) if channels % d == 0]
        rho = int(rng.choice(divisors))
    height = config.height or int(rng.integers(config.min_extent, config.max_extent + 1))
    width = config.width or int(rng.integers(config.min_extent, config.max_extent + 1))
    params = random_params(
        channels,
        rho,
        rng,
        precision,
        residual=config.residual,
        real_filter_mode=config.real_filter_mode,
        use_ctm=config.use_ctm,
        use_upper=config.use_upper,
        use_lower=config.use_lower,
        share_filter=config.share_filter,
    )
    x = Tensor(rng.standard_normal((channels, height, width)), precision)
    return x, params


def verify_equivalence(
    config: VerifyConfig,
    seeds: int,
    tolerance: float,
    drop_fft: bool = False,
    precision: Precision = Precision.DOUBLE,
) -> EquivalenceReport:
    """Compare the FFT pipeline with the spatial oracle over `seeds` random instances"""
    logger.info(f"Verifying equivalence over {seeds} seeds (tol={tolerance:g}, drop_fft={drop_fft})")
    started = time.perf_counter()
    max_abs = max_rel = 0.0
    control_rel = math.inf
    for index in range(seeds):
        x, params = draw_instance(config, index, precision)
        reference = spatial_oracle(x, params).data
        fast = fourier_sr_forward(x, params, drop_fft=drop_fft).data
        abs_diff, rel_diff = _relative_linf(fast, reference)
        max_abs, max_rel = max(max_abs, abs_diff), max(max_rel, rel_diff)
        if not drop_fft:
            control = fourier_sr_forward(x, params, drop_fft=True).data
            control_rel = min(control_rel, _relative_linf(control, reference)[1])
        logger.debug(f"seed {index}: C={x.shape[0]} rho={params.rho} {x.shape[1]}x{x.shape[2]} rel={rel_diff:.3e}")

    report = EquivalenceReport(
        max_abs_diff=max_abs,
        max_rel_diff=max_rel,
        seeds_tested=seeds,
        passed=max_rel <= tolerance,
        tolerance=tolerance,
        drop_fft=drop_fft,
        control_min_rel_diff=None if drop_fft or seeds == 0 else control_rel,
    )
    elapsed = time.perf_counter() - started
    if report.control_min_rel_diff is not None and report.control_min_rel_diff <= settings.CONTROL_THRESHOLD:
        logger.warning(f"FFT-removed control matched the oracle (rel={report.control_min_rel_diff:.3e})")
    logger.info(f"Equivalence {'passed' if report.passed else 'FAILED'}: max rel {max_rel:.3e} in {elapsed:.2f}s")
    return report