"""
Reverse-mode differentiation over a static graph with a closed op set

Nodes are appended in topological order by the builder methods of `Graph`;
`forward` evaluates the ancestors of the requested outputs and caches values,
`backward` walks the same nodes in reverse and accumulates adjoints in a
fixed order so gradients are bitwise reproducible.

Arrays are batched NCHW. conv3x3 uses circular padding.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from app.core.config import settings
from app.core.errors import ContractError, DimensionError
from app.models.tensor import Precision
from app.services.fourier_ops import PARAM_ENTRIES, FourierSRParams, backward_arrays, forward_arrays

logger = logging.getLogger(__name__)

LEAKY_SLOPE = 0.01

# (dy, dx) offsets of the 3x3 taps in row-major order
_TAPS = [(dy, dx) for dy in range(3) for dx in range(3)]


class OpKind(str, enum.Enum):
    INPUT = "input"
    PARAM = "param"
    CONST = "const"
    CONV3X3 = "conv3x3"
    LEAKY_RELU = "leaky_relu"
    ADD = "add"
    PIXEL_SHUFFLE = "pixel_shuffle"
    AFFINE = "affine"
    FOURIER_SR = "fourier_sr"
    MEAN = "mean"
    L1_LOSS = "l1_loss"
    MSE_LOSS = "mse_loss"


LEAVES = (OpKind.INPUT, OpKind.PARAM, OpKind.CONST)


@dataclass
class Node:
    id: int
    kind: OpKind
    name: str
    inputs: Tuple[int, ...] = ()
    attrs: Dict[str, Any] = field(default_factory=dict)
    shape: Optional[Tuple[Optional[int], ...]] = None  # declared leaf shape, None = any extent
    value: Optional[np.ndarray] = None
    grad: Optional[np.ndarray] = None
    cache: Any = None


def _patches(x: np.ndarray) -> np.ndarray:
    """(N, C, H, W) -> (N, C, 9, H, W) circularly shifted copies"""
    return np.stack([np.roll(x, shift=(1 - dy, 1 - dx), axis=(-2, -1)) for dy, dx in _TAPS], axis=2)


def conv3x3_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    patches = _patches(x)
    out_ch, in_ch = weight.shape[:2]
    y = np.einsum("oik,nikhw->nohw", weight.reshape(out_ch, in_ch, 9), patches, optimize=True)
    return y + bias[:, None, None], patches


def pixel_shuffle(x: np.ndarray, scale: int) -> np.ndarray:
    n, c, h, w = x.shape
    out_c = c // (scale * scale)
    y = x.reshape(n, out_c, scale, scale, h, w).transpose(0, 1, 4, 2, 5, 3)
    return y.reshape(n, out_c, h * scale, w * scale)


def pixel_unshuffle(y: np.ndarray, scale: int) -> np.ndarray:
    n, c, hs, ws = y.shape
    h, w = hs // scale, ws // scale
    x = y.reshape(n, c, h, scale, w, scale).transpose(0, 1, 3, 5, 2, 4)
    return x.reshape(n, c * scale * scale, h, w)


class Graph:
    """Static computation graph"""

    def __init__(self, precision: Precision = Precision.DOUBLE):
        self.precision = precision
        self.nodes: List[Node] = []
        self.inputs: Dict[str, int] = {}
        self.parameters: Dict[str, int] = {}
        self.last_inputs: Dict[str, np.ndarray] = {}
        self.loss: Optional[int] = None
        self._evaluated: List[int] = []

    # ------------------------------------------------------------------
    # builders
    # ------------------------------------------------------------------

    def _add(self, kind: OpKind, name: Optional[str], inputs: Sequence[int] = (), **attrs) -> int:
        for i in inputs:
            if not 0 <= i < len(self.nodes):
                raise ContractError(f"node {name or kind.value} refers to unknown input {i}")
        node_id = len(self.nodes)
        self.nodes.append(Node(id=node_id, kind=kind, name=name or f"{kind.value}_{node_id}", inputs=tuple(inputs), attrs=attrs))
        return node_id

    def _cast(self, value) -> np.ndarray:
        return np.array(value, dtype=self.precision.dtype, copy=True)

    def input(self, name: str, shape: Sequence[Optional[int]]) -> int:
        node_id = self._add(OpKind.INPUT, name)
        self.nodes[node_id].shape = tuple(shape)
        self.inputs[name] = node_id
        return node_id

    def parameter(self, name: str, value) -> int:
        if name in self.parameters:
            raise ContractError(f"duplicate parameter name {name}")
        node_id = self._add(OpKind.PARAM, name)
        node = self.nodes[node_id]
        node.value = self._cast(value)
        node.shape = node.value.shape
        self.parameters[name] = node_id
        return node_id

    def constant(self, name: str, value) -> int:
        node_id = self._add(OpKind.CONST, name)
        node = self.nodes[node_id]
        node.value = self._cast(value)
        node.shape = node.value.shape
        return node_id

    def conv3x3(self, x: int, weight: int, bias: int, name: Optional[str] = None) -> int:
        return self._add(OpKind.CONV3X3, name, (x, weight, bias))

    def leaky_relu(self, x: int, name: Optional[str] = None) -> int:
        return self._add(OpKind.LEAKY_RELU, name, (x,))

    def add(self, a: int, b: int, name: Optional[str] = None) -> int:
        return self._add(OpKind.ADD, name, (a, b))

    def pixel_shuffle(self, x: int, scale: int, name: Optional[str] = None) -> int:
        return self._add(OpKind.PIXEL_SHUFFLE, name, (x,), scale=int(scale))

    def affine(self, x: int, scale: int, shift: int, name: Optional[str] = None) -> int:
        return self._add(OpKind.AFFINE, name, (x, scale, shift))

    def fourier_sr(self, x: int, filters: Mapping[str, int], flags: Mapping[str, bool], name: Optional[str] = None) -> int:
        """FourierSR block; `filters` maps every archive entry name to a leaf node"""
        missing = [entry for entry in PARAM_ENTRIES if entry not in filters]
        if missing:
            raise ContractError(f"fourier_sr block missing filters {missing}")
        inputs = (x,) + tuple(filters[entry] for entry in PARAM_ENTRIES)
        return self._add(OpKind.FOURIER_SR, name, inputs, flags=dict(flags))

    def mean(self, x: int, name: Optional[str] = None) -> int:
        return self._add(OpKind.MEAN, name, (x,))

    def l1_loss(self, x: int, target: int, name: Optional[str] = None) -> int:
        self.loss = self._add(OpKind.L1_LOSS, name, (x, target))
        return self.loss

    def mse_loss(self, x: int, target: int, name: Optional[str] = None) -> int:
        self.loss = self._add(OpKind.MSE_LOSS, name, (x, target))
        return self.loss

    # ------------------------------------------------------------------
    # parameter access
    # ------------------------------------------------------------------

    def parameter_values(self) -> Dict[str, np.ndarray]:
        return {name: self.nodes[i].value for name, i in self.parameters.items()}

    def set_parameter(self, name: str, value) -> None:
        node = self.nodes[self.parameters[name]]
        value = self._cast(value)
        if value.shape != node.value.shape:
            raise DimensionError(f"parameter {name}: {value.shape} != {node.value.shape}", value.shape, node.value.shape)
        node.value = value

    def parameter_count(self) -> int:
        return int(sum(self.nodes[i].value.size for i in self.parameters.values()))

    def node(self, key) -> Node:
        if isinstance(key, str):
            for n in self.nodes:
                if n.name == key:
                    return n
            raise ContractError(f"no node named {key}")
        return self.nodes[key]

    # ------------------------------------------------------------------
    # evaluation
    # ------------------------------------------------------------------

    def _ancestors(self, outputs: Iterable[int]) -> List[int]:
        needed = set()
        stack = list(outputs)
        while stack:
            i = stack.pop()
            if i in needed:
                continue
            needed.add(i)
            stack.extend(self.nodes[i].inputs)
        return sorted(needed)

    def forward(self, inputs: Mapping[str, Any], outputs: Optional[Sequence[int]] = None) -> List[np.ndarray]:
        """Evaluate the ancestors of `outputs` (default: every node) and return their values"""
        if outputs is None:
            outputs = [len(self.nodes) - 1]
            order = list(range(len(self.nodes)))
        else:
            order = self._ancestors(outputs)
        self.last_inputs = {k: self._cast(v) for k, v in inputs.items()}
        for i in order:
            node = self.nodes[i]
            node.grad = None
            if node.kind is OpKind.INPUT:
                if node.name not in self.last_inputs:
                    raise ContractError(f"no value supplied for input {node.name}")
                node.value = self.last_inputs[node.name]
                _check_declared(node)
            elif node.kind not in LEAVES:
                self._evaluate(node)
        self._evaluated = order
        return [self.nodes[i].value for i in outputs]

    def _evaluate(self, node: Node) -> None:
        args = [self.nodes[i].value for i in node.inputs]
        kind = node.kind
        if kind is OpKind.CONV3X3:
            x, weight, bias = args
            if x.ndim != 4 or weight.shape[2:] != (3, 3) or weight.shape[1] != x.shape[1] or bias.shape != weight.shape[:1]:
                raise DimensionError(
                    f"node {node.name}: conv3x3 input {x.shape}, weight {weight.shape}, bias {bias.shape}",
                    x.shape, weight.shape,
                )
            node.value, node.cache = conv3x3_forward(x, weight, bias)
        elif kind is OpKind.LEAKY_RELU:
            (x,) = args
            node.value = np.where(x > 0, x, LEAKY_SLOPE * x)
        elif kind is OpKind.ADD:
            a, b = args
            if a.shape != b.shape:
                raise DimensionError(f"node {node.name}: cannot add {a.shape} and {b.shape}", a.shape, b.shape)
            node.value = a + b
        elif kind is OpKind.PIXEL_SHUFFLE:
            (x,) = args
            s = node.attrs["scale"]
            if x.ndim != 4 or x.shape[1] % (s * s):
                raise DimensionError(f"node {node.name}: {x.shape} channels not divisible by {s * s}", x.shape)
            node.value = pixel_shuffle(x, s)
        elif kind is OpKind.AFFINE:
            x, scale, shift = args
            if x.ndim != 4 or scale.shape != (x.shape[1],) or shift.shape != (x.shape[1],):
                raise DimensionError(f"node {node.name}: affine {scale.shape}/{shift.shape} vs input {x.shape}", x.shape)
            node.value = x * scale[:, None, None] + shift[:, None, None]
        elif kind is OpKind.FOURIER_SR:
            x = args[0]
            params = self._block_params(node, args[1:])
            if x.ndim != 4 or x.shape[1] != params.channels:
                raise DimensionError(f"node {node.name}: input {x.shape} does not match C={params.channels}", x.shape)
            node.value, cache = forward_arrays(x, params)
            node.cache = (params, cache)
        elif kind is OpKind.MEAN:
            node.value = np.asarray(np.mean(args[0]), dtype=self.precision.dtype)
        elif kind in (OpKind.L1_LOSS, OpKind.MSE_LOSS):
            x, target = args
            if x.shape != target.shape:
                raise DimensionError(f"node {node.name}: prediction {x.shape} vs target {target.shape}", x.shape, target.shape)
            diff = x - target
            loss = np.mean(np.abs(diff)) if kind is OpKind.L1_LOSS else np.mean(diff * diff)
            node.value = np.asarray(loss, dtype=self.precision.dtype)
            node.cache = diff
        else:
            raise ContractError(f"node {node.name}: unknown op {kind}")

    def _block_params(self, node: Node, arrays: Sequence[np.ndarray]) -> FourierSRParams:
        try:
            return FourierSRParams.from_arrays(dict(zip(PARAM_ENTRIES, arrays)), **node.attrs["flags"])
        except DimensionError as e:
            raise DimensionError(f"node {node.name}: {e}") from e

    # ------------------------------------------------------------------
    # differentiation
    # ------------------------------------------------------------------

    def backward(self, loss: Optional[int] = None) -> Dict[str, np.ndarray]:
        """Gradients of a scalar node w.r.t. every parameter and input leaf"""
        loss = self.loss if loss is None else loss
        if loss is None:
            raise ContractError("graph has no loss node")
        value = self.nodes[loss].value
        if value is None:
            raise ContractError(f"node {self.nodes[loss].name} has not been evaluated")
        if value.size != 1:
            raise ContractError(f"loss node {self.nodes[loss].name} is not scalar: {value.shape}")
        return self.vjp(loss, np.ones_like(value))

    def vjp(self, output: int, seed: np.ndarray) -> Dict[str, np.ndarray]:
        """Vector-Jacobian product of `output` with `seed`"""
        target = self.nodes[output]
        seed = self._cast(seed)
        if target.value is None or seed.shape != target.value.shape:
            raise DimensionError(f"seed {seed.shape} does not match node {target.name}", seed.shape)
        order = self._ancestors([output])
        for i in order:
            self.nodes[i].grad = None
        target.grad = seed
        for i in reversed(order):
            node = self.nodes[i]
            if node.grad is None or node.kind in LEAVES:
                continue
            for input_id, g in zip(node.inputs, self._adjoint(node)):
                if g is None:
                    continue
                src = self.nodes[input_id]
                src.grad = g if src.grad is None else src.grad + g
        grads = {}
        for name, i in list(self.parameters.items()) + list(self.inputs.items()):
            node = self.nodes[i]
            if i in order:
                grads[name] = node.grad if node.grad is not None else np.zeros_like(node.value)
        return grads

    def _adjoint(self, node: Node) -> List[Optional[np.ndarray]]:
        g = node.grad
        args = [self.nodes[i].value for i in node.inputs]
        kind = node.kind
        if kind is OpKind.CONV3X3:
            x, weight, _ = args
            patches = node.cache
            out_ch, in_ch = weight.shape[:2]
            w9 = weight.reshape(out_ch, in_ch, 9)
            g_weight = np.einsum("nohw,nikhw->oik", g, patches, optimize=True).reshape(weight.shape)
            g_bias = g.sum(axis=(0, 2, 3))
            g_patches = np.einsum("oik,nohw->nikhw", w9, g, optimize=True)
            g_x = np.zeros_like(x)
            for k, (dy, dx) in enumerate(_TAPS):
                g_x += np.roll(g_patches[:, :, k], shift=(dy - 1, dx - 1), axis=(-2, -1))
            return [g_x, g_weight, g_bias]
        if kind is OpKind.LEAKY_RELU:
            return [np.where(args[0] > 0, g, LEAKY_SLOPE * g)]
        if kind is OpKind.ADD:
            return [g, g]
        if kind is OpKind.PIXEL_SHUFFLE:
            return [pixel_unshuffle(g, node.attrs["scale"])]
        if kind is OpKind.AFFINE:
            x, scale, _ = args
            return [g * scale[:, None, None], np.sum(g * x, axis=(0, 2, 3)), np.sum(g, axis=(0, 2, 3))]
        if kind is OpKind.FOURIER_SR:
            params, cache = node.cache
            g_x, grads = backward_arrays(cache, params, g)
            return [g_x] + [grads[entry] for entry in PARAM_ENTRIES]
        if kind is OpKind.MEAN:
            x = args[0]
            return [np.full_like(x, g / x.size)]
        if kind is OpKind.L1_LOSS:
            diff = node.cache
            g_x = np.sign(diff) * (g / diff.size)
            return [g_x, -g_x]
        if kind is OpKind.MSE_LOSS:
            diff = node.cache
            g_x = diff * (2 * g / diff.size)
            return [g_x, -g_x]
        raise ContractError(f"node {node.name}: no adjoint for {kind}")

    # ------------------------------------------------------------------
    # kink bookkeeping for finite differences
    # ------------------------------------------------------------------

    def kink_signature(self) -> Tuple[np.ndarray, ...]:
        """Sign pattern of every non-smooth point in the evaluated graph"""
        masks = []
        for i in self._evaluated:
            node = self.nodes[i]
            if node.kind is OpKind.LEAKY_RELU:
                masks.append(self.nodes[node.inputs[0]].value > 0)
            elif node.kind is OpKind.L1_LOSS:
                masks.append(np.sign(node.cache))
        return tuple(masks)


def _check_declared(node: Node) -> None:
    declared, actual = node.shape, node.value.shape
    if declared is None:
        return
    if len(declared) != len(actual) or any(d is not None and d != a for d, a in zip(declared, actual)):
        raise DimensionError(f"input {node.name}: expected {declared}, got {actual}", actual)


def forward(g: Graph, inputs: Mapping[str, Any], outputs: Optional[Sequence[int]] = None) -> List[np.ndarray]:
    return g.forward(inputs, outputs)


def backward(g: Graph, loss: Optional[int] = None) -> Dict[str, np.ndarray]:
    return g.backward(loss)


def grad_check(
    g: Graph,
    leaf: str,
    eps: Optional[float] = None,
    loss: Optional[int] = None,
    inputs: Optional[Mapping[str, Any]] = None,
) -> float:
    """
    Worst relative error between analytic and central-difference gradients
    of `loss` w.r.t. every scalar of the named parameter or input leaf.

    Points whose +/- eps perturbation flips any activation or L1 sign
    are rejected.
    """
    if g.precision is not Precision.DOUBLE:
        raise ContractError("grad_check requires a double precision graph")
    eps = settings.GRAD_CHECK_EPS if eps is None else eps
    loss = g.loss if loss is None else loss
    inputs = dict(g.last_inputs if inputs is None else inputs)
    outputs = [loss]

    g.forward(inputs, outputs)
    base_signature = g.kink_signature()
    analytic = g.backward(loss)[leaf]

    is_param = leaf in g.parameters
    if not is_param and leaf not in inputs:
        raise ContractError(f"unknown leaf {leaf}")
    base = (g.parameter_values()[leaf] if is_param else np.asarray(inputs[leaf], dtype=np.float64)).copy()

    def evaluate(value: np.ndarray) -> Tuple[float, Tuple[np.ndarray, ...]]:
        if is_param:
            g.set_parameter(leaf, value)
        else:
            inputs[leaf] = value
        (out,) = g.forward(inputs, outputs)
        return float(out), g.kink_signature()

    def same_signature(sig):
        return all(np.array_equal(a, b) for a, b in zip(sig, base_signature))

    worst = 0.0
    rejected = 0
    try:
        for index in np.ndindex(base.shape):
            shifted = base.copy()
            shifted[index] = base[index] + eps
            f_plus, sig_plus = evaluate(shifted)
            shifted[index] = base[index] - eps
            f_minus, sig_minus = evaluate(shifted)
            if not (same_signature(sig_plus) and same_signature(sig_minus)):
                rejected += 1
                continue
            numeric = (f_plus - f_minus) / (2 * eps)
            a = float(analytic[index])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-12)
            worst = max(worst, err)
    finally:
        evaluate(base)

    if rejected:
        logger.info(f"grad_check {leaf}: rejected {rejected} points at activation kinks")
    return worst
