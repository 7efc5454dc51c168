"""Config-driven networks for the split model: client ``f``, attacker encoder
``f_tilde``, attacker decoder ``f_inv``, discriminator ``d`` and an optional
honest-server classification ``head``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .tensor.conv import (
    conv_output_size,
    conv_weight_per_example_np,
    tconv_output_size,
)

LAYER_KINDS = ("dense", "conv", "tconv", "activation", "flatten", "reshape")
NETWORK_NAMES = ("f", "f_tilde", "f_inv", "d", "head")


class ModelSpecError(ValueError):
    """Layer shapes do not compose."""


class FeatureSpaceMismatch(ModelSpecError):
    """f, f_tilde, f_inv and d do not share one feature space."""


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    units: int = 0
    filters: int = 0
    kernel: int = 3
    stride: int = 1
    padding: int = 0
    activation: str = ""
    alpha: float = 0.2
    shape: tuple = ()

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ModelSpecError(f"unknown layer fields {sorted(extra)} in {d}")
        d = dict(d)
        if "shape" in d:
            d["shape"] = tuple(d["shape"])
        spec = cls(**d)
        if spec.kind not in LAYER_KINDS:
            raise ModelSpecError(f"unknown layer kind {spec.kind!r}")
        return spec

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        defaults = LayerSpec(kind=self.kind)
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name != "kind" and v != getattr(defaults, f.name):
                out[f.name] = list(v) if isinstance(v, tuple) else v
        return out


def _he_uniform(rng, shape, fan_in):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    params: tuple = ()

    def __init__(self, in_shape: tuple):
        self.in_shape = tuple(in_shape)
        self.out_shape = self.in_shape

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError


class Dense(Layer):
    def __init__(self, in_shape, units, rng):
        super().__init__(in_shape)
        if len(self.in_shape) != 1:
            raise ModelSpecError(f"dense layer needs a flat input, got {self.in_shape}")
        n_in = self.in_shape[0]
        self.w = Tensor(_he_uniform(rng, (n_in, units), n_in), requires_grad=True)
        self.b = Tensor(np.zeros(units), requires_grad=True)
        self.params = (self.w, self.b)
        self.out_shape = (units,)

    def forward(self, x):
        return T.add(T.matmul(x, self.w), self.b)

    def per_example(self, a, dz):
        return [np.einsum("ni,no->nio", a, dz), dz]


class Conv(Layer):
    def __init__(self, in_shape, filters, kernel, stride, padding, rng):
        super().__init__(in_shape)
        if len(self.in_shape) != 3:
            raise ModelSpecError(f"conv layer needs a C x H x W input, got {self.in_shape}")
        c, h, w = self.in_shape
        if kernel > h + 2 * padding or kernel > w + 2 * padding:
            raise ModelSpecError(f"conv kernel {kernel} larger than padded input {self.in_shape}")
        fan_in = c * kernel * kernel
        self.k = Tensor(_he_uniform(rng, (filters, c, kernel, kernel), fan_in), requires_grad=True)
        self.b = Tensor(np.zeros(filters), requires_grad=True)
        self.params = (self.k, self.b)
        self.stride, self.padding = stride, padding
        self.out_shape = (filters, conv_output_size(h, kernel, stride, padding),
                          conv_output_size(w, kernel, stride, padding))

    def forward(self, x):
        y = T.conv2d(x, self.k, self.stride, self.padding)
        return T.add(y, T.reshape(self.b, (1, -1, 1, 1)))

    def per_example(self, a, dz):
        dk = conv_weight_per_example_np(a, dz, self.stride, self.padding, self.k.shape[2:])
        return [dk, dz.sum(axis=(2, 3))]


class TConv(Layer):
    def __init__(self, in_shape, filters, kernel, stride, padding, rng):
        super().__init__(in_shape)
        if len(self.in_shape) != 3:
            raise ModelSpecError(f"tconv layer needs a C x H x W input, got {self.in_shape}")
        c, h, w = self.in_shape
        fan_in = c * kernel * kernel // (stride * stride) or 1
        self.k = Tensor(_he_uniform(rng, (c, filters, kernel, kernel), fan_in), requires_grad=True)
        self.b = Tensor(np.zeros(filters), requires_grad=True)
        self.params = (self.k, self.b)
        self.stride, self.padding = stride, padding
        ho = tconv_output_size(h, kernel, stride, padding)
        wo = tconv_output_size(w, kernel, stride, padding)
        if ho < 1 or wo < 1:
            raise ModelSpecError(f"tconv output would be empty for input {self.in_shape}")
        self.out_shape = (filters, ho, wo)

    def forward(self, x):
        y = T.transposed_conv2d(x, self.k, self.stride, self.padding)
        return T.add(y, T.reshape(self.b, (1, -1, 1, 1)))

    def per_example(self, a, dz):
        # the kernel gradient of a transposed conv swaps the roles of input and output
        dk = conv_weight_per_example_np(dz, a, self.stride, self.padding, self.k.shape[2:])
        return [dk, dz.sum(axis=(2, 3))]


class Activation(Layer):
    def __init__(self, in_shape, name, alpha):
        super().__init__(in_shape)
        if name not in T.ACTIVATIONS:
            raise ModelSpecError(f"unknown activation {name!r}")
        self.name, self.alpha = name, alpha

    def forward(self, x):
        return T.activation(self.name, x, self.alpha)


class Reshape(Layer):
    def __init__(self, in_shape, shape):
        super().__init__(in_shape)
        shape = tuple(int(s) for s in shape)
        if int(np.prod(shape)) != int(np.prod(self.in_shape)):
            raise ModelSpecError(f"cannot reshape {self.in_shape} to {shape}")
        self.out_shape = shape

    def forward(self, x):
        return T.reshape(x, (x.shape[0],) + self.out_shape)


def _make_layer(spec: LayerSpec, in_shape, rng) -> Layer:
    if spec.kind == "dense":
        return Dense(in_shape, spec.units, rng)
    if spec.kind == "conv":
        return Conv(in_shape, spec.filters, spec.kernel, spec.stride, spec.padding, rng)
    if spec.kind == "tconv":
        return TConv(in_shape, spec.filters, spec.kernel, spec.stride, spec.padding, rng)
    if spec.kind == "activation":
        return Activation(in_shape, spec.activation, spec.alpha)
    if spec.kind == "flatten":
        return Reshape(in_shape, (int(np.prod(in_shape)),))
    return Reshape(in_shape, spec.shape)


class Network:
    """A sequential stack of layers operating on batches (leading batch axis)."""

    def __init__(self, name: str, input_shape: Sequence[int], specs: Sequence[LayerSpec],
                 rng: np.random.Generator):
        self.name = name
        self.input_shape = tuple(int(s) for s in input_shape)
        self.specs = list(specs)
        self.layers: list[Layer] = []
        shape = self.input_shape
        for i, spec in enumerate(self.specs):
            try:
                layer = _make_layer(spec, shape, rng)
            except ModelSpecError as exc:
                raise ModelSpecError(f"{name} layer {i} ({spec.kind}): {exc}") from None
            self.layers.append(layer)
            shape = layer.out_shape
        self.output_shape = shape
        self.params: list[Tensor] = [p for layer in self.layers for p in layer.params]
        self._trace: Optional[list] = None

    @property
    def num_params(self) -> int:
        return sum(p.size for p in self.params)

    def forward(self, x, trace: bool = False) -> Tensor:
        """Apply the network to a batch; ``trace`` keeps what per-example grads need."""
        x = T.as_tensor(x)
        if tuple(x.shape[1:]) != self.input_shape:
            raise ModelSpecError(
                f"{self.name} expects inputs of shape (N, {', '.join(map(str, self.input_shape))}),"
                f" got {x.shape}"
            )
        self._trace = [] if trace else None
        for layer in self.layers:
            if trace and layer.params:
                a = x.data
                x = layer.forward(x).retain_grad()
                self._trace.append((layer, a, x))
            else:
                x = layer.forward(x)
        return x

    __call__ = forward

    def per_example_grads(self) -> np.ndarray:
        """Per-example parameter gradients (N x num_params) of the last traced backward.

        Requires ``forward(..., trace=True)`` followed by ``backward`` of a loss that
        is a sum of per-example terms.
        """
        if not self._trace:
            raise RuntimeError("per_example_grads needs a traced forward pass")
        parts = []
        for layer, a, z in self._trace:
            if z.grad is None:
                raise RuntimeError("traced outputs carry no gradient; run backward first")
            for g in layer.per_example(a, z.grad):
                parts.append(g.reshape(g.shape[0], -1))
        self._trace = None
        return np.concatenate(parts, axis=1)

    def param_vector(self) -> np.ndarray:
        if not self.params:
            return np.zeros(0)
        return np.concatenate([p.data.ravel() for p in self.params])

    def set_param_vector(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.num_params,):
            raise ValueError(f"expected {self.num_params} parameters, got {vec.shape}")
        offset = 0
        for p in self.params:
            n = p.size
            p.data = vec[offset:offset + n].reshape(p.shape).copy()
            offset += n

    def grad_vector(self) -> np.ndarray:
        if not self.params:
            return np.zeros(0)
        return np.concatenate([
            (np.zeros(p.size) if p.grad is None else p.grad.ravel()) for p in self.params
        ])

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


# -- Adam --------------------------------------------------------------------

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, lr: float = 1e-4,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ValueError(
            f"length mismatch: params {params.shape}, grads {grads.shape}, state {state.m.shape}"
        )
    t = state.t + 1
    m = beta1 * state.m + (1 - beta1) * grads
    v = beta2 * state.v + (1 - beta2) * grads * grads
    m_hat = m / (1 - beta1 ** t)
    v_hat = v / (1 - beta2 ** t)
    new = params - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new, AdamState(m, v, t)


@dataclass
class Adam:
    """Adam bound to a network's parameters."""

    net: Network
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    state: AdamState = field(init=False)

    def __post_init__(self):
        self.state = AdamState.zeros(self.net.num_params)

    def step(self, grads: Optional[np.ndarray] = None) -> None:
        if grads is None:
            grads = self.net.grad_vector()
        new, self.state = adam_step(self.net.param_vector(), grads, self.state,
                                    self.lr, self.beta1, self.beta2, self.eps)
        self.net.set_param_vector(new)
        self.net.zero_grad()


# -- bundles -----------------------------------------------------------------

@dataclass
class ModelBundle:
    f: Network
    f_tilde: Network
    f_inv: Network
    d: Network
    feature_shape: tuple
    head: Optional[Network] = None

    def check_feature_space(self) -> None:
        _check_feature_space(self.f, self.f_tilde, self.f_inv, self.d, self.head)


def _check_feature_space(f, f_tilde, f_inv, d, head=None):
    shapes = {
        "f output": f.output_shape,
        "f_tilde output": f_tilde.output_shape,
        "f_inv input": f_inv.input_shape,
        "d input": d.input_shape,
    }
    if head is not None:
        shapes["head input"] = head.input_shape
    if len(set(shapes.values())) != 1:
        desc = ", ".join(f"{k} {v}" for k, v in shapes.items())
        raise FeatureSpaceMismatch(f"networks do not share a feature space: {desc}")
    if f_inv.output_shape != f.input_shape:
        raise ModelSpecError(
            f"f_inv output {f_inv.output_shape} does not match the input shape {f.input_shape}"
        )
    if d.output_shape != (1,):
        raise ModelSpecError(f"d must output one logit per example, got {d.output_shape}")


def _network_spec(entry):
    if isinstance(entry, dict):
        return entry.get("input_shape"), entry["layers"]
    return None, entry


def build_bundle(spec: dict, seed: int) -> ModelBundle:
    """Build all networks of a model spec with seeded He-uniform initialisation."""
    input_shape = tuple(spec["input_shape"])
    seqs = np.random.SeedSequence(seed).spawn(len(NETWORK_NAMES))
    nets = {}
    feature_shape = None
    for name, ss in zip(NETWORK_NAMES, seqs):
        if name not in spec:
            if name == "head":
                continue
            raise ModelSpecError(f"model spec is missing network {name!r}")
        explicit, layers = _network_spec(spec[name])
        if explicit is not None:
            in_shape = tuple(explicit)
        elif name in ("f", "f_tilde"):
            in_shape = input_shape
        else:
            in_shape = feature_shape
        layer_specs = [l if isinstance(l, LayerSpec) else LayerSpec.from_dict(l) for l in layers]
        nets[name] = Network(name, in_shape, layer_specs, np.random.default_rng(ss))
        if name == "f":
            feature_shape = nets["f"].output_shape
    bundle = ModelBundle(nets["f"], nets["f_tilde"], nets["f_inv"], nets["d"],
                         feature_shape, nets.get("head"))
    bundle.check_feature_space()
    return bundle


# -- presets -----------------------------------------------------------------

def _dense(units):
    return {"kind": "dense", "units": units}


def _act(name, alpha=0.2):
    out = {"kind": "activation", "activation": name}
    if name == "leaky_relu":
        out["alpha"] = alpha
    return out


def mlp_spec(image_shape=(1, 28, 28), hidden=256, feature=64, classes=10) -> dict:
    d_in = int(np.prod(image_shape))
    encoder = [{"kind": "flatten"}, _dense(hidden), _act("leaky_relu"), _dense(feature)]
    return {
        "input_shape": list(image_shape),
        "f": encoder,
        "f_tilde": list(encoder),
        "f_inv": [_dense(hidden), _act("relu"), _dense(d_in), _act("sigmoid"),
                  {"kind": "reshape", "shape": list(image_shape)}],
        "d": [_dense(hidden), _act("leaky_relu"), _dense(1)],
        "head": [_dense(128), _act("relu"), _dense(classes)],
    }


def _tconv_kernel(size_in: int, size_out: int) -> int:
    # stride 2, padding 1: out = 2 * in - 4 + kernel
    k = size_out - 2 * size_in + 4
    if k not in (3, 4):
        raise ModelSpecError(f"no stride-2 transposed conv maps {size_in} to {size_out}")
    return k


def conv_spec(image_shape=(1, 28, 28), channels=(16, 32), classes=10) -> dict:
    c, h, w = image_shape
    if h != w:
        raise ModelSpecError("conv preset expects square images")
    c1, c2 = channels
    h1 = conv_output_size(h, 3, 2, 1)
    h2 = conv_output_size(h1, 3, 2, 1)
    encoder = [
        {"kind": "conv", "filters": c1, "kernel": 3, "stride": 2, "padding": 1},
        _act("leaky_relu"),
        {"kind": "conv", "filters": c2, "kernel": 3, "stride": 2, "padding": 1},
    ]
    return {
        "input_shape": list(image_shape),
        "f": encoder,
        "f_tilde": list(encoder),
        "f_inv": [
            {"kind": "tconv", "filters": c1, "kernel": _tconv_kernel(h2, h1), "stride": 2, "padding": 1},
            _act("relu"),
            {"kind": "tconv", "filters": c, "kernel": _tconv_kernel(h1, h), "stride": 2, "padding": 1},
            _act("sigmoid"),
        ],
        "d": [
            {"kind": "conv", "filters": c2, "kernel": 3, "stride": 2, "padding": 1},
            _act("leaky_relu"),
            {"kind": "conv", "filters": c2, "kernel": 3, "stride": 2, "padding": 1},
            _act("leaky_relu"),
            {"kind": "flatten"},
            _dense(1),
        ],
        "head": [{"kind": "flatten"}, _dense(128), _act("relu"), _dense(classes)],
    }


MODEL_PRESETS = {"mlp": mlp_spec, "conv": conv_spec}


def model_preset(name: str, image_shape=(1, 28, 28), **kwargs) -> dict:
    try:
        factory = MODEL_PRESETS[name]
    except KeyError:
        raise ModelSpecError(f"unknown model preset {name!r}; available: {sorted(MODEL_PRESETS)}") from None
    return factory(tuple(image_shape), **kwargs)
