"""Layer catalogue, network specs, and the two reference topologies.

A network is declared as an ordered list of layer lines (the ``.net`` file
format: one layer per line, ``kind key=value ...``, ``#`` comments, plus
``input``/``loss``/``precision`` directives).  ``build_network`` validates the
shape chain, allocates parameters and returns a runnable Network.

Dropout is inverted (scaled at train time) so evaluation needs no rescale;
spatial dropout zeroes whole channels.  ``skip_begin``/``skip_end`` bracket a
residual branch: skip_end adds the tensor saved at the matching skip_begin.
Dense layers flatten any higher-rank feature shape automatically.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import conv as conv_mod
from . import init as init_mod
from . import tensor as T
from .activations import ACTIVATIONS, make_activation
from .errors import ShapeError
from .tensor import Tensor

LOSS_KINDS = ("categorical_cross_entropy", "mse")
PRECISIONS = {"f32": np.float32, "f64": np.float64}


# ---------------------------------------------------------------------------
# declarative spec
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LayerSpec:
    kind: str
    args: dict = field(default_factory=dict)

    def line(self) -> str:
        parts = [self.kind] + [f"{k}={_fmt(v)}" for k, v in self.args.items()]
        return " ".join(parts)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple
    input_shape: tuple
    loss: str = "categorical_cross_entropy"
    precision: str = "f32"

    def __post_init__(self):
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"loss must be one of {LOSS_KINDS}, got {self.loss!r}")
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be f32|f64, got {self.precision!r}")
        self.shape_chain()  # validates layer kinds, nesting and shape flow

    def shape_chain(self) -> list:
        """Per-layer output shapes; raises ShapeError naming the bad layer."""
        shapes = []
        shape = tuple(self.input_shape)
        depth = 0
        skip_shapes = []
        for i, spec in enumerate(self.layers):
            try:
                layer = _instantiate(spec)
                if spec.kind == "skip_begin":
                    depth += 1
                    skip_shapes.append(shape)
                elif spec.kind == "skip_end":
                    depth -= 1
                    if depth < 0:
                        raise ShapeError("skip_end without matching skip_begin")
                    saved = skip_shapes.pop()
                    if saved != shape:
                        raise ShapeError(
                            f"skip_end shape {shape} != skip_begin shape {saved}"
                        )
                else:
                    shape = layer.out_shape(shape)
            except (ShapeError, ValueError, KeyError) as e:
                raise ShapeError(f"layer {i} ({spec.kind}): {e}") from e
            shapes.append(shape)
        if depth != 0:
            raise ShapeError(f"{depth} skip_begin marker(s) left unclosed")
        return shapes

    def output_shape(self) -> tuple:
        chain = self.shape_chain()
        return chain[-1] if chain else tuple(self.input_shape)

    def with_activation(self, name: str) -> "NetworkSpec":
        """Replace the name of every activation slot (keeps other args)."""
        if name.lower() not in ACTIVATIONS:
            raise KeyError(f"unknown activation {name!r}")
        new = []
        for spec in self.layers:
            if spec.kind == "activation":
                args = dict(spec.args)
                args["name"] = name.lower()
                new.append(LayerSpec("activation", args))
            else:
                new.append(spec)
        return replace(self, layers=tuple(new))

    # -- text form ----------------------------------------------------------
    def to_text(self) -> str:
        lines = [
            f"input shape={'x'.join(str(e) for e in self.input_shape)}",
            f"loss name={self.loss}",
            f"precision name={self.precision}",
        ]
        lines += [spec.line() for spec in self.layers]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "NetworkSpec":
        input_shape = None
        loss = "categorical_cross_entropy"
        precision = "f32"
        layers = []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            kind, kv = parts[0].lower(), parts[1:]
            args = {}
            for item in kv:
                if "=" not in item:
                    raise ShapeError(f"line {lineno}: expected key=value, got {item!r}")
                k, v = item.split("=", 1)
                args[k] = _parse_value(v)
            if kind == "input":
                input_shape = tuple(int(e) for e in str(args["shape"]).split("x"))
            elif kind == "loss":
                loss = str(args["name"])
            elif kind == "precision":
                precision = str(args["name"])
            else:
                layers.append(LayerSpec(kind, args))
        if input_shape is None:
            raise ShapeError("network spec has no 'input shape=...' line")
        return cls(tuple(layers), input_shape, loss, precision)


def _parse_value(v: str):
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    return v


def load_spec(path) -> NetworkSpec:
    with open(path, "r", encoding="utf-8") as f:
        return NetworkSpec.from_text(f.read())


def save_spec(path, spec: NetworkSpec) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(spec.to_text())


# ---------------------------------------------------------------------------
# structural layers
# ---------------------------------------------------------------------------

class Dense:
    def __init__(self, units: int, bias: bool = True):
        if units < 1:
            raise ValueError(f"units must be >= 1, got {units}")
        self.units = int(units)
        self.use_bias = bool(bias)
        self.weight: Tensor | None = None
        self.bias: Tensor | None = None
        self._fan_in = None

    def out_shape(self, in_shape):
        if not in_shape:
            raise ShapeError("dense layer needs a non-empty input shape")
        return (self.units,)

    def build(self, in_shape, policy, rng, dtype):
        fan_in = int(np.prod(in_shape))
        self._fan_in = fan_in
        self.weight = T.parameter(init_mod.init_weights((fan_in, self.units), fan_in, rng, dtype))
        self.bias = T.parameter(np.zeros(self.units, dtype=dtype)) if self.use_bias else None
        return (self.units,)

    def params(self):
        out = [("weight", self.weight)]
        if self.bias is not None:
            out.append(("bias", self.bias))
        return out

    def forward(self, x, train=False, rng=None):
        if x.ndim == 4:
            x = T.reshape(x, (x.shape[0], -1))
        elif x.ndim == 3:
            x = T.reshape(x, (-1,))
        if x.shape[-1] != self._fan_in:
            raise ShapeError(f"dense: got {x.shape[-1]} features, expected {self._fan_in}")
        y = T.matmul(x, self.weight)
        return T.add_rowvec(y, self.bias) if self.bias is not None else y


class Conv2d:
    def __init__(self, channels: int, kernel: int = 3, stride: int = 1,
                 dilation: int = 1, padding: str = "same", bias: bool = True):
        self.channels = int(channels)
        self.kernel = int(kernel)
        self.stride = int(stride)
        self.dilation = int(dilation)
        self.padding = str(padding)
        self.use_bias = bool(bias)
        self.weight: Tensor | None = None
        self.bias: Tensor | None = None

    def _kshape(self, in_shape):
        return (self.channels, in_shape[0], self.kernel, self.kernel)

    def out_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"conv2d expects (C,H,W) features, got {in_shape}")
        full = conv_mod.output_shape(
            (1,) + tuple(in_shape), self._kshape(in_shape),
            self.stride, self.dilation, self.padding,
        )
        return full[1:]

    def build(self, in_shape, policy, rng, dtype):
        out = self.out_shape(in_shape)
        kshape = self._kshape(in_shape)
        fan_in = in_shape[0] * self.kernel * self.kernel
        self.weight = T.parameter(init_mod.init_weights(kshape, fan_in, rng, dtype))
        self.bias = T.parameter(np.zeros(self.channels, dtype=dtype))
        if not self.use_bias:
            self.bias = T.constant(np.zeros(self.channels, dtype=dtype))
        return out

    def params(self):
        out = [("weight", self.weight)]
        if self.use_bias:
            out.append(("bias", self.bias))
        return out

    def forward(self, x, train=False, rng=None):
        return T.conv2d(x, self.weight, self.bias, self.stride, self.dilation, self.padding)


class ConvPool(Conv2d):
    """Downsampling by strided convolution in place of max pooling; channel
    count is preserved."""

    def __init__(self, stride: int = 2, kernel: int = 3):
        super().__init__(channels=0, kernel=kernel, stride=stride, padding="same")

    def out_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"conv_pool expects (C,H,W) features, got {in_shape}")
        channels = self.channels or in_shape[0]
        full = conv_mod.output_shape(
            (1,) + tuple(in_shape), (channels, in_shape[0], self.kernel, self.kernel),
            self.stride, self.dilation, self.padding,
        )
        return full[1:]

    def build(self, in_shape, policy, rng, dtype):
        self.channels = in_shape[0]
        return super().build(in_shape, policy, rng, dtype)


class Dropout:
    def __init__(self, rate: float):
        if not (0.0 <= rate < 1.0):
            raise ValueError(f"drop rate must be in [0,1), got {rate}")
        self.rate = float(rate)

    def out_shape(self, in_shape):
        return in_shape

    def build(self, in_shape, policy, rng, dtype):
        return in_shape

    def params(self):
        return []

    def _mask(self, x, rng):
        keep = 1.0 - self.rate
        return (rng.random(x.shape) < keep).astype(x.dtype) / x.dtype.type(keep)

    def forward(self, x, train=False, rng=None):
        if not train or self.rate == 0.0:
            return x
        if rng is None:
            raise ValueError("train-mode dropout needs the run RNG")
        return T.mul(x, T.constant(self._mask(x, rng)))


class SpatialDropout(Dropout):
    """Zeroes whole feature-map channels (all spatial positions together)."""

    def _mask(self, x, rng):
        keep = 1.0 - self.rate
        if x.ndim == 4:
            m = (rng.random((x.shape[0], x.shape[1], 1, 1)) < keep)
        elif x.ndim == 3:
            m = (rng.random((x.shape[0], 1, 1)) < keep)
        else:
            m = (rng.random(x.shape) < keep)
        m = m.astype(x.dtype) / x.dtype.type(keep)
        return np.broadcast_to(m, x.shape).copy()


class SkipBegin:
    def out_shape(self, in_shape):
        return in_shape

    def build(self, in_shape, policy, rng, dtype):
        return in_shape

    def params(self):
        return []


class SkipEnd(SkipBegin):
    pass


def _instantiate(spec: LayerSpec):
    kind = spec.kind
    args = dict(spec.args)
    if kind == "dense":
        return Dense(units=int(args.pop("units")), **args)
    if kind == "conv2d":
        return Conv2d(channels=int(args.pop("channels")), **args)
    if kind == "conv_pool":
        return ConvPool(**args)
    if kind == "dropout":
        return Dropout(rate=float(args.pop("rate")), **args)
    if kind == "spatial_dropout":
        return SpatialDropout(rate=float(args.pop("rate")), **args)
    if kind == "activation":
        return make_activation(str(args.pop("name")), **args)
    if kind == "skip_begin":
        return SkipBegin()
    if kind == "skip_end":
        return SkipEnd()
    raise ShapeError(f"unknown layer kind {spec.kind!r}")


# ---------------------------------------------------------------------------
# runnable network
# ---------------------------------------------------------------------------

class Network:
    """Built, parameterized network; forward is pure in eval mode."""

    def __init__(self, spec: NetworkSpec, layers, dtype):
        self.spec = spec
        self.layers = layers
        self.dtype = dtype
        self.input_shape = tuple(spec.input_shape)
        self.loss_kind = spec.loss
        # fully-convolutional nets accept any spatial extent
        self.flexible_spatial = (
            len(self.input_shape) == 3
            and not any(isinstance(l, Dense) for l in layers)
        )

    def params(self):
        out = []
        for i, (spec, layer) in enumerate(zip(self.spec.layers, self.layers)):
            for pname, p in layer.params():
                out.append((f"{i:02d}_{spec.kind}.{pname}", p))
        return out

    def param_count(self) -> int:
        return sum(p.size for _, p in self.params())

    def zero_grad(self) -> None:
        for _, p in self.params():
            p.grad = None

    def gate_outputs(self):
        """Gate masks captured by WiG layers during the latest forward."""
        gates = []
        for layer in self.layers:
            g = getattr(layer, "last_gate", None)
            if g is not None:
                gates.append(g)
        return gates

    def forward(self, x, train: bool = False, rng=None) -> Tensor:
        if not isinstance(x, Tensor):
            x = T.constant(np.asarray(x, dtype=self.dtype))
        expect = self.input_shape
        feat = x.shape if x.ndim == len(expect) else x.shape[1:]
        if self.flexible_spatial:
            ok = len(feat) == 3 and feat[0] == expect[0]
        else:
            ok = feat == expect
        if not ok:
            raise ShapeError(f"input {x.shape} does not match network input {expect}")
        for layer in self.layers:
            if hasattr(layer, "last_gate"):
                layer.last_gate = None
        saved = []
        for i, layer in enumerate(self.layers):
            if isinstance(layer, SkipEnd):
                x = T.add(x, saved.pop())
            elif isinstance(layer, SkipBegin):
                saved.append(x)
            else:
                x = layer.forward(x, train=train, rng=rng)
        return x

    def predict(self, x) -> np.ndarray:
        with T.no_grad():
            return self.forward(x, train=False).data


def build_network(spec: NetworkSpec, seed: int,
                  policy: init_mod.InitPolicy | None = None) -> Network:
    """Allocate and initialize every parameter of `spec`, deterministically
    in `seed`.  Shape mismatches raise naming the offending layer index."""
    if policy is None:
        policy = init_mod.InitPolicy()
    dtype = PRECISIONS[spec.precision]
    rng = np.random.Generator(np.random.PCG64(seed))
    spec.shape_chain()
    layers = []
    shape = tuple(spec.input_shape)
    for i, lspec in enumerate(spec.layers):
        layer = _instantiate(lspec)
        layers.append(layer)
        if lspec.kind in ("skip_begin", "skip_end"):
            continue
        try:
            shape = layer.build(shape, policy, rng, dtype)
        except (ShapeError, ValueError) as e:
            raise ShapeError(f"layer {i} ({lspec.kind}): {e}") from e
    return Network(spec, layers, dtype)


# ---------------------------------------------------------------------------
# reference topologies (desk defaults; paper scale is the same family wider)
# ---------------------------------------------------------------------------

def reference_classifier(scale: str = "desk", classes: int = 10,
                         activation: str = "wig") -> NetworkSpec:
    """VGG-style stack: per block two 3x3 convs, a strided conv-pool, and a
    spatial dropout whose rate grows with depth; then a dense head."""
    if scale == "desk":
        widths, convs_per_block, head = (32, 64, 128), 2, ()
    elif scale == "paper":
        widths, convs_per_block, head = (64, 128, 256), 3, (512,)
    else:
        raise ValueError(f"scale must be desk|paper, got {scale!r}")
    rates = (0.1, 0.2, 0.3)
    act = LayerSpec("activation", {"name": activation.lower()})
    layers = []
    for width, rate in zip(widths, rates):
        for _ in range(convs_per_block):
            layers.append(LayerSpec("conv2d", {"channels": width, "kernel": 3}))
            layers.append(act)
        layers.append(LayerSpec("conv_pool", {"stride": 2, "kernel": 3}))
        layers.append(LayerSpec("spatial_dropout", {"rate": rate}))
    for units in head:
        layers.append(LayerSpec("dense", {"units": units}))
        layers.append(act)
        layers.append(LayerSpec("dropout", {"rate": 0.4}))
    layers.append(LayerSpec("dense", {"units": int(classes)}))
    return NetworkSpec(tuple(layers), (3, 32, 32), "categorical_cross_entropy", "f32")


DESK_DENOISER_DILATIONS = (1, 2, 3, 4, 3, 2, 1)


def reference_denoiser(scale: str = "desk", activation: str = "wig") -> NetworkSpec:
    """Residual denoiser: a dilated 3x3 conv stack inside a skip connection,
    closed by a 1x1 projection so the receptive field is 1 + 2*sum(dilations)."""
    if scale == "desk":
        width = 32
    elif scale == "paper":
        width = 64
    else:
        raise ValueError(f"scale must be desk|paper, got {scale!r}")
    act = LayerSpec("activation", {"name": activation.lower()})
    layers = [LayerSpec("skip_begin")]
    for d in DESK_DENOISER_DILATIONS:
        layers.append(LayerSpec("conv2d", {"channels": width, "kernel": 3, "dilation": d}))
        layers.append(act)
    layers.append(LayerSpec("conv2d", {"channels": 1, "kernel": 1}))
    layers.append(LayerSpec("skip_end"))
    return NetworkSpec(tuple(layers), (1, 64, 64), "mse", "f32")


def denoiser_receptive_field(spec: NetworkSpec) -> int:
    """1 + sum over conv layers of dilation*(kernel-1), per side doubled."""
    rf = 1
    for lspec in spec.layers:
        if lspec.kind in ("conv2d", "conv_pool"):
            k = int(lspec.args.get("kernel", 3))
            d = int(lspec.args.get("dilation", 1))
            rf += d * (k - 1)
    return rf
