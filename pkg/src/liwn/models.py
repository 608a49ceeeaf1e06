"""Architecture descriptions and their executable networks.

A :class:`ModelGraph` is a flat list of :class:`LayerSpec` records with shapes
resolved by :meth:`ModelGraph.shapes`.  It serialises to a plain text format,
one layer per line::

    graph name=ref-vgg input=3x32x32 classes=10
    convA conv c_in=3 c_out=64 L=3 stride=1 bias=0
    bnA bn c=64
    ...

:class:`Network` instantiates the layers of a graph with seeded weights.
"""
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .scattering import GAMMA

DATASET_CLASSES = {"cifar10": 10, "cifar100": 100, "textures": 2}
VGG_NAMES = "ABCDEF"
# output width multiplier and whether the layer halves the resolution
VGG_PLAN = {"A": (1, False), "B": (1, False), "C": (2, True),
            "D": (2, False), "E": (4, True), "F": (4, False)}
# learned layers (conv or learned invariant) per ScatNet variant; fc not counted
SCATNET_LEARNED = {"A": 4, "B": 6, "C": 5, "D": 7}
# lowpass bias of fixed scattering layers; keeps standardised inputs above zero
FIXED_ALPHA = 10.0


class GraphError(ValueError):
    pass


def _fmt(v):
    if isinstance(v, bool):
        return str(int(v))
    return repr(v) if isinstance(v, float) else str(v)


def _parse_value(s):
    for cast in (int, float):
        try:
            return cast(s)
        except ValueError:
            pass
    return s


@dataclass
class LayerSpec:
    name: str
    kind: str
    attrs: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.attrs[key]

    def get(self, key, default=None):
        return self.attrs.get(key, default)

    def to_line(self):
        return " ".join([self.name, self.kind] + [f"{k}={_fmt(v)}" for k, v in self.attrs.items()])

    @classmethod
    def from_line(cls, line):
        parts = line.split()
        if len(parts) < 2:
            raise GraphError(f"malformed layer line: {line!r}")
        attrs = {}
        for p in parts[2:]:
            k, sep, v = p.partition("=")
            if not sep:
                raise GraphError(f"expected key=value, got {p!r}")
            attrs[k] = _parse_value(v)
        return cls(parts[0], parts[1], attrs)


KINDS = ("conv", "bn", "relu", "maxpool", "gap", "fc", "dropout", "inv")


@dataclass
class ModelGraph:
    name: str
    input_shape: tuple        # (C, H, W)
    classes: int
    layers: list = field(default_factory=list)

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)

    def layer(self, name):
        for spec in self.layers:
            if spec.name == name:
                return spec
        raise KeyError(name)

    def names(self):
        return [s.name for s in self.layers]

    def copy(self):
        return ModelGraph(self.name, self.input_shape, self.classes,
                          [LayerSpec(s.name, s.kind, dict(s.attrs)) for s in self.layers])

    def shapes(self, input_hw=None):
        """Per-layer ``(in_shape, out_shape)``; validates compatibility."""
        names = self.names()
        if len(set(names)) != len(names):
            raise GraphError("layer names must be unique")
        C, H, W = self.input_shape
        if input_hw is not None:
            H, W = input_hw
        shape = (C, H, W)
        out = []
        for s in self.layers:
            if s.kind not in KINDS:
                raise GraphError(f"unknown layer kind {s.kind!r} ({s.name})")
            new = _out_shape(s, shape)
            out.append((shape, new))
            shape = new
        if shape != (self.classes,):
            raise GraphError(f"graph ends with shape {shape}, expected ({self.classes},)")
        return out

    def to_text(self):
        C, H, W = self.input_shape
        lines = [f"graph name={self.name} input={C}x{H}x{W} classes={self.classes}"]
        lines += [s.to_line() for s in self.layers]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        lines = [ln.strip() for ln in text.splitlines()
                 if ln.strip() and not ln.lstrip().startswith("#")]
        if not lines or not lines[0].startswith("graph "):
            raise GraphError("graph text must start with a 'graph' header line")
        head = dict(p.split("=", 1) for p in lines[0].split()[1:])
        try:
            shape = tuple(int(v) for v in head["input"].split("x"))
            g = cls(head.get("name", "graph"), shape, int(head["classes"]),
                    [LayerSpec.from_line(ln) for ln in lines[1:]])
        except (KeyError, ValueError) as exc:
            raise GraphError(f"bad graph header: {lines[0]!r}") from exc
        g.shapes()
        return g


def _out_shape(s, shape):
    if s.kind == "fc":
        if len(shape) != 1 or shape[0] != s["n_in"]:
            raise GraphError(f"{s.name}: fc expects ({s['n_in']},), got {shape}")
        return (s["n_out"],)
    if len(shape) != 3:
        raise GraphError(f"{s.name}: expected an image tensor, got {shape}")
    C, H, W = shape
    if s.kind == "conv":
        if C != s["c_in"]:
            raise GraphError(f"{s.name}: expects {s['c_in']} channels, got {C}")
        st = s.get("stride", 1)
        if st == 2 and (H % 2 or W % 2):
            raise GraphError(f"{s.name}: stride 2 needs even extents")
        return (s["c_out"], (H + st - 1) // st, (W + st - 1) // st)
    if s.kind == "inv":
        if C != s["c_in"]:
            raise GraphError(f"{s.name}: expects {s['c_in']} channels, got {C}")
        if H % 2 or W % 2:
            raise GraphError(f"{s.name}: invariant layer needs even extents, got {H}x{W}")
        f = 1 if s.get("upsample", 0) else 2
        return (s["c_out"], H // f, W // f)
    if s.kind == "bn" and C != s["c"]:
        raise GraphError(f"{s.name}: bn over {s['c']} channels, got {C}")
    if s.kind == "maxpool":
        if H % 2 or W % 2:
            raise GraphError(f"{s.name}: max pool needs even extents")
        return (C, H // 2, W // 2)
    if s.kind == "gap":
        return (C,)
    return shape


# ---------------------------------------------------------------------------
# builders

def _conv_block(layers, tag, c_in, c_out, stride=1, dropout=0.0, pool=False):
    layers.append(LayerSpec(f"conv{tag}", "conv",
                            dict(c_in=c_in, c_out=c_out, L=3, stride=1 if pool else stride, bias=0)))
    layers.append(LayerSpec(f"bn{tag}", "bn", dict(c=c_out)))
    layers.append(LayerSpec(f"relu{tag}", "relu"))
    if pool and stride == 2:
        layers.append(LayerSpec(f"pool{tag}", "maxpool"))
    if dropout:
        layers.append(LayerSpec(f"drop{tag}", "dropout", dict(p=dropout)))


def _head(layers, c, classes):
    layers.append(LayerSpec("gap", "gap"))
    layers.append(LayerSpec("fc", "fc", dict(n_in=c, n_out=classes)))


def build_reference_vgg(dataset="cifar10", C=64, downsample="stride", input_hw=(32, 32)):
    """Six 3x3 conv blocks (conv, BN, ReLU), global average pool and fc.

    ``downsample`` selects stride-2 convolutions at convC/convE (default) or
    stride-1 convolutions followed by 2x2 max pooling.
    """
    if dataset not in DATASET_CLASSES:
        raise GraphError(f"unknown dataset {dataset!r}")
    if downsample not in ("stride", "maxpool"):
        raise GraphError("downsample must be 'stride' or 'maxpool'")
    layers, c_in = [], 3
    for tag in VGG_NAMES:
        mult, down = VGG_PLAN[tag]
        _conv_block(layers, tag, c_in, mult * C, 2 if down else 1, pool=downsample == "maxpool")
        c_in = mult * C
    _head(layers, c_in, DATASET_CLASSES[dataset])
    g = ModelGraph(f"ref-vgg-{dataset}-C{C}", (3,) + tuple(input_hw), DATASET_CLASSES[dataset], layers)
    g.shapes()
    return g


def apply_inv_swaps(graph, swaps):
    """Replace ``convX`` for each ``X`` in ``swaps`` by a learned invariant layer.

    The invariant layer halves the resolution; when the slot keeps the
    resolution the output is bilinearly upsampled back.  Its internal ReLU is
    off because the BN and ReLU that followed the convolution stay in place.
    """
    g = graph.copy()
    shapes = dict(zip(g.names(), g.shapes()))
    for tag in sorted(set(swaps)):
        name = f"conv{tag}"
        if name not in shapes:
            raise GraphError(f"no layer named {name!r} to swap")
        spec = g.layer(name)
        (cin, hin, _), (cout, hout, _) = shapes[name]
        if hout not in (hin, hin // 2):
            raise GraphError(f"{name}: cannot reproduce a {hin}->{hout} resolution change")
        idx = g.layers.index(spec)
        g.layers[idx] = LayerSpec(f"inv{tag}", "inv",
                                  dict(c_in=cin, c_out=cout, learned=1, relu=0,
                                       upsample=int(hout == hin)))
    if swaps:
        g.name = graph.name + "-inv" + "".join(sorted(set(swaps)))
    g.shapes()
    return g


def build_scatnet(variant="A", conv_width=96, dataset="cifar10", dropout=0.3,
                  input_hw=(32, 32), front_channels=16, name=None):
    """Order-2 scattering front end, four conv blocks and a linear head.

    A: fixed scattering.  B: learned square mixing in both scattering layers.
    C/D: as A/B with a 3x3 conv (3 -> ``front_channels``) in front.
    """
    if variant not in SCATNET_LEARNED:
        raise GraphError(f"unknown ScatNet variant {variant!r}")
    classes = DATASET_CLASSES[dataset]
    layers = []
    c = 3
    if variant in "CD":
        _conv_block(layers, "0", 3, front_channels)
        c = front_channels
    learned = variant in "BD"
    for i in (1, 2):
        layers.append(LayerSpec(f"scat{i}", "inv",
                                dict(c_in=c, c_out=GAMMA * c, learned=int(learned),
                                     relu=int(not learned), upsample=0)))
        c = GAMMA * c
        if learned:
            layers.append(LayerSpec(f"bnS{i}", "bn", dict(c=c)))
            layers.append(LayerSpec(f"reluS{i}", "relu"))
    for tag, mult in zip("CDEF", (2, 2, 4, 4)):
        _conv_block(layers, tag, c, mult * conv_width, dropout=dropout)
        c = mult * conv_width
    _head(layers, c, classes)
    g = ModelGraph(name or f"scatnet-{variant}-w{conv_width}", (3,) + tuple(input_hw), classes, layers)
    g.shapes()
    return g


def build_scatnet_mini(variant="A", dataset="cifar10", conv_width=16, dropout=0.3):
    """Narrow ScatNet for desk-scale comparisons of fixed and learned mixing."""
    return build_scatnet(variant, conv_width, dataset, dropout, name=f"scatnet-{variant}-mini")


def build_scatter_linear(dataset="textures", input_hw=(32, 32)):
    """Fixed order-2 scattering, per-channel affine, average pool, linear classifier."""
    classes = DATASET_CLASSES[dataset]
    layers = [LayerSpec("scat1", "inv", dict(c_in=3, c_out=21, learned=0, relu=1, upsample=0)),
              LayerSpec("scat2", "inv", dict(c_in=21, c_out=147, learned=0, relu=1, upsample=0)),
              LayerSpec("bnS", "bn", dict(c=147))]
    _head(layers, 147, classes)
    g = ModelGraph("scatter-linear", (3,) + tuple(input_hw), classes, layers)
    g.shapes()
    return g


def learned_layer_count(graph):
    return sum(1 for s in graph.layers
               if s.kind == "conv" or (s.kind == "inv" and s.get("learned", 1)))


# ---------------------------------------------------------------------------
# execution

def _make_layer(spec, rng, dtype, filters):
    k, a = spec.kind, spec.attrs
    if k == "conv":
        return nn.Conv2d(a["c_in"], a["c_out"], a.get("L", 3), a.get("stride", 1),
                         bool(a.get("bias", 0)), rng, dtype)
    if k == "bn":
        return nn.BatchNorm2d(a["c"], dtype=dtype)
    if k == "relu":
        return nn.ReLU()
    if k == "maxpool":
        return nn.MaxPool2x()
    if k == "gap":
        return nn.GlobalAvgPool()
    if k == "fc":
        return nn.Linear(a["n_in"], a["n_out"], rng, dtype)
    if k == "dropout":
        return nn.Dropout(a["p"])
    if k == "inv":
        learned = bool(a.get("learned", 1))
        relu = bool(a.get("relu", not learned))
        return nn.Invariant(a["c_in"], a["c_out"], learned, rng, dtype,
                            apply_relu=relu, upsample_out=bool(a.get("upsample", 0)),
                            alpha=float(a.get("alpha", 0.0 if learned else FIXED_ALPHA)),
                            projection=a.get("projection", "none"), filters=filters)
    raise GraphError(f"unknown layer kind {k!r}")


class Network:
    """Layers of a :class:`ModelGraph` with weights drawn from ``seed``."""

    def __init__(self, graph, seed=0, dtype=np.float32, filters=None):
        graph.shapes()
        self.graph = graph
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.layers = [_make_layer(s, rng, self.dtype, filters) for s in graph.layers]
        self.names = graph.names()

    def forward(self, x, train=False):
        x = np.asarray(x, dtype=self.dtype)
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def truncated_forward(self, x, upto):
        """Output of layer ``upto`` (inclusive) in eval mode."""
        stop = self.names.index(upto) + 1
        x = np.asarray(x, dtype=self.dtype)
        for layer in self.layers[:stop]:
            x = layer.forward(x, False)
        return x

    def params(self):
        return {f"{n}.{k}": v for n, l in zip(self.names, self.layers) for k, v in l.params.items()}

    def grads(self):
        return {f"{n}.{k}": l.grads[k] for n, l in zip(self.names, self.layers) for k in l.params}

    def buffers(self):
        return {f"{n}.{k}": v for n, l in zip(self.names, self.layers) for k, v in l.buffers.items()}

    def state(self):
        return {**self.params(), **self.buffers()}

    def load_state(self, state, strict=True):
        for n, l in zip(self.names, self.layers):
            for store in (l.params, l.buffers):
                for k in store:
                    key = f"{n}.{k}"
                    if key not in state:
                        if strict:
                            raise KeyError(f"missing tensor {key!r}")
                        continue
                    v = np.asarray(state[key])
                    if v.shape != store[k].shape:
                        raise ValueError(f"{key}: shape {v.shape} != {store[k].shape}")
                    store[k][...] = v

    def reseed_dropout(self, seed):
        for i, l in enumerate(self.layers):
            if isinstance(l, nn.Dropout):
                l.reseed([int(v) for v in np.atleast_1d(seed)] + [i])

    def project(self):
        for l in self.layers:
            if isinstance(l, nn.Invariant):
                l.project()

    def predict(self, x, batch=256):
        out = [self.forward(x[i:i + batch]).argmax(1) for i in range(0, len(x), batch)]
        return np.concatenate(out) if out else np.zeros(0, dtype=np.intp)
