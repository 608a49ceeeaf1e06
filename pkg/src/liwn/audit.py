"""Parameter and multiply counts for a :class:`~liwn.models.ModelGraph`.

Cost model
----------
* conv: ``L^2 C_in C_out`` weights (+ ``C_out`` bias); ``L^2 C_out`` multiplies
  per input pixel at stride 1 (the output-grid count scales by 1/stride^2).
* invariant layer: ``7 C_in C_out`` mixing weights (+ ``C_in`` biases when
  trained); ``(7/4) C_out + 8 L (1 - 2^{-2J})`` multiplies per input pixel,
  with ``L = 6, J = 1`` by default, so the wavelet part is 36.  A fixed
  (identity) mixing costs no weights and no mixing multiplies.  Optional
  bilinear upsampling adds 3 multiplies per output pixel.
* batch norm: 2 weights per channel; its multiplies fold into the preceding
  layer at inference and are not counted.  ReLU, pooling and dropout are free.
* fc: ``n_in n_out + n_out`` weights, ``n_in n_out`` multiplies.

"Input pixel" means one of the ``C_in H W`` scalars entering the layer.
"""
import io
from dataclasses import dataclass, field
from fractions import Fraction

from .scattering import GAMMA


@dataclass
class CostRow:
    name: str
    kind: str
    params: int
    mults_per_input_pixel: Fraction
    mults_per_image: int


@dataclass
class CostReport:
    graph: str
    rows: list
    assumptions: dict = field(default_factory=dict)

    @property
    def total_params(self):
        return sum(r.params for r in self.rows)

    @property
    def total_mults(self):
        return sum(r.mults_per_image for r in self.rows)

    def row(self, name):
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_tsv(self):
        out = io.StringIO()
        out.write("name\tkind\tparams\tmults_per_input_pixel\tmults_per_image\n")
        for r in self.rows:
            out.write(f"{r.name}\t{r.kind}\t{r.params}\t{float(r.mults_per_input_pixel):.6g}\t{r.mults_per_image}\n")
        out.write(f"TOTAL\t-\t{self.total_params}\t-\t{self.total_mults}\n")
        return out.getvalue()

    def to_table(self):
        lines = [f"cost report: {self.graph}",
                 "  ".join(f"{k}={v}" for k, v in self.assumptions.items()),
                 f"{'layer':<10}{'kind':<8}{'params':>12}{'mults/px':>12}{'mults/image':>16}"]
        for r in self.rows:
            lines.append(f"{r.name:<10}{r.kind:<8}{r.params:>12,}"
                         f"{float(r.mults_per_input_pixel):>12.2f}{r.mults_per_image:>16,}")
        lines.append(f"{'total':<18}{self.total_params:>12,}{'':>12}{self.total_mults:>16,}")
        return "\n".join(lines) + "\n"


def wavelet_mults_per_pixel(L=6, J=1):
    """Model cost of a J-scale 2-D DTCWT with length-L filters, per input pixel."""
    return Fraction(8 * L) * (1 - Fraction(1, 4 ** J))


def measured_wavelet_mults_per_pixel(filters=None):
    """Multiplies per input pixel of the shipped level-1 implementation.

    Row filtering with both level-1 filters, column filtering of both
    results, then the quad-to-complex scaling of the three highpass images
    and the 2x2 lowpass fold.
    """
    from .dtcwt import get_filters

    f = filters or get_filters()
    taps = len(f.h0o) + len(f.h1o)
    return Fraction(3 * taps) + 3 + Fraction(1, 4)


def invariant_mults_per_pixel(c_out, L=6, J=1, learned=True):
    mix = Fraction(GAMMA, 4) * c_out if learned else 0
    return mix + wavelet_mults_per_pixel(L, J)


def conv_mults_per_pixel(c_out, L=3, stride=1):
    return Fraction(L * L * c_out, stride * stride)


def _layer_cost(spec, in_shape, out_shape, L_wave, J):
    a = spec.attrs
    k = spec.kind
    if k == "conv":
        L, st = a.get("L", 3), a.get("stride", 1)
        params = L * L * a["c_in"] * a["c_out"] + (a["c_out"] if a.get("bias", 0) else 0)
        _, Ho, Wo = out_shape
        per_image = L * L * a["c_in"] * a["c_out"] * Ho * Wo
        return params, per_image
    if k == "inv":
        learned = bool(a.get("learned", 1))
        relu = bool(a.get("relu", not learned))
        params = (GAMMA * a["c_in"] * a["c_out"] + (a["c_in"] if relu else 0)) if learned else 0
        C, H, W = in_shape
        per_pixel = invariant_mults_per_pixel(a["c_out"], L_wave, J, learned)
        per_image = per_pixel * C * H * W
        if a.get("upsample", 0):
            Co, Ho, Wo = out_shape
            per_image += 3 * Co * Ho * Wo
        return params, int(round(per_image))
    if k == "bn":
        return 2 * a["c"], 0
    if k == "fc":
        return a["n_in"] * a["n_out"] + a["n_out"], a["n_in"] * a["n_out"]
    if k in ("relu", "maxpool", "gap", "dropout"):
        return 0, 0
    raise ValueError(f"unknown layer kind {k!r}")


def audit(graph, input_hw=None, L_wave=6, J=1):
    """Per-layer parameters and multiplies; totals are sums over the rows."""
    rows = []
    for spec, (ins, outs) in zip(graph.layers, graph.shapes(input_hw)):
        params, per_image = _layer_cost(spec, ins, outs, L_wave, J)
        n_in = 1
        for v in ins:
            n_in *= v
        rows.append(CostRow(spec.name, spec.kind, params, Fraction(per_image, n_in), per_image))
    H, W = input_hw or graph.input_shape[1:]
    return CostReport(graph.name, rows, dict(L_wavelet=L_wave, J=J, K=6, input=f"{H}x{W}"))


def count_params(graph):
    return audit(graph)


def count_mults(graph, input_hw=None, L_wave=6, J=1):
    return audit(graph, input_hw, L_wave, J)
