"""Sequential architecture data model.

An architecture is an ordered list of typed layers plus an input shape.
The classifier head (flatten -> dense(num_classes) -> softmax) is implicit:
it is never stored in ``layers`` and is appended by the trainer, the
parameter counter and the chip encoder.

The canonical text form is a JSON object ``{"input_shape": [h, w, c],
"layers": [{"kind": ..., ...params}], "num_classes": k}`` serialized with
sorted keys and compact separators, so structurally equal architectures
produce identical bytes and hash to the same deduplication key.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from typing import ClassVar, Union

ACTIVATION_FNS = ("relu", "tanh", "sigmoid")
PROVENANCES = ("sampled", "ablation", "variation", "handcrafted")

MAX_LAYERS = 32
MAX_PARAMETERS = 5_000_000


class ArchError(ValueError):
    """Base class for architecture-level failures."""


class NonPositiveShape(ArchError):
    """A kernel or pool window exceeds the incoming spatial extent."""


class SpatialAfterFlatten(ArchError):
    """A Conv2D/MaxPool appears after the activations have been flattened."""


class ParseError(ArchError):
    """Malformed canonical architecture text."""

    def __init__(self, message: str, position: int | None = None):
        super().__init__(message if position is None else f"{message} (at {position})")
        self.position = position


def _require_positive_int(name: str, value) -> None:
    if not isinstance(value, int) or isinstance(value, bool) or value < 1:
        raise ArchError(f"{name} must be a positive int, got {value!r}")


@dataclass(frozen=True)
class Conv2D:
    filters: int
    kernel: int
    stride: int = 1
    kind: ClassVar[str] = "Conv2D"

    def __post_init__(self):
        _require_positive_int("filters", self.filters)
        _require_positive_int("kernel", self.kernel)
        _require_positive_int("stride", self.stride)


@dataclass(frozen=True)
class MaxPool:
    pool: int
    kind: ClassVar[str] = "MaxPool"

    def __post_init__(self):
        _require_positive_int("pool", self.pool)


@dataclass(frozen=True)
class Dense:
    units: int
    kind: ClassVar[str] = "Dense"

    def __post_init__(self):
        _require_positive_int("units", self.units)


@dataclass(frozen=True)
class Activation:
    fn: str
    kind: ClassVar[str] = "Activation"

    def __post_init__(self):
        if self.fn not in ACTIVATION_FNS:
            raise ArchError(f"unknown activation {self.fn!r}")


@dataclass(frozen=True)
class Dropout:
    rate: float
    kind: ClassVar[str] = "Dropout"

    def __post_init__(self):
        if not (0.0 < float(self.rate) < 1.0):
            raise ArchError(f"dropout rate must be in (0,1), got {self.rate!r}")


Layer = Union[Conv2D, MaxPool, Dense, Activation, Dropout]

LAYER_KINDS = ("Conv2D", "MaxPool", "Dense", "Activation", "Dropout")
_LAYER_CLASSES = {cls.kind: cls for cls in (Conv2D, MaxPool, Dense, Activation, Dropout)}
SPATIAL_KINDS = ("Conv2D", "MaxPool")


def layer_to_dict(layer: Layer) -> dict:
    d = {"kind": layer.kind}
    if isinstance(layer, Conv2D):
        d.update(filters=layer.filters, kernel=layer.kernel, stride=layer.stride)
    elif isinstance(layer, MaxPool):
        d.update(pool=layer.pool)
    elif isinstance(layer, Dense):
        d.update(units=layer.units)
    elif isinstance(layer, Activation):
        d.update(fn=layer.fn)
    elif isinstance(layer, Dropout):
        d.update(rate=float(layer.rate))
    return d


def layer_from_dict(d: dict, position: int | None = None) -> Layer:
    if not isinstance(d, dict) or "kind" not in d:
        raise ParseError("layer entry must be an object with a 'kind'", position)
    kind = d["kind"]
    cls = _LAYER_CLASSES.get(kind)
    if cls is None:
        raise ParseError(f"unknown layer kind {kind!r}", position)
    params = {k: v for k, v in d.items() if k != "kind"}
    try:
        return cls(**params)
    except (TypeError, ArchError) as exc:
        raise ParseError(f"bad params for {kind}: {exc}", position) from exc


@dataclass(frozen=True)
class Architecture:
    """An ordered layer sequence with its input contract.

    Equality and the derived ``id`` are structural: provenance, parentage
    and creation time are bookkeeping and never affect identity.
    """

    layers: tuple
    input_shape: tuple  # (height, width, channels)
    num_classes: int
    provenance: str = field(default="handcrafted", compare=False)
    parent_id: str | None = field(default=None, compare=False)
    created_at: float = field(default_factory=time.time, compare=False)
    id: str = field(init=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        if len(self.input_shape) != 3 or any(s < 1 for s in self.input_shape):
            raise ArchError(f"input_shape must be 3 positive dims, got {self.input_shape}")
        _require_positive_int("num_classes", self.num_classes)
        if self.provenance not in PROVENANCES:
            raise ArchError(f"unknown provenance {self.provenance!r}")
        object.__setattr__(self, "id", arch_id(self))

    def with_layers(self, layers, provenance: str, parent_id: str | None = None) -> "Architecture":
        return Architecture(
            layers=tuple(layers),
            input_shape=self.input_shape,
            num_classes=self.num_classes,
            provenance=provenance,
            parent_id=parent_id,
        )


# ---------------------------------------------------------------------------
# canonical serialization

def canonical_dict(arch: Architecture) -> dict:
    return {
        "input_shape": list(arch.input_shape),
        "layers": [layer_to_dict(l) for l in arch.layers],
        "num_classes": arch.num_classes,
    }


def serialize(arch: Architecture) -> str:
    """Canonical byte-stable text form (sorted keys, compact separators)."""
    return json.dumps(canonical_dict(arch), sort_keys=True, separators=(",", ":"))


def arch_id(arch: Architecture) -> str:
    digest = hashlib.sha256(serialize(arch).encode()).hexdigest()
    return digest[:12]


def deserialize(text: str, provenance: str = "handcrafted",
                parent_id: str | None = None) -> Architecture:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", exc.pos) from exc
    return arch_from_dict(obj, provenance=provenance, parent_id=parent_id)


def arch_from_dict(obj: dict, provenance: str = "handcrafted",
                   parent_id: str | None = None) -> Architecture:
    if not isinstance(obj, dict):
        raise ParseError("architecture text must be a JSON object")
    for key in ("input_shape", "layers", "num_classes"):
        if key not in obj:
            raise ParseError(f"missing required key {key!r}")
    layers = [layer_from_dict(d, i) for i, d in enumerate(obj["layers"])]
    try:
        return Architecture(
            layers=tuple(layers),
            input_shape=tuple(obj["input_shape"]),
            num_classes=obj["num_classes"],
            provenance=provenance,
            parent_id=parent_id,
        )
    except ArchError as exc:
        raise ParseError(str(exc)) from exc


# ---------------------------------------------------------------------------
# shape inference

def _conv_out(extent: int, kernel: int, stride: int) -> int:
    # valid (no) padding
    return (extent - kernel) // stride + 1


def infer_shapes(arch: Architecture) -> list[tuple]:
    """Activation shape after each layer, plus the head output.

    Spatial shapes are (h, w, c); flattened shapes are (n,). The returned
    list has ``len(arch.layers) + 1`` entries; the last is ``(num_classes,)``.
    """
    shapes = []
    shape = arch.input_shape
    for i, layer in enumerate(arch.layers):
        spatial = len(shape) == 3
        if isinstance(layer, Conv2D):
            if not spatial:
                raise SpatialAfterFlatten(f"layer {i}: Conv2D after flatten")
            h, w, _ = shape
            if layer.kernel > h or layer.kernel > w:
                raise NonPositiveShape(
                    f"layer {i}: kernel {layer.kernel} exceeds spatial extent {h}x{w}")
            shape = (_conv_out(h, layer.kernel, layer.stride),
                     _conv_out(w, layer.kernel, layer.stride),
                     layer.filters)
        elif isinstance(layer, MaxPool):
            if not spatial:
                raise SpatialAfterFlatten(f"layer {i}: MaxPool after flatten")
            h, w, c = shape
            if layer.pool > h or layer.pool > w:
                raise NonPositiveShape(
                    f"layer {i}: pool {layer.pool} exceeds spatial extent {h}x{w}")
            shape = (h // layer.pool, w // layer.pool, c)
        elif isinstance(layer, Dense):
            shape = (layer.units,)
        else:  # Activation / Dropout preserve shape
            shape = shape
        shapes.append(shape)
    shapes.append((arch.num_classes,))
    return shapes


def flat_size(shape: tuple) -> int:
    return int(math.prod(shape))


# ---------------------------------------------------------------------------
# validation

@dataclass(frozen=True)
class Violation:
    rule: str
    layer_index: int | None
    message: str


def validate(arch: Architecture) -> list[Violation]:
    """Collect every violated structural rule; an empty list means ok.

    R1 no Conv2D/MaxPool after a Dense; R2 kernels/pools fit the incoming
    spatial extent; R3/R4 no adjacent Activation/Dropout pairs; R5 at most
    32 layers; R6 at most 5,000,000 parameters (head included).
    """
    violations = []
    shape = arch.input_shape
    flattened = False
    shape_ok = True
    prev_kind = None
    for i, layer in enumerate(arch.layers):
        kind = layer.kind
        if kind in SPATIAL_KINDS and flattened:
            violations.append(Violation("R1", i, f"{kind} at layer {i} follows a Dense"))
            prev_kind = kind
            continue  # shape unchanged; keep checking the remainder
        if isinstance(layer, Conv2D):
            h, w, _ = shape
            if layer.kernel > h or layer.kernel > w:
                violations.append(Violation(
                    "R2", i, f"kernel {layer.kernel} exceeds spatial extent {h}x{w}"))
                shape = (1, 1, layer.filters)
                shape_ok = False
            else:
                shape = (_conv_out(h, layer.kernel, layer.stride),
                         _conv_out(w, layer.kernel, layer.stride),
                         layer.filters)
        elif isinstance(layer, MaxPool):
            h, w, c = shape
            if layer.pool > h or layer.pool > w:
                violations.append(Violation(
                    "R2", i, f"pool {layer.pool} exceeds spatial extent {h}x{w}"))
                shape = (1, 1, c)
                shape_ok = False
            else:
                shape = (h // layer.pool, w // layer.pool, c)
        elif isinstance(layer, Dense):
            shape = (layer.units,)
            flattened = True
        elif isinstance(layer, Activation) and prev_kind == "Activation":
            violations.append(Violation("R3", i, f"adjacent Activation layers at {i - 1},{i}"))
        elif isinstance(layer, Dropout) and prev_kind == "Dropout":
            violations.append(Violation("R4", i, f"adjacent Dropout layers at {i - 1},{i}"))
        prev_kind = kind
    if len(arch.layers) > MAX_LAYERS:
        violations.append(Violation(
            "R5", None, f"{len(arch.layers)} layers exceeds the {MAX_LAYERS} cap"))
    if shape_ok and not any(v.rule == "R1" for v in violations):
        total = count_parameters(arch)
        if total > MAX_PARAMETERS:
            violations.append(Violation(
                "R6", None, f"{total} parameters exceeds the {MAX_PARAMETERS} cap"))
    return violations


def is_valid(arch: Architecture) -> bool:
    return not validate(arch)


# ---------------------------------------------------------------------------
# parameter counting

def count_parameters(arch: Architecture) -> int:
    """Total learnable scalars, including the implicit classifier head.

    Conv2D: (kernel^2 * c_in + 1) * filters; Dense: (fan_in + 1) * units;
    head: (fan_in + 1) * num_classes. Pool/activation/dropout are free.
    """
    total = 0
    shape = arch.input_shape
    for i, layer in enumerate(arch.layers):
        if isinstance(layer, Conv2D):
            if len(shape) != 3:
                raise SpatialAfterFlatten(f"layer {i}: Conv2D after flatten")
            h, w, c = shape
            if layer.kernel > h or layer.kernel > w:
                raise NonPositiveShape(f"layer {i}: kernel exceeds extent")
            total += (layer.kernel ** 2 * c + 1) * layer.filters
            shape = (_conv_out(h, layer.kernel, layer.stride),
                     _conv_out(w, layer.kernel, layer.stride),
                     layer.filters)
        elif isinstance(layer, MaxPool):
            if len(shape) != 3:
                raise SpatialAfterFlatten(f"layer {i}: MaxPool after flatten")
            h, w, c = shape
            if layer.pool > h or layer.pool > w:
                raise NonPositiveShape(f"layer {i}: pool exceeds extent")
            shape = (h // layer.pool, w // layer.pool, c)
        elif isinstance(layer, Dense):
            total += (flat_size(shape) + 1) * layer.units
            shape = (layer.units,)
    total += (flat_size(shape) + 1) * arch.num_classes
    return total


# ---------------------------------------------------------------------------
# architecture chips (compact visual encoding)

CHIP_HEIGHT_FLOOR = 0.15
CHIP_LOG_CEILING = 6.0  # activation sizes >= 10^6 saturate the height scale

CHIP_DECORATIONS = ("none", "dotted_border", "relu_glyph", "tanh_glyph", "sigmoid_glyph")

_COLOR_KEYS = {
    "Conv2D": "conv",
    "MaxPool": "pool",
    "Dense": "dense",
    "Activation": "activation",
    "Dropout": "dropout",
    "Head": "head",
}
_SYMBOL_KEYS = {
    "Conv2D": "grid",
    "MaxPool": "funnel",
    "Dense": "bars",
    "Activation": "wave",
    "Dropout": "dots",
    "Head": "flag",
}


@dataclass(frozen=True)
class Chip:
    kind: str
    color_key: str
    symbol_key: str
    height: float
    decoration: str
    label: str


@dataclass(frozen=True)
class ChipSequence:
    chips: tuple

    def to_dicts(self) -> list[dict]:
        return [chip.__dict__.copy() for chip in self.chips]


def format_count(n: int) -> str:
    """Compact magnitude label: 812 -> '812', 8300 -> '8.3k', 2.5e6 -> '2.5M'."""
    if n < 1000:
        return str(n)
    if n < 1_000_000:
        return f"{n / 1000:.1f}k"
    return f"{n / 1_000_000:.1f}M"


def chip_height(activation_size: int) -> float:
    scaled = math.log10(activation_size) / CHIP_LOG_CEILING if activation_size > 0 else 0.0
    return CHIP_HEIGHT_FLOOR + (1.0 - CHIP_HEIGHT_FLOOR) * min(max(scaled, 0.0), 1.0)


def _chip_label(layer: Layer) -> str:
    if isinstance(layer, Conv2D):
        label = f"{layer.filters}f {layer.kernel}×{layer.kernel}"
        if layer.stride != 1:
            label += f" s{layer.stride}"
        return label
    if isinstance(layer, MaxPool):
        return f"{layer.pool}×{layer.pool}"
    if isinstance(layer, Dense):
        return f"{layer.units}u"
    if isinstance(layer, Activation):
        return layer.fn
    return f"{layer.rate:g}"  # Dropout


def _decoration(layer: Layer) -> str:
    if isinstance(layer, Dropout):
        return "dotted_border"
    if isinstance(layer, Activation):
        return f"{layer.fn}_glyph"
    return "none"


def chip_sequence(arch: Architecture) -> ChipSequence:
    """One chip per layer plus a head chip.

    Chip height encodes the layer's output activation size on a bounded log
    scale: 0.15 + 0.85 * clamp(log10(size)/6, 0, 1). The head chip's label
    carries the model's total parameter count in compact form.
    """
    shapes = infer_shapes(arch)
    chips = []
    for layer, shape in zip(arch.layers, shapes):
        chips.append(Chip(
            kind=layer.kind,
            color_key=_COLOR_KEYS[layer.kind],
            symbol_key=_SYMBOL_KEYS[layer.kind],
            height=chip_height(flat_size(shape)),
            decoration=_decoration(layer),
            label=_chip_label(layer),
        ))
    total = count_parameters(arch)
    chips.append(Chip(
        kind="Head",
        color_key=_COLOR_KEYS["Head"],
        symbol_key=_SYMBOL_KEYS["Head"],
        height=chip_height(arch.num_classes),
        decoration="none",
        label=f"{arch.num_classes}c {format_count(total)}",
    ))
    return ChipSequence(chips=tuple(chips))
