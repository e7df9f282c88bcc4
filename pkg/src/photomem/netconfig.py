"""Network configuration: parsing, presets, tiling, and array allocation.

The config grammar is deliberately close to the benchmark tables it mirrors:
one stage per line with an ``MxM, K, N`` triple (filter size, convolutional
width, back-to-back layer count), an optional second sub-block after a
semicolon, plus ``input`` and ``fc`` lines.  A ``[device]`` section carries
overrides for the analog device parameters.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

from .device import ConfigError

log = logging.getLogger(__name__)

ALLOWED_FILTERS = (1, 2, 3, 4, 5, 7)

# Fabric geometry: one full cycle convolves a 56x56 tile as four 28x28
# chunks; 196 DWDM waveguides x 16 wavelengths move 4 chunk-sized feature
# maps per movement, 8 movements per clock.
TILE_SIZE = 56
CHUNK_SIZE = 28
WAVEGUIDES = 196
WAVELENGTHS_PER_WAVEGUIDE = 16
SIGNALS_PER_MOVEMENT = WAVEGUIDES * WAVELENGTHS_PER_WAVEGUIDE  # 3136
MOVEMENTS_PER_CLOCK = 8
FEATURES_PER_MOVEMENT = 4
MEMRISTORS_PER_WMA = 38416
SOAS_PER_MOVEMENT = 784
POOL_UNITS_PER_MOVEMENT = 196


class ParseError(ConfigError):
    """Config text error, carrying the offending line."""


@dataclass(frozen=True)
class SubBlock:
    filter: int
    width: int
    repeats: int


@dataclass(frozen=True)
class ConvStageSpec:
    """One feature-extraction stage: N back-to-back convs of width K."""

    filter: int
    width: int
    repeats: int
    sub: SubBlock | None = None

    def __post_init__(self) -> None:
        for f, k, n in [(self.filter, self.width, self.repeats)] + (
            [(self.sub.filter, self.sub.width, self.sub.repeats)] if self.sub else []
        ):
            if f not in ALLOWED_FILTERS:
                raise ConfigError(f"filter size {f} not supported (allowed: {ALLOWED_FILTERS})")
            if k < 1:
                raise ConfigError(f"convolutional width must be >= 1, got {k}")
            if n < 1:
                raise ConfigError(f"layer repeat count must be >= 1, got {n}")

    @property
    def layer_count(self) -> int:
        return self.repeats + (self.sub.repeats if self.sub else 0)

    @property
    def out_width(self) -> int:
        return self.sub.width if self.sub else self.width


@dataclass(frozen=True)
class NetworkConfig:
    """Parsed benchmark architecture plus fixed fabric conventions.

    Pooling is fixed at 2x2/stride-2 per stage; convolutions use unit
    stride and same-padding.
    """

    fe_stages: tuple[ConvStageSpec, ...]
    fc_stages: tuple[tuple[int, int], ...]  # (width, repeats)
    input_shape: tuple[int, int, int]  # (channels, H, W)
    name: str = ""

    def __post_init__(self) -> None:
        if not self.fe_stages:
            raise ConfigError("at least one FE stage is required")
        if not self.fc_stages:
            raise ConfigError("at least one FC stage is required")
        c, h, w = self.input_shape
        if c < 1 or h < 1 or w < 1:
            raise ConfigError(f"invalid input shape {self.input_shape}")
        self.shape_chain()  # raises on a broken chain

    def shape_chain(self) -> list[tuple[int, int, int]]:
        """Per-stage output shapes (channels, H, W), pooling included."""
        c, h, w = self.input_shape
        chain = []
        for idx, stage in enumerate(self.fe_stages):
            if h < 1 or w < 1:
                raise ConfigError(f"stage {idx + 1} receives empty spatial extent {h}x{w}")
            c = stage.out_width
            h, w = math.ceil(h / 2), math.ceil(w / 2)
            chain.append((c, h, w))
        return chain

    def conv_layer_plan(self) -> list[list[tuple[int, int, int]]]:
        """Per stage, the (in_channels, out_channels, filter) of each conv layer."""
        plan = []
        in_ch = self.input_shape[0]
        for stage in self.fe_stages:
            layers = []
            for _ in range(stage.repeats):
                layers.append((in_ch, stage.width, stage.filter))
                in_ch = stage.width
            if stage.sub:
                for _ in range(stage.sub.repeats):
                    layers.append((in_ch, stage.sub.width, stage.sub.filter))
                    in_ch = stage.sub.width
            plan.append(layers)
        return plan

    def fc_layer_plan(self) -> list[tuple[int, int]]:
        """(in_dim, out_dim) of each dense layer; input is the flattened features."""
        c, h, w = self.shape_chain()[-1]
        in_dim = c * h * w
        plan = []
        for width, repeats in self.fc_stages:
            for _ in range(repeats):
                plan.append((in_dim, width))
                in_dim = width
        return plan

    @property
    def conv_layer_count(self) -> int:
        return sum(s.layer_count for s in self.fe_stages)

    @property
    def output_width(self) -> int:
        return self.fc_stages[-1][0]


def _parse_triple(text: str, lineno: int) -> tuple[int, int, int]:
    parts = [p.strip() for p in text.replace("×", "x").split(",")]
    if len(parts) != 3:
        raise ParseError(f"line {lineno}: expected 'MxM, K, N', got {text!r}")
    fpart = parts[0].lower()
    if "x" not in fpart:
        raise ParseError(f"line {lineno}: filter must look like 'MxM', got {parts[0]!r}")
    f1, _, f2 = fpart.partition("x")
    try:
        f1i, f2i, k, n = int(f1), int(f2), int(parts[1]), int(parts[2])
    except ValueError as exc:
        raise ParseError(f"line {lineno}: non-integer field in {text!r}") from exc
    if f1i != f2i:
        raise ParseError(f"line {lineno}: only square filters are supported, got {f1i}x{f2i}")
    return f1i, k, n


def parse_config(text: str) -> NetworkConfig:
    """Parse the network portion of a config document."""
    net, _ = parse_config_file(text)
    return net


def parse_config_file(text: str) -> tuple[NetworkConfig, dict]:
    """Parse a full config document: network lines plus a [device] section."""
    stages: list[ConvStageSpec] = []
    fcs: list[tuple[int, int]] = []
    input_shape = None
    name = ""
    device: dict = {}
    section = "network"
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if section not in ("network", "device"):
                raise ParseError(f"line {lineno}: unknown section [{section}]")
            continue
        if ":" not in line:
            raise ParseError(f"line {lineno}: expected 'key: value', got {line!r}")
        key, _, value = line.partition(":")
        key, value = key.strip().lower(), value.strip()
        if section == "device":
            device[key] = value
            continue
        if key == "name":
            name = value
        elif key == "input":
            dims = value.replace("×", "x").lower().split("x")
            if len(dims) != 3:
                raise ParseError(f"line {lineno}: input must be CxHxW, got {value!r}")
            try:
                input_shape = tuple(int(d) for d in dims)
            except ValueError as exc:
                raise ParseError(f"line {lineno}: non-integer input dimension in {value!r}") from exc
        elif key == "stage":
            blocks = [b.strip() for b in value.split(";")]
            f, k, n = _parse_triple(blocks[0], lineno)
            sub = None
            if len(blocks) == 2:
                sf, sk, sn = _parse_triple(blocks[1], lineno)
                sub = SubBlock(sf, sk, sn)
            elif len(blocks) > 2:
                raise ParseError(f"line {lineno}: at most one sub-block per stage")
            try:
                stages.append(ConvStageSpec(f, k, n, sub))
            except ConfigError as exc:
                raise ParseError(f"line {lineno}: {exc}") from exc
        elif key == "fc":
            parts = [p.strip() for p in value.split(",")]
            if len(parts) != 2:
                raise ParseError(f"line {lineno}: fc must be 'width, repeats', got {value!r}")
            try:
                width, repeats = int(parts[0]), int(parts[1])
            except ValueError as exc:
                raise ParseError(f"line {lineno}: non-integer fc field in {value!r}") from exc
            if width < 1 or repeats < 1:
                raise ParseError(f"line {lineno}: fc width/repeats must be >= 1")
            fcs.append((width, repeats))
        else:
            raise ParseError(f"line {lineno}: unknown key {key!r}")
    if not stages:
        raise ParseError("at least one FE stage is required")
    if input_shape is None:
        raise ParseError("missing 'input: CxHxW' line")
    if not fcs:
        raise ParseError("at least one fc line is required")
    try:
        net = NetworkConfig(tuple(stages), tuple(fcs), input_shape, name)
    except ConfigError as exc:
        raise ParseError(str(exc)) from exc
    return net, device


def serialize_config(net: NetworkConfig, device: dict | None = None) -> str:
    """Emit config text that parses back to an equal NetworkConfig."""
    lines = []
    if net.name:
        lines.append(f"name: {net.name}")
    c, h, w = net.input_shape
    lines.append(f"input: {c}x{h}x{w}")
    for stage in net.fe_stages:
        entry = f"stage: {stage.filter}x{stage.filter}, {stage.width}, {stage.repeats}"
        if stage.sub:
            entry += f"; {stage.sub.filter}x{stage.sub.filter}, {stage.sub.width}, {stage.sub.repeats}"
        lines.append(entry)
    for width, repeats in net.fc_stages:
        lines.append(f"fc: {width}, {repeats}")
    if device:
        lines.append("")
        lines.append("[device]")
        for key, value in device.items():
            lines.append(f"{key}: {value}")
    return "\n".join(lines) + "\n"


def _vgg(name, stage_defs) -> NetworkConfig:
    return NetworkConfig(
        tuple(ConvStageSpec(*sd) for sd in stage_defs),
        ((4096, 2), (1000, 1)),
        (3, 224, 224),
        name,
    )


def _lenet(name, stage_defs) -> NetworkConfig:
    return NetworkConfig(
        tuple(ConvStageSpec(*sd) for sd in stage_defs),
        ((84, 1), (10, 1)),
        (1, 28, 28),
        name,
    )


_ONE_BY_ONE_256 = SubBlock(1, 256, 1)

_PRESETS = {
    "VGG-A": lambda: _vgg("VGG-A", [(3, 64, 1), (3, 128, 1), (3, 256, 2), (3, 512, 2), (3, 512, 2)]),
    "VGG-B": lambda: _vgg(
        "VGG-B",
        [
            (3, 64, 2),
            (3, 128, 2),
            (3, 256, 2, _ONE_BY_ONE_256),
            (3, 512, 2, _ONE_BY_ONE_256),
            (3, 512, 2, _ONE_BY_ONE_256),
        ],
    ),
    "VGG-C": lambda: _vgg("VGG-C", [(3, 64, 2), (3, 128, 2), (3, 256, 3), (3, 512, 3), (3, 512, 3)]),
    "VGG-D": lambda: _vgg("VGG-D", [(3, 64, 2), (3, 128, 2), (3, 256, 4), (3, 512, 4), (3, 512, 4)]),
    # The published LeNet-A FC column reads "FC8 4,1"; implemented as one
    # 84-wide dense layer followed by the 10-wide output.
    "LeNet-A": lambda: _lenet("LeNet-A", [(3, 6, 1), (3, 6, 1), (3, 16, 2), (3, 16, 4), (3, 120, 1)]),
    "LeNet-B": lambda: _lenet("LeNet-B", [(3, 6, 1), (3, 6, 1), (3, 256, 1), (3, 16, 6), (3, 120, 1)]),
}


def preset_names() -> list[str]:
    return list(_PRESETS)


def preset(name: str) -> NetworkConfig:
    if name not in _PRESETS:
        raise ConfigError(f"unknown preset {name!r}; valid presets: {', '.join(_PRESETS)}")
    if name == "LeNet-B":
        # kept exactly as printed in the benchmark table; the 256-wide third
        # stage looks like a typo but is not silently corrected
        log.warning("LeNet-B stage 3 width 256 is kept as printed in the benchmark table")
    return _PRESETS[name]()


@dataclass(frozen=True)
class TilingPlan:
    """How an input image maps onto the 56x56-per-cycle fabric."""

    bplight_cycles: int
    tile_shape: tuple[int, int]
    chunk_grid: tuple[int, int]
    chunk_rects: tuple[tuple[int, int, int, int], ...]  # (r0, c0, r1, c1) per chunk
    chunk_labels: tuple[str, ...]
    movements_per_clock: int = MOVEMENTS_PER_CLOCK
    features_per_movement: int = FEATURES_PER_MOVEMENT

    @property
    def active_chunks(self) -> int:
        return len(self.chunk_rects)


def plan_tiling(net: NetworkConfig) -> TilingPlan:
    """Tile the image into 56x56 cycles of four 28x28 chunks.

    Images smaller than a tile occupy one partial tile; chunks the image
    does not reach stay idle (they still exist in the fabric but carry no
    rectangle here).
    """
    _, h, w = net.input_shape
    cycles = math.ceil(h / TILE_SIZE) * math.ceil(w / TILE_SIZE)
    tile_h, tile_w = min(h, TILE_SIZE), min(w, TILE_SIZE)
    grid_r, grid_c = math.ceil(tile_h / CHUNK_SIZE), math.ceil(tile_w / CHUNK_SIZE)
    rects = []
    labels = []
    label_pool = "ABCDEFGH"
    for r in range(grid_r):
        for c in range(grid_c):
            r0, c0 = r * CHUNK_SIZE, c * CHUNK_SIZE
            rects.append((r0, c0, min(r0 + CHUNK_SIZE, tile_h), min(c0 + CHUNK_SIZE, tile_w)))
            labels.append(label_pool[r * grid_c + c])
    return TilingPlan(cycles, (tile_h, tile_w), (grid_r, grid_c), tuple(rects), tuple(labels))


@dataclass(frozen=True)
class WmaAllocation:
    filter: int
    banks_per_wma: int
    banks_needed: int
    wma_count: int
    memristor_count: int


def allocate_wma(net: NetworkConfig) -> list[WmaAllocation]:
    """Weight-array demand per conv layer.

    One bank realizes one FxF kernel slice (one output kernel x one input
    channel); a 38416-memristor array holds floor(38416 / F^2) banks, the
    non-divisible remainder idling.
    """
    allocations = []
    for stage in net.conv_layer_plan():
        for in_ch, out_ch, f in stage:
            banks_per_wma = MEMRISTORS_PER_WMA // (f * f)
            if banks_per_wma == 0:
                raise ConfigError(f"filter {f}x{f} exceeds the {MEMRISTORS_PER_WMA}-memristor array")
            banks = out_ch * in_ch
            allocations.append(
                WmaAllocation(
                    filter=f,
                    banks_per_wma=banks_per_wma,
                    banks_needed=banks,
                    wma_count=math.ceil(banks / banks_per_wma),
                    memristor_count=banks * f * f,
                )
            )
    return allocations


def total_memristors(net: NetworkConfig) -> int:
    return sum(a.memristor_count for a in allocate_wma(net))


def total_wmas(net: NetworkConfig) -> int:
    return sum(a.wma_count for a in allocate_wma(net))
