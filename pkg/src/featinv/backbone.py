"""Fixed convolutional backbones and named-layer activation codes.

Two backbones share one contract: the VGG-19 convolutional trunk (weights
loaded from a file, fully connected part never instantiated) and a small
deterministic toy network used as a desk-scale oracle in tests.
"""

from __future__ import annotations

import hashlib
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import torch
from torch import nn

from .errors import UsageError, WeightsError
from .images import IMAGENET_MEAN, ImageBuffer

# Output channels of the 16 VGG-19 conv layers, grouped by block.
VGG19_BLOCKS = ((64, 64), (128, 128), (256, 256, 256, 256),
                (512, 512, 512, 512), (512, 512, 512, 512))
VGG19_FILTER_COUNT = 5504  # sum of all conv output channels
KERNEL = 3


@dataclass(frozen=True)
class LayerSpec:
    """One trunk layer: its name, kind, channel count and pooling depth."""

    name: str
    kind: str            # conv | relu | pool
    out_channels: int
    pools_before: int    # stride-2 pools strictly before this layer

    @property
    def downsample(self) -> int:
        """Spatial reduction factor from input to this layer's output."""
        p = self.pools_before + (1 if self.kind == "pool" else 0)
        return 2 ** p


@dataclass
class Code:
    """Activation block of one layer for one image (C x M x N).

    Values are detached snapshots; operators never mutate them in place.
    """

    layer: str
    values: torch.Tensor
    source: str = ""

    def __post_init__(self):
        if self.values.ndim != 3:
            raise ValueError(f"code values must be CxMxN, got {tuple(self.values.shape)}")

    @property
    def channels(self) -> int:
        return int(self.values.shape[0])

    @property
    def spatial_size(self) -> int:
        return int(self.values.shape[1] * self.values.shape[2])


def _vgg19_table() -> list[LayerSpec]:
    specs = []
    pools = 0
    for block_idx, block in enumerate(VGG19_BLOCKS, start=1):
        for conv_idx, ch in enumerate(block, start=1):
            specs.append(LayerSpec(f"conv{block_idx}_{conv_idx}", "conv", ch, pools))
            specs.append(LayerSpec(f"relu{block_idx}_{conv_idx}", "relu", ch, pools))
        specs.append(LayerSpec(f"pool{block_idx}", "pool", block[-1], pools))
        pools += 1
    return specs


VGG19_LAYER_NAMES = tuple(s.name for s in _vgg19_table())


class Backbone:
    """An immutable stack of named conv/relu/pool layers.

    Safe to share across concurrent readers; every evaluation owns its own
    intermediate state. Forward evaluation is deterministic.
    """

    def __init__(self, kind: str, named_modules: list[tuple[str, nn.Module]],
                 specs: list[LayerSpec], dtype: torch.dtype,
                 weights_checksum: str = "", mean: tuple[float, float, float] = IMAGENET_MEAN):
        self.kind = kind
        self.specs = OrderedDict((s.name, s) for s in specs)
        self.dtype = dtype
        self.weights_checksum = weights_checksum
        self.mean = mean
        self._seq = nn.Sequential(OrderedDict(named_modules))
        self._seq.eval()
        for p in self._seq.parameters():
            p.requires_grad_(False)

    # ---- structure ----

    @property
    def layer_names(self) -> tuple[str, ...]:
        return tuple(self.specs)

    @property
    def relu_layers(self) -> tuple[str, ...]:
        return tuple(n for n, s in self.specs.items() if s.kind == "relu")

    def count(self, kind: str) -> int:
        return sum(1 for s in self.specs.values() if s.kind == kind)

    @property
    def filter_count(self) -> int:
        return sum(s.out_channels for s in self.specs.values() if s.kind == "conv")

    def kernel_sizes(self) -> set[tuple[int, int]]:
        return {m.kernel_size for m in self._seq if isinstance(m, nn.Conv2d)}

    def spec(self, layer: str) -> LayerSpec:
        if layer not in self.specs:
            raise UsageError(f"unknown layer {layer!r}; valid layers: {', '.join(self.specs)}")
        return self.specs[layer]

    def channel_count(self, layer: str) -> int:
        return self.spec(layer).out_channels

    def min_input_size(self, layers) -> int:
        """Smallest H and W for which every requested layer keeps >= 1 px."""
        return max(self.spec(name).downsample for name in layers)

    def check_channel(self, layer: str, index: int) -> None:
        c = self.channel_count(layer)
        if not 0 <= index < c:
            raise UsageError(f"filter {index} out of range for {layer} ({c} channels)")

    # ---- evaluation ----

    def activations(self, pixels: torch.Tensor, layers) -> dict[str, torch.Tensor]:
        """Forward pass returning CxMxN activation tensors for the requested
        layers, in one sweep. Keeps the autograd graph if pixels require grad.
        """
        wanted = set(layers)
        if not wanted:
            raise UsageError("no layers requested")
        unknown = wanted - set(self.specs)
        if unknown:
            raise UsageError(f"unknown layer {sorted(unknown)[0]!r}; "
                             f"valid layers: {', '.join(self.specs)}")
        h, w = int(pixels.shape[-2]), int(pixels.shape[-1])
        need = self.min_input_size(wanted)
        if min(h, w) < need:
            deepest = max(wanted, key=lambda n: self.specs[n].downsample)
            raise UsageError(f"image {h}x{w} too small for layer {deepest} "
                             f"(needs at least {need}px on each side)")
        x = pixels.to(self.dtype).unsqueeze(0)
        out: dict[str, torch.Tensor] = {}
        for name, module in self._seq.named_children():
            x = module(x)
            if name in wanted:
                out[name] = x.squeeze(0)
                if len(out) == len(wanted):
                    break
        return out

    def extract_codes(self, img, layers) -> dict[str, Code]:
        """Snapshot the codes of an image (buffer or 3xHxW tensor)."""
        if isinstance(img, ImageBuffer):
            pixels, src = img.pixels, img.source or "image"
        else:
            pixels, src = img, "tensor"
        acts = self.activations(pixels.detach(), layers)
        return {name: Code(name, t.detach().clone(), source=src) for name, t in acts.items()}


def extract_codes(backbone: Backbone, img: ImageBuffer, layers) -> dict[str, Code]:
    return backbone.extract_codes(img, layers)


# ---- VGG-19 trunk ----

def _vgg19_modules(specs: list[LayerSpec], dtype: torch.dtype) -> list[tuple[str, nn.Module]]:
    modules = []
    in_ch = 3
    for s in specs:
        if s.kind == "conv":
            conv = nn.Conv2d(in_ch, s.out_channels, KERNEL, padding=1)
            modules.append((s.name, conv.to(dtype)))
            in_ch = s.out_channels
        elif s.kind == "relu":
            modules.append((s.name, nn.ReLU(inplace=False)))
        else:
            modules.append((s.name, nn.MaxPool2d(2, 2)))
    return modules


def _file_sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _normalize_state_keys(state: dict) -> dict:
    """Accept torchvision-style keys; drop the classifier; strip prefixes."""
    out = {}
    for k, v in state.items():
        if k.startswith("classifier."):
            continue
        out[k.removeprefix("features.")] = v
    return out


def load_backbone(weights_path: str | Path) -> Backbone:
    """Load the VGG-19 convolutional trunk from a state-dict file.

    Accepts the standard published layout (``features.<idx>.weight`` etc.,
    classifier entries ignored) or a bare trunk (``<idx>.weight``). Raises
    WeightsError on a missing file or any parameter shape mismatch.
    """
    path = Path(weights_path)
    if not path.is_file():
        raise WeightsError(f"weights file not found: {path}")
    try:
        state = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise WeightsError(f"cannot read weights file {path}: {exc}") from exc
    if not isinstance(state, dict):
        raise WeightsError(f"weights file {path} does not hold a state dict")
    state = _normalize_state_keys(state)

    specs = _vgg19_table()
    modules = _vgg19_modules(specs, torch.float32)
    # Published trunks index layers by sequential position.
    mapped = {}
    allowed = set()
    for pos, (name, module) in enumerate(modules):
        if not isinstance(module, nn.Conv2d):
            continue
        for param in ("weight", "bias"):
            key = f"{pos}.{param}"
            allowed.add(key)
            if key not in state:
                raise WeightsError(f"weights file {path} is missing parameter {key} "
                                   f"({name}.{param}); wrong or truncated VGG-19 trunk")
            expected = getattr(module, param).shape
            got = state[key].shape
            if tuple(got) != tuple(expected):
                raise WeightsError(
                    f"shape mismatch for {name}.{param}: file has {tuple(got)}, "
                    f"VGG-19 trunk expects {tuple(expected)}")
            mapped[f"{name}.{param}"] = state[key].to(torch.float32)
    extra = set(state) - allowed
    if extra:
        raise WeightsError(f"weights file {path} has unexpected parameters "
                           f"(e.g. {sorted(extra)[0]}); not a VGG-19 trunk")

    b = Backbone("vgg19", modules, specs, torch.float32,
                 weights_checksum=_file_sha256(path))
    b._seq.load_state_dict(mapped)
    return b


# ---- toy oracle backbone ----

def build_toy_backbone(seed: int, channels: tuple[int, ...] = (6, 4)) -> Backbone:
    """A tiny conv+relu stack with fixed seed-derived weights.

    Small enough for exhaustive finite-difference checks; satisfies the same
    interface contracts as the VGG-19 trunk. Runs in float64.
    """
    if not channels or any(c < 1 or c > 8 for c in channels):
        raise ValueError("channels must be 1..8 per layer")
    g = torch.Generator().manual_seed(seed)
    specs = []
    modules = []
    in_ch = 3
    for i, ch in enumerate(channels, start=1):
        conv = nn.Conv2d(in_ch, ch, KERNEL, padding=1).to(torch.float64)
        with torch.no_grad():
            sigma = (2.0 / (in_ch * KERNEL * KERNEL)) ** 0.5
            conv.weight.copy_(torch.randn(conv.weight.shape, generator=g, dtype=torch.float64) * sigma)
            conv.bias.copy_(torch.randn(conv.bias.shape, generator=g, dtype=torch.float64) * 0.1)
        specs.append(LayerSpec(f"conv{i}", "conv", ch, 0))
        specs.append(LayerSpec(f"relu{i}", "relu", ch, 0))
        modules.append((f"conv{i}", conv))
        modules.append((f"relu{i}", nn.ReLU(inplace=False)))
        in_ch = ch
    tag = f"toy-seed{seed}-ch{','.join(map(str, channels))}"
    return Backbone("toy", modules, specs, torch.float64, weights_checksum=tag)
