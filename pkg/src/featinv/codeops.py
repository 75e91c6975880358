"""Pure code-space operators.

Everything here is a pure function of its inputs: channel-sum maps, the
single-filter code modifier, per-channel energy reallocation, simplex
sampling, and the channel-sum / Gram style descriptors.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import torch

from .backbone import Code

logger = logging.getLogger(__name__)

# Channels whose total activation falls below this fraction of the code's
# grand total are treated as dead: reallocation leaves them at zero.
DEGENERATE_FRACTION = 1e-12


@dataclass
class RealloVector:
    """A point on the C-simplex assigning each channel's share of energy."""

    v: torch.Tensor
    seed: int | None = None

    def __post_init__(self):
        self.v = torch.as_tensor(self.v, dtype=torch.float64).reshape(-1)
        if self.v.numel() < 1:
            raise ValueError("reallocation vector must have at least one entry")
        if bool((self.v < 0).any()):
            raise ValueError("reallocation vector entries must be non-negative")
        total = float(self.v.sum())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"reallocation vector must sum to 1, got {total!r}")

    def __len__(self) -> int:
        return int(self.v.numel())

    def to_json(self) -> dict:
        return {"seed": self.seed, "v": self.v.tolist()}


@dataclass
class StyleDescriptor:
    """Per-channel total activation of one layer's code (its energy vector)."""

    layer: str
    sums: torch.Tensor
    spatial_size: int

    def __post_init__(self):
        self.sums = torch.as_tensor(self.sums, dtype=torch.float64).reshape(-1)

    @property
    def channels(self) -> int:
        return int(self.sums.numel())

    def to_json(self) -> dict:
        return {"layer": self.layer, "sums": self.sums.tolist(),
                "spatial_size": self.spatial_size}


@dataclass
class GramDescriptor:
    """C x C matrix of inner products between flattened feature maps."""

    layer: str
    matrix: torch.Tensor

    def __post_init__(self):
        self.matrix = torch.as_tensor(self.matrix, dtype=torch.float64)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != self.matrix.shape[1]:
            raise ValueError("gram matrix must be square")

    def to_json(self) -> dict:
        return {"layer": self.layer, "matrix": self.matrix.tolist()}


def channel_sum_map(code: Code) -> torch.Tensor:
    """Sum the code over its channel axis; returns a 1xMxN map."""
    return code.values.sum(dim=0, keepdim=True)


def fmi_modify(code: Code, channel: int) -> Code:
    """Concentrate the whole code into one channel.

    The chosen channel receives the channel-sum map; every other channel
    becomes exactly zero. Grand total energy is preserved.
    """
    if not 0 <= channel < code.channels:
        raise ValueError(f"channel {channel} out of range for {code.layer} "
                         f"({code.channels} channels)")
    out = torch.zeros_like(code.values)
    out[channel] = channel_sum_map(code)[0]
    return Code(code.layer, out, source=f"fmi[{channel}]({code.source})")


def sample_simplex(dim: int, seed: int) -> RealloVector:
    """Draw a flat random point on the simplex (normalized exponentials)."""
    if dim < 1:
        raise ValueError(f"simplex dimension must be >= 1, got {dim}")
    g = torch.Generator().manual_seed(seed)
    e = torch.empty(dim, dtype=torch.float64).exponential_(1.0, generator=g)
    return RealloVector(e / e.sum(), seed=seed)


def random_reallocate(code: Code, v: RealloVector) -> Code:
    """Rescale each channel so its total activation becomes v_c times the
    code's grand total.

    Channels with (near-)zero input total cannot be rescaled; they stay
    all-zero, their assigned share is dropped, and the event is logged.
    Zero entries stay zero and support is preserved.
    """
    if len(v) != code.channels:
        raise ValueError(f"reallocation vector has {len(v)} entries, "
                         f"code {code.layer} has {code.channels} channels")
    totals = code.values.to(torch.float64).sum(dim=(1, 2))
    grand = float(totals.sum())
    eps = DEGENERATE_FRACTION * grand
    alive = totals > eps
    scale = torch.zeros_like(totals)
    if grand > 0:
        scale[alive] = v.v[alive] * grand / totals[alive]
    dead_assigned = int(((~alive) & (v.v > 0)).sum())
    if dead_assigned:
        dropped = float(v.v[~alive].sum())
        logger.warning("reallocation at %s: %d dead channel(s) assigned energy; "
                       "dropping share %.3g of the grand total",
                       code.layer, dead_assigned, dropped)
    out = code.values * scale.to(code.values.dtype).view(-1, 1, 1)
    return Code(code.layer, out, source=f"realloc[seed={v.seed}]({code.source})")


def style_descriptor(code: Code) -> StyleDescriptor:
    """Per-channel activation totals of a code."""
    sums = code.values.to(torch.float64).sum(dim=(1, 2))
    return StyleDescriptor(code.layer, sums, spatial_size=code.spatial_size)


def gram_descriptor(code: Code) -> GramDescriptor:
    """Inner products of flattened feature maps (the baseline style statistic)."""
    flat = code.values.to(torch.float64).reshape(code.channels, -1)
    return GramDescriptor(code.layer, flat @ flat.T)
