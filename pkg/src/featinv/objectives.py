"""Objectives over image pixels: code matching, channel-energy style terms,
the Gram baseline, and natural-image priors.

An Objective is a weighted list of terms, each differentiable with respect
to pixels through a frozen backbone.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import torch

from .backbone import Backbone, Code
from .codeops import (RealloVector, fmi_modify, gram_descriptor,
                      random_reallocate, style_descriptor)
from .errors import NonFiniteLossError, UsageError
from .images import ImageBuffer

PRIOR_KINDS = ("tv_prior", "l2_prior")
DATA_KINDS = ("code_match", "style_sum", "gram_match")

# Layer protocol used throughout the experiments.
DEFAULT_FMI_LAYERS = ("relu1_2", "relu2_2", "relu3_2", "relu4_2", "relu5_2")
DEFAULT_STYLE_LAYERS = ("relu1_1", "relu2_1", "relu3_1", "relu4_1", "relu5_1")
DEFAULT_CONTENT_LAYER = "relu2_2"
DEFAULT_ALPHA = 10.0
DEFAULT_BETA = 1.0


def _tensor_sha256(t: torch.Tensor) -> str:
    return hashlib.sha256(t.detach().cpu().numpy().tobytes()).hexdigest()


@dataclass
class Term:
    """One weighted objective term."""

    kind: str
    weight: float
    layer: str | None = None
    target: torch.Tensor | None = None
    normalize_by_size: bool = False
    target_spatial_size: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in DATA_KINDS + PRIOR_KINDS:
            raise ValueError(f"unknown term kind {self.kind!r}")
        if self.weight < 0:
            raise ValueError(f"term weight must be >= 0, got {self.weight}")
        if self.kind in DATA_KINDS and (self.layer is None or self.target is None):
            raise ValueError(f"{self.kind} term needs a layer and a target")

    @property
    def label(self) -> str:
        return f"{self.kind}:{self.layer}" if self.layer else self.kind

    def describe(self) -> dict:
        d = {"kind": self.kind, "weight": self.weight}
        if self.layer:
            d["layer"] = self.layer
        if self.kind == "code_match":
            d["target_shape"] = list(self.target.shape)
            d["target_sha256"] = _tensor_sha256(self.target)
        elif self.kind == "style_sum":
            d["normalize_by_size"] = self.normalize_by_size
            d["descriptor"] = {"layer": self.layer, "sums": self.target.tolist(),
                               "spatial_size": self.target_spatial_size}
        elif self.kind == "gram_match":
            d["descriptor"] = {"layer": self.layer, "matrix": self.target.tolist()}
        d.update(self.meta)
        return d


@dataclass
class PriorWeights:
    """Weights of the natural-image priors appended to every objective."""

    tv: float = 0.0
    l2: float = 0.0

    def terms(self) -> list[Term]:
        out = []
        if self.tv:
            out.append(Term("tv_prior", self.tv))
        if self.l2:
            out.append(Term("l2_prior", self.l2))
        return out


@dataclass
class Objective:
    """A weighted composition of data terms and priors."""

    terms: tuple[Term, ...]
    image_size: tuple[int, int] | None = None

    def __post_init__(self):
        self.terms = tuple(self.terms)
        if not any(t.kind in DATA_KINDS for t in self.terms):
            raise ValueError("objective needs at least one non-prior term")
        labels = [t.label for t in self.terms]
        if len(set(labels)) != len(labels):
            raise ValueError("duplicate term labels in objective")

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(t.label for t in self.terms)

    def data_layers(self) -> set[str]:
        return {t.layer for t in self.terms if t.kind in DATA_KINDS and t.weight != 0}

    def describe(self) -> list[dict]:
        return [t.describe() for t in self.terms]


# ---- priors ----

def _as_pixels(img) -> torch.Tensor:
    return img.pixels if isinstance(img, ImageBuffer) else torch.as_tensor(img)


def _tv(px: torch.Tensor) -> torch.Tensor:
    dh = px[:, 1:, :] - px[:, :-1, :]
    dw = px[:, :, 1:] - px[:, :, :-1]
    return dh.pow(2).sum() + dw.pow(2).sum()


def tv_prior(img) -> float:
    """Sum of squared adjacent-pixel differences, horizontal and vertical."""
    return float(_tv(_as_pixels(img).detach()))


def l2_prior(img) -> float:
    """Squared Frobenius norm of the pixel array."""
    return float(_as_pixels(img).detach().pow(2).sum())


# ---- evaluation ----

def evaluate_objective(backbone: Backbone, pixels: torch.Tensor,
                       objective: Objective) -> tuple[torch.Tensor, dict[str, float]]:
    """Evaluate all terms at the given pixels.

    Returns the total loss as a scalar tensor (carrying the autograd graph
    when pixels require grad) and the weighted per-term contributions.
    Zero-weight terms are recorded as 0 and not computed.
    """
    layers = objective.data_layers()
    acts = backbone.activations(pixels, layers) if layers else {}
    total = torch.zeros((), dtype=pixels.dtype)
    parts: dict[str, float] = {}
    for term in objective.terms:
        if term.weight == 0:
            parts[term.label] = 0.0
            continue
        if term.kind == "code_match":
            act = acts[term.layer]
            if tuple(act.shape) != tuple(term.target.shape):
                raise UsageError(
                    f"target code at {term.layer} has shape {tuple(term.target.shape)} "
                    f"but the image produces {tuple(act.shape)}")
            val = (act - term.target.to(act.dtype)).pow(2).sum()
        elif term.kind == "style_sum":
            act = acts[term.layer]
            cur = act.sum(dim=(1, 2))
            tgt = term.target.to(act.dtype)
            if term.normalize_by_size:
                cur = cur / (act.shape[1] * act.shape[2])
                tgt = tgt / term.target_spatial_size
            val = (cur - tgt).pow(2).sum()
        elif term.kind == "gram_match":
            act = acts[term.layer]
            flat = act.reshape(act.shape[0], -1)
            val = (flat @ flat.T - term.target.to(act.dtype)).pow(2).sum()
        elif term.kind == "tv_prior":
            val = _tv(pixels)
        else:  # l2_prior
            val = pixels.pow(2).sum()
        contrib = term.weight * val
        total = total + contrib
        parts[term.label] = float(contrib.detach())
    return total, parts


def objective_gradient(backbone: Backbone, img,
                       objective: Objective) -> tuple[float, torch.Tensor]:
    """Loss and its gradient with respect to the image pixels.

    Accepts an ImageBuffer or a bare 3xHxW tensor. Network parameters stay
    frozen; evaluation is deterministic. Raises NonFiniteLossError if the
    loss is NaN or infinite.
    """
    pixels = img.pixels if isinstance(img, ImageBuffer) else img
    px = pixels.detach().to(backbone.dtype).requires_grad_(True)
    total, _ = evaluate_objective(backbone, px, objective)
    if not torch.isfinite(total):
        raise NonFiniteLossError(f"objective evaluated to {float(total.detach())!r}")
    if total.grad_fn is None:  # every active term had weight zero
        return float(total.detach()), torch.zeros_like(px)
    (grad,) = torch.autograd.grad(total, px)
    return float(total.detach()), grad.detach()


# ---- builders ----

def _require_relu(backbone: Backbone, layer: str) -> None:
    if backbone.spec(layer).kind != "relu":
        raise UsageError(f"layer {layer!r} is not a relu layer")


def build_fmi_objective(backbone: Backbone, img: ImageBuffer, layer: str,
                        channel: int, priors: PriorWeights | None = None) -> Objective:
    """Match the image's code at one layer after concentrating it into a
    single chosen channel."""
    _require_relu(backbone, layer)
    backbone.check_channel(layer, channel)
    code = backbone.extract_codes(img, [layer])[layer]
    target = fmi_modify(code, channel)
    term = Term("code_match", 1.0, layer, target.values,
                meta={"modifier": "fmi", "channel": channel, "source": img.source})
    priors = priors or PriorWeights()
    return Objective((term, *priors.terms()), image_size=(img.height, img.width))


def build_random_objective(backbone: Backbone, img: ImageBuffer, layer: str,
                           v: RealloVector, priors: PriorWeights | None = None) -> Objective:
    """Match the image's code after randomly reallocating per-channel energy."""
    _require_relu(backbone, layer)
    if len(v) != backbone.channel_count(layer):
        raise UsageError(f"reallocation vector has {len(v)} entries, "
                         f"{layer} has {backbone.channel_count(layer)} channels")
    code = backbone.extract_codes(img, [layer])[layer]
    target = random_reallocate(code, v)
    term = Term("code_match", 1.0, layer, target.values,
                meta={"modifier": "realloc", "seed": v.seed, "v": v.v.tolist(),
                      "source": img.source})
    priors = priors or PriorWeights()
    return Objective((term, *priors.terms()), image_size=(img.height, img.width))


def _styled_objective(backbone: Backbone, content: ImageBuffer, style: ImageBuffer,
                      content_layer: str, style_layers, alpha: float, beta: float,
                      priors: PriorWeights | None, style_kind: str,
                      normalize_style: bool) -> Objective:
    if alpha < 0 or beta < 0:
        raise UsageError("alpha and beta must be >= 0")
    style_layers = tuple(style_layers)
    if not style_layers:
        raise UsageError("at least one style layer is required")
    if len(set(style_layers)) != len(style_layers):
        raise UsageError("style layers must be distinct")
    content_code = backbone.extract_codes(content, [content_layer])[content_layer]
    style_codes = backbone.extract_codes(style, style_layers)
    terms = [Term("code_match", alpha, content_layer, content_code.values,
                  meta={"role": "content", "source": content.source})]
    per_layer = beta / len(style_layers)
    for name in style_layers:
        code = style_codes[name]
        if style_kind == "style_sum":
            desc = style_descriptor(code)
            terms.append(Term("style_sum", per_layer, name, desc.sums,
                              normalize_by_size=normalize_style,
                              target_spatial_size=desc.spatial_size,
                              meta={"role": "style", "source": style.source}))
        else:
            desc = gram_descriptor(code)
            terms.append(Term("gram_match", per_layer, name, desc.matrix,
                              meta={"role": "style", "source": style.source}))
    priors = priors or PriorWeights()
    return Objective((*terms, *priors.terms()),
                     image_size=(content.height, content.width))


def build_pmci_objective(backbone: Backbone, content: ImageBuffer, style: ImageBuffer,
                         content_layer: str = DEFAULT_CONTENT_LAYER,
                         style_layers=DEFAULT_STYLE_LAYERS,
                         alpha: float = DEFAULT_ALPHA, beta: float = DEFAULT_BETA,
                         priors: PriorWeights | None = None,
                         normalize_style: bool = False) -> Objective:
    """Content code term plus per-channel energy (channel-sum) style terms.

    The style weight beta is split equally across the style layers.
    """
    return _styled_objective(backbone, content, style, content_layer, style_layers,
                             alpha, beta, priors, "style_sum", normalize_style)


def build_gram_objective(backbone: Backbone, content: ImageBuffer, style: ImageBuffer,
                         content_layer: str = DEFAULT_CONTENT_LAYER,
                         style_layers=DEFAULT_STYLE_LAYERS,
                         alpha: float = DEFAULT_ALPHA, beta: float = DEFAULT_BETA,
                         priors: PriorWeights | None = None) -> Objective:
    """Same shape as the channel-sum objective with Gram-matrix style terms."""
    return _styled_objective(backbone, content, style, content_layer, style_layers,
                             alpha, beta, priors, "gram_match", False)
