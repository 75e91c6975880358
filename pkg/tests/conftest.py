import numpy as np
import pytest
import torch
from PIL import Image

from featinv.backbone import VGG19_BLOCKS, build_toy_backbone, load_backbone
from featinv.images import ImageBuffer


@pytest.fixture(scope="session")
def toy():
    return build_toy_backbone(0)


@pytest.fixture(scope="session")
def toy_img():
    # kept inside the representable pixel box [-mean, 1-mean]
    g = torch.Generator().manual_seed(1)
    px = torch.rand(3, 8, 8, dtype=torch.float64, generator=g) * 0.9 - 0.4
    return ImageBuffer(px, source="synthetic-8x8")


def make_code_values(seed, channels=4, h=5, w=5, dtype=torch.float64):
    """Random non-negative CxMxN block, deterministic per seed."""
    g = torch.Generator().manual_seed(seed)
    return torch.rand(channels, h, w, generator=g, dtype=dtype) * 2.0


def synthesize_vgg19_state(seed=20):
    """A full VGG-19 trunk state dict in the published key layout.

    He-scaled random filters: architecturally identical to the real trunk,
    so every structural fact and all plumbing can be exercised without the
    (large, network-fetched) released weights.
    """
    g = torch.Generator().manual_seed(seed)
    state = {}
    pos, in_ch = 0, 3
    for block in VGG19_BLOCKS:
        for ch in block:
            sigma = (2.0 / (in_ch * 9)) ** 0.5
            state[f"features.{pos}.weight"] = torch.randn(ch, in_ch, 3, 3, generator=g) * sigma
            state[f"features.{pos}.bias"] = torch.randn(ch, generator=g) * 0.05
            pos += 2  # conv, relu
            in_ch = ch
        pos += 1  # pool
    return state


@pytest.fixture(scope="session")
def synth_vgg_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("weights") / "vgg19_synth.pth"
    torch.save(synthesize_vgg19_state(), path)
    return path


@pytest.fixture(scope="session")
def vgg(synth_vgg_path):
    return load_backbone(synth_vgg_path)


def write_png(path, seed, size=64):
    rng = np.random.default_rng(seed)
    small = rng.integers(0, 255, size=(8, 8, 3), dtype=np.uint8)
    Image.fromarray(small, "RGB").resize((size, size), Image.BICUBIC).save(path)
    return path


@pytest.fixture(scope="session")
def photo_png(tmp_path_factory):
    return write_png(tmp_path_factory.mktemp("imgs") / "photo.png", seed=0)


@pytest.fixture(scope="session")
def style_png(tmp_path_factory):
    return write_png(tmp_path_factory.mktemp("imgs") / "style.png", seed=1, size=48)
