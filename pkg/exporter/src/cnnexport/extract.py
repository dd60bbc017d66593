"""Pretrained-classifier layer extraction.

Supported layers mirror the usual last four stages of the classic
classification stacks: ``pool5`` (last conv block output after pooling,
flattened in row-major height-width-channel order) and the three fully
connected outputs ``fc6``/``fc7``/``fc8``. Every extracted vector is
rectified (max with 0) and L2-normalized after flattening.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn
from torchvision.models import alexnet, vgg16

from .preprocess import IMAGENET_MEAN

LAYERS = ("pool5", "fc6", "fc7", "fc8")


@dataclass(frozen=True)
class ModelSpec:
    """Architecture entry: builder, input geometry and layer sizes."""

    name: str
    builder: object
    num_classes: int
    input_side: int
    pool5_shape: tuple[int, int, int]  # (channels, height, width)

    def layer_length(self, layer: str) -> int:
        if layer == "pool5":
            c, h, w = self.pool5_shape
            return c * h * w
        if layer in ("fc6", "fc7"):
            return 4096
        if layer == "fc8":
            return self.num_classes
        raise ValueError(f"unknown layer {layer!r}, expected one of {LAYERS}")


MODELS = {
    "oxfordnet": ModelSpec("oxfordnet", vgg16, 1000, 224, (512, 7, 7)),
    "alexnet": ModelSpec("alexnet", alexnet, 1000, 227, (256, 6, 6)),
    "placesnet": ModelSpec("placesnet", alexnet, 205, 227, (256, 6, 6)),
    "hybridnet": ModelSpec("hybridnet", alexnet, 1183, 227, (256, 6, 6)),
}


@dataclass(frozen=True)
class ExportSpec:
    """What to extract: model, layer, crop strategy and input scaling."""

    model: str
    layer: str
    crop: str
    mean: tuple[float, float, float] = IMAGENET_MEAN

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}, expected one of {tuple(MODELS)}")
        if self.layer not in LAYERS:
            raise ValueError(f"unknown layer {self.layer!r}, expected one of {LAYERS}")

    @property
    def model_spec(self) -> ModelSpec:
        return MODELS[self.model]

    @property
    def input_side(self) -> int:
        return self.model_spec.input_side


def build_model(spec: ExportSpec, weights_path=None, seed: int = 0) -> nn.Module:
    """Instantiate the architecture; load a state dict when given, else
    seed the random initialization so unweighted runs stay reproducible."""
    torch.manual_seed(seed)
    model_spec = spec.model_spec
    model = model_spec.builder(weights=None, num_classes=model_spec.num_classes)
    if weights_path is not None:
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
        model.load_state_dict(state)
    model.eval()
    return model


def extract_layer(model: nn.Module, tensor: np.ndarray, spec: ExportSpec) -> np.ndarray:
    """Forward one preprocessed image and return the chosen layer output,
    rectified, flattened and L2-normalized."""
    x = torch.from_numpy(np.ascontiguousarray(tensor, dtype=np.float32)).unsqueeze(0)
    with torch.no_grad():
        feats = model.features(x)
        if spec.layer == "pool5":
            # (C, H, W) -> row-major (H, W, C) flattening.
            out = torch.relu(feats)[0].permute(1, 2, 0).reshape(-1)
        else:
            h = model.avgpool(feats)
            h = torch.flatten(h, 1)
            wanted = {"fc6": 0, "fc7": 1, "fc8": 2}[spec.layer]
            seen = -1
            out = None
            for module in model.classifier:
                h = module(h)
                if isinstance(module, nn.Linear):
                    seen += 1
                    if seen == wanted:
                        out = torch.relu(h)[0]
                        break
            if out is None:
                raise ValueError(f"layer {spec.layer!r} not found in classifier")
    vector = out.numpy().astype(np.float64)
    expected = spec.model_spec.layer_length(spec.layer)
    if vector.shape != (expected,):
        raise ValueError(
            f"layer {spec.layer} produced {vector.shape}, expected ({expected},)"
        )
    norm = np.linalg.norm(vector)
    if norm == 0.0:
        raise ValueError(f"layer {spec.layer} produced an all-zero activation")
    return (vector / norm).astype(np.float32)
