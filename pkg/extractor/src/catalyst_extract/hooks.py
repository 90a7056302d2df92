"""Model registry: construction, hook points, and head extraction.

The registered hook point is the final pre-pooling stage of each
architecture, the layer whose channel statistics carry the usable
ID/OOD signal. Where the stored module output precedes the activation
function (densely connected nets), a ReLU is applied after capture so
dumped maps are always non-negative.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn
from torchvision import models


@dataclass(frozen=True)
class HookSpec:
    builder: str  # torchvision constructor name
    module_path: str  # default capture point
    apply_relu: bool  # capture precedes the activation
    head_path: str  # final linear layer


REGISTRY: dict[str, HookSpec] = {
    "resnet18": HookSpec("resnet18", "layer4", False, "fc"),
    "resnet34": HookSpec("resnet34", "layer4", False, "fc"),
    "resnet50": HookSpec("resnet50", "layer4", False, "fc"),
    "resnet101": HookSpec("resnet101", "layer4", False, "fc"),
    "densenet121": HookSpec("densenet121", "features", True, "classifier"),
    "densenet161": HookSpec("densenet161", "features", True, "classifier"),
    "densenet169": HookSpec("densenet169", "features", True, "classifier"),
    "densenet201": HookSpec("densenet201", "features", True, "classifier"),
    "mobilenet_v2": HookSpec("mobilenet_v2", "features", False, "classifier.1"),
}


def hook_spec(model_name: str) -> HookSpec:
    key = model_name.lower()
    if key not in REGISTRY:
        raise ValueError(f"unknown model {model_name!r}; registered: {', '.join(sorted(REGISTRY))}")
    return REGISTRY[key]


def build_model(model_name: str, pretrained: bool, seed: int = 0) -> nn.Module:
    """Construct the torchvision model; random init is seeded for reproducibility."""
    spec = hook_spec(model_name)
    ctor = getattr(models, spec.builder)
    if pretrained:
        model = ctor(weights="DEFAULT")
    else:
        torch.manual_seed(seed)
        model = ctor(weights=None)
    model.eval()
    return model


def resolve_module(model: nn.Module, path: str) -> nn.Module:
    node: nn.Module = model
    for part in path.split("."):
        children = dict(node.named_children())
        if part not in children:
            raise ValueError(f"module path {path!r} not found at {part!r}; "
                             f"available: {', '.join(children) or '(leaf)'}")
        node = children[part]
    return node


def extract_head(model: nn.Module, model_name: str):
    """Return (weights (n_channels, n_classes), bias (n_classes,)) as numpy arrays."""
    spec = hook_spec(model_name)
    layer = resolve_module(model, spec.head_path)
    if not isinstance(layer, nn.Linear):
        raise ValueError(f"head module {spec.head_path!r} of {model_name} is not a linear layer")
    with torch.no_grad():
        # torch stores (out_features, in_features); the dump is channel-major.
        weights = layer.weight.detach().cpu().numpy().T.copy()
        bias = layer.bias.detach().cpu().numpy().copy()
    return weights, bias


class MapCapture:
    """Forward hook holding the most recent batch's pre-pooling map."""

    def __init__(self, module: nn.Module, apply_relu: bool):
        self.apply_relu = apply_relu
        self.value: torch.Tensor | None = None
        self._handle = module.register_forward_hook(self._hook)

    def _hook(self, module, inputs, output):
        if not torch.is_tensor(output):
            raise ValueError("hooked module did not return a tensor")
        if output.dim() != 4:
            raise ValueError(f"hooked layer output must be 4-D (batch, channels, k, k), got {tuple(output.shape)}")
        if output.shape[2] != output.shape[3]:
            raise ValueError(f"hooked layer output is not square: {tuple(output.shape)}")
        value = output.detach()
        if self.apply_relu:
            value = torch.relu(value)
        self.value = value

    def take(self) -> torch.Tensor:
        if self.value is None:
            raise ValueError("hook never fired; wrong layer selector?")
        value = self.value
        self.value = None
        return value

    def remove(self):
        self._handle.remove()
