"""Frozen CNN backbones producing one global-average-pooled feature vector per
patch.

The default is torchvision's pretrained ResNet-50 with the classifier head
removed.  `weights="random"` builds the same architecture with a seeded random
initialization instead -- still frozen and deterministic -- for offline smoke
runs and tests where pretrained weights cannot be downloaded.
"""

import numpy as np
import torch
from torchvision import models

# ImageNet normalization, matching the pretrained weights' training recipe.
_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)

SUPPORTED = ("resnet18", "resnet34", "resnet50")


class BackboneError(RuntimeError):
    pass


def load_backbone(name="resnet50", weights="pretrained", device="cpu", seed=0):
    """Return (feature_extractor_module, feature_dim), frozen and in eval mode."""
    if name not in SUPPORTED:
        raise BackboneError("unsupported backbone %r (choose from %s)" % (name, ", ".join(SUPPORTED)))
    ctor = getattr(models, name)
    try:
        if weights == "pretrained":
            model = ctor(weights="DEFAULT")
        elif weights == "random":
            torch.manual_seed(seed)
            model = ctor(weights=None)
        else:
            model = ctor(weights=None)
            state = torch.load(weights, map_location="cpu", weights_only=True)
            model.load_state_dict(state)
    except BackboneError:
        raise
    except Exception as e:
        raise BackboneError(
            "could not load %s weights (%s): %s; pass --weights random or a local .pth file"
            % (name, weights, e)
        )
    feature_dim = model.fc.in_features
    model.fc = torch.nn.Identity()  # keep the global-average-pooled features
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model.to(device), feature_dim


def patches_to_tensor(patches, device="cpu"):
    """Stack uint8 patches (HxW or HxWx3) into a normalized NCHW batch."""
    batch = []
    for p in patches:
        a = np.asarray(p, dtype=np.float32) / 255.0
        if a.ndim == 2:
            a = np.stack([a, a, a], axis=2)
        batch.append((a - _MEAN) / _STD)
    x = np.stack(batch).transpose(0, 3, 1, 2)
    return torch.from_numpy(np.ascontiguousarray(x)).to(device)


def embed_patches(model, patches, device="cpu", batch_size=8):
    """N patches -> (N, F) float32 embedding matrix."""
    outs = []
    with torch.no_grad():
        for start in range(0, len(patches), batch_size):
            x = patches_to_tensor(patches[start : start + batch_size], device)
            outs.append(model(x).cpu().numpy())
    return np.concatenate(outs, axis=0).astype(np.float32)
