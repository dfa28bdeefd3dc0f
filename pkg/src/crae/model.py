"""MLP backbone with a semantic head, an auxiliary head and one rotation head per class.

Rotation heads read a low-dimensional projection of the shared features.  An
extra unconditional rotation head (``rot_single``) serves the S4L and
fine-tune baselines.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

ANGLES = 4


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 256
    backbone_widths: tuple[int, ...] = (256, 128, 64)
    C: int = 4
    K: int = ANGLES
    proj_dim: int = 16
    head_hidden: int = 32

    def __post_init__(self):
        widths = (self.input_dim, *self.backbone_widths, self.C, self.K, self.proj_dim, self.head_hidden)
        if any(w <= 0 for w in widths) or not self.backbone_widths:
            raise ModelError(f"all widths must be positive: {self}")
        if self.proj_dim > self.backbone_widths[-1]:
            raise ModelError(f"proj_dim {self.proj_dim} exceeds feature width {self.backbone_widths[-1]}")

    @property
    def feature_dim(self) -> int:
        return self.backbone_widths[-1]


@dataclass
class ModelParameters:
    config: ModelConfig
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def leaves(self) -> dict[str, Tensor]:
        return {k: ad.parameter(v) for k, v in self.arrays.items()}

    def constants(self) -> dict[str, Tensor]:
        return {k: ad.constant(v) for k, v in self.arrays.items()}

    def copy(self) -> "ModelParameters":
        return ModelParameters(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def count(self, prefix: str = "") -> int:
        return sum(v.size for k, v in self.arrays.items() if k.startswith(prefix))


@dataclass
class ForwardOutput:
    features: Tensor   # (b, F)
    p_y: Tensor        # (b, C)
    p_aux: Tensor      # (b, C)
    head_dists: Tensor  # (b, C, K)
    single_dist: Tensor  # (b, K), unconditional rotation head


def _layer_shapes(cfg: ModelConfig) -> dict[str, tuple[int, int]]:
    shapes: dict[str, tuple[int, int]] = {}
    fan_in = cfg.input_dim
    for i, w in enumerate(cfg.backbone_widths):
        shapes[f"backbone.{i}"] = (w, fan_in)
        fan_in = w
    F = cfg.feature_dim
    shapes["semantic"] = (cfg.C, F)
    shapes["aux"] = (cfg.C, F)
    shapes["proj"] = (cfg.proj_dim, F)
    for k in range(cfg.C):
        shapes[f"rot.{k}.hidden"] = (cfg.head_hidden, cfg.proj_dim)
        shapes[f"rot.{k}.out"] = (cfg.K, cfg.head_hidden)
    shapes["rot_single.hidden"] = (cfg.head_hidden, cfg.proj_dim)
    shapes["rot_single.out"] = (cfg.K, cfg.head_hidden)
    return shapes


def init_layer(rng: np.random.Generator, out_dim: int, in_dim: int) -> tuple[np.ndarray, np.ndarray]:
    limit = np.sqrt(6.0 / (in_dim + out_dim))
    return rng.uniform(-limit, limit, size=(out_dim, in_dim)), np.zeros(out_dim)


def init_params(config: ModelConfig, seed: int) -> ModelParameters:
    """Glorot-uniform weights and zero biases, deterministic in ``seed``."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x1417]))
    arrays = {}
    for name, (o, i) in _layer_shapes(config).items():
        arrays[f"{name}.W"], arrays[f"{name}.b"] = init_layer(rng, o, i)
    return ModelParameters(config, arrays)


def reinit_layer(params: ModelParameters, name: str, seed: int) -> None:
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x2E1]))
    o, i = params.arrays[f"{name}.W"].shape
    params.arrays[f"{name}.W"], params.arrays[f"{name}.b"] = init_layer(rng, o, i)


def _dense(p: dict[str, Tensor], name: str, x: Tensor) -> Tensor:
    return ad.affine(p[f"{name}.W"], x, p[f"{name}.b"])


def _rotation_head(p: dict[str, Tensor], name: str, z: Tensor) -> Tensor:
    return ad.softmax(_dense(p, f"{name}.out", ad.relu(_dense(p, f"{name}.hidden", z))))


def forward(p: dict[str, Tensor], images, config: ModelConfig) -> ForwardOutput:
    """Run every head on a batch of images (n, H, W) or flattened (n, H*W).

    ``p`` maps parameter names to tensors, e.g. ``params.leaves()``.
    """
    x = images if isinstance(images, Tensor) else ad.constant(np.asarray(images, dtype=np.float64))
    if x.values.ndim == 3:
        x = ad.reshape(x, (x.shape[0], -1))
    if x.values.ndim != 2 or x.shape[1] != config.input_dim:
        raise ModelError(f"expected (n, {config.input_dim}) inputs, got {x.shape}")
    h = x
    for i in range(len(config.backbone_widths)):
        h = ad.relu(_dense(p, f"backbone.{i}", h))
    z = _dense(p, "proj", h)
    heads = [_rotation_head(p, f"rot.{k}", z) for k in range(config.C)]
    return ForwardOutput(
        features=h,
        p_y=ad.softmax(_dense(p, "semantic", h)),
        p_aux=ad.softmax(_dense(p, "aux", h)),
        head_dists=ad.stack(heads, axis=1),
        single_dist=_rotation_head(p, "rot_single", z),
    )


def semantic_forward(p: dict[str, Tensor], images, config: ModelConfig) -> tuple[Tensor, Tensor]:
    """Backbone plus semantic and auxiliary heads only; the cheap path for evaluation."""
    x = ad.constant(np.asarray(images, dtype=np.float64).reshape(len(images), -1))
    h = x
    for i in range(len(config.backbone_widths)):
        h = ad.relu(_dense(p, f"backbone.{i}", h))
    return ad.softmax(_dense(p, "semantic", h)), ad.softmax(_dense(p, "aux", h))


def argmax_lowest(probs: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximal index, i.e. ties go to the lowest class id
    return np.argmax(np.asarray(probs), axis=-1)


def test_predict(params: ModelParameters, images, use_aux: bool) -> np.ndarray:
    p_y, p_aux = semantic_forward(params.constants(), images, params.config)
    return argmax_lowest((p_aux if use_aux else p_y).values)


def save_checkpoint(params: ModelParameters, path: str | Path) -> None:
    """One line per tensor: ``name shape v0 v1 ...`` with shape written as ``AxB``."""
    lines = []
    for name, v in params.arrays.items():
        shape = "x".join(str(s) for s in v.shape)
        lines.append(" ".join([name, shape] + [f"{x:.17g}" for x in v.ravel()]))
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path: str | Path, config: ModelConfig) -> ModelParameters:
    expected = init_params(config, 0).arrays
    arrays = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        name, shape, *vals = line.split()
        dims = tuple(int(s) for s in shape.split("x"))
        if name not in expected or expected[name].shape != dims:
            raise ModelError(f"{path}: unexpected tensor {name} with shape {dims}")
        arrays[name] = np.array([float(v) for v in vals]).reshape(dims)
    missing = set(expected) - set(arrays)
    if missing:
        raise ModelError(f"{path}: missing tensors {sorted(missing)}")
    return ModelParameters(config, {k: arrays[k] for k in expected})
