"""Finite-difference verification of every method's batch objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import model as mdl
from .data import Batch
from .methods import Method, TrainConfig, method_batch_losses

# (method, fine-tune stage) pairs covering every distinct objective
OBJECTIVES = [(m, 1) for m in (Method.FineTune,)] + [(m, 2) for m in Method]

SMALL_MODEL = dict(backbone_widths=(24, 16), proj_dim=6, head_hidden=8)


@dataclass
class FlatLoss:
    """A method's total batch loss as a function of one flat parameter vector.

    Gradient-stopped quantities (sharpened targets, detached weights) are
    frozen at their values for the base point, and the method's rng is
    re-seeded on every call, so the function is deterministic and its
    derivative is exactly what reverse mode computes.
    """

    method: Method
    stage: int
    params: mdl.ModelParameters
    labeled: Batch
    unlabeled: Batch
    tcfg: TrainConfig
    rng_seed: int = 0
    sharpen_weight: float = 1.0

    def __post_init__(self):
        self.names = list(self.params.arrays)
        self.shapes = [self.params.arrays[k].shape for k in self.names]
        self.sizes = [int(np.prod(s)) for s in self.shapes]
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)])
        self.memo: dict = {}

    def point(self) -> np.ndarray:
        return np.concatenate([self.params.arrays[k].ravel() for k in self.names])

    def unflatten(self, theta: ad.Tensor) -> dict[str, ad.Tensor]:
        out = {}
        for name, shape, lo, hi in zip(self.names, self.shapes, self.offsets[:-1], self.offsets[1:]):
            out[name] = ad.reshape(ad.getitem(theta, slice(int(lo), int(hi))), shape)
        return out

    def __call__(self, theta: ad.Tensor) -> ad.Tensor:
        rng = np.random.default_rng(self.rng_seed)
        losses = method_batch_losses(self.method, self.unflatten(theta), self.params.config, self.labeled,
                                     self.unlabeled, self.tcfg, rng, self.sharpen_weight, self.stage,
                                     self.memo)
        return losses.total

    def sample_coords(self, rng: np.random.Generator, per_tensor: int = 3) -> list[int]:
        """A few random coordinates from every parameter tensor."""
        coords = []
        for lo, size in zip(self.offsets[:-1], self.sizes):
            k = min(per_tensor, size)
            coords.extend(int(lo) + rng.choice(size, size=k, replace=False))
        return coords


def random_batches(rng: np.random.Generator, B: int, C: int, H: int = 16) -> tuple[Batch, Batch]:
    def batch():
        return Batch(rng.random((B, H, H)), rng.integers(C, size=B))
    return batch(), batch()


def check_objective(method: Method, stage: int, seed: int, h: float = 1e-5, B: int = 4,
                    per_tensor: int = 3, kink_margin: float | None = None, max_draws: int = 200) -> float:
    """Max relative gradient error of one objective at one random point.

    Points where some relu input lies within ``kink_margin`` (default 10 h)
    of 0 are redrawn, so the central differences never straddle a kink.
    """
    kink_margin = 10 * h if kink_margin is None else kink_margin
    rng = np.random.default_rng([seed, 0xC4EC])
    cfg = mdl.ModelConfig(**SMALL_MODEL)
    tcfg = TrainConfig(eta=0.7, eta1=0.8, eta2=0.6, temp=0.5)
    for _ in range(max_draws):
        params = mdl.init_params(cfg, int(rng.integers(2**31)))
        # non-zero biases so the point is generic
        for k, v in params.arrays.items():
            if k.endswith(".b"):
                params.arrays[k] = rng.normal(scale=0.1, size=v.shape)
        labeled, unlabeled = random_batches(rng, B, cfg.C)
        f = FlatLoss(method, stage, params, labeled, unlabeled, tcfg, rng_seed=seed, sharpen_weight=0.9)
        with ad.relu_margin() as margin:
            f(ad.constant(f.point()))
        if margin.value > kink_margin:
            return ad.grad_check(f, f.point(), h=h, coords=f.sample_coords(rng, per_tensor))
    raise ValueError(f"no point with relu margin > {kink_margin} in {max_draws} draws")
