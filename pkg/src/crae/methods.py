"""Losses and training loops for CRAE, CRAE+ and the baselines they are compared with.

The rotation-angle predictor of CRAE is a mixture of per-class rotation heads
weighted by the semantic classifier,

    p(z | x) = sum_k p(y = k | x) * R_k(x),

so the rotation loss on unlabeled images back-propagates into p(y | x).
Labeled rows replace p(y | x) by the one-hot ground truth.  CRAE+ adds a
sharpened pseudo-target for p(y | x) averaged over the four rotations, and
asks the heads to recover the rotation of an image mixed with a distractor.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import diagnostics as diag
from . import model as mdl
from .autodiff import Tensor
from .data import ANGLES, Batch, Split, batch_iterator, mix_images, rotate90, rotate_batch

log = logging.getLogger(__name__)


class MethodError(ValueError):
    pass


class Method(str, Enum):
    LabeledOnly = "LabeledOnly"
    RotAugSupervised = "RotAugSupervised"
    SharpenOnly = "SharpenOnly"
    FineTune = "FineTune"
    S4L = "S4L"
    CRAE = "CRAE"
    CRAEPlus = "CRAEPlus"
    EnsembleRandom = "EnsembleRandom"
    EnsembleIndependent = "EnsembleIndependent"
    CraeDetach = "CraeDetach"

    @classmethod
    def parse(cls, name: str) -> "Method":
        for m in cls:
            if m.value.lower() == name.lower():
                return m
        raise MethodError(f"unknown method {name!r}; choose from {[m.value for m in cls]}")


# methods whose conditional heads are mixed by class weights
CRAE_FAMILY = frozenset({Method.CRAE, Method.CRAEPlus, Method.EnsembleRandom,
                         Method.EnsembleIndependent, Method.CraeDetach})


@dataclass
class TrainConfig:
    eta: float = 1.0
    eta1: float = 1.0
    eta2: float = 1.0
    ramp_frac: float = 0.25
    temp: float = 0.5
    alpha_range: tuple[float, float] = (0.5, 1.0)
    lr: float = 0.002
    momentum: float = 0.9
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0
    use_aux: bool = True
    proj_dim: int = 16
    confusion_size: int = 512

    def __post_init__(self):
        if not 0 < self.temp <= 1:
            raise MethodError(f"temp must lie in (0, 1], got {self.temp}")
        for name in ("eta", "eta1", "eta2"):
            if getattr(self, name) < 0:
                raise MethodError(f"{name} must be non-negative")
        if not 0 <= self.ramp_frac <= 1:
            raise MethodError(f"ramp_frac must lie in [0, 1], got {self.ramp_frac}")
        lo, hi = self.alpha_range
        if not 0.5 <= lo <= hi <= 1:
            raise MethodError(f"alpha_range must sit inside [0.5, 1], got {self.alpha_range}")
        if self.epochs < 0 or self.batch_size <= 0:
            raise MethodError("epochs must be >= 0 and batch_size > 0")


ZERO = ad.constant(0.0)


@dataclass
class LossBreakdown:
    supervised_ce: Tensor = ZERO
    rotation_ce: Tensor = ZERO
    sharpen_ce: Tensor = ZERO
    aux_ce: Tensor = ZERO
    weights: dict[str, float] = field(default_factory=dict)
    total: Tensor = ZERO

    TERMS = ("supervised_ce", "rotation_ce", "sharpen_ce", "aux_ce")

    @classmethod
    def combine(cls, weights: dict[str, float], **terms: Tensor) -> "LossBreakdown":
        out = cls(**terms, weights=dict(weights))
        total = None
        for name in cls.TERMS:
            w = weights.get(name, 0.0)
            if w == 0.0 or name not in terms:
                continue
            part = terms[name] if w == 1.0 else ad.scale(terms[name], w)
            total = part if total is None else ad.add(total, part)
        out.total = ZERO if total is None else total
        return out

    def floats(self) -> dict[str, float]:
        vals = {name: getattr(self, name).item() for name in self.TERMS}
        vals["total"] = self.total.item()
        return vals

    def recomposed(self) -> float:
        return sum(self.weights.get(n, 0.0) * getattr(self, n).item() for n in self.TERMS)


# ---------------------------------------------------------------------------
# building blocks


def one_hot(idx: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((len(idx), n))
    out[np.arange(len(idx)), idx] = 1.0
    return out


def _check_dists(v: np.ndarray, axis: int, what: str) -> None:
    if np.any(v < -ad.DIST_TOL) or np.any(np.abs(v.sum(axis=axis) - 1.0) > ad.DIST_TOL):
        raise MethodError(f"{what} must hold probability distributions")


def marginalize(head_dists: Tensor, weights: Tensor) -> Tensor:
    """Mix the per-class angle distributions (b, C, K) by class weights (b, C)."""
    _check_dists(head_dists.values, -1, "head distributions")
    _check_dists(weights.values, -1, "class weights")
    return ad.mixture(weights, head_dists)


def sharpen(p: np.ndarray, T: float) -> np.ndarray:
    """Temperature sharpening ``p_i^(1/T) / sum_j p_j^(1/T)`` along the last axis."""
    if not 0 < T <= 1:
        raise MethodError(f"temperature must lie in (0, 1], got {T}")
    p = np.asarray(p, dtype=np.float64)
    if T == 1:
        return p.copy()
    # work in log space so tiny probabilities do not underflow to an all-zero row
    logp = np.log(np.maximum(p, 1e-300)) / T
    logp = np.where(p > 0, logp, -np.inf)
    logp -= logp.max(axis=-1, keepdims=True)
    e = np.exp(logp)
    return e / e.sum(axis=-1, keepdims=True)


def sharpen_target(p_y_rotated, T: float) -> np.ndarray:
    """Sharpened mean of one image's class predictions over its four rotations.

    Accepts (4, C) or a stack (n, 4, C).  The result is a plain array, so it
    enters the loss as a constant target.
    """
    v = p_y_rotated.values if isinstance(p_y_rotated, Tensor) else np.asarray(p_y_rotated)
    if v.shape[-2] != ANGLES:
        raise MethodError(f"expected {ANGLES} rotated predictions, got shape {v.shape}")
    _check_dists(v, -1, "rotated class predictions")
    return sharpen(v.mean(axis=-2), T)


def _frozen(key: str, compute: Callable[[], np.ndarray], memo: dict | None) -> Tensor:
    """A gradient-stopped value; with ``memo`` the first evaluation is cached by key.

    Caching lets finite-difference checks hold stop-gradient quantities fixed
    while the parameters move, matching what reverse mode differentiates.
    """
    if memo is None:
        return ad.constant(compute())
    if key not in memo:
        memo[key] = compute()
    return ad.constant(memo[key])


def baseline_weights(method: Method, p_y: Tensor, rng: np.random.Generator | None = None,
                     memo: dict | None = None) -> Tensor:
    """Class weights used to mix the rotation heads on unlabeled rows.

    EnsembleIndependent returns uniform weights: its heads are each scored
    separately and the per-head losses averaged with these weights.
    """
    b, C = p_y.shape
    if method in (Method.CRAE, Method.CRAEPlus):
        return p_y
    if method is Method.CraeDetach:
        return _frozen("detach_weights", lambda: p_y.values.copy(), memo)
    if method is Method.EnsembleRandom:
        if rng is None:
            raise MethodError("EnsembleRandom needs an rng")
        return ad.constant(one_hot(rng.integers(C, size=b), C))
    if method is Method.EnsembleIndependent:
        return ad.constant(np.full((b, C), 1.0 / C))
    raise MethodError(f"{method} does not mix conditional rotation heads")


def rotation_ce(method: Method, head_dists: Tensor, weights: Tensor, angles: np.ndarray) -> Tensor:
    target = ad.constant(one_hot(angles, ANGLES))
    if method is Method.EnsembleIndependent:
        C = head_dists.shape[1]
        parts = [ad.scale(ad.cross_entropy(ad.getitem(head_dists, (slice(None), k, slice(None))), target),
                          float(weights.values[0, k])) for k in range(C)]
        total = parts[0]
        for p in parts[1:]:
            total = ad.add(total, p)
        return total
    return ad.cross_entropy(marginalize(head_dists, weights), target)


def _pooled(parts: list[tuple[Tensor, int]]) -> Tensor:
    """Row-count weighted mean of per-part batch means."""
    n = sum(c for _, c in parts)
    out = None
    for t, c in parts:
        if c == 0:
            continue
        t = ad.scale(t, c / n) if c != n else t
        out = t if out is None else ad.add(out, t)
    return out if out is not None else ZERO


@dataclass
class _Prepared:
    """Rotated copies of one (labeled, unlabeled) batch pair."""

    l_rot: np.ndarray
    l_z: np.ndarray
    l_y: np.ndarray      # label of every labeled rotated row
    l_orig: np.ndarray   # rows of l_rot holding the unrotated images
    u_rot: np.ndarray
    u_z: np.ndarray
    u_src: np.ndarray
    n_u: int


def _prepare(labeled: Batch, unlabeled: Batch) -> _Prepared:
    if len(labeled) == 0:
        raise MethodError("labeled batch is empty")
    l_rot, l_z, l_src = rotate_batch(labeled.images)
    if len(unlabeled):
        u_rot, u_z, u_src = rotate_batch(unlabeled.images)
    else:
        u_rot, u_z, u_src = l_rot[:0], l_z[:0], l_src[:0]
    return _Prepared(l_rot, l_z, labeled.labels[l_src], np.flatnonzero(l_z == 0),
                     u_rot, u_z, u_src, len(unlabeled))


def _forward_all(p, cfg: mdl.ModelConfig, prep: _Prepared) -> tuple[mdl.ForwardOutput, int]:
    images = np.concatenate([prep.l_rot, prep.u_rot]) if len(prep.u_rot) else prep.l_rot
    return mdl.forward(p, images, cfg), len(prep.l_rot)


def _rows(t: Tensor, start: int, stop: int | None = None) -> Tensor:
    return ad.getitem(t, slice(start, stop))


def _labeled_terms(out: mdl.ForwardOutput, prep: _Prepared, C: int, use_aux: bool) -> dict[str, Tensor]:
    y = ad.constant(one_hot(prep.l_y[prep.l_orig], C))
    terms = {"supervised_ce": ad.cross_entropy(ad.getitem(out.p_y, prep.l_orig), y)}
    if use_aux:
        terms["aux_ce"] = ad.cross_entropy(ad.getitem(out.p_aux, prep.l_orig), y)
    return terms


def _conditional_rotation(method: Method, heads: Tensor, p_y_unl: Tensor | None, prep: _Prepared,
                          C: int, rng, memo) -> Tensor:
    """Rotation CE pooled over labeled rows (true-class head) and unlabeled rows (method weights)."""
    n_l = len(prep.l_rot)
    if method is Method.EnsembleIndependent:
        w_l = ad.constant(np.full((n_l, C), 1.0 / C))
    else:
        w_l = ad.constant(one_hot(prep.l_y, C))
    parts = [(rotation_ce(method, _rows(heads, 0, n_l), w_l, prep.l_z), n_l)]
    if p_y_unl is not None and len(prep.u_rot):
        w_u = baseline_weights(method, p_y_unl, rng, memo)
        parts.append((rotation_ce(method, _rows(heads, n_l), w_u, prep.u_z), len(prep.u_rot)))
    return _pooled(parts)


# ---------------------------------------------------------------------------
# per-method batch objectives


def crae_batch_losses(p: dict[str, Tensor], cfg: mdl.ModelConfig, labeled: Batch, unlabeled: Batch,
                      tcfg: TrainConfig, method: Method = Method.CRAE,
                      rng: np.random.Generator | None = None, memo: dict | None = None) -> LossBreakdown:
    """CRAE objective, or one of its ensemble/detach ablations via ``method``.

    total = supervised_ce + eta * rotation_ce + aux_ce
    """
    prep = _prepare(labeled, unlabeled)
    out, n_l = _forward_all(p, cfg, prep)
    terms = _labeled_terms(out, prep, cfg.C, tcfg.use_aux)
    p_y_unl = _rows(out.p_y, n_l) if len(prep.u_rot) else None
    terms["rotation_ce"] = _conditional_rotation(method, out.head_dists, p_y_unl, prep, cfg.C, rng, memo)
    weights = {"supervised_ce": 1.0, "rotation_ce": tcfg.eta, "aux_ce": 1.0 if tcfg.use_aux else 0.0}
    return LossBreakdown.combine(weights, **terms)


def _distractors(rot: np.ndarray, src_images: np.ndarray, rng: np.random.Generator,
                 alpha_range: tuple[float, float]) -> tuple[np.ndarray, np.ndarray]:
    """Mix each rotated row with a random batch image under a random rotation."""
    n = len(rot)
    if n == 0:
        return rot, np.zeros(0)
    pick = rng.integers(len(src_images), size=n)
    turns = rng.integers(ANGLES, size=n)
    alpha = rng.uniform(alpha_range[0], alpha_range[1], size=n)
    others = np.stack([rotate90(src_images[j], k) for j, k in zip(pick, turns)])
    return mix_images(rot, others, alpha), alpha


def craeplus_batch_losses(p: dict[str, Tensor], cfg: mdl.ModelConfig, labeled: Batch, unlabeled: Batch,
                          tcfg: TrainConfig, rng: np.random.Generator, sharpen_weight: float = 1.0,
                          memo: dict | None = None, alpha_range: tuple[float, float] | None = None
                          ) -> LossBreakdown:
    """CRAE+ objective.

    total = supervised_ce + eta1 * rotation_ce + sharpen_weight * eta2 * sharpen_ce + aux_ce

    ``rotation_ce`` scores the heads on mixed images while the class weights
    come from the unmixed rotated copies.  ``sharpen_weight`` carries the
    warm-up ramp.
    """
    prep = _prepare(labeled, unlabeled)
    out, n_l = _forward_all(p, cfg, prep)
    terms = _labeled_terms(out, prep, cfg.C, tcfg.use_aux)
    alpha_range = alpha_range or tcfg.alpha_range
    l_mix, _ = _distractors(prep.l_rot, labeled.images, rng, alpha_range)
    u_mix, _ = _distractors(prep.u_rot, unlabeled.images, rng, alpha_range)
    mixed = mdl.forward(p, np.concatenate([l_mix, u_mix]) if len(u_mix) else l_mix, cfg)
    p_y_unl = None
    if len(prep.u_rot):
        p_y_unl = _rows(out.p_y, n_l)
        n_u = prep.n_u
        target = _frozen("sharpen_target", lambda: np.repeat(sharpen_target(
            p_y_unl.values.reshape(n_u, ANGLES, cfg.C), tcfg.temp), ANGLES, axis=0), memo)
        terms["sharpen_ce"] = ad.cross_entropy(p_y_unl, target)
    terms["rotation_ce"] = _conditional_rotation(Method.CRAEPlus, mixed.head_dists, p_y_unl, prep,
                                                 cfg.C, rng, memo)
    weights = {"supervised_ce": 1.0, "rotation_ce": tcfg.eta1,
               "sharpen_ce": sharpen_weight * tcfg.eta2 if "sharpen_ce" in terms else 0.0,
               "aux_ce": 1.0 if tcfg.use_aux else 0.0}
    return LossBreakdown.combine(weights, **terms)


def supervised_batch_losses(p, cfg: mdl.ModelConfig, labeled: Batch, unlabeled: Batch, tcfg: TrainConfig,
                            method: Method, sharpen_weight: float = 1.0, memo: dict | None = None
                            ) -> LossBreakdown:
    """LabeledOnly, RotAugSupervised and SharpenOnly: a single classifier, no rotation heads."""
    if len(labeled) == 0:
        raise MethodError("labeled batch is empty")
    if method is Method.LabeledOnly:
        out = mdl.forward(p, labeled.images, cfg)
        y = ad.constant(one_hot(labeled.labels, cfg.C))
        return LossBreakdown.combine({"supervised_ce": 1.0}, supervised_ce=ad.cross_entropy(out.p_y, y))
    prep = _prepare(labeled, unlabeled)
    use_unl = method is Method.SharpenOnly and len(prep.u_rot) > 0
    out, n_l = _forward_all(p, cfg, prep) if use_unl else (mdl.forward(p, prep.l_rot, cfg), len(prep.l_rot))
    y = ad.constant(one_hot(prep.l_y, cfg.C))
    terms = {"supervised_ce": ad.cross_entropy(_rows(out.p_y, 0, n_l), y)}
    weights = {"supervised_ce": 1.0}
    if use_unl:
        p_y_unl = _rows(out.p_y, n_l)
        target = _frozen("sharpen_target", lambda: np.repeat(sharpen_target(
            p_y_unl.values.reshape(prep.n_u, ANGLES, cfg.C), tcfg.temp), ANGLES, axis=0), memo)
        terms["sharpen_ce"] = ad.cross_entropy(p_y_unl, target)
        weights["sharpen_ce"] = sharpen_weight * tcfg.eta2
    return LossBreakdown.combine(weights, **terms)


def s4l_batch_losses(p, cfg: mdl.ModelConfig, labeled: Batch, unlabeled: Batch, tcfg: TrainConfig
                     ) -> LossBreakdown:
    """Multi-task baseline: supervised CE plus an unconditional rotation head on every rotated row."""
    prep = _prepare(labeled, unlabeled)
    out, _ = _forward_all(p, cfg, prep)
    y = ad.constant(one_hot(prep.l_y[prep.l_orig], cfg.C))
    z = np.concatenate([prep.l_z, prep.u_z])
    return LossBreakdown.combine(
        {"supervised_ce": 1.0, "rotation_ce": tcfg.eta},
        supervised_ce=ad.cross_entropy(ad.getitem(out.p_y, prep.l_orig), y),
        rotation_ce=ad.cross_entropy(out.single_dist, ad.constant(one_hot(z, ANGLES))))


def finetune_batch_losses(p, cfg: mdl.ModelConfig, labeled: Batch, unlabeled: Batch, stage: int
                          ) -> LossBreakdown:
    """Stage 1: rotation pretext on all images.  Stage 2: supervised CE on labeled images."""
    if stage == 1:
        prep = _prepare(labeled, unlabeled)
        out, _ = _forward_all(p, cfg, prep)
        z = np.concatenate([prep.l_z, prep.u_z])
        return LossBreakdown.combine(
            {"rotation_ce": 1.0},
            rotation_ce=ad.cross_entropy(out.single_dist, ad.constant(one_hot(z, ANGLES))))
    if stage == 2:
        return supervised_batch_losses(p, cfg, labeled, unlabeled, TrainConfig(), Method.LabeledOnly)
    raise MethodError(f"fine-tune stage must be 1 or 2, got {stage}")


def method_batch_losses(method: Method, p, cfg: mdl.ModelConfig, labeled: Batch, unlabeled: Batch,
                        tcfg: TrainConfig, rng: np.random.Generator | None = None, sharpen_weight: float = 1.0,
                        stage: int = 2, memo: dict | None = None) -> LossBreakdown:
    """Dispatch to the batch objective of ``method``."""
    method = Method(method)
    if method in (Method.LabeledOnly, Method.RotAugSupervised, Method.SharpenOnly):
        return supervised_batch_losses(p, cfg, labeled, unlabeled, tcfg, method, sharpen_weight, memo)
    if method is Method.S4L:
        return s4l_batch_losses(p, cfg, labeled, unlabeled, tcfg)
    if method is Method.FineTune:
        return finetune_batch_losses(p, cfg, labeled, unlabeled, stage)
    if method is Method.CRAEPlus:
        return craeplus_batch_losses(p, cfg, labeled, unlabeled, tcfg, rng, sharpen_weight, memo)
    if method in CRAE_FAMILY:
        return crae_batch_losses(p, cfg, labeled, unlabeled, tcfg, method, rng, memo)
    raise MethodError(f"unknown method {method}")


def unlabeled_rotation_loss(method: Method, p, cfg: mdl.ModelConfig, unlabeled: Batch,
                            rng: np.random.Generator | None = None) -> Tensor:
    """The rotation CE contributed by unlabeled rows alone, as each method defines it."""
    method = Method(method)
    u_rot, u_z, _ = rotate_batch(unlabeled.images)
    out = mdl.forward(p, u_rot, cfg)
    if method in (Method.S4L, Method.FineTune):
        return ad.cross_entropy(out.single_dist, ad.constant(one_hot(u_z, ANGLES)))
    if method in CRAE_FAMILY:
        return rotation_ce(method, out.head_dists, baseline_weights(method, out.p_y, rng), u_z)
    raise MethodError(f"{method} has no unlabeled rotation loss")


# ---------------------------------------------------------------------------
# training


def uses_aux(method: Method, tcfg: TrainConfig) -> bool:
    return tcfg.use_aux and Method(method) in CRAE_FAMILY


def model_config_for(split: Split, tcfg: TrainConfig, **overrides) -> mdl.ModelConfig:
    H, W = split.labeled_x.shape[1:]
    return mdl.ModelConfig(input_dim=H * W, C=split.num_classes, proj_dim=tcfg.proj_dim, **overrides)


def ramp(step: int, total_steps: int, frac: float) -> float:
    if frac <= 0 or total_steps <= 0:
        return 1.0
    return min(1.0, step / (frac * total_steps))


def _steps_per_epoch(split: Split, B: int) -> int:
    n_u, n_l = len(split.unlabeled_y), len(split.labeled_y)
    return n_u // B if n_u >= B else max(1, n_l // B)


class TrainingError(RuntimeError):
    pass


def confusion_set(split: Split, tcfg: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    """The fixed subsample of the unlabeled pool used for head specialization.

    Falls back to the labeled set when there is no unlabeled data.
    """
    n_conf = min(tcfg.confusion_size, len(split.unlabeled_y))
    if not n_conf:
        return split.labeled_x, split.labeled_y
    rng = np.random.default_rng(np.random.SeedSequence([tcfg.seed, 0xC0F]))
    idx = np.sort(rng.choice(len(split.unlabeled_y), size=n_conf, replace=False))
    return split.unlabeled_x[idx], split.unlabeled_y[idx]


def train(method: Method, split: Split, model_config: mdl.ModelConfig | None, tcfg: TrainConfig
          ) -> tuple[mdl.ModelParameters, list[diag.MetricsRecord]]:
    """Train ``method`` for ``tcfg.epochs`` epochs; one MetricsRecord per epoch plus epoch 0.

    Deterministic in ``tcfg.seed``.  Epoch 0 describes the untrained model.
    """
    method = Method(method)
    cfg = model_config or model_config_for(split, tcfg)
    seed = tcfg.seed
    params = mdl.init_params(cfg, seed)
    opt = ad.SGD(tcfg.lr, tcfg.momentum)
    loss_rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1055]))
    conf_x, conf_y = confusion_set(split, tcfg)
    aux = uses_aux(method, tcfg)
    steps = _steps_per_epoch(split, tcfg.batch_size)
    total_steps = steps * tcfg.epochs
    pretext_epochs = tcfg.epochs // 2 if method is Method.FineTune else 0

    def record(epoch: int, sums: dict[str, float], n: int) -> diag.MetricsRecord:
        avg = {k: v / n for k, v in sums.items()} if n else dict.fromkeys(sums, 0.0)
        try:
            diagonal = diag.diagonality(diag.head_confusion(params, conf_x, conf_y))
        except diag.DiagnosticsError:
            diagonal = float("nan")
        return diag.MetricsRecord(
            epoch, avg["supervised_ce"], avg["rotation_ce"], avg["sharpen_ce"], avg["aux_ce"],
            avg["total"], diag.evaluate_error(params, split.test_x, split.test_y, aux), diagonal)

    keys = ("supervised_ce", "rotation_ce", "sharpen_ce", "aux_ce", "total")
    records = [record(0, dict.fromkeys(keys, 0.0), 0)]
    step = 0
    for epoch in range(1, tcfg.epochs + 1):
        stage = 1 if epoch <= pretext_epochs else 2
        if method is Method.FineTune and stage == 2 and epoch == pretext_epochs + 1:
            mdl.reinit_layer(params, "semantic", seed)
            opt = ad.SGD(tcfg.lr, tcfg.momentum)
        sums = dict.fromkeys(keys, 0.0)
        n = 0
        for labeled, unlabeled in batch_iterator(split, tcfg.batch_size, seed, epoch):
            leaves = params.leaves()
            losses = method_batch_losses(method, leaves, cfg, labeled, unlabeled, tcfg, loss_rng,
                                         ramp(step, total_steps, tcfg.ramp_frac), stage)
            names = list(leaves)
            grads = ad.backward(losses.total, [leaves[k] for k in names])
            params.arrays = opt.step(params.arrays, dict(zip(names, grads)))
            if not all(np.all(np.isfinite(v)) for v in params.arrays.values()):
                raise TrainingError(f"{method.value}: non-finite parameters at epoch {epoch}, step {step}")
            for k, v in losses.floats().items():
                sums[k] += v
            n += 1
            step += 1
        records.append(record(epoch, sums, n))
        log.debug("%s seed=%d epoch=%d err=%.4f diag=%.3f", method.value, seed, epoch,
                  records[-1].test_error, records[-1].diagonality)
    return params, records
