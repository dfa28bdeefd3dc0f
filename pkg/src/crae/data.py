"""Synthetic rotation-sensitive glyph benchmark.

Each class is a thin letter-like stroke figure (a pen walk of straight
segments), built so that no class is fixed by a quarter turn and no two classes are
quarter-turn copies of one another.  Rotations are exact pixel permutations.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

ANGLES = 4
MIN_DISTANCE_FRAC = 0.15


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class GlyphTemplate:
    class_id: int
    mask: np.ndarray  # (H, W) bool


@dataclass
class Split:
    """Labeled / unlabeled / test partition; images are (n, H, W), labels (n,)."""

    labeled_x: np.ndarray
    labeled_y: np.ndarray
    unlabeled_x: np.ndarray
    unlabeled_y: np.ndarray  # hidden from training, diagnostics only
    test_x: np.ndarray
    test_y: np.ndarray
    labeled_idx: np.ndarray
    unlabeled_idx: np.ndarray
    test_idx: np.ndarray

    @property
    def num_classes(self) -> int:
        return int(max(self.labeled_y.max(initial=0), self.unlabeled_y.max(initial=0),
                       self.test_y.max(initial=0))) + 1


@dataclass
class Batch:
    images: np.ndarray  # (n, H, W)
    labels: np.ndarray  # (n,) int

    def __len__(self) -> int:
        return len(self.labels)


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


def rotate90(image: np.ndarray, k: int) -> np.ndarray:
    """Rotate a square image by ``k`` quarter turns counter-clockwise.

    For ``k == 1``: ``out[r, c] = in[c, W-1-r]``.  Works on stacks too,
    rotating the last two axes.
    """
    image = np.asarray(image)
    if image.ndim < 2 or image.shape[-1] != image.shape[-2]:
        raise DataError(f"rotate90 needs square images, got shape {image.shape}")
    return np.rot90(image, k % ANGLES, axes=(-2, -1)).copy()


def rotation_quadruple(image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """All four rotations of ``image`` stacked in order z = 0..3, with their angle labels."""
    return np.stack([rotate90(image, z) for z in range(ANGLES)]), np.arange(ANGLES)


def rotate_batch(images: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Expand (n, H, W) into (4n, H, W) rotated copies, example-major.

    Returns the copies, their angle indices and the index of each source row.
    """
    n = len(images)
    rotated = np.stack([rotate90(images, z) for z in range(ANGLES)], axis=1)
    return (rotated.reshape((n * ANGLES,) + images.shape[1:]),
            np.tile(np.arange(ANGLES), n),
            np.repeat(np.arange(n), ANGLES))


def mix_images(x_target: np.ndarray, x_other: np.ndarray, alpha) -> np.ndarray:
    """Convex pixel mix ``alpha*x_target + (1-alpha)*x_other`` with alpha in [0.5, 1].

    ``alpha`` may be a scalar or one value per image in a stack.
    """
    x_target = np.asarray(x_target, dtype=np.float64)
    x_other = np.asarray(x_other, dtype=np.float64)
    if x_target.shape != x_other.shape:
        raise DataError(f"mix shape mismatch {x_target.shape} vs {x_other.shape}")
    alpha = np.asarray(alpha, dtype=np.float64)
    if np.any(alpha < 0.5) or np.any(alpha > 1.0):
        raise DataError(f"alpha must lie in [0.5, 1], got {alpha}")
    if alpha.ndim == 1:
        alpha = alpha.reshape((-1,) + (1,) * (x_target.ndim - 1))
    return alpha * x_target + (1.0 - alpha) * x_other


# ---------------------------------------------------------------------------
# templates


def hamming(a: np.ndarray, b: np.ndarray) -> int:
    return int(np.count_nonzero(a != b))


def rotation_asymmetry(mask: np.ndarray) -> int:
    return min(hamming(mask, rotate90(mask, k)) for k in range(1, ANGLES))


def rotated_distance(a: np.ndarray, b: np.ndarray) -> int:
    return min(hamming(a, rotate90(b, k)) for k in range(ANGLES))


_HEADINGS = ((0, 1), (1, 0), (0, -1), (-1, 0))


def _draw_strokes(rng: np.random.Generator, size: int, width: int) -> np.ndarray:
    """Pen walk of 3-5 straight segments turning at right angles, with one optional spur.

    Produces letter-like F/L/P/J figures on a ``size`` x ``size`` canvas.
    """
    canvas = np.zeros((size, size), dtype=bool)
    r, c = (int(v) for v in rng.integers(size - width + 1, size=2))
    heading = int(rng.integers(4))
    visited = [(r, c)]
    for _ in range(int(rng.integers(3, 6))):
        dr, dc = _HEADINGS[heading]
        for _ in range(int(rng.integers(3, 9))):
            nr, nc = r + dr, c + dc
            if not (0 <= nr <= size - width and 0 <= nc <= size - width):
                break
            r, c = nr, nc
            visited.append((r, c))
        heading = (heading + (1 if rng.random() < 0.5 else 3)) % 4
    if rng.random() < 0.5:
        # a spur from the middle of the path, like the bar of an F
        r, c = visited[len(visited) // 2]
        dr, dc = _HEADINGS[int(rng.integers(4))]
        for _ in range(int(rng.integers(2, 5))):
            if not (0 <= r + dr <= size - width and 0 <= c + dc <= size - width):
                break
            r, c = r + dr, c + dc
            visited.append((r, c))
    for r, c in visited:
        canvas[r:r + width, c:c + width] = True
    return canvas


def make_templates(C: int, H: int = 16, W: int = 16, seed: int = 0, stroke_width: int = 1,
                   max_tries: int = 10_000) -> list[GlyphTemplate]:
    """Draw ``C`` stroke glyphs meeting the rotation-asymmetry and distinctness checks."""
    if C < 2:
        raise DataError(f"need at least 2 classes, got {C}")
    if H < 8 or W < 8:
        raise DataError(f"images must be at least 8x8, got {H}x{W}")
    if H != W:
        raise DataError("templates must be square to be rotated")
    size = H - 4
    offset = 2
    threshold = MIN_DISTANCE_FRAC * H * W
    rng = _rng(seed, 0x7E3)
    masks: list[np.ndarray] = []
    tries = 0
    while len(masks) < C:
        tries += 1
        if tries > max_tries:
            raise DataError(
                f"could not draw {C} distinct asymmetric templates in {max_tries} tries "
                f"(H={H}, threshold={threshold:.1f} pixels, found {len(masks)})")
        mask = np.zeros((H, W), dtype=bool)
        mask[offset:offset + size, offset:offset + size] = _draw_strokes(rng, size, stroke_width)
        if rotation_asymmetry(mask) < threshold:
            continue
        if any(rotated_distance(mask, m) < threshold for m in masks):
            continue
        masks.append(mask)
    return [GlyphTemplate(k, m) for k, m in enumerate(masks)]


# ---------------------------------------------------------------------------
# examples and splits


def generate_dataset(templates: list[GlyphTemplate], n_per_class: int, noise_rate: float = 0.05,
                     max_jitter: int = 2, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Render ``n_per_class`` noisy, jittered copies of every template.

    Returns images (n, H, W) in [0, 1] and labels (n,), class-major.
    """
    if not 0 <= noise_rate <= 0.2:
        raise DataError(f"noise rate must lie in [0, 0.2], got {noise_rate}")
    if not 0 <= max_jitter <= 3:
        raise DataError(f"jitter must lie in [0, 3], got {max_jitter}")
    rng = _rng(seed, 0xDA7A)
    H, W = templates[0].mask.shape
    n = n_per_class * len(templates)
    images = np.zeros((n, H, W))
    labels = np.repeat(np.arange(len(templates)), n_per_class)
    shifts = rng.integers(-max_jitter, max_jitter + 1, size=(n, 2))
    intensity = rng.uniform(0.7, 1.0, size=n)
    for i in range(n):
        mask = templates[labels[i]].mask
        dr, dc = shifts[i]
        shifted = np.zeros_like(mask)
        shifted[max(dr, 0):H + min(dr, 0), max(dc, 0):W + min(dc, 0)] = \
            mask[max(-dr, 0):H - max(dr, 0), max(-dc, 0):W - max(dc, 0)]
        images[i] = shifted * intensity[i]
    flips = rng.random((n, H, W)) < noise_rate
    noise = rng.random((n, H, W))
    images[flips] = noise[flips]
    return images, labels


def split_dataset(images: np.ndarray, labels: np.ndarray, n_labeled: int, n_test: int,
                  seed: int = 0) -> Split:
    """Class-balanced labeled set, a random test set, and everything else unlabeled."""
    C = int(labels.max()) + 1
    total = len(labels)
    if n_labeled % C != 0:
        raise DataError(f"n_labeled={n_labeled} is not divisible by {C} classes")
    if n_labeled <= 0 or n_test < 0 or n_labeled + n_test >= total:
        raise DataError(f"cannot take {n_labeled} labeled + {n_test} test from {total} examples")
    rng = _rng(seed, 0x5917)
    perm = rng.permutation(total)
    per_class = n_labeled // C
    labeled = []
    for c in range(C):
        members = perm[labels[perm] == c]
        if len(members) < per_class:
            raise DataError(f"class {c} has only {len(members)} examples, need {per_class}")
        labeled.extend(members[:per_class])
    labeled = np.sort(np.asarray(labeled))
    rest = perm[~np.isin(perm, labeled)]
    test = np.sort(rest[:n_test])
    unlabeled = np.sort(rest[n_test:])
    return Split(images[labeled], labels[labeled], images[unlabeled], labels[unlabeled],
                 images[test], labels[test], labeled, unlabeled, test)


def make_benchmark(C: int = 4, H: int = 16, n_per_class: int = 1260, n_labeled: int = 40,
                   n_test: int = 1000, noise_rate: float = 0.05, max_jitter: int = 2,
                   seed: int = 0) -> Split:
    templates = make_templates(C, H, H, seed)
    images, labels = generate_dataset(templates, n_per_class, noise_rate, max_jitter, seed)
    return split_dataset(images, labels, n_labeled, n_test, seed)


def batch_iterator(split: Split, B: int, seed: int, epoch: int) -> Iterator[tuple[Batch, Batch]]:
    """Yield (labeled, unlabeled) batches of size B for one epoch.

    The unlabeled set is shuffled once and consumed in order, dropping the
    remainder.  Labeled examples cycle through fresh permutations.  With no
    unlabeled data the epoch has ``max(1, |L| // B)`` steps and empty
    unlabeled batches.
    """
    n_l, n_u = len(split.labeled_y), len(split.unlabeled_y)
    if n_l == 0:
        raise DataError("split has no labeled examples")
    if B <= 0:
        raise DataError(f"batch size must be positive, got {B}")
    rng = _rng(seed, epoch, 0xBA7C)
    steps = n_u // B if n_u >= B else max(1, n_l // B)
    u_order = rng.permutation(n_u)
    need = steps * B
    cycles = -(-need // n_l)
    l_order = np.concatenate([rng.permutation(n_l) for _ in range(cycles)])
    empty = Batch(split.unlabeled_x[:0], split.unlabeled_y[:0])
    for s in range(steps):
        li = l_order[s * B:(s + 1) * B]
        lab = Batch(split.labeled_x[li], split.labeled_y[li])
        if n_u >= B:
            ui = u_order[s * B:(s + 1) * B]
            yield lab, Batch(split.unlabeled_x[ui], split.unlabeled_y[ui])
        else:
            yield lab, empty


def write_pgm(image: np.ndarray, path: str | Path, maxval: int = 255) -> None:
    """Dump one image as a plain-text (P2) portable graymap."""
    image = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    H, W = image.shape
    levels = np.rint(image * maxval).astype(int)
    lines = ["P2", f"{W} {H}", str(maxval)]
    lines += [" ".join(str(v) for v in row) for row in levels]
    Path(path).write_text("\n".join(lines) + "\n")


def read_pgm(path: str | Path) -> np.ndarray:
    tokens = [t for line in Path(path).read_text().splitlines()
              for t in line.split("#", 1)[0].split()]
    if tokens[0] != "P2":
        raise DataError(f"{path}: not a plain PGM file")
    W, H, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    return np.array(tokens[4:4 + H * W], dtype=np.float64).reshape(H, W) / maxval
