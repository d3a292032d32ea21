"""Synthetic wild-background multi-label pattern dataset.

Each image shows one to three outlined "garment" patches, each filled with the
texture of its label, composited over a noisy background that also carries
translucent, unlabeled distractor textures drawn from the same pattern
families.  Targets list the garment labels only.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch
from PIL import Image

from .patterns import RENDERERS, smooth_noise

log = logging.getLogger(__name__)

DEFAULT_LABELS = (
    "Solid",
    "Plaid",
    "Floral",
    "Stripe",
    "Check",
    "Graphic",
    "Tie Dye",
    "Animal",
    "Words/Letters",
    "Dot",
    "Paisley",
)

MAJORITY_THRESHOLD = 0.05
MIN_SAMPLES = 10
MAX_DRAWS = 100
TEXTURE_SCALE = 0.6


@dataclass(frozen=True)
class LabelVocabulary:
    names: tuple[str, ...] = DEFAULT_LABELS

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ValueError("label names must be unique")

    def __len__(self) -> int:
        return len(self.names)

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"label {name!r} not in vocabulary") from None


def build_vocabulary() -> LabelVocabulary:
    return LabelVocabulary(DEFAULT_LABELS)


def default_label_frequencies() -> tuple[float, ...]:
    """Per-label inclusion rates in vocabulary order.

    Two geometric runs: a head of Solid/Stripe/Animal decaying by ~0.58 and a
    tail of the remaining eight decaying by 0.92 from 0.040.  Exactly three
    labels sit above the 5% share line; the top of the tail is a full point
    below it, over 3 sigma at 4000 samples.
    """
    head = {"Solid": 0.55, "Stripe": 0.32, "Animal": 0.18}
    tail_order = ["Floral", "Graphic", "Plaid", "Dot", "Check", "Words/Letters", "Tie Dye", "Paisley"]
    tail = {name: round(0.040 * 0.92**k, 4) for k, name in enumerate(tail_order)}
    rates = {**head, **tail}
    return tuple(rates[name] for name in DEFAULT_LABELS)


@dataclass
class SceneConfig:
    image_size: int = 256
    patches_per_image: tuple[int, int] = (1, 3)
    label_frequencies: tuple[float, ...] = field(default_factory=default_label_frequencies)
    background_clutter: float = 0.5
    seed: int = 0
    min_patch_fraction: float = 0.25
    max_patch_fraction: float = 0.5

    def __post_init__(self):
        self.patches_per_image = tuple(int(v) for v in self.patches_per_image)
        self.label_frequencies = tuple(float(v) for v in self.label_frequencies)
        lo, hi = self.patches_per_image
        if not 1 <= lo <= hi:
            raise ValueError(f"bad patches_per_image {self.patches_per_image}")
        if any(not 0.0 <= p <= 1.0 for p in self.label_frequencies):
            raise ValueError("label frequencies must lie in [0, 1]")
        if not 0.0 <= self.background_clutter <= 1.0:
            raise ValueError("background_clutter must lie in [0, 1]")
        if self.image_size < 8:
            raise ValueError("image_size too small")

    @property
    def num_classes(self) -> int:
        return len(self.label_frequencies)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        return cls(**d)


@dataclass
class ImageSample:
    id: str
    image: np.ndarray  # [3, S, S] float32 in [0, 1]
    target: np.ndarray  # [C] uint8
    split: str | None = None
    meta: dict = field(default_factory=dict)


@dataclass
class ManifestRecord:
    id: str
    image_path: str
    target: list[int]
    split: str | None = None


@dataclass
class DatasetManifest:
    records: list[ManifestRecord]
    vocabulary: LabelVocabulary
    generation_config: SceneConfig
    root: Path = Path(".")

    def __len__(self) -> int:
        return len(self.records)

    def ids(self, split: str | None = None) -> list[str]:
        return [r.id for r in self.records if split is None or r.split == split]

    def subset(self, split: str) -> "DatasetManifest":
        recs = [r for r in self.records if r.split == split]
        return dataclasses.replace(self, records=recs)

    def targets(self) -> np.ndarray:
        return np.array([r.target for r in self.records], dtype=np.int64).reshape(len(self.records), -1)


def sample_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream per (seed, index); order of generation does not matter."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def render_pattern_patch(label_index: int, size: int, rng: np.random.Generator) -> np.ndarray:
    if not 0 <= label_index < len(RENDERERS):
        raise ValueError(f"invalid label index {label_index}")
    patch = RENDERERS[label_index](int(size), rng)
    return np.clip(patch, 0.0, 1.0).astype(np.float32)


# -- label sampling -----------------------------------------------------------

def _count_distribution(q: np.ndarray) -> np.ndarray:
    """P(number of successes = k) for independent Bernoulli(q), k = 0..len(q)."""
    dist = np.zeros(len(q) + 1)
    dist[0] = 1.0
    for p in q:
        dist[1:] = dist[1:] * (1 - p) + dist[:-1] * p
        dist[0] *= 1 - p
    return dist


def _conditional_marginals(q: np.ndarray, lo: int, hi: int) -> np.ndarray:
    total = _count_distribution(q)[lo : hi + 1].sum()
    out = np.empty_like(q)
    for l in range(len(q)):
        rest = _count_distribution(np.delete(q, l))
        out[l] = q[l] * rest[max(lo - 1, 0) : hi].sum() / total
    return out


def inclusion_probabilities(freqs: Sequence[float], lo: int = 1, hi: int = 3, iters: int = 500) -> np.ndarray:
    """Bernoulli rates whose marginals, conditioned on ``lo <= popcount <= hi``, equal ``freqs``.

    Solved by multiplicative fixed-point iteration.  When the target is
    infeasible (e.g. ``sum(freqs) < lo``) the closest iterate is returned.
    """
    p = np.asarray(freqs, dtype=np.float64)
    q = np.clip(p, 1e-9, 1 - 1e-9)
    for _ in range(iters):
        m = _conditional_marginals(q, lo, hi)
        ratio = np.where(m > 0, p / np.maximum(m, 1e-300), 1.0)
        q_new = np.clip(q * ratio, 1e-9, 1 - 1e-6)
        if np.max(np.abs(q_new - q)) < 1e-12:
            q = q_new
            break
        q = q_new
    q[p == 0] = 0.0
    return q


_Q_CACHE: dict[tuple, np.ndarray] = {}


def _cached_inclusion(config: SceneConfig) -> np.ndarray:
    key = (config.label_frequencies, config.patches_per_image)
    if key not in _Q_CACHE:
        _Q_CACHE[key] = inclusion_probabilities(config.label_frequencies, *config.patches_per_image)
    return _Q_CACHE[key]


def sample_labels(config: SceneConfig, rng: np.random.Generator) -> list[int]:
    q = _cached_inclusion(config)
    lo, hi = config.patches_per_image
    for _ in range(MAX_DRAWS):
        draw = rng.random(len(q)) < q
        n = int(draw.sum())
        if lo <= n <= hi:
            return [int(i) for i in np.flatnonzero(draw)]
    return [int(np.argmax(config.label_frequencies))]


# -- scene composition --------------------------------------------------------

def _garment_mask(h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    kind = rng.integers(0, 3)
    if kind == 0:
        return np.ones((h, w), dtype=bool)
    if kind == 1:
        cy, cx = (h - 1) / 2, (w - 1) / 2
        return ((yy - cy) / (h / 2)) ** 2 + ((xx - cx) / (w / 2)) ** 2 <= 1.0
    # dress-like trapezoid: narrow top, wide hem
    half = (0.3 + 0.2 * yy / max(h - 1, 1)) * w
    return np.abs(xx - (w - 1) / 2) <= half


def _inner_edge(mask: np.ndarray, width: int) -> np.ndarray:
    """Pixels of ``mask`` within ``width`` steps of its boundary (canvas edge counts)."""
    core = np.pad(mask, 1, constant_values=False)
    for _ in range(width):
        core[1:-1, 1:-1] = (
            core[1:-1, 1:-1] & core[:-2, 1:-1] & core[2:, 1:-1] & core[1:-1, :-2] & core[1:-1, 2:]
        )
    return mask & ~core[1:-1, 1:-1]


def _blob_mask(size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32)
    c = (size - 1) / 2
    r = np.hypot(yy - c, xx - c) / (size / 2)
    wobble = smooth_noise(size, 3, rng) * 0.5
    return np.clip((1.0 - r + wobble - 0.25) * 4.0, 0.0, 1.0)


def _background(size: int, rng: np.random.Generator) -> np.ndarray:
    base = np.array([rng.uniform(0.25, 0.75) for _ in range(3)], dtype=np.float32)
    img = np.empty((3, size, size), dtype=np.float32)
    for ch in range(3):
        img[ch] = base[ch] + 0.25 * (smooth_noise(size, 3, rng) - 0.5)
    img += rng.normal(0.0, 0.02, img.shape).astype(np.float32)
    return img


def _place(size: int, side: int, taken: list[tuple[int, int, int, int]], rng) -> tuple[int, int]:
    best, best_overlap = (0, 0), math.inf
    for _ in range(50):
        y, x = (int(v) for v in rng.integers(0, size - side + 1, 2))
        overlap = 0
        for ty, tx, th, tw in taken:
            oy = max(0, min(y + side, ty + th) - max(y, ty))
            ox = max(0, min(x + side, tx + tw) - max(x, tx))
            overlap += oy * ox
        if overlap < best_overlap:
            best, best_overlap = (y, x), overlap
            if overlap == 0:
                break
    return best


def _texture_window(label: int, side: int, image_size: int, rng: np.random.Generator) -> np.ndarray:
    """Texture at a scale tied to the image, not the patch, cropped to ``side``.

    Keeps pattern periods resolvable for small patches in small images.
    """
    canvas = max(side, int(image_size * TEXTURE_SCALE))
    tex = render_pattern_patch(label, canvas, rng)
    y, x = (int(v) for v in rng.integers(0, canvas - side + 1, 2))
    return tex[:, y : y + side, x : x + side]


def render_scene(
    config: SceneConfig,
    rng: np.random.Generator,
    patch_labels: Sequence[int],
    distractor_labels: Sequence[int] | None = None,
) -> tuple[np.ndarray, dict]:
    """Composite a scene.  Distractors are translucent, unoutlined and never labeled."""
    S = config.image_size
    img = _background(S, rng)
    if distractor_labels is None:
        n_distract = int(rng.binomial(6, config.background_clutter))
        distractor_labels = [int(v) for v in rng.integers(0, config.num_classes, n_distract)]
    distractors = []
    for lab in distractor_labels:
        side = int(rng.integers(int(0.25 * S), int(0.55 * S) + 1))
        y, x = (int(v) for v in rng.integers(0, S - side + 1, 2))
        tex = _texture_window(lab, side, S, rng)
        alpha = 0.55 * _blob_mask(side, rng)
        region = img[:, y : y + side, x : x + side]
        img[:, y : y + side, x : x + side] = region * (1 - alpha) + tex * alpha
        distractors.append({"label": int(lab), "box": [y, x, side, side]})

    lo_side = max(4, int(math.ceil(config.min_patch_fraction * S)))
    hi_side = max(lo_side, int(config.max_patch_fraction * S))
    border = max(1, int(round(S / 48)))
    dark = np.array([0.03, 0.03, 0.03], dtype=np.float32)
    taken: list[tuple[int, int, int, int]] = []
    patches = []
    for lab in patch_labels:
        side = int(rng.integers(lo_side, hi_side + 1))
        y, x = _place(S, side, taken, rng)
        tex = _texture_window(lab, side, S, rng)
        mask = _garment_mask(side, side, rng)
        region = img[:, y : y + side, x : x + side]
        region[:, mask] = tex[:, mask]
        region[:, _inner_edge(mask, border)] = dark[:, None]
        taken.append((y, x, side, side))
        patches.append({"label": int(lab), "box": [y, x, side, side]})
    return np.clip(img, 0.0, 1.0).astype(np.float32), {"patches": patches, "distractors": distractors}


def compose_scene(config: SceneConfig, sample_index: int, distractor_labels: Sequence[int] | None = None) -> ImageSample:
    """Deterministic in ``(config.seed, sample_index)``; ``distractor_labels`` overrides the random clutter."""
    rng = sample_rng(config.seed, sample_index)
    labels = sample_labels(config, rng)
    image, meta = render_scene(config, rng, labels, distractor_labels)
    target = np.zeros(config.num_classes, dtype=np.uint8)
    target[labels] = 1
    return ImageSample(id=f"{sample_index:06d}", image=image, target=target, meta=meta)


# -- persistence --------------------------------------------------------------

def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0)


def write_manifest(manifest: DatasetManifest, out_dir: str | Path | None = None) -> None:
    out = Path(out_dir) if out_dir is not None else manifest.root
    out.mkdir(parents=True, exist_ok=True)
    header = {
        "vocabulary": list(manifest.vocabulary.names),
        "generation_config": manifest.generation_config.to_dict(),
    }
    (out / "dataset.json").write_text(json.dumps(header, indent=2, sort_keys=True))
    tmp = out / "manifest.jsonl.tmp"
    with open(tmp, "w") as fh:
        for r in manifest.records:
            fh.write(json.dumps(dataclasses.asdict(r), sort_keys=True) + "\n")
    tmp.replace(out / "manifest.jsonl")


def read_manifest(data_dir: str | Path) -> DatasetManifest:
    root = Path(data_dir)
    header_path, records_path = root / "dataset.json", root / "manifest.jsonl"
    if not header_path.is_file() or not records_path.is_file():
        raise FileNotFoundError(f"{root} does not contain dataset.json and manifest.jsonl")
    header = json.loads(header_path.read_text())
    records = [ManifestRecord(**json.loads(line)) for line in records_path.read_text().splitlines() if line.strip()]
    return DatasetManifest(
        records=records,
        vocabulary=LabelVocabulary(tuple(header["vocabulary"])),
        generation_config=SceneConfig.from_dict(header["generation_config"]),
        root=root,
    )


def generate_dataset(config: SceneConfig, n_samples: int, out_dir: str | Path) -> DatasetManifest:
    if n_samples < MIN_SAMPLES:
        raise ValueError(f"n_samples must be >= {MIN_SAMPLES}, got {n_samples}")
    vocab = build_vocabulary()
    if config.num_classes != len(vocab):
        raise ValueError(f"{config.num_classes} label frequencies for a {len(vocab)}-label vocabulary")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    records = []
    for i in range(n_samples):
        sample = compose_scene(config, i)
        rel = f"images/{sample.id}.png"
        Image.fromarray(to_uint8(sample.image), mode="RGB").save(out / rel, optimize=False)
        records.append(ManifestRecord(sample.id, rel, [int(v) for v in sample.target]))
    manifest = DatasetManifest(records, vocab, config, out)
    write_manifest(manifest)
    log.info("wrote %d samples to %s", n_samples, out)
    return manifest


def split_dataset(manifest: DatasetManifest, train_fraction: float = 0.7) -> DatasetManifest:
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = len(manifest.records)
    n_train = int(math.floor(n * train_fraction + 0.5))
    if n_train == 0 or n_train == n:
        raise ValueError(f"fraction {train_fraction} leaves an empty split for n={n}")
    rng = np.random.default_rng(np.random.SeedSequence([manifest.generation_config.seed, 0x5B11]))
    order = rng.permutation(n)
    train = set(order[:n_train].tolist())
    records = [
        dataclasses.replace(r, split="train" if i in train else "test") for i, r in enumerate(manifest.records)
    ]
    return dataclasses.replace(manifest, records=records)


def standardize(images: torch.Tensor) -> torch.Tensor:
    return (images - 0.5) / 0.5


def load_batch(manifest: DatasetManifest, ids: Iterable[str]) -> tuple[torch.Tensor, torch.Tensor]:
    """Load images as standardized float32 ``[B, 3, S, S]`` and targets ``[B, C]``."""
    index = {r.id: r for r in manifest.records}
    imgs, tgts = [], []
    for i in ids:
        rec = index.get(i)
        if rec is None:
            raise KeyError(f"unknown sample id {i!r}")
        path = manifest.root / rec.image_path
        try:
            with Image.open(path) as im:
                arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
        except (OSError, ValueError) as exc:
            raise OSError(f"cannot read image for sample {i!r} at {path}: {exc}") from exc
        imgs.append(arr.transpose(2, 0, 1))
        tgts.append(rec.target)
    images = torch.from_numpy(np.stack(imgs)).float() / 255.0
    targets = torch.tensor(tgts, dtype=torch.float32)
    return standardize(images), targets


def load_split(manifest: DatasetManifest, split: str) -> tuple[list[str], torch.Tensor, torch.Tensor]:
    ids = manifest.ids(split)
    if not ids:
        raise ValueError(f"split {split!r} is empty")
    images, targets = load_batch(manifest, ids)
    return ids, images, targets


@dataclass
class LabelDistribution:
    counts: np.ndarray
    shares: np.ndarray
    n_samples: int
    majority: frozenset[int]

    def minority(self) -> frozenset[int]:
        return frozenset(range(len(self.counts))) - self.majority


def distribution_from_targets(targets: np.ndarray, threshold: float = MAJORITY_THRESHOLD) -> LabelDistribution:
    targets = np.asarray(targets)
    if targets.ndim != 2 or targets.shape[0] == 0:
        raise ValueError("label distribution needs a nonempty [N, C] target matrix")
    counts = (targets > 0).sum(axis=0).astype(np.int64)
    shares = counts / targets.shape[0]
    majority = frozenset(int(l) for l in np.flatnonzero(shares > threshold))
    return LabelDistribution(counts, shares, int(targets.shape[0]), majority)


def label_distribution(manifest: DatasetManifest, split: str | None = None) -> LabelDistribution:
    m = manifest.subset(split) if split is not None else manifest
    if not m.records:
        raise ValueError("empty manifest")
    return distribution_from_targets(m.targets())
