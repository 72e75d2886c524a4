"""Deterministic synthetic text-image corpus.

Words are drawn with the built-in 5x7 glyphs, scaled onto a 128x32 canvas,
and optionally degraded (rotation, blur, tail occlusion, noise). Each split
is stored as one ``.haapds`` container::

    HAAPDS 1
    split <name>
    count <n>
    image <width> <height> <channels>
    <id>\t<label>\t<degradation json>      (n lines)
    ---
    <n * height * width * channels bytes, uint8, row-major H, W, C>
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from haap.charset import MAX_LABEL_LENGTH, TRAIN94
from haap.font5x7 import GLYPH_H, GLYPH_W, glyph
from haap.lexicon import WORDS

IMAGE_H, IMAGE_W, CHANNELS = 32, 128, 3
MAGIC = "HAAPDS 1"
SPLITS = ("train", "val", "test")


class UnrenderableCharacter(ValueError):
    pass


@dataclass(frozen=True)
class Style:
    dx: int = 0
    dy: int = 0
    scale: float = 1.0
    ink: tuple[int, int, int] = (0, 0, 0)
    background: tuple[int, int, int] = (255, 255, 255)


@dataclass(frozen=True)
class Degradation:
    rotation_deg: float = 0.0
    blur_sigma: float = 0.0
    occlusion: tuple[int, int, int, int] | None = None
    noise_std: float = 0.0

    def record(self) -> dict:
        return {
            "blur_sigma": round(self.blur_sigma, 4),
            "noise_std": round(self.noise_std, 4),
            "occlusion": list(self.occlusion) if self.occlusion else None,
            "rotation_deg": round(self.rotation_deg, 3),
        }


OCCLUSION_FILL = 0.5


def layout(word: str, style: Style = Style()) -> tuple[float, int, int]:
    """Pixel scale and top-left origin of the rendered word."""
    if not word:
        return 1.0, 0, 0
    text_w = len(word) * (GLYPH_W + 1) - 1
    fit = min((IMAGE_W - 4) / text_w, (IMAGE_H - 6) / GLYPH_H)
    s = max(fit * min(style.scale, 1.0), 0.5)
    w, h = int(round(text_w * s)), int(round(GLYPH_H * s))
    x0 = int(np.clip((IMAGE_W - w) // 2 + style.dx, 0, max(IMAGE_W - w, 0)))
    y0 = int(np.clip((IMAGE_H - h) // 2 + style.dy, 0, max(IMAGE_H - h, 0)))
    return s, x0, y0


def glyph_boxes(word: str, style: Style = Style()) -> list[tuple[int, int, int, int]]:
    """``(x0, y0, x1, y1)`` (exclusive) per character on the canvas."""
    s, x0, y0 = layout(word, style)
    h = int(round(GLYPH_H * s))
    boxes = []
    for k in range(len(word)):
        left = x0 + int(round(k * (GLYPH_W + 1) * s))
        right = x0 + int(round((k * (GLYPH_W + 1) + GLYPH_W) * s))
        boxes.append((left, y0, min(right, IMAGE_W), min(y0 + h, IMAGE_H)))
    return boxes


def _text_bitmap(word: str) -> np.ndarray:
    bmp = np.zeros((GLYPH_H, len(word) * (GLYPH_W + 1) - 1), dtype=bool)
    for k, ch in enumerate(word):
        try:
            g = glyph(ch)
        except KeyError:
            raise UnrenderableCharacter(f"no glyph for {ch!r} in {word!r}") from None
        bmp[:, k * (GLYPH_W + 1): k * (GLYPH_W + 1) + GLYPH_W] = g
    return bmp


def render(word: str, style: Style = Style(), seed: int = 0, degradation: Degradation = Degradation()) -> np.ndarray:
    """Float image ``(32, 128, 3)`` in [0, 1]; a pure function of its arguments."""
    if len(word) > MAX_LABEL_LENGTH:
        raise UnrenderableCharacter(f"{word!r} is longer than {MAX_LABEL_LENGTH}")
    coverage = np.zeros((IMAGE_H, IMAGE_W))
    if word:
        bmp = _text_bitmap(word)
        s, x0, y0 = layout(word, style)
        h, w = int(round(bmp.shape[0] * s)), int(round(bmp.shape[1] * s))
        rows = np.minimum((np.arange(h) / s).astype(int), bmp.shape[0] - 1)
        cols = np.minimum((np.arange(w) / s).astype(int), bmp.shape[1] - 1)
        scaled = bmp[rows][:, cols]
        h, w = min(h, IMAGE_H - y0), min(w, IMAGE_W - x0)
        coverage[y0:y0 + h, x0:x0 + w] = scaled[:h, :w]
    if degradation.rotation_deg:
        coverage = ndimage.rotate(coverage, degradation.rotation_deg, reshape=False, order=1, mode="constant")
    if degradation.blur_sigma > 0:
        coverage = ndimage.gaussian_filter(coverage, degradation.blur_sigma)
    coverage = np.clip(coverage, 0.0, 1.0)[..., None]
    ink = np.asarray(style.ink, dtype=np.float64) / 255.0
    bg = np.asarray(style.background, dtype=np.float64) / 255.0
    img = bg * (1 - coverage) + ink * coverage
    if degradation.occlusion:
        x0, y0, x1, y1 = degradation.occlusion
        img[y0:y1, x0:x1, :] = OCCLUSION_FILL
    if degradation.noise_std > 0:
        rng = np.random.default_rng(seed)
        img = img + rng.normal(0.0, degradation.noise_std, img.shape)
    return np.clip(img, 0.0, 1.0)


def to_bytes(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)


@dataclass(frozen=True)
class CorpusSpec:
    count: int = 2000
    seed: int = 0
    lexicon: tuple[str, ...] | None = None
    blur_sigma: float = 0.0
    occlusion_prob: float = 0.0
    occlusion_frac: float = 0.25
    rotation_deg: float = 0.0
    noise_std: float = 0.0
    shift_px: int = 0
    scale_jitter: float = 0.0
    splits: tuple[float, float, float] = (0.8, 0.1, 0.1)

    def __post_init__(self):
        if self.count < 0:
            raise ValueError("count must be non-negative")
        if not 0 <= self.blur_sigma <= 3:
            raise ValueError("blur_sigma must lie in [0, 3]")
        if not 0 <= self.occlusion_prob <= 1 or not 0 <= self.occlusion_frac <= 0.5:
            raise ValueError("occlusion_prob in [0, 1] and occlusion_frac in [0, 0.5]")
        if not 0 <= self.rotation_deg <= 15:
            raise ValueError("rotation_deg must lie in [0, 15]")
        if not 0 <= self.noise_std <= 0.5:
            raise ValueError("noise_std must lie in [0, 0.5]")
        if not 0 <= self.shift_px <= 8 or not 0 <= self.scale_jitter <= 0.5:
            raise ValueError("shift_px in [0, 8] and scale_jitter in [0, 0.5]")
        if len(self.splits) != 3 or min(self.splits) < 0 or abs(sum(self.splits) - 1) > 1e-9:
            raise ValueError("splits must be three non-negative fractions summing to 1")

    def words(self) -> tuple[str, ...]:
        return self.lexicon if self.lexicon else tuple(WORDS)


def load_lexicon(path) -> tuple[str, ...]:
    words = tuple(w.strip() for w in Path(path).read_text().splitlines() if w.strip())
    for w in words:
        _check_label(w)
    return words


def _check_label(label: str):
    if len(label) > MAX_LABEL_LENGTH:
        raise ValueError(f"label {label!r} longer than {MAX_LABEL_LENGTH}")
    bad = [ch for ch in label if ch not in TRAIN94]
    if bad:
        raise ValueError(f"label {label!r} has characters outside train94: {bad}")


@dataclass
class Sample:
    id: int
    label: str
    style: Style
    degradation: Degradation
    noise_seed: int

    def record(self) -> dict:
        rec = self.degradation.record()
        rec["style"] = dataclasses.asdict(self.style)
        rec["noise_seed"] = self.noise_seed
        return rec

    def key(self) -> str:
        rec = self.record()
        rec.pop("noise_seed")
        return json.dumps([self.label, rec], sort_keys=True)

    def image(self) -> np.ndarray:
        return render(self.label, self.style, self.noise_seed, self.degradation)


def sample_corpus(spec: CorpusSpec) -> list[Sample]:
    """Draw ``spec.count`` samples with unique (word, style, degradation) triples."""
    rng = np.random.default_rng(spec.seed)
    words = spec.words()
    for w in words:
        _check_label(w)
    seen: set[str] = set()
    samples: list[Sample] = []
    attempts = 0
    while len(samples) < spec.count:
        attempts += 1
        if attempts > 50 * spec.count + 1000:
            raise RuntimeError("could not draw enough distinct samples; widen the lexicon or knobs")
        word = words[int(rng.integers(len(words)))]
        ink_level = int(rng.integers(0, 90))
        bg_level = int(rng.integers(170, 256))
        style = Style(
            dx=int(rng.integers(-spec.shift_px, spec.shift_px + 1)),
            dy=int(rng.integers(-spec.shift_px, spec.shift_px + 1)) // 2,
            scale=float(round(rng.uniform(1.0 - spec.scale_jitter, 1.0), 2)),
            ink=(ink_level,) * 3,
            background=(bg_level,) * 3,
        )
        rot = float(rng.uniform(-spec.rotation_deg, spec.rotation_deg)) if spec.rotation_deg else 0.0
        blur = float(rng.uniform(0, spec.blur_sigma)) if spec.blur_sigma else 0.0
        noise = float(rng.uniform(0, spec.noise_std)) if spec.noise_std else 0.0
        occlusion = None
        if spec.occlusion_prob and rng.random() < spec.occlusion_prob and word:
            boxes = glyph_boxes(word, style)
            x1 = boxes[-1][2]
            x0 = boxes[0][0] + int(round((1 - spec.occlusion_frac) * (x1 - boxes[0][0])))
            occlusion = (x0, boxes[0][1], x1, boxes[0][3])
        noise_seed = int(rng.integers(2**31))
        s = Sample(len(samples), word, style, Degradation(round(rot, 3), round(blur, 4), occlusion, round(noise, 4)), noise_seed)
        k = s.key()
        if k in seen:
            continue
        seen.add(k)
        samples.append(s)
    return samples


def split_indices(n: int, fractions, seed: int) -> dict[str, np.ndarray]:
    order = np.random.default_rng([seed, 1]).permutation(n)
    n_train = int(round(n * fractions[0]))
    n_val = int(round(n * fractions[1]))
    return {
        "train": np.sort(order[:n_train]),
        "val": np.sort(order[n_train:n_train + n_val]),
        "test": np.sort(order[n_train + n_val:]),
    }


def write_split(path, name: str, samples: list[Sample], images: list[np.ndarray]):
    header = [MAGIC, f"split {name}", f"count {len(samples)}", f"image {IMAGE_W} {IMAGE_H} {CHANNELS}"]
    for s in samples:
        header.append(f"{s.id}\t{s.label}\t{json.dumps(s.record(), sort_keys=True)}")
    header.append("---")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("utf-8"))
        for img in images:
            fh.write(to_bytes(img).tobytes())


@dataclass
class Split:
    name: str
    ids: list[int]
    labels: list[str]
    records: list[dict]
    images: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.labels)


def read_split(path) -> Split:
    data = Path(path).read_bytes()
    end = data.index(b"\n---\n") + 5
    lines = data[:end].decode("utf-8").split("\n")[:-2]
    if lines[0] != MAGIC:
        raise ValueError(f"{path} is not a {MAGIC} container")
    name = lines[1].split(" ", 1)[1]
    count = int(lines[2].split()[1])
    _, w, h, c = lines[3].split()
    w, h, c = int(w), int(h), int(c)
    ids, labels, records = [], [], []
    for line in lines[4:4 + count]:
        i, label, rec = line.split("\t", 2)
        ids.append(int(i))
        labels.append(label)
        records.append(json.loads(rec))
    payload = np.frombuffer(data[end:], dtype=np.uint8)
    if payload.size != count * h * w * c:
        raise ValueError(f"{path}: payload holds {payload.size} bytes, expected {count * h * w * c}")
    return Split(name, ids, labels, records, payload.reshape(count, h, w, c))


def generate(spec: CorpusSpec, out_dir) -> dict[str, Path]:
    """Write ``train/val/test.haapds`` plus ``manifest.tsv`` and return their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    samples = sample_corpus(spec)
    parts = split_indices(len(samples), spec.splits, spec.seed)
    paths = {}
    manifest = ["split\tid\tlabel\tdegradation"]
    for name in SPLITS:
        chosen = [samples[i] for i in parts[name]]
        p = out / f"{name}.haapds"
        write_split(p, name, chosen, [s.image() for s in chosen])
        paths[name] = p
        manifest += [f"{name}\t{s.id}\t{s.label}\t{json.dumps(s.record(), sort_keys=True)}" for s in chosen]
    paths["manifest"] = out / "manifest.tsv"
    paths["manifest"].write_text("\n".join(manifest) + "\n")
    return paths


def manifest_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def leakage(train: Split, test: Split) -> list[int]:
    """Test ids whose (word, style, degradation) also occurs in train."""

    def key(label, rec):
        rec = dict(rec)
        rec.pop("noise_seed", None)
        return json.dumps([label, rec], sort_keys=True)

    train_keys = {key(l, r) for l, r in zip(train.labels, train.records)}
    return [i for i, l, r in zip(test.ids, test.labels, test.records) if key(l, r) in train_keys]
