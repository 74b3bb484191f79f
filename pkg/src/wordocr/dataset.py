"""Word-level corpus handling: manifests, crops, charset, splits, synthetic data."""
from __future__ import annotations

import itertools
import json
import string
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

MAX_WORD_LEN = 10


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class WordBox:
    bbox: tuple  # (x, y, width, height), top-left origin
    text: str


@dataclass
class PageRecord:
    image_path: Path
    words: list = field(default_factory=list)


@dataclass
class WordSample:
    image: np.ndarray  # (H, W) uint8
    transcript: str
    source_id: str


def _page_size(path: Path) -> tuple[int, int]:
    try:
        with Image.open(path) as im:
            return im.size  # (width, height)
    except (OSError, ValueError) as exc:
        raise ManifestError(f"cannot read page image {path}: {exc}") from exc


def load_manifest(path) -> list[PageRecord]:
    """Parse and validate a JSON manifest of pages with word boxes.

    Relative image paths resolve against the manifest's directory.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict) or not isinstance(raw.get("pages"), list):
        raise ManifestError(f"{path}: expected an object with a 'pages' list")

    pages = []
    for pi, page in enumerate(raw["pages"]):
        where = f"{path}: pages[{pi}]"
        if not isinstance(page, dict) or not isinstance(page.get("image"), str):
            raise ManifestError(f"{where}.image: missing or not a string")
        words = page.get("words")
        if not isinstance(words, list):
            raise ManifestError(f"{where}.words: missing or not a list")
        image_path = Path(page["image"])
        if not image_path.is_absolute():
            image_path = path.parent / image_path
        width, height = _page_size(image_path)
        boxes = []
        for wi, word in enumerate(words):
            wwhere = f"{where}.words[{wi}]"
            bbox = word.get("bbox") if isinstance(word, dict) else None
            if (not isinstance(bbox, list) or len(bbox) != 4
                    or not all(isinstance(v, int) and not isinstance(v, bool) for v in bbox)):
                raise ManifestError(f"{wwhere}.bbox: expected four integers [x, y, w, h]")
            x, y, w, h = bbox
            if w <= 0 or h <= 0:
                raise ManifestError(f"{wwhere}.bbox: width and height must be positive, got {bbox}")
            if x < 0 or y < 0 or x + w > width or y + h > height:
                raise ManifestError(
                    f"{wwhere}.bbox: {bbox} lies outside the {width}x{height} page")
            text = word.get("text")
            if not isinstance(text, str) or not text:
                raise ManifestError(f"{wwhere}.text: expected a non-empty string")
            boxes.append(WordBox(tuple(bbox), text))
        pages.append(PageRecord(image_path, boxes))
    return pages


def read_grayscale(path) -> np.ndarray:
    """Load an image as uint8 grayscale; multi-channel sources use the channel mean."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im)
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc
    return to_grayscale(arr)


def to_grayscale(arr) -> np.ndarray:
    arr = np.asarray(arr)
    if arr.ndim == 3:
        if arr.shape[2] == 4:  # drop alpha
            arr = arr[..., :3]
        arr = np.rint(arr.astype(np.float64).mean(axis=2))
    return np.clip(arr, 0, 255).astype(np.uint8)


def extract_words(pages) -> list[WordSample]:
    samples = []
    for page in pages:
        if not page.words:
            continue
        img = read_grayscale(page.image_path)
        for wi, word in enumerate(page.words):
            x, y, w, h = word.bbox
            samples.append(WordSample(img[y:y + h, x:x + w].copy(), word.text,
                                      f"{page.image_path}#{wi}"))
    return samples


def filter_by_length(samples, max_word_len: int = MAX_WORD_LEN) -> list[WordSample]:
    return [s for s in samples if len(s.transcript) <= max_word_len]


@dataclass(frozen=True)
class Charset:
    """Ordered symbols; label ids ``0..C-1`` and the blank at ``C``."""

    symbols: tuple

    def __post_init__(self):
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("charset symbols must be unique")
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.symbols)})

    @property
    def size(self) -> int:
        return len(self.symbols)

    @property
    def blank_id(self) -> int:
        return len(self.symbols)

    @property
    def num_classes(self) -> int:
        return len(self.symbols) + 1

    def encode(self, text: str) -> list[int]:
        try:
            return [self._index[ch] for ch in text]
        except KeyError as exc:
            raise ValueError(f"symbol {exc.args[0]!r} not in charset") from None

    def decode(self, ids) -> str:
        out = []
        for i in ids:
            i = int(i)
            if not 0 <= i < len(self.symbols):
                raise ValueError(f"label id {i} out of range for charset of size {self.size}")
            out.append(self.symbols[i])
        return "".join(out)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(list(self.symbols), ensure_ascii=False),
                              encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Charset":
        return cls(tuple(json.loads(Path(path).read_text(encoding="utf-8"))))


def build_charset(samples) -> Charset:
    if not samples:
        raise ValueError("cannot build a charset from zero samples")
    return Charset(tuple(sorted(set(itertools.chain.from_iterable(s.transcript for s in samples)))))


def encode_transcript(charset: Charset, text: str) -> list[int]:
    return charset.encode(text)


def decode_labels(charset: Charset, ids) -> str:
    return charset.decode(ids)


@dataclass
class SplitAssignment:
    train: list
    val: list
    test: list
    seed: int

    def to_dict(self) -> dict:
        return {"seed": self.seed, "train": self.train, "val": self.val, "test": self.test}

    @classmethod
    def from_dict(cls, d) -> "SplitAssignment":
        return cls(list(d["train"]), list(d["val"]), list(d["test"]), int(d["seed"]))


def split_dataset(samples, seed: int = 0) -> SplitAssignment:
    """Seeded shuffle, then a contiguous 70/15/15 cut (floor, floor, remainder).

    Ids are positions in ``samples``.
    """
    n = len(samples)
    if n < 3:
        raise ValueError(f"need at least 3 samples to split, got {n}")
    order = np.random.default_rng(seed).permutation(n).tolist()
    n_train = (70 * n) // 100
    n_val = (15 * n) // 100
    return SplitAssignment(order[:n_train], order[n_train:n_train + n_val],
                           order[n_train + n_val:], seed)


# -- synthetic corpus ------------------------------------------------------------

GLYPH_H = 32
GLYPH_W = 24
STROKE = 3  # base stroke width in pixels; jitter adds -1, 0 or +1
_LATTICE = [(r, c) for r in range(3) for c in range(3)]
_SEGMENTS = ([((r, c), (r, c + 1)) for r in range(3) for c in range(2)]
             + [((r, c), (r + 1, c)) for r in range(2) for c in range(3)]
             + [((r, c), (r + 1, c + 1)) for r in range(2) for c in range(2)]
             + [((r, c + 1), (r + 1, c)) for r in range(2) for c in range(2)])
DEFAULT_SYMBOLS = string.ascii_lowercase + string.ascii_uppercase + string.digits


@dataclass
class SynthConfig:
    alphabet_size: int = 20
    word_count: int = 500
    min_len: int = 2
    max_len: int = 8
    noise: float = 8.0
    seed: int = 0


def glyph_strokes(alphabet_size: int) -> list[tuple]:
    """A fixed stroke set per symbol: 4 segments of a 3x3 dot lattice.

    Patterns are picked greedily so every pair differs in at least three
    segments; the choice depends only on the symbol index.
    """
    rng = np.random.default_rng(12345)
    chosen: list[frozenset] = []
    while len(chosen) < alphabet_size:
        cand = frozenset(rng.choice(len(_SEGMENTS), size=4, replace=False).tolist())
        if all(len(cand ^ other) >= 3 for other in chosen):
            chosen.append(cand)
    return [tuple(sorted(c)) for c in chosen]


def _draw_segment(canvas, p0, p1, thickness, oy, ox):
    (r0, c0), (r1, c1) = p0, p1
    y0, x0 = 6 + r0 * 10 + oy, 4 + c0 * 8 + ox
    y1, x1 = 6 + r1 * 10 + oy, 4 + c1 * 8 + ox
    n = int(max(abs(y1 - y0), abs(x1 - x0))) * 2 + 1
    half = thickness // 2
    for t in np.linspace(0.0, 1.0, n):
        y = int(round(y0 + t * (y1 - y0)))
        x = int(round(x0 + t * (x1 - x0)))
        canvas[max(y - half, 0):y - half + thickness, max(x - half, 0):x - half + thickness] = 0


def render_glyph(strokes, thickness: int = STROKE, offset=(0, 0)) -> np.ndarray:
    cell = np.full((GLYPH_H, GLYPH_W), 255, dtype=np.uint8)
    for s in strokes:
        _draw_segment(cell, *_SEGMENTS[s], thickness, *offset)
    return cell


def render_word(ids, strokes, rng=None, noise: float = 0.0) -> np.ndarray:
    """Lay glyphs left to right on a white canvas; ``rng=None`` renders unjittered."""
    margin = 4
    canvas = np.full((GLYPH_H + 2 * margin, GLYPH_W * len(ids) + 2 * margin), 255, dtype=np.uint8)
    for j, k in enumerate(ids):
        if rng is None:
            thickness, offset = STROKE, (0, 0)
        else:
            thickness = STROKE + int(rng.integers(-1, 2))
            offset = tuple(int(v) for v in rng.integers(-2, 3, size=2))
        glyph = render_glyph(strokes[k], thickness, offset)
        x = margin + j * GLYPH_W
        region = canvas[margin:margin + GLYPH_H, x:x + GLYPH_W]
        np.minimum(region, glyph, out=region)
    if rng is not None and noise > 0:
        noisy = canvas + rng.normal(0.0, noise, size=canvas.shape)
        canvas = np.clip(np.rint(noisy), 0, 255).astype(np.uint8)
    return canvas


def synth_corpus(config: SynthConfig | None = None, **overrides):
    """Render a deterministic corpus of procedural words.

    Returns ``(samples, charset)``. Transcripts are redrawn until every
    symbol of the alphabet appears at least once, whenever the corpus has
    room for that (``word_count * max_len >= alphabet_size``).
    """
    config = config or SynthConfig()
    if overrides:
        config = SynthConfig(**{**config.__dict__, **overrides})
    if not 2 <= config.alphabet_size <= len(DEFAULT_SYMBOLS):
        raise ValueError(f"alphabet_size must lie in [2, {len(DEFAULT_SYMBOLS)}]")
    if not 1 <= config.min_len <= config.max_len:
        raise ValueError("need 1 <= min_len <= max_len")
    symbols = DEFAULT_SYMBOLS[:config.alphabet_size]
    strokes = glyph_strokes(config.alphabet_size)
    rng = np.random.default_rng(config.seed)
    coverable = config.word_count * config.max_len >= config.alphabet_size
    while True:
        lengths = rng.integers(config.min_len, config.max_len + 1, size=config.word_count)
        words = [rng.integers(0, config.alphabet_size, size=n) for n in lengths]
        seen = set(itertools.chain.from_iterable(w.tolist() for w in words))
        if len(seen) == config.alphabet_size or not coverable:
            break
    samples = []
    for i, ids in enumerate(words):
        image = render_word(ids.tolist(), strokes, rng=rng, noise=config.noise)
        text = "".join(symbols[k] for k in ids)
        samples.append(WordSample(image, text, f"synth:{config.seed}#{i}"))
    return samples, Charset(tuple(symbols))


def write_synthetic_manifest(samples, out_dir, words_per_page: int = 20) -> Path:
    """Stack word images into page PNGs and write a manifest describing them."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pages = []
    for p, start in enumerate(range(0, len(samples), words_per_page)):
        chunk = samples[start:start + words_per_page]
        width = max(s.image.shape[1] for s in chunk) + 10
        height = sum(s.image.shape[0] + 6 for s in chunk) + 6
        page = np.full((height, width), 255, dtype=np.uint8)
        y, words = 6, []
        for s in chunk:
            h, w = s.image.shape
            page[y:y + h, 5:5 + w] = s.image
            words.append({"bbox": [5, y, w, h], "text": s.transcript})
            y += h + 6
        name = f"page_{p:04d}.png"
        Image.fromarray(page).save(out_dir / name)
        pages.append({"image": name, "words": words})
    manifest = out_dir / "manifest.json"
    manifest.write_text(json.dumps({"pages": pages}, ensure_ascii=False, indent=1), encoding="utf-8")
    return manifest
