"""Feature bundles, caption corpora, vocabulary and the synthetic dataset."""
from __future__ import annotations

import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from . import container
from .errors import ContractError, DataError, EmptyCaptionError, StreamShapeError

log = logging.getLogger(__name__)

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIALS = ("<pad>", "<bos>", "<eos>", "<unk>")
CAPTION_LEN = 26

_NON_ALNUM = re.compile(r"[^a-z0-9 ]")
_SPACE = re.compile(r"\s")


# -- text -----------------------------------------------------------------
def clean_text(raw: str) -> str:
    """Lowercase, drop everything outside [a-z0-9 ], collapse whitespace."""
    text = _NON_ALNUM.sub("", _SPACE.sub(" ", raw.lower()))
    return " ".join(text.split())


def tokenize(raw: str) -> list[str]:
    return clean_text(raw).split()


@dataclass
class Vocabulary:
    itos: list[str]
    min_count: int = 1

    def __post_init__(self):
        if tuple(self.itos[:4]) != SPECIALS:
            raise ContractError(f"vocabulary must start with {SPECIALS}")
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ContractError("vocabulary has duplicate tokens")

    def __len__(self) -> int:
        return len(self.itos)

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.id(t) for t in tokens]

    def decode(self, ids: Iterable[int], keep_unk: bool = True) -> list[str]:
        """Tokens up to the first EOS, with PAD/BOS dropped."""
        out = []
        for i in ids:
            i = int(i)
            if i == EOS:
                break
            if i in (PAD, BOS) or (i == UNK and not keep_unk):
                continue
            out.append(self.itos[i])
        return out

    def to_text(self) -> str:
        return "".join(f"{t}\t{i}\n" for i, t in enumerate(self.itos))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        rows = []
        for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line:
                continue
            try:
                tok, idx = line.split("\t")
                rows.append((int(idx), tok))
            except ValueError:
                raise DataError(f"{path}:{n}: expected 'token<TAB>id'") from None
        rows.sort()
        if [i for i, _ in rows] != list(range(len(rows))):
            raise DataError(f"{path}: ids are not contiguous from 0")
        return cls([t for _, t in rows])


def build_vocabulary(corpus: Iterable[str], min_count: int = 2) -> Vocabulary:
    """Keep cleaned tokens seen at least ``min_count`` times, ordered by (count desc, token)."""
    counts: Counter[str] = Counter()
    n = 0
    for raw in corpus:
        counts.update(tokenize(raw))
        n += 1
    if n == 0:
        raise ContractError("cannot build a vocabulary from an empty corpus")
    kept = sorted((t for t, c in counts.items() if c >= min_count and t not in SPECIALS),
                  key=lambda t: (-counts[t], t))
    return Vocabulary(list(SPECIALS) + kept, min_count=min_count)


@dataclass
class CaptionRecord:
    video_id: str
    raw: str
    ids: list[int]

    @property
    def length(self) -> int:
        """Number of non-pad tokens including BOS."""
        return sum(1 for i in self.ids if i != PAD)


def preprocess_caption(raw: str, vocab: Vocabulary, video_id: str = "", max_len: int = CAPTION_LEN) -> CaptionRecord:
    tokens = tokenize(raw)
    if not tokens:
        raise EmptyCaptionError(f"caption {raw!r} is empty after cleaning")
    ids = ([BOS] + vocab.encode(tokens) + [EOS])[:max_len]
    ids += [PAD] * (max_len - len(ids))
    return CaptionRecord(video_id, raw, ids)


def read_corpus(path: str | Path) -> dict[str, list[str]]:
    """``video_id<TAB>caption`` lines -> captions per video, in file order."""
    out: dict[str, list[str]] = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        if "\t" not in line:
            raise DataError(f"{path}:{n}: expected 'video_id<TAB>text'")
        vid, text = line.split("\t", 1)
        out.setdefault(vid, []).append(text)
    return out


def write_corpus(path: str | Path, rows: Iterable[tuple[str, str]]) -> None:
    Path(path).write_text("".join(f"{v}\t{t}\n" for v, t in rows), encoding="utf-8")


def read_results(path: str | Path) -> dict[str, str]:
    out = {}
    for vid, caps in read_corpus(path).items():
        if len(caps) != 1:
            raise DataError(f"{path}: video {vid!r} has {len(caps)} hypotheses, expected 1")
        out[vid] = caps[0]
    return out


# -- features -------------------------------------------------------------
@dataclass
class ObjectFeatureSet:
    values: np.ndarray           # (L * N, D_o)
    per_frame: int

    @property
    def frame_index(self) -> np.ndarray:
        """1-based frame of each object row."""
        return np.arange(self.values.shape[0]) // self.per_frame + 1


@dataclass
class FeatureBundle:
    video_id: str
    appearance: np.ndarray       # (L, D_a)
    motion: np.ndarray           # (L, D_m)
    objects: ObjectFeatureSet
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        L = self.appearance.shape[0]
        if L < 1:
            raise StreamShapeError(f"{self.video_id}: appearance stream has no frames")
        if self.motion.shape[0] != L:
            raise StreamShapeError(f"{self.video_id}: motion stream has {self.motion.shape[0]} rows, expected L={L}")
        if self.objects.values.shape[0] != L * self.objects.per_frame:
            raise StreamShapeError(f"{self.video_id}: objects stream has {self.objects.values.shape[0]} rows, "
                                   f"expected L*N={L * self.objects.per_frame}")

    @property
    def frames(self) -> int:
        return self.appearance.shape[0]

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.appearance.shape[1], self.motion.shape[1], self.objects.values.shape[1]


_STREAMS = ("appearance", "motion", "objects")


def bundle_bytes(b: FeatureBundle) -> bytes:
    d_a, d_m, d_o = b.dims
    header = {"kind": "features", "video_id": b.video_id, "L": b.frames, "N": b.objects.per_frame,
              "D_a": d_a, "D_m": d_m, "D_o": d_o}
    arrays = [b.appearance, b.motion, b.objects.values]
    return container.encode(header, [(n, np.asarray(a, dtype=np.float32)) for n, a in zip(_STREAMS, arrays)])


def save_feature_bundle(bundle: FeatureBundle, path: str | Path) -> None:
    container.write_atomic(path, bundle_bytes(bundle))


def load_feature_bundle(path: str | Path) -> FeatureBundle:
    src = str(path)
    header, blobs = container.decode(Path(path).read_bytes(), src)
    if header.get("kind") != "features":
        raise DataError(f"{src}: not a feature bundle (kind={header.get('kind')!r})")
    try:
        L, N = int(header["L"]), int(header["N"])
        widths = {"appearance": int(header["D_a"]), "motion": int(header["D_m"]), "objects": int(header["D_o"])}
    except (KeyError, ValueError) as exc:
        raise DataError(f"{src}: header missing field {exc}") from None
    expected_rows = {"appearance": L, "motion": L, "objects": L * N}
    arrays = {}
    for name in _STREAMS:
        flat = container.blob_array(blobs, name, src)
        d = widths[name]
        if flat.size % d or flat.size // d != expected_rows[name]:
            raise StreamShapeError(f"{src}: {name} stream has {flat.size / d:g} rows of width {d}, "
                                   f"expected {expected_rows[name]} (L={L}, N={N})")
        arrays[name] = flat.reshape(expected_rows[name], d)
    return FeatureBundle(header["video_id"], arrays["appearance"], arrays["motion"],
                         ObjectFeatureSet(arrays["objects"], N), meta=header)


def load_feature_dir(path: str | Path) -> dict[str, FeatureBundle]:
    out = {}
    for p in sorted(Path(path).glob("*.dgvc")):
        b = load_feature_bundle(p)
        out[b.video_id] = b
    if not out:
        raise DataError(f"no .dgvc feature bundles in {path}")
    return out


# -- synthetic data -------------------------------------------------------
SLOT_WORDS = (
    ("man", "woman", "dog", "cat", "child", "bird"),
    ("runs", "jumps", "sits", "eats", "swims", "plays"),
    ("ball", "grass", "water", "car", "food", "table"),
    ("quickly", "slowly", "outside", "together", "again", "alone"),
)


@dataclass
class SyntheticVocabSpec:
    """Captions have ``slots`` words; the last is present only when the
    appearance stream's first column has positive mean."""

    words_per_slot: int = 3
    slots: int = 4

    def words(self, slot: int) -> list[str]:
        base = SLOT_WORDS[slot] if slot < len(SLOT_WORDS) else ()
        return [base[k] if k < len(base) else f"w{slot}x{k}" for k in range(self.words_per_slot)]


def synthetic_caption(bundle: FeatureBundle, spec: SyntheticVocabSpec) -> str:
    """Caption as a pure function of the bundle's pooled feature statistics."""
    pooled = np.concatenate([bundle.appearance.mean(0), bundle.motion.mean(0), bundle.objects.values.mean(0)])
    chunks = np.array_split(pooled.astype(np.float64), spec.slots)
    words = []
    for s, chunk in enumerate(chunks):
        if s == spec.slots - 1 and spec.slots > 3 and bundle.appearance[:, 0].mean() <= 0:
            break
        blocks = np.array_split(chunk, spec.words_per_slot)
        words.append(spec.words(s)[int(np.argmax([b.mean() for b in blocks]))])
    return " ".join(words)


def generate_synthetic_dataset(seed: int, n_videos: int, L: int, N: int, dims: tuple[int, int, int],
                               vocab_spec: SyntheticVocabSpec | None = None,
                               signal: float = 1.5) -> tuple[list[FeatureBundle], dict[str, str]]:
    """Seeded random bundles whose captions are recoverable from pooled features.

    A word per slot is planted by shifting one feature block by ``signal``;
    the caption is then read back off the final features with
    :func:`synthetic_caption`.
    """
    spec = vocab_spec or SyntheticVocabSpec()
    if min(n_videos, L, N, *dims) < 1:
        raise ContractError("synthetic dataset sizes must all be >= 1")
    d_a, d_m, d_o = dims
    total = d_a + d_m + d_o
    if total < spec.slots * spec.words_per_slot:
        raise ContractError(f"feature widths {dims} too narrow for {spec.slots}x{spec.words_per_slot} word blocks")
    rng = np.random.default_rng(seed)
    chunk_cols = np.array_split(np.arange(total), spec.slots)
    bundles, captions = [], {}
    width = len(str(n_videos - 1))
    for v in range(n_videos):
        app = rng.normal(size=(L, d_a))
        mot = rng.normal(size=(L, d_m))
        obj = rng.normal(size=(L * N, d_o))
        shift = np.zeros(total)
        for cols in chunk_cols:
            block = np.array_split(cols, spec.words_per_slot)[rng.integers(spec.words_per_slot)]
            shift[block] += signal
        app += shift[:d_a]
        mot += shift[d_a:d_a + d_m]
        obj += shift[d_a + d_m:]
        app[:, 0] += signal if rng.random() < 0.5 else -signal
        vid = f"vid{v:0{width}d}"
        b = FeatureBundle(vid, app.astype(np.float32), mot.astype(np.float32),
                          ObjectFeatureSet(obj.astype(np.float32), N))
        bundles.append(b)
        captions[vid] = synthetic_caption(b, spec)
    return bundles, captions


def stack_bundles(bundles: list[FeatureBundle]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(batch, L, D) float64 arrays for appearance, motion and objects."""
    shapes = {(b.frames, b.objects.per_frame, b.dims) for b in bundles}
    if len(shapes) != 1:
        raise StreamShapeError(f"bundles in a batch disagree on shape: {sorted(shapes)}")
    return (np.stack([b.appearance for b in bundles]).astype(np.float64),
            np.stack([b.motion for b in bundles]).astype(np.float64),
            np.stack([b.objects.values for b in bundles]).astype(np.float64))
