"""Synthetic speech-like corpus: random phone strings rendered as noisy
per-pdf Gaussian feature frames, with exact state alignments retained.

Generation is fully determined by the GeneratorSpec (including its seed):
pdf mean vectors are drawn first from the spec's stream, then utterances.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from typing import BinaryIO, Sequence

import numpy as np

from .errors import ConfigurationError, FormatError
from .rng import Rng
from .tensor import read_tensor, write_tensor

_MAGIC = b"PFC1"


@dataclass(frozen=True)
class GeneratorSpec:
    num_phones: int = 5
    feature_dim: int = 8
    noise_stddev: float = 0.5
    min_phones: int = 3
    max_phones: int = 7
    min_state_frames: int = 1
    max_state_frames: int = 3
    seed: int = 1

    def __post_init__(self):
        if self.num_phones < 1:
            raise ConfigurationError(f"num_phones must be >= 1, got {self.num_phones}")
        if self.feature_dim < 1:
            raise ConfigurationError(f"feature_dim must be >= 1, got {self.feature_dim}")
        if self.noise_stddev < 0:
            raise ConfigurationError("noise_stddev must be >= 0")
        if not (1 <= self.min_phones <= self.max_phones):
            raise ConfigurationError(
                f"bad phone count range [{self.min_phones}, {self.max_phones}]"
            )
        if not (1 <= self.min_state_frames <= self.max_state_frames):
            raise ConfigurationError(
                f"bad state duration range [{self.min_state_frames}, {self.max_state_frames}]"
            )

    @property
    def num_pdfs(self) -> int:
        return 2 * self.num_phones

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        try:
            return cls(**d)
        except TypeError as e:
            raise FormatError(f"invalid generator spec: {e}") from e


@dataclass
class Utterance:
    utt_id: str
    features: np.ndarray  # (T, F) float64
    phones: list[int]
    alignment: np.ndarray | None = None  # (T,) pdf id per frame

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ConfigurationError(
                f"utterance {self.utt_id}: features must be (T, F), got {self.features.shape}"
            )
        self.phones = [int(p) for p in self.phones]
        if self.alignment is not None:
            self.alignment = np.asarray(self.alignment, dtype=np.int64).reshape(-1)
            if self.alignment.size != self.features.shape[0]:
                raise ConfigurationError(
                    f"utterance {self.utt_id}: alignment length {self.alignment.size} "
                    f"!= frame count {self.features.shape[0]}"
                )

    @property
    def num_frames(self) -> int:
        return int(self.features.shape[0])


def pdf_means(spec: GeneratorSpec) -> np.ndarray:
    """Emission mean per pdf, (num_pdfs, feature_dim); the first draws of
    the spec's stream so corpora of different sizes share their means."""
    rng = Rng(spec.seed)
    return rng.uniform_array((spec.num_pdfs, spec.feature_dim), -1.0, 1.0)


def generate_corpus(spec: GeneratorSpec, count: int) -> list[Utterance]:
    if count < 0:
        raise ConfigurationError("corpus size must be >= 0")
    rng = Rng(spec.seed)
    means = rng.uniform_array((spec.num_pdfs, spec.feature_dim), -1.0, 1.0)
    utts = []
    for u in range(count):
        n_ph = rng.randint(spec.min_phones, spec.max_phones)
        phones = [rng.randint(0, spec.num_phones - 1) for _ in range(n_ph)]
        align: list[int] = []
        for p in phones:
            for pdf in (2 * p, 2 * p + 1):
                dur = rng.randint(spec.min_state_frames, spec.max_state_frames)
                align.extend([pdf] * dur)
        t = len(align)
        feats = np.empty((t, spec.feature_dim), dtype=np.float64)
        for i, pdf in enumerate(align):
            for j in range(spec.feature_dim):
                feats[i, j] = means[pdf, j] + spec.noise_stddev * rng.gauss()
        utts.append(
            Utterance(
                utt_id=f"utt{u:05d}",
                features=feats,
                phones=phones,
                alignment=np.asarray(align, dtype=np.int64),
            )
        )
    return utts


def desk_generator_spec(seed: int = 1) -> GeneratorSpec:
    """The shipped desk-scale recipe: 5 phones, 8-dim features, noise 0.5."""
    return GeneratorSpec(seed=seed)


def desk_corpus(
    train: int = 500, test: int = 100, seed: int = 1
) -> tuple[list[Utterance], list[Utterance]]:
    """Standard train/test split drawn from one deterministic stream."""
    all_utts = generate_corpus(desk_generator_spec(seed), train + test)
    return all_utts[:train], all_utts[train:]


# ---------------------------------------------------------------------------
# Binary corpus container: magic, u64 count, then per utterance a u32
# length-prefixed JSON record followed by the PFT1 feature matrix.


def save_corpus(dest: str | BinaryIO, utts: Sequence[Utterance]) -> None:
    if isinstance(dest, str):
        with open(dest, "wb") as f:
            save_corpus(f, utts)
        return
    dest.write(_MAGIC)
    dest.write(struct.pack("<Q", len(utts)))
    for u in utts:
        meta = {
            "utt_id": u.utt_id,
            "phones": u.phones,
            "alignment": None if u.alignment is None else u.alignment.tolist(),
        }
        blob = json.dumps(meta, sort_keys=True).encode("utf-8")
        dest.write(struct.pack("<I", len(blob)))
        dest.write(blob)
        write_tensor(dest, u.features)


def load_corpus(src: str | BinaryIO) -> list[Utterance]:
    if isinstance(src, str):
        with open(src, "rb") as f:
            return load_corpus(f)
    magic = src.read(4)
    if magic != _MAGIC:
        raise FormatError(f"bad corpus magic {magic!r}")
    raw = src.read(8)
    if len(raw) != 8:
        raise FormatError("truncated corpus header")
    (count,) = struct.unpack("<Q", raw)
    utts = []
    for _ in range(count):
        raw = src.read(4)
        if len(raw) != 4:
            raise FormatError("truncated utterance record")
        (mlen,) = struct.unpack("<I", raw)
        blob = src.read(mlen)
        if len(blob) != mlen:
            raise FormatError("truncated utterance metadata")
        try:
            meta = json.loads(blob.decode("utf-8"))
            utt_id = meta["utt_id"]
            phones = meta["phones"]
            alignment = meta["alignment"]
        except (KeyError, ValueError) as e:
            raise FormatError(f"invalid utterance metadata: {e}") from e
        features = read_tensor(src)
        utts.append(
            Utterance(
                utt_id=utt_id, features=features, phones=phones,
                alignment=None if alignment is None else np.asarray(alignment),
            )
        )
    return utts
