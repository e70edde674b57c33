"""Language-guided modulation: structured captions -> channel-wise (gamma, beta)."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor
from .nn import Module, dense_init

SLOTS = ("env", "type", "obj", "therm")
SEQ_LEN = 77


class CaptionLoadError(KeyError):
    """A caption or embedding file is missing a sample or a slot."""


@dataclass(frozen=True)
class StructuredCaption:
    env: str = ""
    type: str = ""
    obj: str = ""
    therm: str = ""

    def slots(self) -> Tuple[str, str, str, str]:
        return (self.env, self.type, self.obj, self.therm)

    def to_dict(self) -> Dict[str, str]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Dict[str, str]) -> "StructuredCaption":
        missing = [s for s in SLOTS if s not in d]
        if missing:
            raise CaptionLoadError(f"caption missing slots {missing}")
        return cls(**{s: str(d[s]) for s in SLOTS})


def _hash_vector(token: str, seed: int, dim: int) -> np.ndarray:
    digest = hashlib.blake2b(f"{seed}\x1f{token}".encode("utf-8"), digest_size=8).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    return rng.standard_normal(dim)


class ToyEmbedder:
    """Deterministic stand-in for a frozen text encoder.

    Each whitespace token maps to the unit-normalized sum of a content vector
    (hash of the token under ``seed``) and a positional vector (hash under
    ``seed + 1 + position``). Word identity therefore survives reordering
    while "dark night" and "night dark" still embed differently. Rows past the
    last token are zero padding.
    """

    def __init__(self, dim: int = 16, length: int = SEQ_LEN, seed: int = 0):
        self.dim = dim
        self.length = length
        self.seed = seed
        self._cache: Dict[Tuple[str, int], np.ndarray] = {}

    def _token(self, token: str, position: int) -> np.ndarray:
        key = (token, position)
        vec = self._cache.get(key)
        if vec is None:
            vec = _hash_vector(token, self.seed, self.dim) + _hash_vector(token, self.seed + 1 + position, self.dim)
            vec = vec / np.linalg.norm(vec)
            self._cache[key] = vec
        return vec

    def embed_text(self, text: str) -> np.ndarray:
        out = np.zeros((self.length, self.dim))
        for pos, token in enumerate(text.lower().split()[: self.length]):
            out[pos] = self._token(token, pos)
        return out

    def embed(self, caption: StructuredCaption, sample_id: Optional[str] = None) -> Dict[str, np.ndarray]:
        return {slot: self.embed_text(text) for slot, text in zip(SLOTS, caption.slots())}


class FileEmbedder:
    """Precomputed L x d slot matrices keyed by sample id (JSON document)."""

    def __init__(self, path: Union[str, Path]):
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        self._table = raw
        self.length = self.dim = None
        for sample in raw.values():
            first = np.asarray(sample[SLOTS[0]], dtype=np.float64)
            self.length, self.dim = first.shape
            break

    def embed(self, caption: Optional[StructuredCaption] = None, sample_id: Optional[str] = None) -> Dict[str, np.ndarray]:
        if sample_id is None or sample_id not in self._table:
            raise CaptionLoadError(f"no embeddings for sample {sample_id!r}")
        entry = self._table[sample_id]
        out = {}
        for slot in SLOTS:
            if slot not in entry:
                raise CaptionLoadError(f"sample {sample_id!r} has no {slot!r} slot")
            mat = np.asarray(entry[slot], dtype=np.float64)
            if mat.ndim != 2 or (self.length is not None and mat.shape != (self.length, self.dim)):
                raise CaptionLoadError(f"sample {sample_id!r} slot {slot!r} has shape {mat.shape}")
            out[slot] = mat
        return out


def write_embedding_file(path, embeddings: Dict[str, Dict[str, np.ndarray]]) -> None:
    doc = {sid: {slot: np.asarray(m).tolist() for slot, m in slots.items()} for sid, slots in embeddings.items()}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def read_caption_file(path) -> Dict[str, StructuredCaption]:
    """JSON lines, one object per sample with an ``id`` and the four slots."""
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            obj = json.loads(line)
            sid = str(obj.get("id", lineno - 1))
            out[sid] = StructuredCaption.from_dict(obj)
    return out


def write_caption_file(path, captions: Dict[str, StructuredCaption]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sid, cap in captions.items():
            fh.write(json.dumps({"id": sid, **cap.to_dict()}) + "\n")


def embed_caption(caption: StructuredCaption, embedder, sample_id: Optional[str] = None) -> List[np.ndarray]:
    """The four slot matrices, in slot order. The embedder is never trained."""
    table = embedder.embed(caption, sample_id=sample_id)
    mats = [np.asarray(table[s], dtype=np.float64) for s in SLOTS]
    if len({m.shape for m in mats}) != 1:
        raise DimensionError(f"slot embeddings disagree in shape: {[m.shape for m in mats]}")
    return mats


class LanguageGuidedModulation(Module):
    """Slot fusion MLP (4d -> 2d -> d) and two pooled heads (d -> d -> C).

    The heads' output layers start at zero, so gamma = beta = 0 and the
    modulation is an exact identity until training moves them.
    """

    def __init__(self, text_dim: int, channels: int, seed: int = 0):
        super().__init__()
        rng = np.random.default_rng(seed)
        d = text_dim
        self.text_dim = d
        self.channels = channels
        self.add_param("fuse.fc1.weight", dense_init(rng, 4 * d, 2 * d))
        self.add_param("fuse.fc1.bias", np.zeros(2 * d))
        self.add_param("fuse.fc2.weight", dense_init(rng, 2 * d, d))
        self.add_param("fuse.fc2.bias", np.zeros(d))
        for head in ("gamma", "beta"):
            self.add_param(f"{head}.fc1.weight", dense_init(rng, d, d))
            self.add_param(f"{head}.fc1.bias", np.zeros(d))
            self.add_param(f"{head}.fc2.weight", np.zeros((d, channels)))
            self.add_param(f"{head}.fc2.bias", np.zeros(channels))

    def fuse_slots(self, slots) -> Tensor:
        """Concatenate slots along channels and project back to d, token-wise.

        ``slots`` is either a sequence of four [.., L, d] arrays or one
        pre-concatenated [.., L, 4d] array.
        """
        if isinstance(slots, (list, tuple)):
            if len(slots) != 4:
                raise DimensionError(f"need 4 slot embeddings, got {len(slots)}")
            lengths = {np.shape(s.data if isinstance(s, Tensor) else s)[-2] for s in slots}
            if len(lengths) != 1:
                raise DimensionError(f"slot sequence lengths differ: {sorted(lengths)}")
            x = ad.concat(list(slots), axis=-1)
        else:
            x = slots if isinstance(slots, Tensor) else Tensor(slots)
        if x.shape[-1] != 4 * self.text_dim:
            raise DimensionError(f"expected width {4 * self.text_dim}, got {x.shape[-1]}")
        p = self._params
        h = ad.gelu(ad.linear(x, p["fuse.fc1.weight"], p["fuse.fc1.bias"]))
        return ad.linear(h, p["fuse.fc2.weight"], p["fuse.fc2.bias"])

    def heads(self, semantic: Tensor) -> Tuple[Tensor, Tensor]:
        pooled = semantic.mean(axis=-2)
        p = self._params
        out = []
        for head in ("gamma", "beta"):
            h = ad.gelu(ad.linear(pooled, p[f"{head}.fc1.weight"], p[f"{head}.fc1.bias"]))
            out.append(ad.linear(h, p[f"{head}.fc2.weight"], p[f"{head}.fc2.bias"]))
        return out[0], out[1]

    def __call__(self, slots) -> Tuple[Tensor, Tensor]:
        return self.heads(self.fuse_slots(slots))


def modulate(features, gamma, beta) -> Tensor:
    """(gamma + 1) * F + beta on [N, C, h, w] with gamma, beta of shape [C] or [N, C]."""
    features = features if isinstance(features, Tensor) else Tensor(features)
    gamma = gamma if isinstance(gamma, Tensor) else Tensor(gamma)
    beta = beta if isinstance(beta, Tensor) else Tensor(beta)
    c = features.shape[1]
    if gamma.shape[-1] != c or beta.shape[-1] != c:
        raise DimensionError(f"modulation has {gamma.shape[-1]} channels, features have {c}")
    shape = (-1, c, 1, 1) if gamma.ndim == 2 else (1, c, 1, 1)
    return (gamma.reshape(shape) + 1.0) * features + beta.reshape(shape)


def modulate_tokens(tokens: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    """Same affine on channel-last tokens [N, T, C] with per-sample [N, C] parameters."""
    n, _, c = tokens.shape
    if gamma.shape[-1] != c:
        raise DimensionError(f"modulation has {gamma.shape[-1]} channels, tokens have {c}")
    return (gamma.reshape(n, 1, c) + 1.0) * tokens + beta.reshape(n, 1, c)
