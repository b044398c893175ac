"""Input/output containers and dataset file handling.

A dataset is a JSONL file with one object per line:

    {"id": "s0", "image": [0.1, ...], "image_shape": [4], "text": [5, 9], "label": 2}

Images are stored flat with an explicit shape; text is a sequence of
non-negative integer token ids.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, EmptyInput, InvalidSpec, ParseFailure


@dataclass
class InputPair:
    """One image/text input pair with an optional class label."""

    sample_id: str
    image: np.ndarray
    text: tuple[int, ...]
    label: int | None = None

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float64)
        self.text = tuple(int(t) for t in self.text)

    def validate(self) -> None:
        if self.image.size < 1:
            raise EmptyInput(f"sample {self.sample_id}: image tensor is empty")
        if not np.all(np.isfinite(self.image)):
            raise InvalidSpec(f"sample {self.sample_id}: image has non-finite values")
        if len(self.text) < 1:
            raise EmptyInput(f"sample {self.sample_id}: token sequence is empty")
        if any(t < 0 for t in self.text):
            raise InvalidSpec(f"sample {self.sample_id}: negative token id")
        if self.label is not None and self.label < 0:
            raise InvalidSpec(f"sample {self.sample_id}: negative label")


@dataclass
class OutputVector:
    """Model output: a length-K vector, optionally one-hot ("hard")."""

    values: np.ndarray
    hard: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)

    @property
    def k(self) -> int:
        return int(self.values.shape[0])

    def validate(self, simplex: bool = False) -> None:
        """Check shape invariants.

        ``simplex`` applies to probabilistic outputs only; identity-link
        regression outputs are arbitrary real vectors.
        """
        if self.values.ndim != 1 or self.values.size < 1:
            raise InvalidSpec("output must be a non-empty vector")
        if self.hard:
            ones = np.flatnonzero(self.values == 1.0)
            if len(ones) != 1 or not np.all(np.isin(self.values, (0.0, 1.0))):
                raise InvalidSpec("hard output must be exactly one-hot")
        elif simplex:
            if np.any(self.values < -1e-9) or np.any(self.values > 1 + 1e-9):
                raise InvalidSpec("soft output entries must lie in [0, 1]")
            if abs(float(self.values.sum()) - 1.0) > 1e-9:
                raise InvalidSpec("soft output must sum to 1 within 1e-9")


def one_hot(index: int, k: int) -> np.ndarray:
    out = np.zeros(k, dtype=np.float64)
    out[index] = 1.0
    return out


def harden(values: np.ndarray) -> np.ndarray:
    """Collapse a score vector to a one-hot argmax vector (ties: first max)."""
    return one_hot(int(np.argmax(values)), len(values))


# -- dataset files -------------------------------------------------------------

def load_dataset(path: str) -> list[InputPair]:
    pairs: list[InputPair] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                image = np.asarray(obj["image"], dtype=np.float64)
                shape = tuple(int(s) for s in obj.get("image_shape", [image.size]))
                pair = InputPair(
                    sample_id=str(obj["id"]),
                    image=image.reshape(shape),
                    text=tuple(int(t) for t in obj["text"]),
                    label=None if obj.get("label") is None else int(obj["label"]),
                )
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise ParseFailure(f"bad dataset record: {exc}", line=lineno) from exc
            if pair.sample_id in seen:
                raise ParseFailure(f"duplicate sample id {pair.sample_id!r}", line=lineno)
            seen.add(pair.sample_id)
            pair.validate()
            pairs.append(pair)
    if not pairs:
        raise EmptyInput(f"dataset {path} contains no samples")
    return pairs


def save_dataset(pairs: list[InputPair], path: str) -> None:
    def encode(pair: InputPair) -> str:
        return json.dumps(
            {
                "id": pair.sample_id,
                "image": [float(v) for v in pair.image.ravel()],
                "image_shape": list(pair.image.shape),
                "text": list(pair.text),
                "label": pair.label,
            }
        )

    atomic_write_text(path, "".join(encode(p) + "\n" for p in pairs))


def atomic_write_text(path: str, content: str) -> None:
    """Write via a temp file plus rename so readers never see partial output."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(content)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def format_float(x: float) -> str:
    """Shortest round-trip decimal form, used by every delimited writer."""
    return repr(float(x))
