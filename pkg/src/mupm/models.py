"""Model adapters: synthetic closed-form predictors, replay tables, HTTP.

The synthetic kinds exist to validate the pipeline against analytically known
derivatives:

  synthetic-linear      F(x, y) = W x + V y + c            (identity link)
  synthetic-softmax     softmax(W x + V y + c + q * (1'x)(1'y) * u)
  synthetic-saturating  softmax(tanh(g * (W x + V y + c)))

with u the first standard basis vector. The replay kind serves recorded
outputs keyed by (sample_id, branch, replicate), which lets an external model
be driven from an exported manifest and the results re-imported. The http
kind POSTs to ``<base_url>/v1/evaluate`` with jitterless exponential-backoff
retries.
"""

from __future__ import annotations

import json
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field

import numpy as np

from .data import InputPair, OutputVector, atomic_write_text
from .errors import (
    DimensionMismatch,
    DuplicateKey,
    HttpFailure,
    InconsistentK,
    InvalidSpec,
    NonFiniteOutput,
    ParseFailure,
    ReplayMiss,
    UnsupportedKind,
)
from .perturb import PerturbationSpec, perturb_branch
from .rng import BRANCHES

SYNTHETIC_KINDS = ("synthetic-linear", "synthetic-softmax", "synthetic-saturating")
KINDS = SYNTHETIC_KINDS + ("replay", "http")


@dataclass
class ModelSpec:
    """Declarative description of a model; build_adapter turns it into one."""

    kind: str
    weights_image: np.ndarray | None = None
    weights_text: np.ndarray | None = None
    bias: np.ndarray | None = None
    interaction: float = 0.0
    gain: float = 1.0
    replay_path: str | None = None
    base_url: str | None = None
    timeout_s: float = 10.0
    retries: int = 3
    backoff_s: float = 0.1
    max_in_flight: int = 4

    def __post_init__(self):
        if self.weights_image is not None:
            self.weights_image = np.atleast_2d(np.asarray(self.weights_image, dtype=np.float64))
        if self.weights_text is not None:
            self.weights_text = np.atleast_2d(np.asarray(self.weights_text, dtype=np.float64))
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=np.float64).ravel()

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise InvalidSpec(f"unknown model kind {self.kind!r}")
        if self.kind in SYNTHETIC_KINDS:
            if self.weights_image is None or self.weights_text is None or self.bias is None:
                raise InvalidSpec(f"{self.kind} requires weights_image, weights_text, bias")
            k = self.bias.shape[0]
            if self.weights_image.shape[0] != k or self.weights_text.shape[0] != k:
                raise InvalidSpec("weight row counts must match bias length")
        elif self.kind == "replay":
            if not self.replay_path:
                raise InvalidSpec("replay requires replay_path")
        elif self.kind == "http":
            if not self.base_url:
                raise InvalidSpec("http requires base_url")
            if self.retries < 0 or self.timeout_s <= 0 or self.max_in_flight < 1:
                raise InvalidSpec("bad http settings")

    @property
    def k(self) -> int | None:
        return None if self.bias is None else int(self.bias.shape[0])

    def to_jsonable(self) -> dict:
        out: dict = {"kind": self.kind}
        if self.weights_image is not None:
            out["weights_image"] = self.weights_image.tolist()
        if self.weights_text is not None:
            out["weights_text"] = self.weights_text.tolist()
        if self.bias is not None:
            out["bias"] = self.bias.tolist()
        if self.kind == "synthetic-softmax":
            out["interaction"] = self.interaction
        if self.kind == "synthetic-saturating":
            out["gain"] = self.gain
        if self.replay_path:
            out["replay_path"] = self.replay_path
        if self.base_url:
            out["base_url"] = self.base_url
            out["timeout_s"] = self.timeout_s
            out["retries"] = self.retries
            out["backoff_s"] = self.backoff_s
            out["max_in_flight"] = self.max_in_flight
        return out

    @classmethod
    def from_jsonable(cls, obj: dict) -> "ModelSpec":
        try:
            spec = cls(
                kind=str(obj["kind"]),
                weights_image=obj.get("weights_image"),
                weights_text=obj.get("weights_text"),
                bias=obj.get("bias"),
                interaction=float(obj.get("interaction", 0.0)),
                gain=float(obj.get("gain", 1.0)),
                replay_path=obj.get("replay_path"),
                base_url=obj.get("base_url"),
                timeout_s=float(obj.get("timeout_s", 10.0)),
                retries=int(obj.get("retries", 3)),
                backoff_s=float(obj.get("backoff_s", 0.1)),
                max_in_flight=int(obj.get("max_in_flight", 4)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidSpec(f"bad model spec: {exc}") from exc
        spec.validate()
        return spec


# -- adapters -------------------------------------------------------------------

class SyntheticAdapter:
    """Closed-form predictor with exact Jacobians."""

    def __init__(self, spec: ModelSpec):
        spec.validate()
        self.spec = spec
        self.k = spec.bias.shape[0]
        self.d_image = spec.weights_image.shape[1]
        self.d_text = spec.weights_text.shape[1]

    # x: (n, d_image), y: (n, d_text) -> (n, k)
    def forward(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        s = self.spec
        logits = x @ s.weights_image.T + y @ s.weights_text.T + s.bias
        if s.kind == "synthetic-linear":
            return logits
        if s.kind == "synthetic-softmax":
            logits = logits.copy()
            logits[:, 0] += s.interaction * x.sum(axis=1) * y.sum(axis=1)
            return _softmax(logits)
        return _softmax(np.tanh(s.gain * logits))

    def _coerce(self, pair: InputPair) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(pair.image, dtype=np.float64).ravel()
        y = np.asarray(pair.text, dtype=np.float64)
        if x.shape[0] != self.d_image:
            raise DimensionMismatch(
                f"sample {pair.sample_id}: image has {x.shape[0]} values, expected {self.d_image}"
            )
        if y.shape[0] != self.d_text:
            raise DimensionMismatch(
                f"sample {pair.sample_id}: text has {y.shape[0]} tokens, expected {self.d_text}"
            )
        return x, y

    def evaluate(self, pair: InputPair, branch: str | None = None,
                 replicate: int | None = None) -> OutputVector:
        x, y = self._coerce(pair)
        values = self.forward(x[None, :], y[None, :])[0]
        _check_finite(values, pair.sample_id)
        return OutputVector(values=values, hard=False)

    def evaluate_batch(self, images: list[np.ndarray], texts: list[tuple[int, ...]],
                       sample_id: str = "?") -> np.ndarray:
        x = np.asarray([np.asarray(im, dtype=np.float64).ravel() for im in images])
        y = np.asarray([[float(t) for t in txt] for txt in texts])
        if x.shape[1] != self.d_image or y.shape[1] != self.d_text:
            raise DimensionMismatch(
                f"sample {sample_id}: batch shapes {x.shape[1]}/{y.shape[1]} do not match"
                f" model dims {self.d_image}/{self.d_text}"
            )
        out = self.forward(x, y)
        _check_finite(out, sample_id)
        return out

    def continuous_forward(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Real-valued single evaluation used by finite-difference probes."""
        return self.forward(np.atleast_2d(x), np.atleast_2d(y))[0]

    def true_derivatives(self, pair: InputPair) -> tuple[np.ndarray, np.ndarray]:
        """Exact Jacobians (dF/dimage: K x d_I, dF/dtext: K x d_T)."""
        s = self.spec
        x, y = self._coerce(pair)
        if s.kind == "synthetic-linear":
            return s.weights_image.copy(), s.weights_text.copy()
        logits = s.weights_image @ x + s.weights_text @ y + s.bias
        if s.kind == "synthetic-softmax":
            logits = logits.copy()
            logits[0] += s.interaction * x.sum() * y.sum()
            probs = _softmax(logits[None, :])[0]
            g = np.diag(probs) - np.outer(probs, probs)
            extra = np.zeros((self.k, 1))
            extra[0, 0] = s.interaction
            j_img = g @ (s.weights_image + extra * y.sum())
            j_txt = g @ (s.weights_text + extra * x.sum())
            return j_img, j_txt
        t = np.tanh(s.gain * logits)
        probs = _softmax(t[None, :])[0]
        g = np.diag(probs) - np.outer(probs, probs)
        chain = g * (s.gain * (1.0 - t * t))  # right-multiply by diag
        return chain @ s.weights_image, chain @ s.weights_text


class ReplayAdapter:
    """Serves recorded outputs keyed by (sample_id, branch, replicate)."""

    def __init__(self, table: dict[tuple[str, str, int], np.ndarray], k: int):
        self.table = table
        self.k = k

    @classmethod
    def from_path(cls, path: str) -> "ReplayAdapter":
        table, k = import_outputs(path)
        return cls(table, k)

    def evaluate(self, pair: InputPair, branch: str | None = None,
                 replicate: int | None = None) -> OutputVector:
        if branch is None or replicate is None:
            raise ReplayMiss(
                f"sample {pair.sample_id}: replay evaluation needs branch and replicate"
            )
        key = (pair.sample_id, branch, int(replicate))
        try:
            values = self.table[key]
        except KeyError:
            raise ReplayMiss(f"no recorded output for {key}") from None
        return OutputVector(values=values.copy(), hard=False)

    def true_derivatives(self, pair: InputPair):
        raise UnsupportedKind("replay adapters have no derivative access")

    def continuous_forward(self, x, y):
        raise UnsupportedKind("replay adapters cannot evaluate new inputs")


class HttpAdapter:
    """POSTs pairs to <base_url>/v1/evaluate with bounded concurrency."""

    def __init__(self, spec: ModelSpec):
        spec.validate()
        self.spec = spec
        self.k: int | None = None
        self._gate = threading.Semaphore(spec.max_in_flight)
        self._lock = threading.Lock()

    def evaluate(self, pair: InputPair, branch: str | None = None,
                 replicate: int | None = None) -> OutputVector:
        body = json.dumps(
            {
                "image": [float(v) for v in pair.image.ravel()],
                "image_shape": list(pair.image.shape),
                "text": list(pair.text),
            }
        ).encode("utf-8")
        url = self.spec.base_url.rstrip("/") + "/v1/evaluate"
        last_error: Exception | None = None
        for attempt in range(self.spec.retries + 1):
            if attempt > 0:
                # jitterless exponential backoff: base * 2^(attempt-1)
                time.sleep(self.spec.backoff_s * (2.0 ** (attempt - 1)))
            try:
                with self._gate:
                    request = urllib.request.Request(
                        url, data=body, headers={"Content-Type": "application/json"}
                    )
                    with urllib.request.urlopen(request, timeout=self.spec.timeout_s) as resp:
                        payload = json.loads(resp.read().decode("utf-8"))
            except urllib.error.HTTPError as exc:
                if 400 <= exc.code < 500:
                    raise HttpFailure(
                        f"sample {pair.sample_id}: server rejected request ({exc.code})"
                    ) from exc
                last_error = exc
                continue
            except (urllib.error.URLError, TimeoutError, OSError) as exc:
                last_error = exc
                continue
            try:
                values = np.asarray(payload["output"], dtype=np.float64)
            except (KeyError, TypeError, ValueError) as exc:
                raise HttpFailure(
                    f"sample {pair.sample_id}: malformed response body"
                ) from exc
            _check_finite(values, pair.sample_id)
            with self._lock:
                if self.k is None:
                    self.k = int(values.shape[0])
                elif values.shape[0] != self.k:
                    raise InconsistentK(
                        f"response length {values.shape[0]} != established K={self.k}"
                    )
            return OutputVector(values=values, hard=False)
        raise HttpFailure(
            f"sample {pair.sample_id}: {self.spec.retries + 1} attempts failed"
            f" ({last_error})"
        )

    def true_derivatives(self, pair: InputPair):
        raise UnsupportedKind("http adapters have no derivative access")

    def continuous_forward(self, x, y):
        raise UnsupportedKind("http adapters accept integer token ids only")


Adapter = SyntheticAdapter | ReplayAdapter | HttpAdapter


def build_adapter(spec: ModelSpec) -> Adapter:
    spec.validate()
    if spec.kind in SYNTHETIC_KINDS:
        return SyntheticAdapter(spec)
    if spec.kind == "replay":
        return ReplayAdapter.from_path(spec.replay_path)
    return HttpAdapter(spec)


def evaluate(model, pair: InputPair, branch: str | None = None,
             replicate: int | None = None) -> OutputVector:
    """Evaluate a ModelSpec or a built adapter on one input pair."""
    adapter = build_adapter(model) if isinstance(model, ModelSpec) else model
    return adapter.evaluate(pair, branch=branch, replicate=replicate)


def true_derivatives(model, pair: InputPair) -> tuple[np.ndarray, np.ndarray]:
    adapter = build_adapter(model) if isinstance(model, ModelSpec) else model
    return adapter.true_derivatives(pair)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def _check_finite(values: np.ndarray, sample_id: str) -> None:
    if not np.all(np.isfinite(values)):
        raise NonFiniteOutput(f"sample {sample_id}: model produced non-finite output")


# -- evaluation manifests ---------------------------------------------------------

@dataclass
class ManifestEntry:
    """One perturbed input destined for an external model."""

    sample_id: str
    branch: str
    replicate: int
    image: np.ndarray
    text: tuple[int, ...]

    def key(self) -> tuple[str, str, int]:
        return (self.sample_id, self.branch, self.replicate)


def manifest_entries(
    dataset: list[InputPair],
    pspec: PerturbationSpec,
    global_seed: int,
    n_resamples: int,
    branches: tuple[str, ...] = BRANCHES,
) -> list[ManifestEntry]:
    """Perturbed inputs for every (sample, branch, replicate) combination.

    Uses the same streams as direct estimation, so recorded outputs replay
    into bitwise-identical uncertainty records.
    """
    entries: list[ManifestEntry] = []
    for pair in dataset:
        for branch in branches:
            for replicate in range(n_resamples):
                image, text = perturb_branch(pair, pspec, global_seed, branch, replicate)
                entries.append(
                    ManifestEntry(
                        sample_id=pair.sample_id,
                        branch=branch,
                        replicate=replicate,
                        image=image,
                        text=text,
                    )
                )
    return entries


def export_manifest(entries: list[ManifestEntry], path: str) -> None:
    seen: set[tuple[str, str, int]] = set()
    lines: list[str] = []
    for entry in entries:
        key = entry.key()
        if key in seen:
            raise DuplicateKey(f"duplicate manifest entry {key}")
        seen.add(key)
        lines.append(
            json.dumps(
                {
                    "sample_id": entry.sample_id,
                    "branch": entry.branch,
                    "replicate": entry.replicate,
                    "image": [float(v) for v in entry.image.ravel()],
                    "image_shape": list(entry.image.shape),
                    "text": list(entry.text),
                }
            )
        )
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def load_manifest(path: str) -> list[ManifestEntry]:
    entries: list[ManifestEntry] = []
    seen: set[tuple[str, str, int]] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                image = np.asarray(obj["image"], dtype=np.float64)
                shape = tuple(int(s) for s in obj["image_shape"])
                entry = ManifestEntry(
                    sample_id=str(obj["sample_id"]),
                    branch=str(obj["branch"]),
                    replicate=int(obj["replicate"]),
                    image=image.reshape(shape),
                    text=tuple(int(t) for t in obj["text"]),
                )
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise ParseFailure(f"bad manifest entry: {exc}", line=lineno) from exc
            if entry.branch not in BRANCHES:
                raise ParseFailure(f"unknown branch {entry.branch!r}", line=lineno)
            if entry.key() in seen:
                raise DuplicateKey(f"duplicate manifest entry {entry.key()} at line {lineno}")
            seen.add(entry.key())
            entries.append(entry)
    return entries


def import_outputs(path: str) -> tuple[dict[tuple[str, str, int], np.ndarray], int]:
    """Load recorded model outputs; returns (table, K)."""
    table: dict[tuple[str, str, int], np.ndarray] = {}
    k: int | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                key = (str(obj["sample_id"]), str(obj["branch"]), int(obj["replicate"]))
                values = np.asarray(obj["output"], dtype=np.float64)
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise ParseFailure(f"bad output record: {exc}", line=lineno) from exc
            if values.ndim != 1 or values.size < 1:
                raise ParseFailure("output must be a non-empty vector", line=lineno)
            if k is None:
                k = int(values.shape[0])
            elif values.shape[0] != k:
                raise InconsistentK(
                    f"line {lineno}: output length {values.shape[0]} != established K={k}"
                )
            if key in table:
                raise DuplicateKey(f"duplicate output for {key} at line {lineno}")
            if not np.all(np.isfinite(values)):
                raise ParseFailure("non-finite output values", line=lineno)
            table[key] = values
    if k is None:
        raise ParseFailure(f"outputs file {path} is empty")
    return table, k


def write_outputs(records: list[tuple[str, str, int, np.ndarray]], path: str) -> None:
    """Write (sample_id, branch, replicate, output) records as JSONL."""
    lines = [
        json.dumps(
            {
                "sample_id": sid,
                "branch": branch,
                "replicate": rep,
                "output": [float(v) for v in values],
            }
        )
        for sid, branch, rep, values in records
    ]
    atomic_write_text(path, "".join(line + "\n" for line in lines))
