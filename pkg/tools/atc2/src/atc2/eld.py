"""Lexical English detection, and the linear text classifier behind it.

Input is recognizer output, not audio: each word contributes its confidence
as a soft count. Documents become TF-IDF vectors (TF normalized by the mass
of in-vocabulary words, IDF smoothed) and a logistic regression decides. The
same classifier, trained on role labels, detects whether the controller or the
pilot is speaking.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import orjson

logger = logging.getLogger(__name__)

MODEL_VERSION = 1
THRESHOLD = 0.5
KINDS = frozenset({"eld", "role"})
DEFAULT_EPOCHS = 500
_P_EDGE = 1e-12


class EldError(ValueError):
    pass


class EmptyCorpus(EldError):
    pass


class SingleClassCorpus(EldError):
    pass


class EmptyEvidence(EldError):
    pass


@dataclass(frozen=True)
class SoftCountVector:
    """word -> accumulated confidence mass."""

    masses: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        clean = {}
        for word, mass in self.masses.items():
            if not math.isfinite(mass) or mass < 0:
                raise EldError(f"mass of {word!r} must be finite and >= 0, got {mass}")
            clean[word] = float(mass)
        object.__setattr__(self, "masses", clean)

    @property
    def total(self) -> float:
        return math.fsum(self.masses.values())

    def __len__(self) -> int:
        return len(self.masses)


def soft_counts(transcript: Iterable[Any]) -> SoftCountVector:
    """Σ of confidences per word.

    Accepts `(word, conf)` pairs or transcript tokens with `.word`/`.conf`.
    """
    masses: dict[str, float] = {}
    for item in transcript:
        word, conf = (item.word, item.conf) if hasattr(item, "word") else item
        if not 0.0 <= conf <= 1.0:
            raise EldError(f"confidence {conf} of {word!r} outside [0, 1]")
        masses[word] = masses.get(word, 0.0) + float(conf)
    return SoftCountVector(masses)


def hard_counts(words: Iterable[str]) -> SoftCountVector:
    return soft_counts((w, 1.0) for w in words)


@dataclass(frozen=True, eq=False)
class LinearTextModel:
    kind: str
    vocabulary: tuple[str, ...]
    idf: np.ndarray
    weights: np.ndarray
    bias: float
    seed: int
    hyperparameters: Mapping[str, Any] = field(default_factory=dict)
    losses: tuple[float, ...] = ()
    _index: Mapping[str, int] = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise EldError(f"kind {self.kind!r} not in {sorted(KINDS)}")
        idf = np.asarray(self.idf, dtype=np.float64)
        weights = np.asarray(self.weights, dtype=np.float64)
        if not (len(self.vocabulary) == idf.size == weights.size):
            raise EldError(
                f"vocabulary ({len(self.vocabulary)}), idf ({idf.size}) and weights "
                f"({weights.size}) differ in length"
            )
        object.__setattr__(self, "vocabulary", tuple(self.vocabulary))
        object.__setattr__(self, "idf", idf)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "bias", float(self.bias))
        object.__setattr__(self, "_index", {w: i for i, w in enumerate(self.vocabulary)})

    def features(self, v: SoftCountVector) -> np.ndarray:
        """TF-IDF vector; TF is over in-vocabulary mass, so unknown words are ignored."""
        x = np.zeros(len(self.vocabulary))
        known = {self._index[w]: m for w, m in v.masses.items() if w in self._index and m > 0}
        total = sum(known.values())
        if total <= 0:
            return x
        for i, mass in known.items():
            x[i] = mass / total * self.idf[i]
        return x

    def logit(self, x: np.ndarray) -> float:
        return float(x @ self.weights + self.bias)


def _sigmoid(z: np.ndarray | float) -> np.ndarray | float:
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z)))


def _check_corpus(corpus: Sequence[tuple[SoftCountVector, int]]) -> None:
    if not corpus:
        raise EmptyCorpus("training corpus is empty")
    labels = {label for _, label in corpus}
    if not labels <= {0, 1}:
        raise EldError(f"labels must be 0 or 1, got {sorted(labels)}")
    if len(labels) < 2:
        raise SingleClassCorpus(f"corpus has only label {labels.pop()}")


def fit_idf(docs: Sequence[SoftCountVector]) -> tuple[tuple[str, ...], np.ndarray]:
    """Vocabulary and IDF = ln(N / (1 + df)) + 1."""
    df: dict[str, int] = {}
    for doc in docs:
        for word, mass in doc.masses.items():
            if mass > 0:
                df[word] = df.get(word, 0) + 1
    vocabulary = tuple(sorted(df))
    n = len(docs)
    idf = np.array([math.log(n / (1 + df[w])) + 1.0 for w in vocabulary])
    return vocabulary, idf


def _mean_loss(X: np.ndarray, y: np.ndarray, w: np.ndarray, b: float, l2: float) -> float:
    z = X @ w + b
    ce = np.logaddexp(0.0, z) - y * z
    return float(ce.mean() + 0.5 * l2 * (w @ w))


def train(
    kind: str,
    corpus: Sequence[tuple[SoftCountVector, int]],
    seed: int = 0,
    epochs: int = DEFAULT_EPOCHS,
    learning_rate: float | None = None,
    l2: float = 0.0,
) -> LinearTextModel:
    """Full-batch gradient descent on mean cross-entropy.

    The step never exceeds 1/L, L the smoothness bound of the loss
    (max ‖[x, 1]‖² / 4 + l2), so the loss is non-increasing every epoch.
    `learning_rate=None` takes that bound as the step.
    """
    _check_corpus(corpus)
    docs = [doc for doc, _ in corpus]
    vocabulary, idf = fit_idf(docs)
    if not vocabulary:
        raise EmptyCorpus("corpus has no word with positive mass")
    y = np.array([label for _, label in corpus], dtype=np.float64)

    blank = LinearTextModel(kind, vocabulary, idf, np.zeros(len(vocabulary)), 0.0, seed)
    X = np.vstack([blank.features(doc) for doc in docs])

    smoothness = float(np.max(np.sum(X**2, axis=1) + 1.0)) / 4.0 + l2
    cap = 1.0 / smoothness
    step = cap if learning_rate is None else min(learning_rate, cap)
    if learning_rate is not None and learning_rate > cap:
        logger.info("learning rate %.4g capped at %.4g", learning_rate, cap)

    rng = np.random.default_rng(seed)
    w = rng.normal(0.0, 0.01, len(vocabulary))
    b = 0.0
    n = len(corpus)
    losses = [_mean_loss(X, y, w, b, l2)]
    for _ in range(epochs):
        residual = _sigmoid(X @ w + b) - y
        grad_w = X.T @ residual / n + l2 * w
        grad_b = float(residual.mean())
        w = w - step * grad_w
        b = b - step * grad_b
        losses.append(_mean_loss(X, y, w, b, l2))

    logger.info("%s model: %d words, %d docs, loss %.4f -> %.4f",
                kind, len(vocabulary), n, losses[0], losses[-1])
    return LinearTextModel(
        kind=kind,
        vocabulary=vocabulary,
        idf=idf,
        weights=w,
        bias=b,
        seed=seed,
        hyperparameters={"epochs": epochs, "learning_rate": step, "l2": l2},
        losses=tuple(losses),
    )


def score(model: LinearTextModel, v: SoftCountVector) -> float:
    """P(label 1) in (0, 1). Raises EmptyEvidence when no known word carries mass."""
    if v.total <= 0:
        raise EmptyEvidence("no words with positive confidence")
    x = model.features(v)
    if not x.any():
        raise EmptyEvidence("no in-vocabulary words")
    p = float(_sigmoid(model.logit(x)))
    return min(max(p, _P_EDGE), 1.0 - _P_EDGE)


def decide(p: float) -> bool:
    return p >= THRESHOLD


def accuracy(model: LinearTextModel, corpus: Sequence[tuple[SoftCountVector, int]]) -> float:
    """Fraction decided correctly; documents without evidence count as wrong."""
    if not corpus:
        raise EmptyCorpus("nothing to evaluate")
    correct = 0
    for doc, label in corpus:
        try:
            correct += int(decide(score(model, doc)) == bool(label))
        except EmptyEvidence:
            continue
    return correct / len(corpus)


def sample_loss(model: LinearTextModel, sample: tuple[SoftCountVector, int]) -> float:
    doc, label = sample
    z = model.logit(model.features(doc))
    return float(np.logaddexp(0.0, z) - label * z)


def gradient(
    model: LinearTextModel, sample: tuple[SoftCountVector, int]
) -> tuple[np.ndarray, float]:
    """d(cross-entropy)/d(weights, bias) = (p − y)·x, (p − y)."""
    doc, label = sample
    x = model.features(doc)
    residual = float(_sigmoid(model.logit(x))) - label
    return residual * x, residual


def _replace(model: LinearTextModel, weights: np.ndarray, bias: float) -> LinearTextModel:
    return LinearTextModel(model.kind, model.vocabulary, model.idf, weights, bias, model.seed)


def gradient_check(
    model: LinearTextModel, sample: tuple[SoftCountVector, int], eps: float = 1e-5
) -> float:
    """Max relative error of the analytic gradient against central differences.

    Only coordinates the sample touches are perturbed; the rest are exactly
    zero both ways. Denominators are floored at 1e-4.
    """
    grad_w, grad_b = gradient(model, sample)
    x = model.features(sample[0])
    worst = 0.0

    def rel(analytic: float, numeric: float) -> float:
        return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-4)

    for j in np.flatnonzero(x):
        up, down = model.weights.copy(), model.weights.copy()
        up[j] += eps
        down[j] -= eps
        numeric = (
            sample_loss(_replace(model, up, model.bias), sample)
            - sample_loss(_replace(model, down, model.bias), sample)
        ) / (2 * eps)
        worst = max(worst, rel(float(grad_w[j]), numeric))
    numeric_b = (
        sample_loss(_replace(model, model.weights, model.bias + eps), sample)
        - sample_loss(_replace(model, model.weights, model.bias - eps), sample)
    ) / (2 * eps)
    return max(worst, rel(grad_b, numeric_b))


def save_model(model: LinearTextModel, path: Path) -> Path:
    payload = {
        "version": MODEL_VERSION,
        "kind": model.kind,
        "vocabulary": list(model.vocabulary),
        "idf": model.idf,
        "weights": model.weights,
        "bias": model.bias,
        "seed": model.seed,
        "hyperparameters": dict(model.hyperparameters),
        "losses": list(model.losses),
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(
        orjson.dumps(payload, option=orjson.OPT_SERIALIZE_NUMPY | orjson.OPT_INDENT_2)
    )
    return path


def load_model(path: Path) -> LinearTextModel:
    try:
        data = orjson.loads(path.read_bytes())
    except (OSError, orjson.JSONDecodeError) as exc:
        raise EldError(f"could not load model {path}: {exc}") from exc
    if not isinstance(data, dict) or data.get("version") != MODEL_VERSION:
        raise EldError(f"{path}: not a version {MODEL_VERSION} model file")
    try:
        return LinearTextModel(
            kind=data["kind"],
            vocabulary=tuple(data["vocabulary"]),
            idf=np.array(data["idf"], dtype=np.float64),
            weights=np.array(data["weights"], dtype=np.float64),
            bias=data["bias"],
            seed=data["seed"],
            hyperparameters=data.get("hyperparameters", {}),
            losses=tuple(data.get("losses", ())),
        )
    except KeyError as exc:
        raise EldError(f"{path}: missing {exc.args[0]}") from exc
