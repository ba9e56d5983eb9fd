"""Estimators and distances over collections of responses."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Hashable, Iterable, Mapping, Sequence

import numpy as np
from scipy.spatial.distance import pdist

PI_SOFT_RULES = ("reconciled", "appendix")


@dataclass(frozen=True)
class CategoryDistribution:
    probs: tuple[float, ...]
    support_labels: tuple[str, ...] | None = None

    def __post_init__(self):
        p = tuple(float(x) for x in np.asarray(self.probs, dtype=np.float64).ravel())
        object.__setattr__(self, "probs", p)
        if not p:
            raise ValueError("empty distribution")
        if any(x < 0 or not math.isfinite(x) for x in p):
            raise ValueError("probabilities must be finite and non-negative")
        if abs(sum(p) - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {sum(p)}, not 1")
        if self.support_labels is not None:
            labels = tuple(self.support_labels)
            object.__setattr__(self, "support_labels", labels)
            if len(labels) != len(p):
                raise ValueError("support_labels length differs from probs")

    @classmethod
    def from_samples(cls, samples: Iterable[int], m: int) -> "CategoryDistribution":
        counts = np.bincount(np.asarray(list(samples), dtype=np.int64), minlength=m)
        if counts.size != m:
            raise ValueError(f"sample category outside [0, {m})")
        if counts.sum() == 0:
            raise ValueError("no samples")
        return cls(tuple(counts / counts.sum()))

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.probs)

    def __len__(self):
        return len(self.probs)


def _as_probs(d) -> np.ndarray:
    return d.array if isinstance(d, CategoryDistribution) else np.asarray(d, dtype=np.float64)


def majority_vote(samples: Sequence[Hashable]):
    """Most frequent element; ties go to the smallest value."""
    if len(samples) == 0:
        raise ValueError("majority vote of no samples")
    counts = Counter(samples)
    top = max(counts.values())
    return min(k for k, c in counts.items() if c == top)


def majority_vote_rows(cats: np.ndarray, m: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """Row-wise majority vote over integer categories, shape ``(rows, n)``.

    Without ``rng`` ties go to the smallest index (``np.argmax`` returns the
    first maximum).  With ``rng`` tied categories win with equal probability.
    """
    counts = category_counts(cats, m)
    if rng is None:
        return np.argmax(counts, axis=1)
    return np.argmax(counts + 0.5 * rng.random(counts.shape), axis=1)


def category_counts(cats: np.ndarray, m: int) -> np.ndarray:
    """Per-row category counts, shape ``(rows, m)``."""
    cats = np.asarray(cats)
    return np.stack([(cats == k).sum(axis=1) for k in range(m)], axis=1)


def confidence(samples: Sequence[Hashable]) -> float:
    """Relative frequency of the (tie-broken) mode."""
    mode = majority_vote(samples)
    return sum(1 for s in samples if s == mode) / len(samples)


def chi_squared_distance(p, q) -> float:
    """Sum over the joint support of (p - q)^2 / (p + q)."""
    p, q = _as_probs(p), _as_probs(q)
    if p.shape != q.shape:
        raise ValueError(f"support sizes differ: {p.size} vs {q.size}")
    s = p + q
    nz = s > 0
    return float(np.sum((p[nz] - q[nz]) ** 2 / s[nz]))


def l2_centroid_distance(a, b) -> float:
    """Euclidean distance between the mean vectors of two embedding sets."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.size == 0 or b.size == 0:
        raise ValueError("embedding sets must be non-empty")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"embedding dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    return float(np.linalg.norm(a.mean(axis=0) - b.mean(axis=0)))


def pi_continuous(per_example: Sequence[tuple[float, float]]) -> float:
    """Fraction of examples whose distance strictly drops from n=1 to n=10."""
    if len(per_example) == 0:
        raise ValueError("no examples")
    d = np.asarray(per_example, dtype=np.float64)
    if np.any(d < 0):
        raise ValueError("distances must be non-negative")
    return float(np.mean(d[:, 1] < d[:, 0]))


def soft_mismatch(p, q, rule: str = "reconciled") -> float:
    """Mismatch score between the best responses of two distributions.

    ``appendix`` scores ``|p_i - q_j|`` for the two argmaxes whatever they are.
    ``reconciled`` does the same when ``i == j`` and scores a full mismatch of 1
    otherwise, so confidently flipped answers are not scored as agreement.
    """
    p, q = _as_probs(p), _as_probs(q)
    if p.shape != q.shape:
        raise ValueError(f"support sizes differ: {p.size} vs {q.size}")
    i, j = int(np.argmax(p)), int(np.argmax(q))
    if rule == "appendix":
        return abs(p[i] - q[j])
    if rule == "reconciled":
        return abs(p[i] - q[i]) if i == j else 1.0
    raise ValueError(f"unknown pi soft rule {rule!r}; expected one of {PI_SOFT_RULES}")


def pi_categorical(pairs: Sequence[tuple], rule: str = "reconciled") -> float:
    """One minus the mean soft mismatch over (source, target) pairs."""
    if len(pairs) == 0:
        raise ValueError("no examples")
    return 1.0 - float(np.mean([soft_mismatch(p, q, rule) for p, q in pairs]))


@dataclass
class CorrectnessTable:
    """Per-question source correctness and per-(question, language) target correctness."""

    source: dict[str, bool]
    target: dict[tuple[str, str], bool]

    def __post_init__(self):
        missing = sorted({q for q, _ in self.target} - set(self.source))
        if missing:
            raise ValueError(f"target rows without a source row for questions: {missing}")

    @classmethod
    def from_rows(cls, rows: Iterable[tuple[str, str, str, bool]]) -> "CorrectnessTable":
        """Build from ``(question_id, language, role, correct)`` rows."""
        source, target = {}, {}
        for qid, lang, role, correct in rows:
            if role == "source":
                source[qid] = bool(correct)
            elif role == "target":
                target[(qid, lang)] = bool(correct)
            else:
                raise ValueError(f"unknown role {role!r}")
        return cls(source, target)


def transfer_score(table: CorrectnessTable) -> float:
    """Percentage of (question, target language) pairs correct on both sides."""
    if not table.target:
        raise ValueError("no target rows")
    hits = [table.source[q] and ok for (q, _), ok in table.target.items()]
    return 100.0 * sum(hits) / len(hits)


def default_normalizer(text: str) -> str:
    from .ingest import normalize_response

    return normalize_response(text)


def mode_match(
    source_samples: Sequence[str],
    target_samples: Sequence[str],
    normalizer: Callable[[str], str] | None = None,
) -> bool:
    """Whether the modes of two response lists agree after normalization."""
    if not source_samples or not target_samples:
        raise ValueError("mode_match needs non-empty sample lists")
    norm = normalizer or default_normalizer
    s = majority_vote([norm(x) for x in source_samples])
    t = majority_vote([norm(x) for x in target_samples])
    return s == t


def mae(pairs: Sequence[tuple[float, float]]) -> float:
    if len(pairs) == 0:
        raise ValueError("no pairs")
    d = np.asarray(pairs, dtype=np.float64)
    return float(np.mean(np.abs(d[:, 0] - d[:, 1])))


def bootstrap_ci(
    values: Sequence[float], level: float = 0.95, resamples: int = 2000, seed: int = 0
) -> tuple[float, float]:
    """Percentile bootstrap interval for the mean."""
    x = np.asarray(values, dtype=np.float64)
    if x.size < 2:
        raise ValueError("bootstrap needs at least 2 values")
    if not 0 < level < 1:
        raise ValueError(f"level must be in (0, 1), got {level}")
    if resamples < 1000:
        raise ValueError(f"resamples must be >= 1000, got {resamples}")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, x.size, size=(resamples, x.size))
    means = x[idx].mean(axis=1)
    alpha = (1 - level) / 2
    lo, hi = np.quantile(means, [alpha, 1 - alpha])
    return float(lo), float(hi)


@dataclass(frozen=True)
class OracleDistance:
    value: float
    ci: tuple[float, float]
    n_questions: int


def oracle_distance(
    correct_embeddings: Mapping[str, Sequence[Sequence[float]]],
    level: float = 0.95,
    resamples: int = 2000,
    seed: int = 0,
) -> OracleDistance | None:
    """Mean pairwise L2 distance among correct responses, averaged over questions.

    Returns None when no question has two or more correct responses.
    """
    per_q = []
    for qid in sorted(correct_embeddings):
        emb = np.asarray(correct_embeddings[qid], dtype=np.float64)
        if emb.ndim == 2 and emb.shape[0] >= 2:
            per_q.append(float(pdist(emb).mean()))
    if not per_q:
        return None
    value = float(np.mean(per_q))
    ci = bootstrap_ci(per_q, level, resamples, seed) if len(per_q) >= 2 else (value, value)
    return OracleDistance(value, ci, len(per_q))
