"""Tala identification from stroke sequences.

Two complementary scores are computed per candidate tala:

* an alignment matching score: the reference stroke cycle is slid over
  the input in windows of the cycle length, each window is scored by
  global alignment, and the per-cycle maxima are averaged;
* a stroke ratio score: cosine similarity between the observed stroke
  histogram and the tala's characteristic stroke proportions, with one
  extra dimension counting out-of-vocabulary strokes.

The alignment score is sharp but needs at least one full cycle of
input; the ratio score works on any non-empty sequence but ignores
order.  ``identify_tala`` ranks candidates by either score or by the
alignment score with a ratio tie-break.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from functools import cmp_to_key
from typing import Iterable, Sequence

import numpy as np

from .core import StrokeLabel, TalaDefinition, Transcription

__all__ = [
    "NwParams",
    "DEFAULT_NW_PARAMS",
    "NeedMoreStrokes",
    "CandidateScore",
    "IdentificationResult",
    "nw_score",
    "nw_matching_score",
    "stroke_ratio_vector",
    "reference_ratio_vector",
    "stroke_ratio_score",
    "identify_tala",
    "evaluate_identification",
]

#: Two alignment scores within this distance are treated as tied.
SIGMA_TIE_EPS = 1e-6


@dataclass(frozen=True)
class NwParams:
    """Global-alignment scoring parameters."""

    match_score: int = 1
    mismatch_score: int = -1
    gap_penalty: int = -2

    def __post_init__(self) -> None:
        if not self.gap_penalty < self.mismatch_score < self.match_score:
            raise ValueError("require gap_penalty < mismatch_score < match_score")


DEFAULT_NW_PARAMS = NwParams()


class NeedMoreStrokes(ValueError):
    """Input shorter than the reference cycle; carries the shortfall."""

    def __init__(self, tala_name: str, shortfall: int):
        super().__init__(
            f"{tala_name}: need {shortfall} more stroke(s) to cover one cycle"
        )
        self.shortfall = shortfall


def nw_score(
    x: Sequence[StrokeLabel],
    y: Sequence[StrokeLabel],
    params: NwParams = DEFAULT_NW_PARAMS,
) -> int:
    """Optimal global-alignment score of two stroke sequences.

    Standard two-row dynamic programme; the optimum is read off the
    final cell, no backtracking required.
    """
    if not x or not y:
        raise ValueError("sequences must be non-empty")
    gap, match, mismatch = params.gap_penalty, params.match_score, params.mismatch_score
    prev = [j * gap for j in range(len(y) + 1)]
    for i, xi in enumerate(x, start=1):
        curr = [i * gap] + [0] * len(y)
        for j, yj in enumerate(y, start=1):
            sub = match if xi == yj else mismatch
            curr[j] = max(prev[j - 1] + sub, prev[j] + gap, curr[j - 1] + gap)
        prev = curr
    return prev[len(y)]


def _encode(labels: Iterable[StrokeLabel], table: dict[StrokeLabel, int]) -> np.ndarray:
    return np.array([table.setdefault(lab, len(table)) for lab in labels], dtype=np.int64)


def _batch_nw_scores(ref: np.ndarray, seqs: np.ndarray, params: NwParams) -> np.ndarray:
    """Align one reference against many equal-length sequences at once.

    ``seqs`` has shape (batch, w).  Returns the (batch,) score vector;
    each row equals nw_score(ref, seqs[row]).
    """
    gap, match, mismatch = params.gap_penalty, params.match_score, params.mismatch_score
    batch, w = seqs.shape
    prev = np.tile(np.arange(w + 1, dtype=np.int64) * gap, (batch, 1))
    curr = np.empty_like(prev)
    for i in range(1, len(ref) + 1):
        curr[:, 0] = i * gap
        sub = np.where(seqs == ref[i - 1], match, mismatch)
        for j in range(1, w + 1):
            np.maximum(prev[:, j - 1] + sub[:, j - 1], prev[:, j] + gap, out=curr[:, j])
            np.maximum(curr[:, j], curr[:, j - 1] + gap, out=curr[:, j])
        prev, curr = curr, prev
    return prev[:, w].copy()


def _rotations(codes: np.ndarray) -> np.ndarray:
    m = len(codes)
    doubled = np.concatenate([codes, codes])
    return np.stack([doubled[s : s + m] for s in range(m)])


def nw_matching_score(
    y: Sequence[StrokeLabel],
    tala: TalaDefinition,
    params: NwParams = DEFAULT_NW_PARAMS,
) -> tuple[float, float]:
    """Sliding-window alignment score of a stroke sequence against a tala.

    Windows of the reference length m are taken at every offset, scored
    by global alignment, grouped per traversed cycle (floor(t/m), the
    partial final group included), and the group maxima are averaged.
    The normalized form divides by m so talas of different cycle
    lengths compare fairly.

    When the input is shorter than two cycles no window is guaranteed
    to start on the sam, so the first group additionally considers all
    cyclic rotations of the reference against the opening window.
    Returns ``(sigma_nw, sigma_norm)``.
    """
    n, m = len(y), tala.m
    if n < m:
        raise NeedMoreStrokes(tala.name, m - n)

    table: dict[StrokeLabel, int] = {}
    ref = _encode(tala.x_ref, table)
    seq = _encode(y, table)

    windows = np.lib.stride_tricks.sliding_window_view(seq, m)
    scores = _batch_nw_scores(ref, windows, params)

    k = (n - m) // m + 1
    group_max = np.full(k, np.iinfo(np.int64).min, dtype=np.int64)
    groups = np.arange(len(scores)) // m
    np.maximum.at(group_max, groups, scores)

    if n < 2 * m:
        rot_scores = _batch_nw_scores(seq[:m], _rotations(ref), params)
        group_max[0] = max(group_max[0], int(rot_scores.max()))

    sigma_nw = float(group_max.mean())
    return sigma_nw, sigma_nw / m


def stroke_ratio_vector(y: Sequence[StrokeLabel], tala: TalaDefinition) -> np.ndarray:
    """Stroke histogram over the tala vocabulary plus one out-of-vocabulary slot."""
    if not y:
        raise ValueError("empty stroke sequence")
    index = {v: i for i, v in enumerate(tala.vocabulary)}
    counts = np.zeros(tala.d + 1, dtype=np.int64)
    for lab in y:
        counts[index.get(lab, tala.d)] += 1
    return counts


def reference_ratio_vector(tala: TalaDefinition) -> np.ndarray:
    """The tala's ratio vector extended with a zero out-of-vocabulary slot."""
    return np.array(list(tala.ratio) + [0], dtype=np.int64)


def stroke_ratio_score(R_ext: np.ndarray, T: np.ndarray) -> float:
    """Cosine similarity of two non-negative count vectors."""
    R = np.asarray(R_ext, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64)
    if R.shape != T.shape:
        raise ValueError(f"vector lengths differ: {R.shape} vs {T.shape}")
    if (R < 0).any() or (T < 0).any():
        raise ValueError("ratio vectors must be non-negative")
    nr, nt = np.linalg.norm(R), np.linalg.norm(T)
    if nr == 0.0 or nt == 0.0:
        raise ValueError("zero-norm ratio vector")
    return float(np.dot(R, T) / (nr * nt))


@dataclass(frozen=True)
class CandidateScore:
    name: str
    sigma_nw: float | None
    sigma_norm: float | None
    ratio_score: float


@dataclass(frozen=True)
class IdentificationResult:
    """Per-candidate scores plus the ranking under the chosen method."""

    method: str
    candidates: tuple[CandidateScore, ...]
    ranking: tuple[str, ...]
    elapsed_ms: float = field(compare=False)

    @property
    def best(self) -> str:
        return self.ranking[0]


def _rank(scores: list[CandidateScore], method: str) -> list[CandidateScore]:
    if method == "ratio":
        keyed = sorted(scores, key=lambda c: -c.ratio_score)
        return keyed

    def cmp(a: CandidateScore, b: CandidateScore) -> int:
        # Candidates the alignment score cannot rate sort below all rated ones.
        if (a.sigma_norm is None) != (b.sigma_norm is None):
            return 1 if a.sigma_norm is None else -1
        if a.sigma_norm is not None and abs(a.sigma_norm - b.sigma_norm) >= SIGMA_TIE_EPS:
            return -1 if a.sigma_norm > b.sigma_norm else 1
        if method == "both" and a.ratio_score != b.ratio_score:
            return -1 if a.ratio_score > b.ratio_score else 1
        return 0

    return sorted(scores, key=cmp_to_key(cmp))


def identify_tala(
    y: Transcription,
    candidates: Sequence[TalaDefinition],
    method: str = "both",
    params: NwParams = DEFAULT_NW_PARAMS,
) -> IdentificationResult:
    """Score a transcription against candidate talas and rank them.

    ``method`` picks the ranking key: "nw" (normalized alignment
    score), "ratio" (stroke ratio cosine), or "both" (alignment score
    with ratio tie-break for near-equal values).  Ties are broken by
    candidate list order.  Under "nw" and "both" at least one candidate
    must be alignment-scorable, i.e. the input must span a full cycle.
    """
    if method not in ("nw", "ratio", "both"):
        raise ValueError(f"unknown method {method!r}")
    if len(y) == 0:
        raise ValueError("empty transcription")
    if not candidates:
        raise ValueError("no candidate talas given")

    labels = y.labels
    t0 = time.perf_counter()
    scores: list[CandidateScore] = []
    for tala in candidates:
        ratio = stroke_ratio_score(
            reference_ratio_vector(tala), stroke_ratio_vector(labels, tala)
        )
        try:
            sigma_nw, sigma_norm = nw_matching_score(labels, tala, params)
        except NeedMoreStrokes:
            sigma_nw = sigma_norm = None
        scores.append(CandidateScore(tala.name, sigma_nw, sigma_norm, ratio))

    if method in ("nw", "both") and all(c.sigma_norm is None for c in scores):
        shortest = min(t.m for t in candidates)
        raise NeedMoreStrokes("all candidates", shortest - len(labels))

    ranked = _rank(scores, method)
    elapsed_ms = (time.perf_counter() - t0) * 1000.0
    return IdentificationResult(
        method=method,
        candidates=tuple(scores),
        ranking=tuple(c.name for c in ranked),
        elapsed_ms=elapsed_ms,
    )


def evaluate_identification(
    corpus: Sequence[tuple[Transcription, str]],
    candidates: Sequence[TalaDefinition],
    method: str = "both",
    params: NwParams = DEFAULT_NW_PARAMS,
) -> tuple[float, float]:
    """Rank-1 accuracy (percent) and mean per-item scoring time (ms) on a corpus."""
    if not corpus:
        raise ValueError("empty corpus")
    if not candidates:
        raise ValueError("no candidate talas given")
    hits = 0
    times = []
    for transcription, truth in corpus:
        result = identify_tala(transcription, candidates, method, params)
        hits += int(result.best == truth)
        times.append(result.elapsed_ms)
    return 100.0 * hits / len(corpus), float(np.mean(times))
