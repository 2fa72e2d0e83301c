"""Chinese pentatonic mode theory: scales, conditioning vectors, mode classification.

The five modes (Gong, Shang, Jue, Zhi, Yu) are rotations of one
anhemitonic five-note collection, each named after its tonic degree.
Because the five rotations of a single collection are set-equal, a
classifier can only tell them apart through tonic evidence (cadence and
emphasis), which is exactly how ``classify_mode`` breaks ties.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


class PentatonicMode(Enum):
    GONG = "Gong"
    SHANG = "Shang"
    JUE = "Jue"
    ZHI = "Zhi"
    YU = "Yu"

    def __str__(self):
        return self.value


#: Fixed mode order used for embeddings and tie-breaking.
MODE_ORDER = (
    PentatonicMode.GONG,
    PentatonicMode.SHANG,
    PentatonicMode.JUE,
    PentatonicMode.ZHI,
    PentatonicMode.YU,
)

# Gong is major-scale degrees 1,2,3,5,6; the other modes re-root the same
# collection at successive degrees.
_GONG_INTERVALS = (0, 2, 4, 7, 9)

_MODE_INTERVALS = {}
for _i, _mode in enumerate(MODE_ORDER):
    _rot = [_GONG_INTERVALS[(_i + k) % 5] for k in range(5)]
    _root = _rot[0]
    _MODE_INTERVALS[_mode] = tuple(sorted((x - _root) % 12 for x in _rot))


class InsufficientDataError(Exception):
    """Raised when a score is too short (or silent) to classify."""


def mode_from_name(name: str) -> PentatonicMode:
    for mode in MODE_ORDER:
        if mode.value.lower() == str(name).lower():
            return mode
    raise ValueError(f"unknown pentatonic mode: {name!r}")


def mode_intervals(mode: PentatonicMode) -> tuple[int, ...]:
    """Semitone offsets from the tonic, ascending, starting at 0.

    Gong -> (0,2,4,7,9); the rest are rotations of that collection
    renormalized to start at 0.
    """
    return _MODE_INTERVALS[mode]


def scale_pitch_classes(mode: PentatonicMode, tonic_pc: int) -> tuple[int, ...]:
    """The five pitch classes of ``mode`` rooted at ``tonic_pc`` (0-11)."""
    if not 0 <= int(tonic_pc) <= 11:
        raise ValueError(f"tonic_pc must be in 0..11, got {tonic_pc}")
    return tuple((int(tonic_pc) + i) % 12 for i in mode_intervals(mode))


@dataclass(frozen=True)
class TonalConditioning:
    """One-hot mode vector replicated at every generation step.

    ``embedding`` is the 5-dim one-hot over MODE_ORDER; ``steps`` copies
    of the identical vector form the tiled conditioning sequence. The
    vector depends on the mode label only, never on the tonic.
    """

    embedding: tuple[float, ...]
    steps: int
    tiled: bool = True

    @property
    def mode(self) -> PentatonicMode:
        return MODE_ORDER[int(np.argmax(self.embedding))]

    def tiled_matrix(self) -> np.ndarray:
        """(steps, 5) array; every row is the same one-hot vector."""
        return np.tile(np.asarray(self.embedding, dtype=float), (self.steps, 1))


def tonal_embedding(mode: PentatonicMode, steps: int) -> TonalConditioning:
    """Build the tiled one-hot conditioning for ``mode`` over ``steps`` steps."""
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    onehot = tuple(1.0 if m is mode else 0.0 for m in MODE_ORDER)
    return TonalConditioning(embedding=onehot, steps=int(steps))


@dataclass(frozen=True)
class ModeClassification:
    mode: PentatonicMode
    tonic_pc: int
    confidence: float
    low_confidence: bool

    def __iter__(self):
        # allow `mode, tonic, conf = classify_mode(...)`
        return iter((self.mode, self.tonic_pc, self.confidence))


# Confidence below this marks the result low-confidence (a uniform
# chromatic melody scores 5/12 ~ 0.417 for every hypothesis).
LOW_CONFIDENCE_THRESHOLD = 0.6


def classify_mode(score) -> ModeClassification:
    """Classify the (mode, tonic) of a melody from its pitch-class profile.

    Builds a duration-weighted pitch-class histogram and scores all
    12 tonics x 5 modes hypotheses by

        in-collection weight + tonic bonus

    where the tonic bonus credits a hypothesis whose tonic matches the
    final note (twice that note's duration) and/or the longest note
    (once its duration). Ties break toward the lower tonic pitch class,
    then mode order. Confidence is the winning hypothesis's in-collection
    weight fraction.
    """
    notes = list(score.notes)
    if len(notes) < 4:
        raise InsufficientDataError(
            f"need at least 4 notes to classify, got {len(notes)}"
        )

    hist = np.zeros(12)
    for n in notes:
        hist[n.pitch % 12] += n.duration_beats
    total = float(hist.sum())
    if total <= 0:
        raise InsufficientDataError("score has no sounding duration")

    final = notes[-1]
    longest = max(notes, key=lambda n: n.duration_beats)
    final_pc = final.pitch % 12
    longest_pc = longest.pitch % 12

    best = None
    for tonic in range(12):
        for mode in MODE_ORDER:
            pcs = scale_pitch_classes(mode, tonic)
            in_collection = float(hist[list(pcs)].sum())
            bonus = 0.0
            if final_pc == tonic:
                bonus += 2.0 * final.duration_beats
            if longest_pc == tonic:
                bonus += longest.duration_beats
            score_val = in_collection + bonus
            key = (-score_val, tonic, MODE_ORDER.index(mode))
            if best is None or key < best[0]:
                best = (key, mode, tonic, in_collection)

    _, mode, tonic, in_collection = best
    confidence = in_collection / total
    return ModeClassification(
        mode=mode,
        tonic_pc=tonic,
        confidence=confidence,
        low_confidence=confidence < LOW_CONFIDENCE_THRESHOLD,
    )
