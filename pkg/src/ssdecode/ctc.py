"""Draft-side decoding: greedy alignment, collapse, frame entropies, entropy gate.

The draft model emits one probability row per acoustic frame over an
augmented vocabulary (real tokens plus a blank symbol). Decoding picks the
argmax label per frame, merges consecutive duplicates, deletes blanks, and
gates the result on the per-frame entropies.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Probabilities below this are clamped inside the log only (0*log 0 := 0).
_LOG_CLAMP = 1e-12
_ROW_SUM_TOL = 1e-6


class InvalidPosteriorsError(ValueError):
    """Raised when a posterior matrix is not a stack of valid distributions."""


@dataclass(frozen=True)
class Vocabulary:
    """Augmented draft vocabulary: real token strings plus one blank symbol."""

    tokens: tuple[str, ...]
    blank_id: int

    def __post_init__(self):
        if len(self.tokens) < 2:
            raise ValueError("vocabulary needs at least one real token plus blank")
        if not 0 <= self.blank_id < len(self.tokens):
            raise ValueError(f"blank_id {self.blank_id} out of range")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("token identifiers must be unique")

    @property
    def size(self) -> int:
        return len(self.tokens)

    def text(self, token_ids) -> str:
        """Concatenate non-blank token strings; blanks are not allowed here."""
        if any(t == self.blank_id for t in token_ids):
            raise ValueError("blank_id in collapsed token sequence")
        return "".join(self.tokens[t] for t in token_ids)


@dataclass(frozen=True)
class FramePosteriors:
    """T rows of probabilities over the augmented vocabulary, plus frame rate."""

    frames: np.ndarray  # (T, V) float
    frame_duration_s: float = 0.08

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2:
            if frames.size == 0:
                frames = frames.reshape(0, 0)
            else:
                raise InvalidPosteriorsError(f"expected 2-D posteriors, got shape {frames.shape}")
        object.__setattr__(self, "frames", frames)
        validate_posteriors(frames)
        if self.frame_duration_s <= 0:
            raise InvalidPosteriorsError("frame_duration_s must be positive")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def audio_duration_s(self) -> float:
        return self.num_frames * self.frame_duration_s


def validate_posteriors(frames: np.ndarray) -> None:
    if frames.size == 0:
        return
    if not np.isfinite(frames).all():
        raise InvalidPosteriorsError("posterior rows contain NaN or inf")
    if (frames < 0).any() or (frames > 1).any():
        raise InvalidPosteriorsError("posterior entries must lie in [0, 1]")
    sums = frames.sum(axis=1)
    bad = np.abs(sums - 1.0) > _ROW_SUM_TOL
    if bad.any():
        t = int(np.argmax(bad))
        raise InvalidPosteriorsError(f"row {t} sums to {sums[t]:.8f}, not 1")


@dataclass(frozen=True)
class DraftHypothesis:
    """Collapsed draft token sequence with its gate evidence.

    ``text`` is the detokenized form of ``tokens`` under the vocabulary the
    draft was decoded with; downstream verification re-tokenizes it into the
    verifier's own token space.
    """

    tokens: tuple[int, ...]
    text: str
    entropies: np.ndarray = field(repr=False)
    gate_passed: bool


def greedy_alignment(post: FramePosteriors) -> np.ndarray:
    """Per-frame argmax label sequence; ties break toward the lowest index."""
    if post.num_frames == 0:
        return np.zeros(0, dtype=np.int64)
    # np.argmax returns the first maximal index, which is the tie-break we pin.
    return post.frames.argmax(axis=1).astype(np.int64)


def collapse(path: np.ndarray | list[int], vocab: Vocabulary) -> list[int]:
    """Merge runs of identical labels, then delete blanks (in that order)."""
    out: list[int] = []
    prev = None
    for label in path:
        label = int(label)
        if not 0 <= label < vocab.size:
            raise ValueError(f"label {label} outside vocabulary of size {vocab.size}")
        if label != prev:
            out.append(label)
        prev = label
    return [t for t in out if t != vocab.blank_id]


def frame_entropies(post: FramePosteriors) -> np.ndarray:
    """Per-frame Shannon entropy in nats; 0*log 0 contributes 0."""
    p = post.frames
    if p.size == 0:
        return np.zeros(p.shape[0], dtype=np.float64)
    logs = np.log(np.clip(p, _LOG_CLAMP, None))
    ent = -(p * logs).sum(axis=1)
    # Clamping can leave a tiny negative residue on one-hot rows.
    return np.maximum(ent, 0.0)


def entropy_gate(entropies: np.ndarray | list[float], tau_ctc: float) -> bool:
    """True iff every frame entropy is strictly below the threshold.

    An empty frame sequence passes vacuously.
    """
    ent = np.asarray(entropies, dtype=np.float64)
    if ent.size == 0:
        return True
    return bool((ent < tau_ctc).all())


def decode_draft(post: FramePosteriors, tau_ctc: float, vocab: Vocabulary) -> DraftHypothesis:
    """Greedy-align, collapse, and gate one utterance's posteriors."""
    if post.frames.size and post.frames.shape[1] != vocab.size:
        raise InvalidPosteriorsError(
            f"posterior width {post.frames.shape[1]} != vocabulary size {vocab.size}"
        )
    tokens = tuple(collapse(greedy_alignment(post), vocab))
    ent = frame_entropies(post)
    return DraftHypothesis(
        tokens=tokens,
        text=vocab.text(tokens),
        entropies=ent,
        gate_passed=entropy_gate(ent, tau_ctc),
    )
