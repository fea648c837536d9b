"""Verifier-side logic: teacher-forced checking, prefix fallback, final assembly.

A verifier model scores token sequences autoregressively. The draft produced
by the CTC side is checked in one teacher-forced pass: every token must be
strictly more likely than the acceptance threshold. On failure, generation
resumes greedily from the longest verified prefix. The number of model
invocations is the engine's cost currency and is tracked exactly.
"""

from __future__ import annotations

import enum
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .config import ConfigError, DecodeConfig
from .ctc import DraftHypothesis


class DecodeError(RuntimeError):
    """Per-utterance decode failure; never aborts a batch."""


class RetokenizeError(DecodeError):
    """Draft text cannot be mapped into the verifier's token space."""


class Tokenizer(ABC):
    """Maps between text and the verifier's token ids (deterministically)."""

    @abstractmethod
    def encode(self, text: str) -> list[int]: ...

    @abstractmethod
    def decode(self, ids: Sequence[int]) -> str: ...


class VerifierModel(ABC):
    """Contract any verifier implementation must satisfy.

    ``score_teacher_forced`` must return, in ONE invocation, the same
    per-position likelihoods that repeated ``score_next`` calls would give;
    that single-pass property is the speedup this engine counts on.
    Implementations that are not safe for concurrent scoring set
    ``thread_safe = False`` and the pipeline serializes their calls.
    """

    thread_safe: bool = True

    @property
    @abstractmethod
    def eos_id(self) -> int: ...

    @property
    @abstractmethod
    def vocab_size(self) -> int: ...

    @property
    @abstractmethod
    def tokenizer(self) -> Tokenizer: ...

    @abstractmethod
    def score_next(self, ctx: "AcousticContext", prefix: Sequence[int]) -> np.ndarray:
        """Distribution over the next token given the (true) prefix."""

    @abstractmethod
    def score_teacher_forced(self, ctx: "AcousticContext", tokens: Sequence[int]) -> np.ndarray:
        """Per-position likelihood of tokens[i] given tokens[:i], single pass."""


@dataclass(frozen=True)
class AcousticContext:
    """Opaque handle to one utterance's adapter-output embeddings."""

    handle: str
    declared_length: int = 0

    def __post_init__(self):
        if self.declared_length < 0:
            raise ValueError("declared_length must be >= 0")


class Source(str, enum.Enum):
    CTC_GATE = "ctc_gate"
    LLM_VERIFIED = "llm_verified"
    FALLBACK = "fallback"

    def __str__(self) -> str:  # plain value in reports
        return self.value


@dataclass(frozen=True)
class VerificationOutcome:
    """Accept-all or reject at the first failing position (1-indexed)."""

    likelihoods: np.ndarray = field(repr=False)
    reject_at: int | None = None

    @property
    def accepted(self) -> bool:
        return self.reject_at is None

    @property
    def verified_prefix_len(self) -> int:
        if self.reject_at is None:
            return len(self.likelihoods)
        return self.reject_at - 1


@dataclass(frozen=True)
class Continuation:
    """Result of a greedy autoregressive run: tokens, truncation, call count."""

    tokens: tuple[int, ...]
    truncated: bool
    calls: int


@dataclass(frozen=True)
class FinalHypothesis:
    """Final output of one decode plus its provenance and cost.

    ``tokens`` live in the verifier's token space except for ``CTC_GATE``
    outputs, which never touch the verifier and stay in the draft space;
    ``text`` is the canonical cross-space payload.
    """

    tokens: tuple[int, ...]
    text: str
    source: Source
    verifier_calls: int
    prefix_len: int | None = None
    truncated: bool = False


def verify(likelihoods: np.ndarray | Sequence[float], tau_slm: float) -> VerificationOutcome:
    """Apply the relaxed acceptance rule: every likelihood strictly > tau_slm.

    Rejection points at the minimal failing index (likelihood <= tau_slm,
    1-indexed). An empty vector is accepted vacuously.
    """
    if not 0.0 <= tau_slm <= 1.0:
        raise ConfigError(f"tau_slm must lie in [0, 1], got {tau_slm}")
    lik = np.asarray(likelihoods, dtype=np.float64)
    if lik.size and ((lik < 0).any() or (lik > 1).any()):
        raise ValueError("likelihoods must lie in [0, 1]")
    failing = np.flatnonzero(lik <= tau_slm)
    if failing.size == 0:
        return VerificationOutcome(likelihoods=lik, reject_at=None)
    return VerificationOutcome(likelihoods=lik, reject_at=int(failing[0]) + 1)


def verify_draft(
    model: VerifierModel,
    ctx: AcousticContext,
    draft_tokens: Sequence[int],
    tau_slm: float,
) -> VerificationOutcome:
    """Score the whole draft in one teacher-forced pass and verify it."""
    likelihoods = model.score_teacher_forced(ctx, list(draft_tokens))
    return verify(likelihoods, tau_slm)


def retokenize(draft_text: str, tokenizer: Tokenizer) -> list[int]:
    """Map detokenized draft text into the verifier's token space."""
    try:
        return tokenizer.encode(draft_text)
    except RetokenizeError:
        raise
    except Exception as exc:
        raise RetokenizeError(f"cannot retokenize draft text {draft_text!r}: {exc}") from exc


def ar_continue(
    model: VerifierModel,
    ctx: AcousticContext,
    prefix: Sequence[int],
    max_new_tokens: int,
) -> Continuation:
    """Greedy generation from a fixed prefix until end-of-sequence or budget.

    Every ``score_next`` invocation counts as one verifier call, including
    the one that produces the end token.
    """
    if max_new_tokens < 0:
        raise ConfigError("max_new_tokens must be >= 0")
    generated: list[int] = []
    current = list(prefix)
    calls = 0
    truncated = False
    while True:
        if len(generated) >= max_new_tokens:
            truncated = True
            break
        dist = model.score_next(ctx, current)
        calls += 1
        nxt = int(np.argmax(dist))
        if nxt == model.eos_id:
            break
        generated.append(nxt)
        current.append(nxt)
    return Continuation(tokens=tuple(generated), truncated=truncated, calls=calls)


def full_ar_decode(
    model: VerifierModel,
    ctx: AcousticContext,
    max_new_tokens: int,
) -> FinalHypothesis:
    """Baseline decode: greedy generation from the empty prefix."""
    cont = ar_continue(model, ctx, [], max_new_tokens)
    return FinalHypothesis(
        tokens=cont.tokens,
        text=model.tokenizer.decode(cont.tokens),
        source=Source.FALLBACK,
        verifier_calls=cont.calls,
        prefix_len=0,
        truncated=cont.truncated,
    )


def ssd_decode(
    draft: DraftHypothesis,
    model: VerifierModel,
    ctx: AcousticContext,
    config: DecodeConfig,
) -> FinalHypothesis:
    """Decode one utterance through gate, verification, and fallback.

    This is the scalar reference path; the batched pipeline must agree with
    it utterance by utterance. ``draft`` must have been produced with
    ``config.tau_ctc``.
    """
    mode = config.mode
    budget = config.generation_budget(len(draft.tokens))

    if mode == "full-ar":
        return full_ar_decode(model, ctx, budget)

    if mode == "ctc-greedy" or (mode in ("both", "ctc-only") and draft.gate_passed):
        return FinalHypothesis(
            tokens=draft.tokens,
            text=draft.text,
            source=Source.CTC_GATE,
            verifier_calls=0,
        )

    if mode == "ctc-only":
        # Gate failed; no verification pass, straight to full AR.
        return full_ar_decode(model, ctx, budget)

    # both (gate failed) or llm-only: verify, then fall back from the prefix.
    try:
        verifier_tokens = retokenize(draft.text, model.tokenizer)
    except RetokenizeError:
        return full_ar_decode(model, ctx, budget)

    outcome = verify_draft(model, ctx, verifier_tokens, config.tau_slm)
    if outcome.accepted:
        return FinalHypothesis(
            tokens=tuple(verifier_tokens),
            text=draft.text,
            source=Source.LLM_VERIFIED,
            verifier_calls=1,
        )

    keep = outcome.verified_prefix_len
    prefix = list(verifier_tokens[:keep])
    cont = ar_continue(model, ctx, prefix, budget)
    tokens = tuple(prefix) + cont.tokens
    return FinalHypothesis(
        tokens=tokens,
        text=model.tokenizer.decode(tokens),
        source=Source.FALLBACK,
        verifier_calls=1 + cont.calls,
        prefix_len=keep,
        truncated=cont.truncated,
    )


class InstrumentedVerifier(VerifierModel):
    """Wrapper that counts model invocations; used for call accounting checks."""

    def __init__(self, inner: VerifierModel):
        self.inner = inner
        self.thread_safe = inner.thread_safe
        self._lock = threading.Lock()
        self.next_calls = 0
        self.teacher_forced_calls = 0

    @property
    def eos_id(self) -> int:
        return self.inner.eos_id

    @property
    def vocab_size(self) -> int:
        return self.inner.vocab_size

    @property
    def tokenizer(self) -> Tokenizer:
        return self.inner.tokenizer

    @property
    def total_calls(self) -> int:
        return self.next_calls + self.teacher_forced_calls

    def reset(self) -> None:
        with self._lock:
            self.next_calls = 0
            self.teacher_forced_calls = 0

    def score_next(self, ctx, prefix):
        with self._lock:
            self.next_calls += 1
        return self.inner.score_next(ctx, prefix)

    def score_teacher_forced(self, ctx, tokens):
        with self._lock:
            self.teacher_forced_calls += 1
        return self.inner.score_teacher_forced(ctx, tokens)
