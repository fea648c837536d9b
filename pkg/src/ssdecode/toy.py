"""Deterministic synthetic models and corpora for desk-scale verification.

Everything here is a pure function of (seed, params): references are sampled
over a small character alphabet (letters plus space, so word error rates are
meaningful), frame posteriors are built by expanding reference characters
into frames with blank separators and controlled corruption, and the toy
verifier scores sequences toward the stored reference with configurable
fidelity. No neural network anywhere, so every end-to-end behavior can be
checked against hand-computable oracles.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .config import ConfigError
from .ctc import FramePosteriors, Vocabulary
from .verifier import AcousticContext, RetokenizeError, Tokenizer, VerifierModel

FRAME_DURATION_S = 0.08  # fixed downsampled encoder rate; keeps RTFx stable

BLANK_SYMBOL = "ε"  # display form only, never appears in output text

_LETTERS = "abcdefghijklmnopqrstuvwxyz"

# Acoustic contexts are downsampled 5x relative to encoder frames.
_ADAPTER_DOWNSAMPLE = 5

# Entropy shaping: per-utterance and per-frame temperature jitter ranges, and
# the multiplier applied to corrupted frames so that errors read as
# low-confidence frames (which is what makes entropy gating informative).
_UTT_JITTER_RANGE = (0.4, 2.5)
_FRAME_JITTER_RANGE = (0.9, 1.1)
_CORRUPT_TEMP_BOOST = 3.0


def alphabet_for_size(alphabet_size: int) -> str:
    """Canonical toy alphabet: first k letters plus a space word delimiter."""
    if not 2 <= alphabet_size <= len(_LETTERS):
        raise ConfigError(f"alphabet_size must lie in [2, {len(_LETTERS)}]")
    return _LETTERS[:alphabet_size] + " "


def make_vocab(alphabet: str) -> Vocabulary:
    """CTC vocabulary for an alphabet: blank at index 0, then the characters."""
    return Vocabulary(tokens=(BLANK_SYMBOL,) + tuple(alphabet), blank_id=0)


@dataclass(frozen=True)
class ToyDraftParams:
    temperature: float = 0.3  # frame entropy scale
    blank_rate: float = 0.25  # expected fraction of blank frames
    repeat_rate: float = 0.3  # chance of duplicating a label frame (up to 3)
    label_noise: float = 0.02  # per-frame chance the dominant label is corrupted

    def __post_init__(self):
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        for name in ("blank_rate", "repeat_rate", "label_noise"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")


@dataclass(frozen=True)
class ToyVerifierParams:
    fidelity: float = 0.9  # mass on the reference continuation while on-reference
    distractor_profile: str = "uniform"  # how residual mass spreads
    eos_boost: float = 0.05  # extra end-token mass once the reference is exhausted

    def __post_init__(self):
        if not 0.0 < self.fidelity <= 1.0:
            raise ConfigError("fidelity must lie in (0, 1]")
        if self.distractor_profile not in ("uniform", "geometric"):
            raise ConfigError(f"unknown distractor_profile {self.distractor_profile!r}")
        if not 0.0 <= self.eos_boost <= 1.0:
            raise ConfigError("eos_boost must lie in [0, 1]")


@dataclass(frozen=True)
class SyntheticUtterance:
    id: str
    reference: str
    posteriors: FramePosteriors
    context: AcousticContext
    audio_duration_s: float
    seed: int  # regenerates the posteriors bit-identically


@dataclass(frozen=True)
class Corpus:
    utterances: tuple[SyntheticUtterance, ...]
    alphabet: str
    vocab: Vocabulary
    draft_params: ToyDraftParams
    seed: int

    def __len__(self) -> int:
        return len(self.utterances)

    def __iter__(self):
        return iter(self.utterances)

    def by_id(self, utt_id: str) -> SyntheticUtterance:
        for utt in self.utterances:
            if utt.id == utt_id:
                return utt
        raise KeyError(utt_id)


class CharTokenizer(Tokenizer):
    """Identity character tokenizer over a fixed alphabet."""

    def __init__(self, alphabet: str):
        self.alphabet = alphabet
        self._to_id = {ch: i for i, ch in enumerate(alphabet)}

    def encode(self, text: str) -> list[int]:
        try:
            return [self._to_id[ch] for ch in text]
        except KeyError as exc:
            raise RetokenizeError(f"character {exc.args[0]!r} not in verifier alphabet") from exc

    def decode(self, ids) -> str:
        return "".join(self.alphabet[i] for i in ids)


class MergeTokenizer(Tokenizer):
    """Greedy longest-match tokenizer over a fixed piece inventory.

    With every single character covered by some piece, encode/decode is a
    deterministic round trip; used to exercise retokenization across a
    verifier vocabulary that differs from the draft's character space.
    """

    def __init__(self, pieces: list[str]):
        if not pieces:
            raise ConfigError("pieces must be nonempty")
        self.pieces = list(pieces)
        self._by_len = sorted(range(len(pieces)), key=lambda i: -len(pieces[i]))

    def encode(self, text: str) -> list[int]:
        ids: list[int] = []
        pos = 0
        while pos < len(text):
            for idx in self._by_len:
                piece = self.pieces[idx]
                if text.startswith(piece, pos):
                    ids.append(idx)
                    pos += len(piece)
                    break
            else:
                raise RetokenizeError(f"no piece matches text at position {pos}: {text[pos:pos+8]!r}")
        return ids

    def decode(self, ids) -> str:
        return "".join(self.pieces[i] for i in ids)


def _expand_reference(ref_ids: np.ndarray, rng: np.random.Generator, params: ToyDraftParams,
                      blank_id: int) -> tuple[np.ndarray, np.ndarray]:
    """Build the frame label path for one utterance.

    Returns (labels, corrupted_mask). Each reference token becomes 1-3 frames
    (repeat_rate), blank frames are interleaved so that blanks make up about
    blank_rate of the path (with mandatory separators between identical
    neighbors so the path always collapses back to the reference), and each
    frame's label is corrupted with probability label_noise. blank_rate = 1
    degenerates to an all-blank path.
    """
    n_ref = len(ref_ids)
    if n_ref == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=bool)

    reps = np.ones(n_ref, dtype=np.int64)
    for i in range(n_ref):
        while reps[i] < 3 and rng.random() < params.repeat_rate:
            reps[i] += 1
    n_tok_frames = int(reps.sum())

    if params.blank_rate >= 1.0:
        labels = np.full(n_tok_frames, blank_id, dtype=np.int64)
    else:
        # Mandatory separators keep repeated characters recoverable.
        gap_blanks = np.zeros(n_ref + 1, dtype=np.int64)
        for i in range(1, n_ref):
            if ref_ids[i] == ref_ids[i - 1]:
                gap_blanks[i] = 1
        br = params.blank_rate
        target = int(round(n_tok_frames * br / (1.0 - br)))
        target = min(target, 4 * n_tok_frames + 4)
        extra = max(0, target - int(gap_blanks.sum()))
        if extra:
            slots = rng.integers(0, n_ref + 1, size=extra)
            np.add.at(gap_blanks, slots, 1)
        parts = []
        for i in range(n_ref):
            parts.append(np.full(gap_blanks[i], blank_id, dtype=np.int64))
            parts.append(np.full(reps[i], ref_ids[i], dtype=np.int64))
        parts.append(np.full(gap_blanks[n_ref], blank_id, dtype=np.int64))
        labels = np.concatenate(parts)

    corrupted = rng.random(len(labels)) < params.label_noise
    if corrupted.any():
        vocab_size = int(ref_ids.max(initial=0)) + 1  # lower bound; caller fixes width
        # Replacement is drawn over the full augmented vocabulary by the caller
        # via _corrupt_labels; kept separate for clarity.
    return labels, corrupted


def _corrupt_labels(labels: np.ndarray, corrupted: np.ndarray, rng: np.random.Generator,
                    vocab_size: int) -> np.ndarray:
    """Replace each corrupted frame's label with a different uniform symbol."""
    out = labels.copy()
    for t in np.flatnonzero(corrupted):
        repl = int(rng.integers(0, vocab_size - 1))
        if repl >= out[t]:
            repl += 1
        out[t] = repl
    return out


def _soften(labels: np.ndarray, temps: np.ndarray, vocab_size: int) -> np.ndarray:
    """One-hot rows tempered toward uniform; temperature 0+ recovers one-hot."""
    t = len(labels)
    eneg = np.exp(-1.0 / temps)  # underflows to 0 for tiny temperatures
    denom = 1.0 + (vocab_size - 1) * eneg
    rows = np.repeat((eneg / denom)[:, None], vocab_size, axis=1)
    rows[np.arange(t), labels] = 1.0 / denom
    return rows


def synth_posteriors(ref_ids, seed: int, params: ToyDraftParams, vocab: Vocabulary) -> FramePosteriors:
    """Deterministic frame posteriors for one reference (ids over vocab, no blanks)."""
    rng = np.random.default_rng(seed)
    ref_ids = np.asarray(list(ref_ids), dtype=np.int64)
    labels, corrupted = _expand_reference(ref_ids, rng, params, vocab.blank_id)
    labels = _corrupt_labels(labels, corrupted, rng, vocab.size)
    utt_jitter = math.exp(rng.uniform(math.log(_UTT_JITTER_RANGE[0]), math.log(_UTT_JITTER_RANGE[1])))
    frame_jitter = rng.uniform(*_FRAME_JITTER_RANGE, size=len(labels))
    temps = params.temperature * utt_jitter * frame_jitter
    temps = np.where(corrupted, temps * _CORRUPT_TEMP_BOOST, temps)
    frames = _soften(labels, temps, vocab.size) if len(labels) else np.zeros((0, vocab.size))
    return FramePosteriors(frames=frames, frame_duration_s=FRAME_DURATION_S)


class ToyDraftModel:
    """Serves each utterance's stored posteriors; stands in for the encoder."""

    frame_duration_s = FRAME_DURATION_S

    def __init__(self, corpus: Corpus):
        self._posteriors = {utt.id: utt.posteriors for utt in corpus}

    def posteriors_for(self, utt_id: str) -> FramePosteriors:
        try:
            return self._posteriors[utt_id]
        except KeyError:
            raise LookupError(f"unknown utterance id: {utt_id}") from None


class ToyVerifierModel(VerifierModel):
    """Reference-seeking verifier with closed-form teacher forcing.

    While the scored prefix matches the stored reference, the next reference
    character carries ``fidelity`` mass and the residual spreads over the
    distractors; once the reference is exhausted the end token dominates.
    After any divergence the model drops to a flat recovery distribution
    (uniform over the alphabet plus ``eos_boost`` on the end token), so it
    never silently re-synchronizes with the reference.

    ``score_teacher_forced`` is written as a separate closed-form pass, not a
    loop over ``score_next``; the causal-consistency tests cross-check the
    two paths against each other.
    """

    thread_safe = True

    def __init__(self, params: ToyVerifierParams, references: dict[str, str], alphabet: str):
        self.params = params
        self.alphabet = alphabet
        self._tokenizer = CharTokenizer(alphabet)
        self._refs = {
            handle: tuple(self._tokenizer.encode(text)) for handle, text in references.items()
        }

    @property
    def eos_id(self) -> int:
        return len(self.alphabet)

    @property
    def vocab_size(self) -> int:
        return len(self.alphabet) + 1

    @property
    def tokenizer(self) -> Tokenizer:
        return self._tokenizer

    def _reference(self, ctx: AcousticContext) -> tuple[int, ...]:
        try:
            return self._refs[ctx.handle]
        except KeyError:
            raise LookupError(f"unknown acoustic context: {ctx.handle!r}") from None

    def _distractor_shares(self, target: int) -> np.ndarray:
        """Distribution of the non-target residual (sums to 1) over all ids."""
        v = self.vocab_size
        shares = np.zeros(v)
        others = [i for i in range(v) if i != target]
        if self.params.distractor_profile == "uniform":
            shares[others] = 1.0 / len(others)
        else:  # geometric decay by id order
            weights = np.array([2.0 ** -k for k in range(len(others))])
            shares[others] = weights / weights.sum()
        return shares

    def score_next(self, ctx: AcousticContext, prefix) -> np.ndarray:
        ref = self._reference(ctx)
        prefix = tuple(prefix)
        i = len(prefix)
        on_ref = i <= len(ref) and prefix == ref[:i]
        if on_ref and i < len(ref):
            target = ref[i]
            dist = (1.0 - self.params.fidelity) * self._distractor_shares(target)
            dist[target] = self.params.fidelity
            return dist
        if on_ref:  # reference exhausted: end token dominates
            p_eos = min(1.0, self.params.fidelity + self.params.eos_boost)
            dist = np.full(self.vocab_size, (1.0 - p_eos) / len(self.alphabet))
            dist[self.eos_id] = p_eos
            return dist
        # Recovery after divergence: flat, deterministic, no re-sync.
        dist = np.full(self.vocab_size, (1.0 - self.params.eos_boost) / len(self.alphabet))
        dist[self.eos_id] = self.params.eos_boost
        return dist

    def score_teacher_forced(self, ctx: AcousticContext, tokens) -> np.ndarray:
        ref = self._reference(ctx)
        tokens = tuple(tokens)
        n = len(tokens)
        out = np.zeros(n)
        if n == 0:
            return out
        # Longest shared prefix with the reference decides each position's regime.
        m = 0
        while m < n and m < len(ref) and tokens[m] == ref[m]:
            m += 1
        p_eos_end = min(1.0, self.params.fidelity + self.params.eos_boost)
        for i in range(n):
            tok = tokens[i]
            if i <= m and i < len(ref):
                if tok == ref[i]:
                    out[i] = self.params.fidelity
                else:
                    out[i] = (1.0 - self.params.fidelity) * self._distractor_shares(ref[i])[tok]
            elif i <= m:  # prefix equals the full reference
                out[i] = p_eos_end if tok == self.eos_id else (1.0 - p_eos_end) / len(self.alphabet)
            else:
                if tok == self.eos_id:
                    out[i] = self.params.eos_boost
                else:
                    out[i] = (1.0 - self.params.eos_boost) / len(self.alphabet)
        return out


def toy_draft_model(params: ToyDraftParams, corpus: Corpus) -> ToyDraftModel:
    del params  # posteriors are baked into the corpus; kept for symmetry
    return ToyDraftModel(corpus)


def toy_verifier_model(params: ToyVerifierParams, corpus: Corpus) -> ToyVerifierModel:
    references = {utt.context.handle: utt.reference for utt in corpus}
    return ToyVerifierModel(params, references, corpus.alphabet)


def make_corpus(
    seed: int,
    n_utts: int,
    alphabet_size: int = 5,
    len_range: tuple[int, int] = (10, 40),
    draft_params: ToyDraftParams | None = None,
    verifier_params: ToyVerifierParams | None = None,
) -> tuple[Corpus, ToyDraftModel, ToyVerifierModel]:
    """Build a deterministic corpus and the toy models bound to it."""
    if n_utts < 1:
        raise ConfigError("n_utts must be >= 1")
    lo, hi = len_range
    if lo > hi or lo < 1:
        raise ConfigError(f"len_range must be a nonempty range of positive lengths, got {len_range}")
    draft_params = draft_params or ToyDraftParams()
    verifier_params = verifier_params or ToyVerifierParams()

    alphabet = alphabet_for_size(alphabet_size)
    vocab = make_vocab(alphabet)
    master = np.random.default_rng(seed)
    utterances = []
    for i in range(n_utts):
        length = int(master.integers(lo, hi + 1))
        char_ids = master.integers(0, len(alphabet), size=length)
        reference = "".join(alphabet[c] for c in char_ids)
        utt_seed = int(master.integers(0, 2**62))
        # CTC ids are offset by one because blank occupies index 0.
        post = synth_posteriors(char_ids + 1, utt_seed, draft_params, vocab)
        utt_id = f"utt{i:05d}"
        t_prime = -(-post.num_frames // _ADAPTER_DOWNSAMPLE)  # ceil division
        utterances.append(
            SyntheticUtterance(
                id=utt_id,
                reference=reference,
                posteriors=post,
                context=AcousticContext(handle=utt_id, declared_length=t_prime),
                audio_duration_s=post.audio_duration_s,
                seed=utt_seed,
            )
        )
    corpus = Corpus(
        utterances=tuple(utterances),
        alphabet=alphabet,
        vocab=vocab,
        draft_params=draft_params,
        seed=seed,
    )
    return corpus, toy_draft_model(draft_params, corpus), toy_verifier_model(verifier_params, corpus)


def corpus_digest(corpus: Corpus) -> str:
    """Stable content hash over ids, references, and posterior bytes."""
    h = hashlib.sha256()
    for utt in corpus:
        h.update(utt.id.encode())
        h.update(utt.reference.encode())
        h.update(np.ascontiguousarray(utt.posteriors.frames, dtype=np.float64).tobytes())
        h.update(repr(utt.audio_duration_s).encode())
    return h.hexdigest()
