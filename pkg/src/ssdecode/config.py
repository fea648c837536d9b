"""Decode configuration: thresholds, mode wiring, generation and batching limits."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

MODES = ("both", "llm-only", "ctc-only", "full-ar", "ctc-greedy")

# Named operating points from the benchmark presets.
PRESETS = {
    "high-accuracy": {"tau_ctc": 0.7, "tau_slm": 0.2},
    "high-rtfx": {"tau_ctc": 3.0, "tau_slm": 0.1},
}

# Shell-friendly stand-ins for a gate that always or never fires.
TAU_CTC_ALWAYS = math.inf
TAU_CTC_NEVER = -math.inf


class ConfigError(ValueError):
    """Invalid or conflicting configuration."""


def parse_tau_ctc(value: str | float) -> float:
    """Parse a CTC threshold flag; accepts "always"/"never" sentinels."""
    if isinstance(value, str):
        word = value.strip().lower()
        if word == "always":
            return TAU_CTC_ALWAYS
        if word == "never":
            return TAU_CTC_NEVER
        try:
            value = float(word)
        except ValueError:
            raise ConfigError(f"tau_ctc must be a number, 'always', or 'never': {value!r}")
    value = float(value)
    if math.isnan(value):
        raise ConfigError("tau_ctc must not be NaN")
    if value < 0 and not math.isinf(value):
        raise ConfigError("tau_ctc must be >= 0 (or a sentinel)")
    return value


def format_tau_ctc(value: float) -> str | float:
    if value == TAU_CTC_ALWAYS:
        return "always"
    if value == TAU_CTC_NEVER:
        return "never"
    return value


@dataclass(frozen=True)
class DecodeConfig:
    """Everything the decoder and pipeline need to know about one run."""

    tau_ctc: float = 0.7
    tau_slm: float = 0.2
    mode: str = "both"
    max_new_tokens: int | None = None  # None: per-utterance 2*(draft_len+8), floor 64
    max_batch_tokens: float = 512.0  # math.inf: single batch
    logits_at_verification_positions_only: bool = True
    workers: int = 1
    seed: int = 0
    strict: bool = False
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if not 0.0 <= self.tau_slm <= 1.0:
            raise ConfigError(f"tau_slm must lie in [0, 1], got {self.tau_slm}")
        if math.isnan(self.tau_ctc):
            raise ConfigError("tau_ctc must not be NaN")
        if self.max_new_tokens is not None and self.max_new_tokens < 0:
            raise ConfigError("max_new_tokens must be >= 0")
        if not self.max_batch_tokens > 0:
            raise ConfigError("max_batch_tokens must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def with_(self, **kwargs) -> "DecodeConfig":
        return replace(self, **kwargs)

    def generation_budget(self, draft_len: int) -> int:
        """Cap on newly generated tokens for one utterance."""
        if self.max_new_tokens is not None:
            return self.max_new_tokens
        return max(64, 2 * (draft_len + 8))
