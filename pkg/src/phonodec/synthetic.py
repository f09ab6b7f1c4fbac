"""Synthetic benchmark corpus with class structure planted in channel
covariance.

Each token gets a C x k mixing matrix; a trial mixes shared white latent
sources through it and adds white noise, so the expected covariance is
M M^T + sigma^2 I and differs across tokens (and, through the label table,
across every phonological dichotomy). Subjects contribute multiplicative
per-channel gains. All randomness comes from one Philox (counter-based)
stream with a fixed draw order, so a seed pins the dataset bytes across
platforms.

Draw order: (1) mixing matrices in token order, (2) subject gains,
(3) per trial, token-major: latents then noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .covariance import EegTrial
from .exceptions import ValidationError
from .labels import TOKEN_ORDER, TokenLabel, token_from_string


@dataclass
class SynthSpec:
    seed: int = 0
    channels: int = 8
    samples: int = 256
    trials_per_token: int = 30
    subjects: int = 2
    noise_sigma: float = 0.1
    latent_sources: int = 4
    subject_gain_spread: float = 0.05
    tied_token_groups: tuple[tuple[str, ...], ...] = ()
    mixing: dict[str, np.ndarray] | None = None  # per-token (C, k) override

    def __post_init__(self):
        if self.channels < 2:
            raise ValidationError(f"channels must be >= 2, got {self.channels}")
        if self.trials_per_token < 2:
            raise ValidationError(
                f"trials_per_token must be >= 2, got {self.trials_per_token}"
            )
        if self.samples < 2:
            raise ValidationError(f"samples must be >= 2, got {self.samples}")
        if self.noise_sigma < 0:
            raise ValidationError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.subjects < 1:
            raise ValidationError(f"subjects must be >= 1, got {self.subjects}")
        if self.latent_sources < 1:
            raise ValidationError(f"latent_sources must be >= 1")
        for group in self.tied_token_groups:
            for name in group:
                token_from_string(name)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed, "channels": self.channels, "samples": self.samples,
            "trials_per_token": self.trials_per_token, "subjects": self.subjects,
            "noise_sigma": self.noise_sigma, "latent_sources": self.latent_sources,
            "subject_gain_spread": self.subject_gain_spread,
            "tied_token_groups": [list(g) for g in self.tied_token_groups],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        kwargs = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        if "tied_token_groups" in kwargs:
            kwargs["tied_token_groups"] = tuple(
                tuple(g) for g in kwargs["tied_token_groups"]
            )
        return cls(**kwargs)


def generate_synthetic(spec: SynthSpec) -> list[EegTrial]:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(spec.seed)))
    c, k, t = spec.channels, spec.latent_sources, spec.samples

    mixing: dict[TokenLabel, np.ndarray] = {}
    for token in TOKEN_ORDER:
        mixing[token] = rng.normal(0.0, 1.0, size=(c, k)) / np.sqrt(k)
    if spec.mixing:
        for name, matrix in spec.mixing.items():
            token = token_from_string(name)
            matrix = np.asarray(matrix, dtype=np.float64)
            if matrix.shape != (c, k):
                raise ValidationError(
                    f"mixing override for {name} must be ({c}, {k}), got {matrix.shape}"
                )
            mixing[token] = matrix
    for group in spec.tied_token_groups:
        members = [token_from_string(name) for name in group]
        for member in members[1:]:
            mixing[member] = mixing[members[0]]

    gains = 1.0 + spec.subject_gain_spread * rng.normal(0.0, 1.0, size=(spec.subjects, c))

    trials: list[EegTrial] = []
    for token in TOKEN_ORDER:
        m = mixing[token]
        for i in range(spec.trials_per_token):
            subject = i % spec.subjects
            latents = rng.normal(0.0, 1.0, size=(k, t))
            noise = rng.normal(0.0, 1.0, size=(c, t))
            data = gains[subject][:, None] * (m @ latents + spec.noise_sigma * noise)
            trials.append(EegTrial(f"S{subject:02d}", token, data))
    return trials
