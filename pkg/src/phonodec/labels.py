"""Speech tokens and their binary phonological attributes.

Eleven prompts (seven phonemes/syllables, four words) map onto six binary
articulatory categories. The membership table is fixed: it encodes standard
phonological features of each prompt's onset and vowel, with voicing taken
from the onset consonant (vowel-initial prompts are voiced).
"""

from __future__ import annotations

from enum import Enum

from .exceptions import ValidationError


class TokenLabel(Enum):
    IY = "IY"
    UW = "UW"
    PIY = "PIY"
    TIY = "TIY"
    DIY = "DIY"
    M = "M"
    N = "N"
    PAT = "PAT"
    POT = "POT"
    KNEW = "KNEW"
    GNAW = "GNAW"


class PhonCategory(Enum):
    BILABIAL = "Bilabial"
    NASAL = "Nasal"
    CONSONANT_PRESENT = "ConsonantPresent"
    HIGH_BACK_UW = "HighBackUw"
    HIGH_FRONT_IY = "HighFrontIy"
    VOICED = "Voiced"


TOKEN_ORDER: tuple[TokenLabel, ...] = (
    TokenLabel.IY,
    TokenLabel.UW,
    TokenLabel.PIY,
    TokenLabel.TIY,
    TokenLabel.DIY,
    TokenLabel.M,
    TokenLabel.N,
    TokenLabel.PAT,
    TokenLabel.POT,
    TokenLabel.KNEW,
    TokenLabel.GNAW,
)

PHON_ORDER: tuple[PhonCategory, ...] = (
    PhonCategory.BILABIAL,
    PhonCategory.NASAL,
    PhonCategory.CONSONANT_PRESENT,
    PhonCategory.HIGH_BACK_UW,
    PhonCategory.HIGH_FRONT_IY,
    PhonCategory.VOICED,
)

# (bilabial, nasal, consonant, high-back /uw/, high-front /iy/, voiced)
_TABLE: dict[TokenLabel, tuple[int, int, int, int, int, int]] = {
    TokenLabel.IY: (0, 0, 0, 0, 1, 1),
    TokenLabel.UW: (0, 0, 0, 1, 0, 1),
    TokenLabel.PIY: (1, 0, 1, 0, 1, 0),
    TokenLabel.TIY: (0, 0, 1, 0, 1, 0),
    TokenLabel.DIY: (0, 0, 1, 0, 1, 1),
    TokenLabel.M: (1, 1, 1, 0, 0, 1),
    TokenLabel.N: (0, 1, 1, 0, 0, 1),
    TokenLabel.PAT: (1, 0, 1, 0, 0, 0),
    TokenLabel.POT: (1, 0, 1, 0, 0, 0),
    TokenLabel.KNEW: (0, 1, 1, 1, 0, 1),
    TokenLabel.GNAW: (0, 1, 1, 0, 0, 1),
}

TOKEN_INDEX: dict[TokenLabel, int] = {t: i for i, t in enumerate(TOKEN_ORDER)}


def derive_phonological_labels(token: TokenLabel) -> tuple[bool, ...]:
    """Six booleans for `token`, in `PHON_ORDER`."""
    return tuple(bool(v) for v in _TABLE[token])


def phonological_label(token: TokenLabel, category: PhonCategory) -> bool:
    return bool(_TABLE[token][PHON_ORDER.index(category)])


def token_from_string(name: str) -> TokenLabel:
    try:
        return TokenLabel(name.upper())
    except ValueError:
        known = ", ".join(t.value for t in TOKEN_ORDER)
        raise ValidationError(
            f"unknown token {name!r}; expected one of: {known}"
        ) from None
