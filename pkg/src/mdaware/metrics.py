"""Structure similarity scoring over tag sequences.

Two scorers live here.  The main one compares a response's tag stream to a
reference stream by normalized edit distance.  The second is a statistical
baseline that sums per-element-class weights with geometric decay for
repeated occurrences, normalized against the reference mass.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Mapping, Sequence

from .structure import TagKind, TagSequence, TagToken


def edit_distance(a: Sequence[Hashable], b: Sequence[Hashable]) -> int:
    """Levenshtein distance with unit insert, delete, and substitute costs.

    Symbols compare by equality only, so this works on tag sequences (a
    token is one symbol) and plain strings (a character is one symbol)
    alike.  Symmetric in its arguments.
    """
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    # Intern symbols as small ints so the inner loop compares machine words.
    codes: dict[Hashable, int] = {}
    ca = [codes.setdefault(x, len(codes)) for x in a]
    cb = [codes.setdefault(x, len(codes)) for x in b]
    prev = list(range(len(cb) + 1))
    for i, xa in enumerate(ca, start=1):
        cur = [i]
        append = cur.append
        for j, xb in enumerate(cb, start=1):
            sub = prev[j - 1] + (xa != xb)
            dele = prev[j] + 1
            ins = cur[j - 1] + 1
            append(sub if sub < dele and sub < ins else (dele if dele < ins else ins))
        prev = cur
    return prev[-1]


@dataclass(frozen=True)
class MAScore:
    """Normalized structural similarity plus its audit fields."""

    value: float
    distance: int
    len_r: int
    len_ref: int


def ma_score(response: TagSequence, reference: TagSequence, *, char_level: bool = False) -> MAScore:
    """Score a response stream against its reference stream.

    value = 1 - distance / max(len_r, len_ref), and 1.0 when both streams
    are empty.  By default one tag token is one symbol; with char_level the
    serialized streams are compared character by character instead, and the
    recorded lengths are character counts.
    """
    if char_level:
        a: Sequence[Hashable] = response.html()
        b: Sequence[Hashable] = reference.html()
    else:
        a, b = response.tokens, reference.tokens
    distance = edit_distance(a, b)
    longest = max(len(a), len(b))
    value = 1.0 if longest == 0 else 1.0 - distance / longest
    return MAScore(value, distance, len(a), len(b))


# Element classes for the decay baseline.
NON_SCORING_CLASS = "none"
_HEADING_NAMES = frozenset({"h1", "h2", "h3", "h4", "h5", "h6"})
_CLASS_BY_NAME = {
    "pre": "code",
    "code": "code",
    "math": "math",
    "ul": "list",
    "ol": "list",
    "li": "list",
    "strong": "bold",
}


def classify_token(token: TagToken) -> str:
    """Map a tag event to its weight class.

    Close events fall into the reserved non-scoring class; every tag name
    without a named class gets its own ``other:<name>`` class.
    """
    if token.kind is TagKind.CLOSE:
        return NON_SCORING_CLASS
    if token.name in _HEADING_NAMES:
        return "heading"
    named = _CLASS_BY_NAME.get(token.name)
    if named is not None:
        return named
    return f"other:{token.name}"


_DEFAULT_WEIGHTS: Mapping[str, float] = {
    "heading": 10.0,
    "code": 10.0,
    "math": 10.0,
    "list": 10.0,
    "bold": 10.0,
}


@dataclass(frozen=True)
class DRuleConfig:
    """Decay factor and per-class weights for the baseline scorer.

    Classes absent from ``weights`` fall back to ``default_weight``.
    """

    gamma: float = 0.5
    weights: Mapping[str, float] = field(default_factory=lambda: dict(_DEFAULT_WEIGHTS))
    default_weight: float = 5.0

    def __post_init__(self) -> None:
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie strictly between 0 and 1, got {self.gamma}")
        bad = {c: w for c, w in self.weights.items() if w <= 0}
        if bad or self.default_weight <= 0:
            raise ValueError(f"weights must be positive, got {bad or self.default_weight}")

    def weight(self, element_class: str) -> float:
        return self.weights.get(element_class, self.default_weight)

    def as_payload(self) -> dict:
        """JSON-ready form, used to fingerprint the scoring configuration."""
        return {
            "gamma": self.gamma,
            "weights": dict(sorted(self.weights.items())),
            "default_weight": self.default_weight,
        }


def drule_raw(tags: TagSequence, cfg: DRuleConfig) -> float:
    """Decayed structure mass: the i-th occurrence of a class contributes
    gamma**(i-1) times its weight, counting occurrences in document order."""
    seen: dict[str, int] = {}
    total = 0.0
    for token in tags:
        cls = classify_token(token)
        if cls == NON_SCORING_CLASS:
            continue
        n = seen.get(cls, 0)
        total += cfg.weight(cls) * cfg.gamma**n
        seen[cls] = n + 1
    return total


def drule_score(response: TagSequence, reference: TagSequence, cfg: DRuleConfig = DRuleConfig()) -> float:
    """Response mass over reference mass, capped at 1.

    A reference with zero mass found nothing to structure, so nothing can
    be missing: the score is 1.0 regardless of the response.
    """
    ref_mass = drule_raw(reference, cfg)
    if ref_mass == 0.0:
        return 1.0
    return min(1.0, drule_raw(response, cfg) / ref_mass)
