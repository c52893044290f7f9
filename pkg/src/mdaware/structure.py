"""Markdown to HTML tag stream conversion with math protection.

A document is reduced to the ordered sequence of HTML tags its rendering
would produce.  Text content, attribute values, and raw HTML are discarded;
only structure survives.  Math segments are swapped for opaque placeholders
before parsing so their delimiters cannot confuse the Markdown parser, then
resurface in the stream as a custom ``<math>`` element pair.

The dialect is CommonMark plus pipe tables, strikethrough, and task-list
checkboxes.  The set of tag names that can appear in a stream is shipped as
package data (``data/vocabulary.txt``); anything the parser emits outside
that set collapses to the ``other`` tag.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from typing import Iterator, Sequence

from markdown_it import MarkdownIt
from markdown_it.token import Token
from sklearn.base import BaseEstimator, TransformerMixin


def load_vocabulary() -> tuple[str, ...]:
    """Read the shipped tag vocabulary, one name per line."""
    text = resources.files("mdaware").joinpath("data/vocabulary.txt").read_text("utf-8")
    return tuple(line.strip() for line in text.splitlines() if line.strip())


VOCABULARY = load_vocabulary()

# Tag names forwarded unchanged from the parser.  "math" and "input" are
# synthesized by the walker, "other" is the collapse target for everything
# else, so none of the three may pass through directly.
_PASSTHROUGH = frozenset(VOCABULARY) - {"math", "input", "other"}
_TAG_ALIASES = {"s": "del"}


class TagKind(Enum):
    OPEN = "open"
    CLOSE = "close"
    SELF = "self"


_DEBUG_PREFIX = {TagKind.OPEN: "+", TagKind.CLOSE: "-", TagKind.SELF: "="}
_PREFIX_KIND = {v: k for k, v in _DEBUG_PREFIX.items()}


@dataclass(frozen=True, slots=True)
class TagToken:
    """One tag event: an opening, closing, or self-closing tag."""

    kind: TagKind
    name: str

    def debug(self) -> str:
        return _DEBUG_PREFIX[self.kind] + self.name

    def html(self) -> str:
        if self.kind is TagKind.OPEN:
            return f"<{self.name}>"
        if self.kind is TagKind.CLOSE:
            return f"</{self.name}>"
        return f"<{self.name}/>"


@dataclass(frozen=True)
class TagSequence(Sequence[TagToken]):
    tokens: tuple[TagToken, ...]

    def __len__(self) -> int:
        return len(self.tokens)

    def __getitem__(self, index):  # type: ignore[override]
        return self.tokens[index]

    def __iter__(self) -> Iterator[TagToken]:
        return iter(self.tokens)

    def html(self) -> str:
        return "".join(t.html() for t in self.tokens)

    def debug(self) -> str:
        """Serialize as space separated ``+name`` / ``-name`` / ``=name``."""
        return " ".join(t.debug() for t in self.tokens)

    @classmethod
    def from_debug(cls, text: str) -> "TagSequence":
        tokens = []
        for word in text.split():
            kind = _PREFIX_KIND.get(word[0])
            if kind is None or len(word) < 2:
                raise ValueError(f"bad tag item {word!r}")
            tokens.append(TagToken(kind, word[1:]))
        return cls(tuple(tokens))

    def is_balanced(self) -> bool:
        """Check that every Close matches the most recent unclosed Open."""
        stack: list[str] = []
        for tok in self.tokens:
            if tok.kind is TagKind.OPEN:
                stack.append(tok.name)
            elif tok.kind is TagKind.CLOSE:
                if not stack or stack.pop() != tok.name:
                    return False
        return not stack


@dataclass(frozen=True)
class ProtectedDoc:
    """Math-free text plus the segments that were lifted out of it.

    ``unterminated`` counts dangling unambiguous openers (``$$``, ``\\[``,
    ``\\(``) left behind as plain text.  A lone single ``$`` is treated as
    currency, never as a dangling opener.
    """

    text: str
    segments: tuple[str, ...]
    unterminated: int
    stem: str

    def placeholder_finder(self) -> re.Pattern[str]:
        return re.compile(re.escape(self.stem) + r"\d+X")


# Scan passes run in this order; each later pass sees the leftovers of the
# earlier ones literally.  The single-dollar pass stays on one line, wants
# non-space right after the opener and right before the closer, refuses a
# digit after the closer, and skips escaped \$.
_MATH_PATTERNS: tuple[re.Pattern[str], ...] = (
    re.compile(r"\$\$(.+?)\$\$", re.DOTALL),
    re.compile(r"\\\[(.+?)\\\]", re.DOTALL),
    re.compile(r"\\\((.+?)\\\)", re.DOTALL),
    re.compile(r"(?<!\\)\$(?!\s)((?:\\.|[^$\n\\])+?)(?<!\s)\$(?!\d)"),
)
_DANGLING_OPENERS: tuple[str | None, ...] = ("$$", "\\[", "\\(", None)


def protect_math(text: str) -> ProtectedDoc:
    """Replace math segments with alphanumeric placeholders.

    Placeholders are plain words the Markdown parser passes through
    untouched.  The stem is lengthened until it does not occur in the
    input, so genuine text can never be mistaken for a placeholder.
    """
    stem = "QMATHSEGQ"
    while stem in text:
        stem += "Q"

    segments: list[str] = []

    def grab(match: re.Match[str]) -> str:
        segments.append(match.group(0))
        return f"{stem}{len(segments) - 1}X"

    out = text
    unterminated = 0
    for pattern, opener in zip(_MATH_PATTERNS, _DANGLING_OPENERS):
        out = pattern.sub(grab, out)
        if opener is not None:
            unterminated += out.count(opener)
    return ProtectedDoc(out, tuple(segments), unterminated, stem)


def _map_name(tag: str) -> str:
    name = _TAG_ALIASES.get(tag, tag)
    return name if name in _PASSTHROUGH else "other"


def _emit_math(content: str, out: list[TagToken], finder: re.Pattern[str]) -> None:
    for _ in finder.finditer(content):
        out.append(TagToken(TagKind.OPEN, "math"))
        out.append(TagToken(TagKind.CLOSE, "math"))


def _emit_attr_math(token: Token, out: list[TagToken], finder: re.Pattern[str]) -> None:
    # Attributes are dropped, but a placeholder that landed in one (e.g. a
    # link target) must still surface so segments map 1:1 onto math pairs.
    for value in token.attrs.values():
        if isinstance(value, str):
            _emit_math(value, out, finder)


def _is_task_item(tokens: list[Token], i: int) -> bool:
    if i < 2 or tokens[i - 1].type != "paragraph_open" or tokens[i - 2].type != "list_item_open":
        return False
    children = tokens[i].children or []
    if not children or children[0].type != "text":
        return False
    head = children[0].content
    return head[:4] in ("[ ] ", "[x] ", "[X] ") or head in ("[ ]", "[x]", "[X]")


def _walk_inline(children: list[Token], out: list[TagToken], finder: re.Pattern[str]) -> None:
    for tok in children:
        if tok.hidden:
            continue
        if tok.type == "text":
            _emit_math(tok.content, out, finder)
        elif tok.type == "code_inline":
            out.append(TagToken(TagKind.OPEN, "code"))
            _emit_math(tok.content, out, finder)
            out.append(TagToken(TagKind.CLOSE, "code"))
        elif tok.type == "image":
            out.append(TagToken(TagKind.SELF, "img"))
            _emit_attr_math(tok, out, finder)
            _emit_math(tok.content, out, finder)
        elif tok.type == "hardbreak":
            out.append(TagToken(TagKind.SELF, "br"))
        elif tok.nesting == 1:
            out.append(TagToken(TagKind.OPEN, _map_name(tok.tag)))
            _emit_attr_math(tok, out, finder)
        elif tok.nesting == -1:
            out.append(TagToken(TagKind.CLOSE, _map_name(tok.tag)))
        else:
            # softbreak, html_inline, or future leaf types: no tag, but the
            # content may hide a placeholder.
            _emit_math(tok.content, out, finder)


def _walk_blocks(tokens: list[Token], out: list[TagToken], finder: re.Pattern[str]) -> None:
    for i, tok in enumerate(tokens):
        if tok.hidden:
            continue
        if tok.type == "inline":
            if _is_task_item(tokens, i):
                out.append(TagToken(TagKind.SELF, "input"))
            _walk_inline(tok.children or [], out, finder)
        elif tok.type in ("fence", "code_block"):
            out.append(TagToken(TagKind.OPEN, "pre"))
            out.append(TagToken(TagKind.OPEN, "code"))
            _emit_math(tok.content, out, finder)
            out.append(TagToken(TagKind.CLOSE, "code"))
            out.append(TagToken(TagKind.CLOSE, "pre"))
        elif tok.type == "hr":
            out.append(TagToken(TagKind.SELF, "hr"))
        elif tok.type == "html_block":
            _emit_math(tok.content, out, finder)
        elif tok.nesting == 1:
            out.append(TagToken(TagKind.OPEN, _map_name(tok.tag)))
            _emit_attr_math(tok, out, finder)
        elif tok.nesting == -1:
            out.append(TagToken(TagKind.CLOSE, _map_name(tok.tag)))
        elif tok.tag:
            out.append(TagToken(TagKind.SELF, _map_name(tok.tag)))
            _emit_math(tok.content, out, finder)
        else:
            _emit_math(tok.content, out, finder)


# parse() builds fresh state per call; the configured instance itself is
# never mutated afterwards, so sharing it across threads is safe.
_PARSER = MarkdownIt("commonmark").enable("table").enable("strikethrough")


@dataclass(frozen=True)
class DocumentAnalysis:
    tags: TagSequence
    math_segments: int
    unterminated_math: int


def analyze_document(text: str) -> DocumentAnalysis:
    """Extract the tag stream of ``text`` along with math diagnostics."""
    doc = protect_math(text)
    finder = doc.placeholder_finder()
    out: list[TagToken] = []
    _walk_blocks(_PARSER.parse(doc.text), out, finder)
    return DocumentAnalysis(TagSequence(tuple(out)), len(doc.segments), doc.unterminated)


def htmlify(text: str) -> TagSequence:
    """Convert Markdown to its tag stream.

    Deterministic: equal inputs always yield equal streams.
    """
    return analyze_document(text).tags


class MarkdownTagExtractor(TransformerMixin, BaseEstimator):
    """Stateless transformer from Markdown documents to tag sequences.

    With ``serialize=True`` the output is the debug serialization
    (``"+h1 -h1"``) instead of :class:`TagSequence` objects, which is handy
    for piping into text based tooling.
    """

    def __init__(self, serialize: bool = False):
        self.serialize = serialize

    def fit(self, X=None, y=None):
        return self

    def transform(self, X) -> list:
        docs = self._validate(X)
        seqs = [htmlify(doc) for doc in docs]
        if self.serialize:
            return [seq.debug() for seq in seqs]
        return seqs

    @staticmethod
    def _validate(X) -> list[str]:
        if isinstance(X, str):
            raise TypeError("expected an iterable of documents, got a single string")
        docs = list(X)
        for i, doc in enumerate(docs):
            if not isinstance(doc, str):
                raise TypeError(f"document {i} is {type(doc).__name__}, expected str")
        return docs
