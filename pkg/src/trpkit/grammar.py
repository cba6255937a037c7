"""Tokenizer, parser, emitter and validator for triplet-structured answers.

An answer interleaves plain text with *triplets*::

    <Phrase>two men</Phrase>(<Unit>box</Unit>[0]<REF>[1]<REF>)

A triplet is a phrase (which may nest other phrases) followed by a
parenthesized decode-spec holding one or more comma-separated unit bindings.
Each binding names one or more units and lists indexed ``<REF>`` tokens.
"""

from __future__ import annotations

import enum
import re
import string
from dataclasses import dataclass, field
from typing import Iterator, Union

from .errors import (
    BadRefIndex,
    DanglingRef,
    EmptyPhrase,
    InvariantViolation,
    MalformedDecodeSpec,
    UnbalancedPhrase,
    Violation,
)

__all__ = [
    "TokenKind",
    "Token",
    "PhraseNode",
    "RefToken",
    "UnitBinding",
    "Triplet",
    "AnswerAst",
    "tokenize",
    "parse_answer",
    "emit_answer",
    "canonicalize",
    "validate_triplets",
    "normalize_phrase",
    "phrase_key",
    "iter_triplets",
]


class TokenKind(enum.Enum):
    PHRASE_OPEN = "<Phrase>"
    PHRASE_CLOSE = "</Phrase>"
    UNIT_OPEN = "<Unit>"
    UNIT_CLOSE = "</Unit>"
    REF = "<REF>"
    TASK_OPEN = "<Task>"
    TASK_CLOSE = "</Task>"
    VPT = "[VPT]"
    PAD = "[PAD]"
    IMAGE = "<image>"

    @property
    def surface(self) -> str:
        return self.value


_SURFACE_TO_KIND = {k.value: k for k in TokenKind}
# longest first so that no surface is ever split by a shorter prefix
_TOKEN_RE = re.compile(
    "|".join(re.escape(s) for s in sorted(_SURFACE_TO_KIND, key=len, reverse=True))
)
# tokens that carry grammar structure; everything else is opaque text to the parser
_STRUCTURAL = {
    TokenKind.PHRASE_OPEN,
    TokenKind.PHRASE_CLOSE,
    TokenKind.UNIT_OPEN,
    TokenKind.UNIT_CLOSE,
    TokenKind.REF,
}


@dataclass(frozen=True)
class Token:
    """A special token (``kind`` set) or a run of plain text (``kind is None``)."""

    kind: TokenKind | None
    text: str
    start: int

    @property
    def is_text(self) -> bool:
        return self.kind is None


def tokenize(source: str) -> list[Token]:
    """Split ``source`` into special tokens and text runs.

    Never fails, and ``"".join(t.text for t in tokenize(s)) == s``.
    """
    tokens: list[Token] = []
    pos = 0
    for m in _TOKEN_RE.finditer(source):
        if m.start() > pos:
            tokens.append(Token(None, source[pos:m.start()], pos))
        tokens.append(Token(_SURFACE_TO_KIND[m.group()], m.group(), m.start()))
        pos = m.end()
    if pos < len(source):
        tokens.append(Token(None, source[pos:], pos))
    return tokens


# -- AST -----------------------------------------------------------------------

@dataclass(frozen=True)
class PhraseNode:
    children: tuple[Union[str, "PhraseNode"], ...]
    span: tuple[int, int] | None = field(default=None, compare=False)

    @property
    def text(self) -> str:
        return "".join(c if isinstance(c, str) else c.text for c in self.children)

    @property
    def normalized_text(self) -> str:
        return normalize_phrase(self.text)

    @property
    def depth(self) -> int:
        nested = [c.depth for c in self.children if isinstance(c, PhraseNode)]
        return 1 + max(nested, default=0)


@dataclass(frozen=True)
class RefToken:
    index: int
    source_position: int | None = field(default=None, compare=False)


@dataclass(frozen=True)
class UnitBinding:
    units: tuple[str, ...]
    refs: tuple[RefToken, ...]

    @property
    def unit_set(self) -> frozenset[str]:
        return frozenset(self.units)

    @property
    def indices(self) -> list[int]:
        return [r.index for r in self.refs]


@dataclass(frozen=True)
class Triplet:
    phrase: PhraseNode
    bindings: tuple[UnitBinding, ...]

    @property
    def ref_count(self) -> int:
        return sum(len(b.refs) for b in self.bindings)


@dataclass(frozen=True)
class AnswerAst:
    segments: tuple[Union[str, Triplet], ...] = ()

    @property
    def triplets(self) -> list[Triplet]:
        return [s for s in self.segments if isinstance(s, Triplet)]


def iter_triplets(ast: AnswerAst) -> Iterator[Triplet]:
    for seg in ast.segments:
        if isinstance(seg, Triplet):
            yield seg


# -- phrase normalization --------------------------------------------------------

_PUNCT_TABLE = str.maketrans({c: " " for c in string.punctuation})


def normalize_phrase(text: str) -> str:
    """Lowercase, replace punctuation with spaces, collapse whitespace."""
    return " ".join(text.lower().translate(_PUNCT_TABLE).split())


def phrase_key(text: str) -> str:
    """Matching key for phrase/name comparison.

    ``normalize_phrase`` plus a naive singular fold of the final word, so a
    CoT name like "baseball cap" claims the answer phrase "baseball caps".
    """
    words = normalize_phrase(text).split()
    if words:
        last = words[-1]
        if len(last) > 3 and last.endswith("s") and not last.endswith("ss"):
            words[-1] = last[:-1]
    return " ".join(words)


# -- parser ----------------------------------------------------------------------

_INDEX_RE = re.compile(r"\[\s*(\d+)\s*\]")
_UNIT_NAME_RE = re.compile(r"[^\s,()\[\]<>]+")


class _Cursor:
    """Walks a token list, allowing partial consumption of text runs."""

    def __init__(self, tokens: list[Token], length: int):
        self.tokens = tokens
        self.length = length
        self.i = 0
        self.off = 0

    def at_end(self) -> bool:
        return self.i >= len(self.tokens)

    @property
    def token(self) -> Token | None:
        return None if self.at_end() else self.tokens[self.i]

    @property
    def kind(self) -> TokenKind | None:
        tok = self.token
        return None if tok is None else tok.kind

    def is_text(self) -> bool:
        tok = self.token
        return tok is not None and tok.kind is None

    def rest(self) -> str:
        return self.tokens[self.i].text[self.off:]

    def position(self) -> int:
        if self.at_end():
            return self.length
        return self.tokens[self.i].start + self.off

    def advance(self) -> None:
        self.i += 1
        self.off = 0

    def take(self, n: int) -> None:
        self.off += n
        if self.off >= len(self.tokens[self.i].text):
            self.advance()

    def skip_ws(self) -> None:
        while self.is_text():
            rest = self.rest()
            stripped = rest.lstrip()
            if stripped:
                self.take(len(rest) - len(stripped))
                return
            self.advance()

    def match_char(self, ch: str) -> bool:
        self.skip_ws()
        if self.is_text() and self.rest().startswith(ch):
            self.take(1)
            return True
        return False

    def expect(self, kind: TokenKind, what: str) -> None:
        self.skip_ws()
        if self.kind is not kind or self.is_text():
            raise MalformedDecodeSpec(f"expected {what}", self.position())
        self.advance()


def _append_text(children: list, text: str) -> None:
    if children and isinstance(children[-1], str):
        children[-1] += text
    else:
        children.append(text)


def _parse_phrase(cur: _Cursor) -> PhraseNode:
    start = cur.position()
    cur.advance()  # <Phrase>
    children: list = []
    while True:
        tok = cur.token
        if tok is None:
            raise UnbalancedPhrase("<Phrase> is never closed", start)
        if tok.kind is None:
            _append_text(children, cur.rest())
            cur.advance()
        elif tok.kind is TokenKind.PHRASE_OPEN:
            children.append(_parse_phrase(cur))
        elif tok.kind is TokenKind.PHRASE_CLOSE:
            cur.advance()
            break
        elif tok.kind is TokenKind.REF:
            raise DanglingRef("<REF> inside a phrase", tok.start)
        elif tok.kind in (TokenKind.UNIT_OPEN, TokenKind.UNIT_CLOSE):
            raise MalformedDecodeSpec(f"{tok.text} inside a phrase", tok.start)
        else:
            _append_text(children, tok.text)
            cur.advance()
    node = PhraseNode(tuple(children), (start, cur.position()))
    if not node.normalized_text:
        raise EmptyPhrase("phrase has no text", start)
    return node


def _parse_units(raw: str, pos: int) -> tuple[str, ...]:
    units = tuple(u.strip() for u in raw.split(","))
    for u in units:
        if not u:
            raise MalformedDecodeSpec("empty unit name", pos)
        if not _UNIT_NAME_RE.fullmatch(u):
            raise MalformedDecodeSpec(f"bad unit name {u!r}", pos)
    return units


def _parse_binding(cur: _Cursor, strict: bool) -> UnitBinding:
    # a binding may carry its own parentheses: "((<Unit>box</Unit>[0]<REF>), ...)"
    wrapped = cur.match_char("(")
    cur.expect(TokenKind.UNIT_OPEN, "<Unit>")
    pos = cur.position()
    raw = ""
    if cur.is_text():
        raw = cur.rest()
        cur.advance()
    if cur.kind is not TokenKind.UNIT_CLOSE or cur.is_text():
        raise MalformedDecodeSpec("expected </Unit>", cur.position())
    cur.advance()
    units = _parse_units(raw, pos)

    refs: list[RefToken] = []
    while True:
        cur.skip_ws()
        if not cur.is_text():
            break
        m = _INDEX_RE.match(cur.rest())
        if m is None:
            break
        cur.take(m.end())
        cur.skip_ws()
        if cur.kind is not TokenKind.REF or cur.is_text():
            raise MalformedDecodeSpec("reference index not followed by <REF>", cur.position())
        refs.append(RefToken(int(m.group(1)), cur.i))
        cur.advance()
    if not refs:
        raise MalformedDecodeSpec("binding has no [i]<REF> references", cur.position())
    if wrapped and not cur.match_char(")"):
        raise MalformedDecodeSpec("unclosed binding parenthesis", cur.position())

    indices = [r.index for r in refs]
    if strict and indices != list(range(len(refs))):
        raise BadRefIndex(f"reference indices {indices} are not 0..{len(refs) - 1}", pos)
    return UnitBinding(units, tuple(refs))


def _parse_decode_spec(cur: _Cursor, strict: bool) -> tuple[UnitBinding, ...]:
    if not cur.match_char("("):
        raise MalformedDecodeSpec("phrase is not followed by a parenthesized decode-spec",
                                  cur.position())
    bindings = [_parse_binding(cur, strict)]
    while True:
        if cur.match_char(","):
            bindings.append(_parse_binding(cur, strict))
        elif cur.match_char(")"):
            return tuple(bindings)
        else:
            raise MalformedDecodeSpec("expected ',' or ')' in decode-spec", cur.position())


def parse_answer(source: str, strict: bool = True) -> AnswerAst:
    """Parse a TRP answer string.

    With ``strict=False`` reference indices are recorded as written instead of
    raising ``BadRefIndex``; ``validate_triplets`` then reports them.
    """
    cur = _Cursor(tokenize(source), len(source))
    segments: list = []
    while not cur.at_end():
        tok = cur.token
        kind = tok.kind
        if kind is None:
            _append_text(segments, cur.rest())
            cur.advance()
        elif kind is TokenKind.PHRASE_OPEN:
            phrase = _parse_phrase(cur)
            segments.append(Triplet(phrase, _parse_decode_spec(cur, strict)))
        elif kind is TokenKind.PHRASE_CLOSE:
            raise UnbalancedPhrase("</Phrase> without a matching <Phrase>", tok.start)
        elif kind is TokenKind.REF:
            raise DanglingRef("<REF> outside a decode-spec", tok.start)
        elif kind in (TokenKind.UNIT_OPEN, TokenKind.UNIT_CLOSE):
            raise MalformedDecodeSpec(f"{tok.text} outside a decode-spec", tok.start)
        else:
            _append_text(segments, tok.text)
            cur.advance()
    return AnswerAst(tuple(segments))


# -- emitter ---------------------------------------------------------------------

def _check_text(text: object, where: str) -> None:
    if not isinstance(text, str) or not text:
        raise InvariantViolation(f"{where}: text segments must be non-empty strings")
    for tok in tokenize(text):
        if tok.kind in _STRUCTURAL:
            raise InvariantViolation(f"{where}: text contains structural token {tok.text}")


def _check_children(children, where: str) -> None:
    prev_text = False
    for child in children:
        if isinstance(child, PhraseNode):
            _check_phrase(child)
            prev_text = False
        else:
            _check_text(child, where)
            if prev_text:
                raise InvariantViolation(f"{where}: adjacent text segments")
            prev_text = True


def _check_phrase(node: PhraseNode) -> None:
    _check_children(node.children, "phrase")
    if not node.normalized_text:
        raise InvariantViolation("phrase normalized text is empty")


def _check_binding(b: UnitBinding) -> None:
    if not b.units:
        raise InvariantViolation("binding has no units")
    for u in b.units:
        if not isinstance(u, str) or not _UNIT_NAME_RE.fullmatch(u):
            raise InvariantViolation(f"bad unit name {u!r}")
    if not b.refs:
        raise InvariantViolation("binding has no refs")
    if b.indices != list(range(len(b.refs))):
        raise InvariantViolation(f"ref indices {b.indices} not contiguous from 0")


def _emit_phrase(node: PhraseNode) -> str:
    inner = "".join(c if isinstance(c, str) else _emit_phrase(c) for c in node.children)
    return f"<Phrase>{inner}</Phrase>"


def _emit_binding(b: UnitBinding) -> str:
    refs = "".join(f"[{r.index}]<REF>" for r in b.refs)
    return f"<Unit>{', '.join(b.units)}</Unit>{refs}"


def emit_answer(ast: AnswerAst) -> str:
    """Render an AST in canonical form. Raises ``InvariantViolation``."""
    out: list[str] = []
    prev_text = False
    for seg in ast.segments:
        if isinstance(seg, Triplet):
            _check_phrase(seg.phrase)
            if not seg.bindings:
                raise InvariantViolation("triplet has no bindings")
            for b in seg.bindings:
                _check_binding(b)
            out.append(_emit_phrase(seg.phrase))
            out.append("(" + ", ".join(_emit_binding(b) for b in seg.bindings) + ")")
            prev_text = False
        else:
            _check_text(seg, "answer")
            if prev_text:
                raise InvariantViolation("answer: adjacent text segments")
            out.append(seg)
            prev_text = True
    return "".join(out)


def canonicalize(source: str) -> str:
    return emit_answer(parse_answer(source))


# -- validator -------------------------------------------------------------------

_UNIT_OK_RE = re.compile(r"[a-z0-9]+")


def validate_triplets(ast: AnswerAst) -> list[Violation]:
    """Rule check over a parsed answer; returns violations instead of raising."""
    violations: list[Violation] = []
    for t_idx, trip in enumerate(iter_triplets(ast)):
        phrase = trip.phrase.text
        seen: set[frozenset[str]] = set()
        for b_idx, b in enumerate(trip.bindings):
            where = {"triplet": t_idx, "binding": b_idx, "phrase": phrase}
            if b.indices != list(range(len(b.refs))):
                violations.append(Violation(
                    "BadRefIndex",
                    f"triplet {t_idx} binding {b_idx}: indices {b.indices} are not contiguous from 0",
                    {**where, "indices": b.indices},
                ))
            if b.unit_set in seen:
                violations.append(Violation(
                    "DuplicateUnitBinding",
                    f"triplet {t_idx}: unit set {sorted(b.unit_set)} bound more than once",
                    {**where, "units": sorted(b.unit_set)},
                ))
            seen.add(b.unit_set)
            for u in b.units:
                if not _UNIT_OK_RE.fullmatch(u):
                    violations.append(Violation(
                        "BadUnitName",
                        f"triplet {t_idx} binding {b_idx}: unit {u!r} is not lowercase alphanumeric",
                        {**where, "unit": u},
                    ))
    return violations
