"""VD-CoT task blocks: parsing, emission, and consistency against answers.

A block looks like::

    <Task>
    Unit decode (True). Class name, target unit and number:
    - Name: two men Unit: box Num: 2
    </Task>

or ``<Task>\\nUnit decode (False).\\n</Task>`` when nothing is decoded.
"""

from __future__ import annotations

import logging
import re
from collections import defaultdict
from dataclasses import dataclass

from .errors import (
    MalformedDecodeLine,
    MalformedEntryLine,
    MissingTaskTags,
    MultipleTaskBlocks,
    Violation,
)
from .grammar import AnswerAst, iter_triplets, phrase_key

logger = logging.getLogger(__name__)

__all__ = ["CotEntry", "CotBlock", "parse_cot", "emit_cot", "check_consistency",
           "consistency_notices"]

TASK_OPEN = "<Task>"
TASK_CLOSE = "</Task>"

_DECODE_RE = re.compile(
    r"Unit decode \((True|False)\)\.?(?:\s*Class name, target unit and number:?)?", re.I
)
_ENTRY_RE = re.compile(r"-\s*Name:\s*(?P<name>.+?)\s+Unit:\s*(?P<units>.+?)\s+Num:\s*(?P<num>\d+)")
_DECODE_HEADER = "Class name, target unit and number:"


@dataclass(frozen=True)
class CotEntry:
    name: str
    units: frozenset[str]
    num: int

    def __post_init__(self):
        if self.num < 1:
            raise ValueError(f"CotEntry.num must be >= 1, got {self.num}")
        if not self.units:
            raise ValueError("CotEntry.units must be non-empty")

    @property
    def key(self) -> tuple[str, frozenset[str]]:
        return phrase_key(self.name), self.units


@dataclass(frozen=True)
class CotBlock:
    decode: bool
    entries: tuple[CotEntry, ...] = ()

    def __post_init__(self):
        if not self.decode and self.entries:
            raise ValueError("a block with decode=False cannot have entries")


def _merge(entries: list[CotEntry]) -> tuple[CotEntry, ...]:
    merged: dict[tuple, CotEntry] = {}
    for e in entries:
        prev = merged.get(e.key)
        if prev is None:
            merged[e.key] = e
        else:
            logger.warning("merging duplicate VD-CoT entry %r / %r", prev.name, e.name)
            merged[e.key] = CotEntry(prev.name, prev.units, prev.num + e.num)
    return tuple(merged.values())


def parse_cot(source: str) -> CotBlock:
    n_open = source.count(TASK_OPEN)
    n_close = source.count(TASK_CLOSE)
    if n_open > 1 or n_close > 1:
        raise MultipleTaskBlocks(f"found {n_open} <Task> and {n_close} </Task> tags")
    if n_open == 0 or n_close == 0:
        raise MissingTaskTags("source needs exactly one <Task>...</Task> region")
    start = source.index(TASK_OPEN) + len(TASK_OPEN)
    end = source.index(TASK_CLOSE)
    if end < start:
        raise MissingTaskTags("</Task> precedes <Task>")

    lines = [ln.strip() for ln in source[start:end].splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise MalformedDecodeLine("empty task block")
    m = _DECODE_RE.fullmatch(lines[0])
    if m is None:
        raise MalformedDecodeLine(f"bad decode line: {lines[0]!r}")
    decode = m.group(1).lower() == "true"

    entries: list[CotEntry] = []
    for ln in lines[1:]:
        em = _ENTRY_RE.fullmatch(ln)
        if em is None:
            raise MalformedEntryLine(f"bad entry line: {ln!r}")
        units = frozenset(u.strip() for u in em.group("units").split(","))
        if "" in units:
            raise MalformedEntryLine(f"empty unit name in: {ln!r}")
        num = int(em.group("num"))
        if num < 1:
            raise MalformedEntryLine(f"Num must be >= 1 in: {ln!r}")
        entries.append(CotEntry(em.group("name").strip(), units, num))

    if not decode and entries:
        raise MalformedEntryLine("entries present although Unit decode is False")
    if decode and not entries:
        raise MalformedEntryLine("Unit decode is True but no entries follow")
    return CotBlock(decode, _merge(entries))


def emit_cot(block: CotBlock) -> str:
    if not block.decode:
        return f"{TASK_OPEN}\nUnit decode (False).\n{TASK_CLOSE}"
    lines = [TASK_OPEN, f"Unit decode (True). {_DECODE_HEADER}"]
    for e in block.entries:
        lines.append(f"- Name: {e.name} Unit: {', '.join(sorted(e.units))} Num: {e.num}")
    lines.append(TASK_CLOSE)
    return "\n".join(lines)


def _binding_tally(ast: AnswerAst):
    """Map (phrase key, unit set) -> [ref count, triplet indices]."""
    tally: dict[tuple, list] = defaultdict(lambda: [0, set()])
    claims = []
    for t_idx, trip in enumerate(iter_triplets(ast)):
        name = phrase_key(trip.phrase.text)
        for b in trip.bindings:
            key = (name, b.unit_set)
            tally[key][0] += len(b.refs)
            tally[key][1].add(t_idx)
            claims.append((t_idx, trip.phrase.text, key))
    return tally, claims


def check_consistency(cot: CotBlock, ast: AnswerAst) -> list[Violation]:
    """Compare a VD-CoT declaration with the triplets of an answer."""
    violations: list[Violation] = []
    if not cot.decode:
        for t_idx, trip in enumerate(iter_triplets(ast)):
            violations.append(Violation(
                "UnexpectedTriplet",
                f"triplet {t_idx} ({trip.phrase.text!r}) present although Unit decode is False",
                {"triplet": t_idx, "phrase": trip.phrase.text},
            ))
        return violations

    tally, claims = _binding_tally(ast)
    entry_keys = {e.key for e in cot.entries}
    for e in cot.entries:
        got = tally[e.key][0] if e.key in tally else 0
        if got != e.num:
            violations.append(Violation(
                "RefCountMismatch",
                f"entry {e.name!r} {sorted(e.units)}: expected {e.num} refs, got {got}",
                {"name": e.name, "units": sorted(e.units), "expected": e.num, "got": got},
            ))
    for t_idx, text, key in claims:
        if key not in entry_keys:
            violations.append(Violation(
                "UnclaimedTriplet",
                f"triplet {t_idx} ({text!r}, units {sorted(key[1])}) matches no VD-CoT entry",
                {"triplet": t_idx, "phrase": text, "units": sorted(key[1])},
            ))
    return violations


def consistency_notices(cot: CotBlock, ast: AnswerAst) -> list[Violation]:
    """Non-fatal observations: entries satisfied by more than one triplet."""
    if not cot.decode:
        return []
    tally, _ = _binding_tally(ast)
    notices = []
    for e in cot.entries:
        triplets = sorted(tally[e.key][1]) if e.key in tally else []
        if len(triplets) > 1:
            notices.append(Violation(
                "MultiTripletEntry",
                f"entry {e.name!r} is satisfied by {len(triplets)} triplets",
                {"name": e.name, "triplets": triplets},
            ))
    return notices
