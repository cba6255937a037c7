"""Random instance generators and fixed example strings shared by the tests."""

from __future__ import annotations

import random
import re

import numpy as np

from trpkit.grammar import AnswerAst, PhraseNode, RefToken, Triplet, UnitBinding
from trpkit.geometry import BinaryMask, Box, rle_encode

# Answer strings transcribed from the worked examples, with their stray spacing.
GCG_COT = """<Task>
Unit decode (True). Class name, target unit and number:
- Name: electric boat Unit: box Num: 1
- Name: two men Unit:  box Num: 2
- Name: baseball cap Unit:  box Num: 2
- Name: red apple Unit:  box Num: 1
</Task>"""

GCG_ANSWER = (
    "<Phrase>Two men</Phrase> (<Unit>box</Unit> [0] <REF>[1]<REF>) wearing "
    "<Phrase>baseball caps </Phrase> (<Unit>box </Unit> [0] <REF>[1]<REF>) stand on an "
    "<Phrase>electric boat</Phrase>(<Unit>box</Unit> [0]<REF>), with one holding a "
    "<Phrase>red apple</Phrase> (<Unit>box</Unit>[0]<REF>) ."
)

DET_COT = """<Task>
Unit decode (True). Class name, target unit and number:
- Name: car Unit: box Num: 10
- Name: skyscraper Unit: box Num: 1
- Name: barricade Unit: box Num: 1
- Name: city Unit: box Num: 1
- Name: street Unit: box Num: 1
</Task>"""

DET_ANSWER = (
    "<Phrase>car</Phrase> (<Unit>box</Unit> [0]<REF>[1]<REF>[2]<REF>[3]<REF>\n[4]<REF>\n"
    "[5]<REF>[6]<REF>[7]<REF>[8]<REF>[9]<REF>), \n"
    "<Phrase>skyscraper</Phrase> (<Unit>box</Unit> [0]<REF>), \n"
    "<Phrase>barricade</Phrase> (<Unit>box</Unit> [0]<REF>), \n"
    "<Phrase>city</Phrase> (<Unit>box</Unit> [0]<REF>), \n"
    "<Phrase>street</Phrase> (<Unit>box</Unit> [0]<REF>)."
)

CAPTION_COT = "<Task>\nUnit decode (False).\n</Task>"

CAPYBARA = "<Phrase>capybaras</Phrase>((<Unit> box</Unit>[0]<REF>[1]<REF>), <Unit>box </Unit>[1]<REF>)"


# -- answers -----------------------------------------------------------------------

UNITS = ["box", "mask", "keypoint", "depth", "pose2"]
_TEXT_CHARS = "abcdefgh xyz,.!?-'()[]0123:"
_EXTRA_TOKENS = ["<image>", "[VPT]", "[PAD]", "<Task>", "</Task>"]


def random_text(rng: random.Random, min_len: int = 1, max_len: int = 12) -> str:
    s = "".join(rng.choice(_TEXT_CHARS) for _ in range(rng.randint(min_len, max_len)))
    if rng.random() < 0.1:
        s += rng.choice(_EXTRA_TOKENS)
    return s


def random_phrase(rng: random.Random, depth: int = 0) -> PhraseNode:
    children: list = []
    for _ in range(rng.randint(1, 3)):
        if depth < 2 and rng.random() < 0.3:
            children.append(random_phrase(rng, depth + 1))
        elif children and isinstance(children[-1], str):
            children[-1] += random_text(rng)
        else:
            children.append(random_text(rng))
    # guarantee a word character so the normalized text is non-empty
    if isinstance(children[0], str):
        children[0] = rng.choice("abcxyz") + children[0]
    else:
        children.insert(0, rng.choice("abcxyz"))
    return PhraseNode(tuple(children))


def random_binding(rng: random.Random, units: tuple[str, ...]) -> UnitBinding:
    k = rng.randint(1, 5)
    return UnitBinding(units, tuple(RefToken(i) for i in range(k)))


def random_triplet(rng: random.Random) -> Triplet:
    unit_sets: list[tuple[str, ...]] = []
    for _ in range(rng.randint(1, 3)):
        us = tuple(rng.sample(UNITS, rng.randint(1, 2)))
        if frozenset(us) not in {frozenset(u) for u in unit_sets}:
            unit_sets.append(us)
    return Triplet(random_phrase(rng), tuple(random_binding(rng, us) for us in unit_sets))


def random_ast(rng: random.Random) -> AnswerAst:
    segments: list = []
    for _ in range(rng.randint(0, 6)):
        if rng.random() < 0.5:
            segments.append(random_triplet(rng))
        elif segments and isinstance(segments[-1], str):
            segments[-1] += random_text(rng)
        else:
            segments.append(random_text(rng))
    return AnswerAst(tuple(segments))


# -- geometry ----------------------------------------------------------------------

def random_box(rng: np.random.Generator) -> Box:
    x = np.sort(rng.random(2))
    y = np.sort(rng.random(2))
    return Box(float(x[0]), float(y[0]), float(x[1]), float(y[1]))


def random_mask(rng: np.random.Generator, h: int = 8, w: int = 8, p: float = 0.5) -> BinaryMask:
    return BinaryMask(rng.random((h, w)) < p)


# -- annotations -------------------------------------------------------------------

LABELS = ["person", "dog", "red car", "traffic light", "cup", "bicycle", "tree"]


def random_annotations(seed: int, n: int, with_masks: bool = True, max_regions: int = 5) -> list[dict]:
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        regions = []
        for _ in range(int(rng.integers(1, max_regions + 1))):
            label = LABELS[int(rng.integers(len(LABELS)))]
            region = {"label": label, "box": random_box(rng).as_list()}
            if with_masks:
                region["mask"] = rle_encode(random_mask(rng, 6, 5, 0.4)).to_json()
            regions.append(region)
        out.append({"image_id": f"img{i:03d}", "regions": regions})
    return out


TEMPLATES = {
    "templates": {
        "det": ["Find every object in <image> and box it.", "<image> Detect all objects with boxes."],
        "seg": ["Segment all objects in <image>.", "<image> Give a mask for each object."],
        "rec": ["Where is <referring expression> in <image>?", "Box the <referring expression> in <image>."],
        "res": ["Segment <referring expression> in <image>.", "<image> Mask out <referring expression>."],
        "reg": ["Describe the area <region> in <image>.", "<image> What is at <region>?"],
        "gcg-box": ["Describe <image> and box what you mention.", "<image> Tell me about the scene with boxes."],
        "gcg-mask": ["Describe <image> with masks.", "<image> Narrate the scene and segment objects."],
        "interactive-mask": ["Segment the object at <region> in <image>.", "<image> Mask the thing at <region>."],
    }
}


# -- mutations ---------------------------------------------------------------------

_REF_RE = re.compile(r"\[\d+\]<REF>")
_PHRASE_RE = re.compile(r"<Phrase>([^<]*)</Phrase>")
_UNIT_RE = re.compile(r"<Unit>([^<]*)</Unit>")
_COT_UNIT_RE = re.compile(r"(Unit: )(\w+)")
_NUM_RE = re.compile(r"(Num: )(\d+)")


def _other_unit(u: str) -> str:
    return {"box": "mask", "mask": "box"}.get(u.strip(), "box")


def single_edit_mutations(cot: str, answer: str):
    """Yield ``(description, cot, answer)`` for every single-edit mutation."""
    for m in _REF_RE.finditer(answer):
        yield "delete-ref", cot, answer[:m.start()] + answer[m.end():]
    for m in _PHRASE_RE.finditer(answer):
        renamed = f"<Phrase>{m.group(1)} xqzmutant</Phrase>"
        yield "rename-phrase", cot, answer[:m.start()] + renamed + answer[m.end():]
    for m in _UNIT_RE.finditer(answer):
        changed = f"<Unit>{_other_unit(m.group(1))}</Unit>"
        yield "change-unit", cot, answer[:m.start()] + changed + answer[m.end():]
    for m in _COT_UNIT_RE.finditer(cot):
        yield "change-cot-unit", cot[:m.start(2)] + _other_unit(m.group(2)) + cot[m.end(2):], answer
    for m in _NUM_RE.finditer(cot):
        num = int(m.group(2))
        for new in {num + 1, num - 1} - {0}:
            yield "perturb-num", cot[:m.start(2)] + str(new) + cot[m.end(2):], answer
