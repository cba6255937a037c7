"""Instruction-corpus schema, sample builder, validator and statistics.

Corpus file (UTF-8 JSON)::

    {
      "version": 1,
      "template_bank_sha256": "<hex>",
      "samples": [
        {
          "task": "det", "image_id": "img0",
          "system": "...", "prompt": "...<image>...",
          "cot": "<Task>...</Task>", "answer": "<Phrase>...",
          "targets": [{"units": ["box"], "phrase": "person",
                       "regions": [[x0, y0, x1, y1], ...]}],
          "visual_prompts": [],
          "turns": []            # optional, reserved
        }
      ]
    }

Box regions are ``[x0, y0, x1, y1]`` lists; mask regions are RLE objects
``{"size": [H, W], "counts": [...]}``.  ``targets`` has one entry per unit
binding, in answer order, and its ``regions`` line up with ref indices.
"""

from __future__ import annotations

import hashlib
import json
import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

from . import grammar
from .errors import (
    EmptyTemplateBank,
    MissingGeometry,
    SchemaError,
    TrpError,
    UnreadableFile,
    Violation,
)
from .geometry import Box, Rle, rle_decode
from .vdcot import CotBlock, CotEntry, check_consistency, emit_cot, parse_cot

__all__ = [
    "TASKS",
    "CORPUS_VERSION",
    "Region",
    "Annotation",
    "Sample",
    "TemplateBank",
    "build_samples",
    "corpus_document",
    "dump_corpus",
    "load_annotations",
    "load_corpus",
    "sample_violations",
    "validate_samples",
    "validate_corpus",
    "corpus_stats",
    "stats",
    "CorpusReport",
]

CORPUS_VERSION = 1

# task -> (decoded unit or None, one sample per "image" or per "region")
TASKS: dict[str, tuple[str | None, str]] = {
    "det": ("box", "image"),
    "seg": ("mask", "image"),
    "rec": ("box", "region"),
    "res": ("mask", "region"),
    "reg": (None, "region"),
    "gcg-box": ("box", "image"),
    "gcg-mask": ("mask", "image"),
    "interactive-mask": ("mask", "region"),
}

REQUIRED_PLACEHOLDERS = {
    "rec": "<referring expression>",
    "res": "<referring expression>",
    "reg": "<region>",
    "interactive-mask": "<region>",
}

DEFAULT_SYSTEM = {
    "det": "You are a visual assistant. Locate every object in the image and answer with phrase-unit-reference triplets.",
    "seg": "You are a visual assistant. Segment every object in the image and answer with phrase-unit-reference triplets.",
    "rec": "You are a visual assistant. Locate the object described by the user.",
    "res": "You are a visual assistant. Segment the object described by the user.",
    "reg": "You are a visual assistant. Describe the marked region of the image.",
    "gcg-box": "You are a visual assistant. Describe the image and ground each mentioned object with boxes.",
    "gcg-mask": "You are a visual assistant. Describe the image and ground each mentioned object with masks.",
    "interactive-mask": "You are a visual assistant. Segment the object indicated by the visual prompt.",
}

_GCG_OPENERS = ("The image shows", "In this picture there is", "This scene contains", "We can see")
_EMPTY_ANSWER = "There are no annotated objects in this image."


# -- schema types ----------------------------------------------------------------

@dataclass(frozen=True)
class Region:
    label: str
    box: Box | None = None
    mask: Rle | None = None

    def __post_init__(self):
        if self.box is None and self.mask is None:
            raise SchemaError(f"region {self.label!r} has neither box nor mask")


@dataclass(frozen=True)
class Annotation:
    image_id: str
    regions: tuple[Region, ...] = ()

    @classmethod
    def from_json(cls, obj: dict) -> "Annotation":
        try:
            regions = []
            for r in obj.get("regions", []):
                box = Box.from_seq(r["box"]) if r.get("box") is not None else None
                mask = Rle.from_json(r["mask"]) if r.get("mask") is not None else None
                regions.append(Region(str(r["label"]), box, mask))
            return cls(str(obj["image_id"]), tuple(regions))
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"bad annotation: {exc}") from exc


@dataclass
class Sample:
    task: str
    image_id: str
    system: str
    prompt: str
    cot: str
    answer: str
    targets: list[dict] = field(default_factory=list)
    visual_prompts: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "task": self.task,
            "image_id": self.image_id,
            "system": self.system,
            "prompt": self.prompt,
            "cot": self.cot,
            "answer": self.answer,
            "targets": self.targets,
            "visual_prompts": self.visual_prompts,
        }


@dataclass
class TemplateBank:
    templates: dict[str, list[str]]
    system: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_json(cls, obj: dict) -> "TemplateBank":
        if not isinstance(obj, dict) or not isinstance(obj.get("templates"), dict):
            raise SchemaError('template bank needs a "templates" object')
        templates = {k: list(v) for k, v in obj["templates"].items()}
        return cls(templates, dict(obj.get("system", {})))

    @classmethod
    def load(cls, path) -> "TemplateBank":
        return cls.from_json(_read_json(path))

    def to_json(self) -> dict:
        return {"templates": self.templates, "system": self.system}

    def sha256(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def for_task(self, task: str) -> list[str]:
        templates = self.templates.get(task) or []
        if not templates:
            raise EmptyTemplateBank(f"no prompt templates for task {task!r}")
        for t in templates:
            if "<image>" not in t:
                raise SchemaError(f"template lacks <image>: {t!r}")
            need = REQUIRED_PLACEHOLDERS.get(task)
            if need and need not in t:
                raise SchemaError(f"{task} template lacks {need}: {t!r}")
        return templates


# -- builder ---------------------------------------------------------------------

_FORBIDDEN_IN_LABEL = ("Unit:", "Num:", "Name:", "\n", "\r")


def _label(raw: str) -> str:
    label = " ".join(raw.lower().split())
    if not grammar.normalize_phrase(label):
        raise SchemaError(f"label {raw!r} has no usable text")
    if any(t.kind is not None for t in grammar.tokenize(label)) or \
            any(f.lower() in label for f in _FORBIDDEN_IN_LABEL):
        raise SchemaError(f"label {raw!r} contains reserved markup")
    return label


def _geometry(region: Region, unit: str, image_id: str):
    if unit == "box":
        if region.box is None:
            raise MissingGeometry(f"{image_id}: region {region.label!r} has no box")
        return region.box.as_list()
    if region.mask is None:
        raise MissingGeometry(f"{image_id}: region {region.label!r} has no mask")
    return region.mask.to_json()


def _triplet(phrase: str, unit: str, k: int) -> str:
    ast = grammar.AnswerAst((grammar.Triplet(
        grammar.PhraseNode((phrase,)),
        (grammar.UnitBinding((unit,), tuple(grammar.RefToken(i) for i in range(k))),),
    ),))
    return grammar.emit_answer(ast)


def _grouped(regions: Iterable[Region]) -> dict[str, list[Region]]:
    groups: dict[str, list[Region]] = {}
    for r in regions:
        groups.setdefault(_label(r.label), []).append(r)
    return groups


def _visual_prompt(region: Region) -> dict:
    if region.box is not None:
        return {"kind": "box", "box": region.box.as_list()}
    return {"kind": "mask", "mask": region.mask.to_json()}


def _join_clauses(parts: list[str]) -> str:
    if len(parts) == 1:
        return parts[0]
    return ", ".join(parts[:-1]) + " and " + parts[-1]


def _image_sample(ann: Annotation, task: str, unit: str, prompt: str, system: str,
                  rng: random.Random) -> Sample:
    groups = _grouped(ann.regions)
    if not groups:
        return Sample(task, ann.image_id, system, prompt, emit_cot(CotBlock(False)), _EMPTY_ANSWER)
    triplets, entries, targets = [], [], []
    for label, regions in groups.items():
        geoms = [_geometry(r, unit, ann.image_id) for r in regions]
        triplets.append(_triplet(label, unit, len(regions)))
        entries.append(CotEntry(label, frozenset({unit}), len(regions)))
        targets.append({"units": [unit], "phrase": label, "regions": geoms})
    if task.startswith("gcg"):
        answer = f"{rng.choice(_GCG_OPENERS)} {_join_clauses(triplets)}."
    else:
        answer = ", ".join(triplets) + "."
    return Sample(task, ann.image_id, system, prompt,
                  emit_cot(CotBlock(True, tuple(entries))), answer, targets)


def _region_sample(ann: Annotation, region: Region, task: str, unit: str | None,
                   template: str, system: str) -> Sample:
    label = _label(region.label)
    prompt = template.replace("<referring expression>", label).replace("<region>", "[VPT]")
    if task == "reg":
        return Sample(task, ann.image_id, system, prompt, emit_cot(CotBlock(False)),
                      f"{label[0].upper()}{label[1:]}.", [], [_visual_prompt(region)])
    # rec/res name their single referent "target"; interactive grounding uses the label
    phrase = label if task == "interactive-mask" else "target"
    geom = _geometry(region, unit, ann.image_id)
    visual = [_visual_prompt(region)] if task == "interactive-mask" else []
    return Sample(task, ann.image_id, system, prompt,
                  emit_cot(CotBlock(True, (CotEntry(phrase, frozenset({unit}), 1),))),
                  _triplet(phrase, unit, 1) + ".",
                  [{"units": [unit], "phrase": phrase, "regions": [geom]}], visual)


def build_samples(annotations: Sequence[Annotation], task: str, bank: TemplateBank,
                  seed: int) -> list[Sample]:
    """Turn raw annotations into corpus samples; deterministic in ``seed``."""
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; expected one of {sorted(TASKS)}")
    templates = bank.for_task(task)
    system = bank.system.get(task, DEFAULT_SYSTEM[task])
    unit, granularity = TASKS[task]
    rng = random.Random(seed)
    samples = []
    for ann in annotations:
        if granularity == "image":
            prompt = rng.choice(templates)
            samples.append(_image_sample(ann, task, unit, prompt, system, rng))
        else:
            for region in ann.regions:
                template = rng.choice(templates)
                samples.append(_region_sample(ann, region, task, unit, template, system))
    return samples


def corpus_document(samples: Sequence[Sample], bank: TemplateBank) -> dict:
    return {
        "version": CORPUS_VERSION,
        "template_bank_sha256": bank.sha256(),
        "samples": [s.to_json() for s in samples],
    }


def dump_corpus(samples: Sequence[Sample], bank: TemplateBank) -> str:
    return json.dumps(corpus_document(samples, bank), indent=2, ensure_ascii=False) + "\n"


# -- IO --------------------------------------------------------------------------

def _read_json(path) -> Any:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except (OSError, UnicodeDecodeError) as exc:
        raise UnreadableFile(f"cannot read {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from exc


def load_annotations(path) -> list[Annotation]:
    obj = _read_json(path)
    if isinstance(obj, dict):
        obj = obj.get("annotations")
    if not isinstance(obj, list):
        raise SchemaError(f"{path}: expected a list of annotations")
    return [Annotation.from_json(a) for a in obj]


_SAMPLE_FIELDS = {
    "task": str, "image_id": str, "system": str, "prompt": str,
    "cot": str, "answer": str, "targets": list,
}


def _check_schema(doc: Any) -> list[dict]:
    if not isinstance(doc, dict):
        raise SchemaError("corpus must be a JSON object")
    if doc.get("version") != CORPUS_VERSION:
        raise SchemaError(f"unsupported corpus version {doc.get('version')!r}")
    if not isinstance(doc.get("template_bank_sha256"), str):
        raise SchemaError("missing template_bank_sha256")
    samples = doc.get("samples")
    if not isinstance(samples, list):
        raise SchemaError('"samples" must be a list')
    for i, s in enumerate(samples):
        if not isinstance(s, dict):
            raise SchemaError(f"sample {i} is not an object")
        for name, typ in _SAMPLE_FIELDS.items():
            if not isinstance(s.get(name), typ):
                raise SchemaError(f"sample {i}: field {name!r} missing or not {typ.__name__}")
        for key in ("visual_prompts", "turns"):
            if key in s and not isinstance(s[key], list):
                raise SchemaError(f"sample {i}: {key!r} must be a list")
    return samples


def load_corpus(path) -> list[dict]:
    return _check_schema(_read_json(path))


# -- validation ------------------------------------------------------------------

def _region_violation(region: Any, unit: str) -> str | None:
    try:
        if unit == "box":
            Box.from_seq(region)
        elif unit == "mask":
            rle_decode(Rle.from_json(region))
    except (TypeError, ValueError) as exc:
        return str(exc)
    return None


def _target_violations(ast: grammar.AnswerAst, targets: list) -> list[Violation]:
    bindings = [b for t in grammar.iter_triplets(ast) for b in t.bindings]
    out = []
    if len(targets) != len(bindings):
        return [Violation("TargetMismatch",
                          f"{len(targets)} target groups for {len(bindings)} unit bindings",
                          {"targets": len(targets), "bindings": len(bindings)})]
    for g, (b, tgt) in enumerate(zip(bindings, targets)):
        if not isinstance(tgt, dict) or not isinstance(tgt.get("regions"), list):
            out.append(Violation("TargetMismatch", f"target group {g} is malformed", {"group": g}))
            continue
        units = tgt.get("units")
        if units != list(b.units):
            out.append(Violation("TargetMismatch",
                                 f"target group {g} units {units} != binding units {list(b.units)}",
                                 {"group": g}))
            continue
        if len(tgt["regions"]) != len(b.refs):
            out.append(Violation("TargetMismatch",
                                 f"target group {g}: {len(tgt['regions'])} regions for {len(b.refs)} refs",
                                 {"group": g, "regions": len(tgt["regions"]), "refs": len(b.refs)}))
            continue
        if len(b.units) == 1:
            for i, region in enumerate(tgt["regions"]):
                problem = _region_violation(region, b.units[0])
                if problem:
                    out.append(Violation("BadRegion", f"target group {g} region {i}: {problem}",
                                         {"group": g, "region": i}))
    return out


def sample_violations(cot_text: str, answer_text: str, targets: list | None = None) -> list[Violation]:
    """Every check for one (cot, answer[, targets]) triple; parse failures are violations."""
    out: list[Violation] = []
    try:
        cot = parse_cot(cot_text)
    except TrpError as exc:
        out.append(Violation(type(exc).__name__, f"cot: {exc}"))
        cot = None
    try:
        ast = grammar.parse_answer(answer_text)
    except TrpError as exc:
        out.append(Violation(type(exc).__name__, f"answer: {exc}"))
        return out
    out.extend(grammar.validate_triplets(ast))
    if cot is not None:
        out.extend(check_consistency(cot, ast))
    if targets is not None:
        out.extend(_target_violations(ast, targets))
    return out


@dataclass
class CorpusReport:
    n_samples: int
    violations: list[tuple[int, Violation]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def flagged(self) -> list[int]:
        return sorted({i for i, _ in self.violations})

    def to_json(self) -> dict:
        return {
            "samples": self.n_samples,
            "ok": self.ok,
            "flagged_samples": self.flagged,
            "violations": [{"sample": i, **v.to_json()} for i, v in self.violations],
        }


def validate_samples(samples: Sequence[dict], strict: bool = False) -> CorpusReport:
    """``strict`` also requires every task name to be known."""
    report = CorpusReport(len(samples))
    for i, s in enumerate(samples):
        found = sample_violations(s["cot"], s["answer"], s["targets"])
        if strict and s["task"] not in TASKS:
            found.append(Violation("UnknownTask", f"unknown task {s['task']!r}"))
        report.violations.extend((i, v) for v in found)
    return report


def validate_corpus(path, strict: bool = False) -> CorpusReport:
    return validate_samples(load_corpus(path), strict)


# -- statistics ------------------------------------------------------------------

def corpus_stats(samples: Sequence[dict]) -> dict:
    tasks: Counter = Counter()
    units: Counter = Counter()
    ref_hist: Counter = Counter()
    phrase_hist: Counter = Counter()
    unparsed = 0
    for s in samples:
        tasks[s["task"]] += 1
        try:
            ast = grammar.parse_answer(s["answer"])
        except TrpError:
            unparsed += 1
            continue
        for trip in grammar.iter_triplets(ast):
            phrase_hist[len(trip.phrase.normalized_text.split())] += 1
            for b in trip.bindings:
                ref_hist[len(b.refs)] += 1
                for u in b.units:
                    units[u] += len(b.refs)
    return {
        "samples": len(samples),
        "tasks": dict(sorted(tasks.items())),
        "units": dict(sorted(units.items())),
        "ref_count_histogram": {str(k): v for k, v in sorted(ref_hist.items())},
        "phrase_length_histogram": {str(k): v for k, v in sorted(phrase_hist.items())},
        "unparsed_answers": unparsed,
    }


def stats(path) -> dict:
    return corpus_stats(load_corpus(path))
