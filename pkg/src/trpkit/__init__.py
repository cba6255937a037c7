"""Toolkit for triplet-structured grounded answers.

Grammar, VD-CoT blocks, reference routing, grouped Hungarian matching,
mask-guided aggregation, region metrics and corpus tooling.
"""

from .errors import TrpError, Violation
from .grammar import AnswerAst, emit_answer, parse_answer, tokenize, validate_triplets
from .vdcot import CotBlock, CotEntry, check_consistency, emit_cot, parse_cot

__version__ = "0.1.0"

__all__ = [
    "TrpError",
    "Violation",
    "AnswerAst",
    "emit_answer",
    "parse_answer",
    "tokenize",
    "validate_triplets",
    "CotBlock",
    "CotEntry",
    "check_consistency",
    "emit_cot",
    "parse_cot",
]
