"""Grouped Hungarian matching between decoder predictions and targets.

Each triplet binding forms an independent group.  Groups are stacked into a
padded ``(B, N_max, M_max)`` cost tensor with a validity mask; every group is
then solved on its own valid region.  Invalid cells are forbidden outright
rather than assigned a sentinel cost.

Among several optimal assignments the one with the lexicographically
smallest ``(prediction, target)`` pair sequence is returned, so results are
reproducible regardless of solver internals.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .errors import DimensionMismatch, InfeasibleAssignment, MixedUnits, TooLarge
from .geometry import BinaryMask, Box, box_giou, box_l1

__all__ = [
    "CostWeights",
    "GroupCostTensor",
    "Assignment",
    "box_pair_cost",
    "mask_pair_cost",
    "build_cost_tensor",
    "hungarian_assign",
    "group_match_parallel",
    "brute_force_match",
    "assignment_total",
]

BCE_EPS = 1e-7
BRUTE_FORCE_LIMIT = 8


@dataclass(frozen=True)
class CostWeights:
    lambda_l1: float = 5.0
    lambda_giou: float = 2.0
    lambda_mask: float = 20.0
    lambda_dice: float = 1.0

    def __post_init__(self):
        for name in ("lambda_l1", "lambda_giou", "lambda_mask", "lambda_dice"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def box_pair_cost(p: Box, t: Box, w: CostWeights = CostWeights()) -> float:
    return w.lambda_l1 * box_l1(p, t) + w.lambda_giou * (1.0 - box_giou(p, t))


def _as_grid(x) -> np.ndarray:
    if isinstance(x, BinaryMask):
        return x.data.astype(float)
    return np.asarray(x, dtype=float)


def mask_pair_cost(p, t, w: CostWeights = CostWeights(), eps: float = BCE_EPS) -> float:
    """Weighted mean BCE plus soft-Dice cost for a probability map ``p``."""
    p = _as_grid(p)
    t = _as_grid(t)
    if p.shape != t.shape:
        raise DimensionMismatch(f"probability map {p.shape} vs target {t.shape}")
    if p.size and (p.min() < 0.0 or p.max() > 1.0):
        raise ValueError("mask probabilities must lie in [0, 1]")
    pc = np.clip(p, eps, 1.0 - eps)
    bce = float(np.mean(-(t * np.log(pc) + (1.0 - t) * np.log(1.0 - pc))))
    denom = float(p.sum() + t.sum())
    dice = 1.0 if denom == 0.0 else 2.0 * float((p * t).sum()) / denom
    return w.lambda_mask * bce + w.lambda_dice * (1.0 - dice)


@dataclass(frozen=True, eq=False)
class GroupCostTensor:
    costs: np.ndarray  # (B, n_max, m_max)
    valid: np.ndarray  # (B, n_max, m_max) bool
    group_sizes: tuple[tuple[int, int], ...]

    @property
    def batch_size(self) -> int:
        return self.costs.shape[0]

    @property
    def n_max(self) -> int:
        return self.costs.shape[1]

    @property
    def m_max(self) -> int:
        return self.costs.shape[2]

    @classmethod
    def from_matrices(cls, matrices: Sequence[np.ndarray], fill: float = 0.0) -> "GroupCostTensor":
        """Pad a list of per-group cost matrices; ``fill`` goes into invalid cells."""
        mats = [np.asarray(m, dtype=float) for m in matrices]
        for m in mats:
            if m.ndim != 2:
                raise ValueError(f"cost matrices must be 2-D, got shape {m.shape}")
        sizes = tuple((m.shape[0], m.shape[1]) for m in mats)
        n_max = max((s[0] for s in sizes), default=0)
        m_max = max((s[1] for s in sizes), default=0)
        costs = np.full((len(mats), n_max, m_max), fill, dtype=float)
        valid = np.zeros((len(mats), n_max, m_max), dtype=bool)
        for i, m in enumerate(mats):
            n, k = m.shape
            costs[i, :n, :k] = m
            valid[i, :n, :k] = True
        return cls(costs, valid, sizes)


@dataclass
class Assignment:
    pairs: list[tuple[int, int]] = field(default_factory=list)
    total_cost: float = 0.0
    pair_costs: list[float] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"pairs": [list(p) for p in self.pairs], "pair_costs": self.pair_costs,
                "total_cost": self.total_cost}


Region = Union[Box, BinaryMask, np.ndarray]


def _unit_of(x) -> str:
    if isinstance(x, Box):
        return "box"
    if isinstance(x, (BinaryMask, np.ndarray)):
        return "mask"
    raise TypeError(f"cannot infer unit of {type(x).__name__}")


def build_cost_tensor(groups: Sequence[tuple[Sequence[Region], Sequence[Region]]],
                      w: CostWeights = CostWeights()) -> GroupCostTensor:
    matrices = []
    for i, (preds, targets) in enumerate(groups):
        units = {_unit_of(x) for x in list(preds) + list(targets)}
        if len(units) > 1:
            raise MixedUnits(f"group {i} mixes units {sorted(units)}")
        cost_fn = box_pair_cost if units == {"box"} else mask_pair_cost
        mat = np.zeros((len(preds), len(targets)))
        for n, p in enumerate(preds):
            for m, t in enumerate(targets):
                mat[n, m] = cost_fn(p, t, w)
        matrices.append(mat)
    return GroupCostTensor.from_matrices(matrices)


def assignment_total(cost: np.ndarray, pairs: Sequence[tuple[int, int]]) -> float:
    """Sum pair costs sequentially in pair order; the one canonical total."""
    total = 0.0
    for n, m in pairs:
        total += float(cost[n, m])
    return total


def _prepare(cost, valid) -> tuple[np.ndarray, np.ndarray]:
    c = np.asarray(cost, dtype=float)
    if c.ndim != 2:
        raise ValueError(f"cost must be a matrix, got shape {c.shape}")
    ok = np.ones(c.shape, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    if ok.shape != c.shape:
        raise DimensionMismatch(f"valid mask {ok.shape} does not match cost {c.shape}")
    # non-finite costs are forbidden too; invalid cells are never read
    ok = ok & np.isfinite(np.where(ok, c, 0.0))
    return c, ok


def _solve_square(w: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shortest augmenting path Hungarian method on a square matrix.

    ``w`` may contain ``inf`` for forbidden cells.  Returns ``(row_to_col,
    u, v)`` with dual potentials satisfying ``w - u[:, None] - v >= 0``.
    """
    n = w.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    owner = np.zeros(n + 1, dtype=int)  # owner[j] = 1-based row matched to column j
    way = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            cur = w[i0 - 1] - u[i0] - v[1:]
            free = ~used[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            if not np.isfinite(delta):
                raise InfeasibleAssignment("no complete matching over valid entries")
            u[owner[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    row_to_col = np.empty(n, dtype=int)
    for j in range(1, n + 1):
        row_to_col[owner[j] - 1] = j - 1
    return row_to_col, u[1:], v[1:]


def _lex_min_tight(tight: np.ndarray, match: np.ndarray, rows: int, col_order) -> np.ndarray:
    """Rewrite a perfect matching inside the tight-edge graph so that rows
    ``0..rows-1`` each take the earliest feasible column of ``col_order``."""
    size = tight.shape[0]
    match = match.copy()
    owner = np.empty(size, dtype=int)
    owner[match] = np.arange(size)
    fixed_cols = np.zeros(size, dtype=bool)

    def augment(row: int, goal: int, seen: np.ndarray) -> list[tuple[int, int]] | None:
        # alternating path: row -> tight column -> its owner ... until goal column
        for col in np.flatnonzero(tight[row]):
            if fixed_cols[col] or seen[col]:
                continue
            seen[col] = True
            if col == goal:
                return [(row, col)]
            rest = augment(owner[col], goal, seen)
            if rest is not None:
                return [(row, col)] + rest
        return None

    for r in range(rows):
        for c in col_order:
            if fixed_cols[c] or not tight[r, c]:
                continue
            if match[r] == c:
                break
            old = match[r]
            displaced = owner[c]
            fixed_cols[c] = True
            seen = np.zeros(size, dtype=bool)
            path = augment(displaced, old, seen)
            if path is None:
                fixed_cols[c] = False
                continue
            match[r] = c
            owner[c] = r
            for pr, pc in path:
                match[pr] = pc
                owner[pc] = pr
            break
        fixed_cols[match[r]] = True
    return match


def hungarian_assign(cost, valid=None) -> Assignment:
    """Minimum-cost one-to-one assignment restricted to valid cells.

    Rectangular matrices are supported; exactly ``min(N, M)`` pairs are
    returned.  Raises ``InfeasibleAssignment`` if the valid cells admit no
    such matching.
    """
    c, ok = _prepare(cost, valid)
    n, m = c.shape
    if n == 0 or m == 0:
        return Assignment()
    size = max(n, m)
    # square completion: surplus rows/columns are zero-cost dummies
    w = np.zeros((size, size))
    w[:n, :m] = np.where(ok, c, np.inf)
    match, u, v = _solve_square(w)

    finite = np.abs(w[np.isfinite(w)])
    tol = 1e-9 * max(1.0, float(finite.max()) if finite.size else 1.0) * size
    with np.errstate(invalid="ignore"):
        reduced = w - u[:, None] - v[None, :]
    tight = np.isfinite(w) & (reduced <= tol)
    tight[np.arange(size), match] = True

    # real columns come first, so a real row prefers any real target over a dummy
    match = _lex_min_tight(tight, match, n, range(size))

    pairs = [(r, int(match[r])) for r in range(n) if match[r] < m]
    pair_costs = [float(c[p, q]) for p, q in pairs]
    return Assignment(pairs, assignment_total(c, pairs), pair_costs)


def brute_force_match(cost, valid=None) -> Assignment:
    """Exhaustive search over injective maps; a test oracle for small groups."""
    c, ok = _prepare(cost, valid)
    n, m = c.shape
    if min(n, m) > BRUTE_FORCE_LIMIT:
        raise TooLarge(f"min(N, M) = {min(n, m)} exceeds {BRUTE_FORCE_LIMIT}")
    if n == 0 or m == 0:
        return Assignment()
    best_key = None
    best_pairs = None
    if n <= m:
        candidates = (list(enumerate(perm)) for perm in itertools.permutations(range(m), n))
    else:
        candidates = (sorted(zip(perm, range(m))) for perm in itertools.permutations(range(n), m))
    for pairs in candidates:
        if not all(ok[p, q] for p, q in pairs):
            continue
        key = (assignment_total(c, pairs), pairs)
        if best_key is None or key < best_key:
            best_key = key
            best_pairs = pairs
    if best_pairs is None:
        raise InfeasibleAssignment("no complete matching over valid entries")
    best_pairs = [(int(p), int(q)) for p, q in best_pairs]
    return Assignment(best_pairs, best_key[0], [float(c[p, q]) for p, q in best_pairs])


def _solve_group(tensor: GroupCostTensor, i: int) -> Assignment:
    n, m = tensor.group_sizes[i]
    try:
        return hungarian_assign(tensor.costs[i, :n, :m], tensor.valid[i, :n, :m])
    except InfeasibleAssignment as exc:
        raise InfeasibleAssignment(str(exc), group=i) from None


def group_match_parallel(tensor: GroupCostTensor, workers: int | None = None) -> list[Assignment]:
    """Solve every group of a padded tensor independently.

    ``workers > 1`` distributes groups over a thread pool; results are
    returned in group order and do not depend on the schedule.
    """
    indices = range(tensor.batch_size)
    if workers is None or workers <= 1:
        return [_solve_group(tensor, i) for i in indices]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda i: _solve_group(tensor, i), indices))
