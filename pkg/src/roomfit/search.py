"""Tree search over proposal selections with gradient refinement at the leaves.

One tree level per segment; a move picks one of the segment's proposals or
skips the segment (skip is always the last option). Every iteration descends
by UCB through fully expanded nodes, expands one untried move uniformly at
random, completes the path with uniform random moves (materializing the
sampled nodes), refines the resulting solution with Adam, and backs the score
-L up the path. Raw scores are unbounded, so UCB normalizes node means by the
running min/max over all leaf scores seen.

After the iteration budget, a greedy traversal by best backed-up score picks
the final selection, which is re-refined with a larger step budget; vertices
closer than the merge threshold are then fused.
"""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BudgetExceededError,
    ContractViolationError,
    EmptySceneError,
    InputError,
    InternalInvariantError,
)
from .geometry import (
    Polygon,
    _shoelace,
    merge_close_vertices,
    polygon_is_simple,
    MIN_VERTEX_SEPARATION,
)
from .objective import (
    AnglePriorParams,
    FitnessScorer,
    Solution,
    Weights,
    default_angle_prior,
    objective,
    objective_with_grad,
)
from .proposals import ProposalSet
from .scene import DensityMap


@dataclass(frozen=True)
class Move:
    """Selection of one proposal (or the skip move) for one segment."""

    segment_index: int
    option: int | None  # proposal index, or None for skip


@dataclass(frozen=True)
class SearchConfig:
    iterations: int = 500
    ucb_c: float = 1.0
    refine_steps: int = 30
    refine_lr: float = 0.3
    final_refine_steps: int = 200
    merge_threshold: float = 5.0
    seed: int = 0
    soft_c: float = 1000.0

    def __post_init__(self):
        if self.iterations < 1:
            raise InputError("iterations must be >= 1")
        if self.refine_steps < 0 or self.final_refine_steps < 0:
            raise InputError("refinement step counts must be >= 0")
        if self.refine_lr <= 0:
            raise InputError("refine_lr must be > 0")


class TreeNode:
    """Search tree node; `move` led from the parent to this node."""

    __slots__ = ("move", "parent", "depth", "children", "untried", "visit_count", "score_sum", "best_score")

    def __init__(self, move: Move | None, parent: "TreeNode | None", depth: int, untried: list):
        self.move = move
        self.parent = parent
        self.depth = depth
        self.children: list[TreeNode] = []
        self.untried = untried
        self.visit_count = 0
        self.score_sum = 0.0
        self.best_score = -math.inf


class _ScoreBounds:
    """Running min/max of raw leaf scores, for UCB normalization."""

    def __init__(self):
        self.lo = math.inf
        self.hi = -math.inf

    def update(self, score: float) -> None:
        self.lo = min(self.lo, score)
        self.hi = max(self.hi, score)

    def normalize(self, score: float) -> float:
        if not math.isfinite(self.lo) or self.hi <= self.lo:
            return 0.5
        return (score - self.lo) / (self.hi - self.lo)


def ucb_select(
    node: TreeNode,
    c: float,
    rng: np.random.Generator,
    bounds: _ScoreBounds | None = None,
) -> TreeNode:
    """Upper-confidence-bound child selection; rng breaks exact ties.

    Children never visited are chosen first (uniformly at random); otherwise
    the argmax of normalized mean score + c * sqrt(ln(parent)/child visits).
    """
    if not node.children:
        raise ContractViolationError("ucb_select called on a childless node")
    unvisited = [ch for ch in node.children if ch.visit_count == 0]
    if unvisited:
        return unvisited[int(rng.integers(0, len(unvisited)))]
    log_parent = math.log(max(node.visit_count, 1))
    scores = []
    for ch in node.children:
        mean = ch.score_sum / ch.visit_count
        q = bounds.normalize(mean) if bounds is not None else mean
        scores.append(q + c * math.sqrt(log_parent / ch.visit_count))
    best = max(scores)
    tied = [i for i, s in enumerate(scores) if s >= best - 1e-12]
    pick = tied[int(rng.integers(0, len(tied)))] if len(tied) > 1 else tied[0]
    return node.children[pick]


def _path_choices(node: TreeNode, segment_count: int) -> tuple[int | None, ...]:
    choices: list[int | None] = [None] * segment_count
    cur = node
    while cur.move is not None:
        choices[cur.move.segment_index] = cur.move.option
        cur = cur.parent
    return tuple(choices)


def simulate(node: TreeNode, pset: ProposalSet, rng: np.random.Generator) -> Solution:
    """Random completion of the node's partial selection down to a leaf."""
    prefix = list(_path_choices(node, pset.segment_count)[: node.depth])
    for k in range(node.depth, pset.segment_count):
        options = pset.options(k)
        prefix.append(options[int(rng.integers(0, len(options)))])
    return Solution.from_choices(pset, tuple(prefix))


# ---------------------------------------------------------------------------
# Refinement
# ---------------------------------------------------------------------------

_ADAM_B1, _ADAM_B2, _ADAM_EPS = 0.9, 0.999, 1e-8


def _unsafe_polygon(vertices: np.ndarray) -> Polygon:
    """Polygon wrapper without validation/orientation normalization; used only
    for intermediate refinement iterates so vertex order stays fixed."""
    p = object.__new__(Polygon)
    v = np.asarray(vertices, dtype=np.float64)
    object.__setattr__(p, "vertices", v)
    return p


def _valid_refined(vertices: np.ndarray) -> bool:
    if not np.all(np.isfinite(vertices)):
        return False
    if _shoelace(vertices) <= 0:
        return False
    gaps = np.linalg.norm(np.roll(vertices, -1, axis=0) - vertices, axis=1)
    if np.any(gaps < MIN_VERTEX_SEPARATION):
        return False
    return polygon_is_simple(vertices)


def refine_solution(
    solution: Solution,
    density: DensityMap,
    weights: Weights,
    scorer: FitnessScorer,
    steps: int,
    lr: float,
    *,
    angle_prior: AnglePriorParams | None = None,
) -> Solution:
    """Adam over all vertex coordinates against the objective gradient.

    Returns the best iterate encountered (by the soft-fitness objective, the
    function actually being descended). Each refined polygon is re-validated;
    a polygon that self-intersects, flips orientation, or degenerates reverts
    to its pre-refinement shape and its segment index is recorded in
    `reverted`.
    """
    if steps == 0 or not solution.polygons:
        return solution
    angle_prior = angle_prior or default_angle_prior()
    freeze = not scorer.differentiable and weights.lambda_f > 0

    coords = [p.vertices.copy() for p in solution.polygons]
    m = [np.zeros_like(cv) for cv in coords]
    v = [np.zeros_like(cv) for cv in coords]

    def evaluate(cs):
        sol = solution.with_polygons(tuple(_unsafe_polygon(cv) for cv in cs))
        return objective_with_grad(
            sol, density, weights, scorer, freeze_fitness=freeze, angle_prior=angle_prior
        )

    value, grads = evaluate(coords)
    best_value = value
    best_coords = [cv.copy() for cv in coords]
    for t in range(1, steps + 1):
        bc1 = 1.0 - _ADAM_B1**t
        bc2 = 1.0 - _ADAM_B2**t
        for i, g in enumerate(grads):
            m[i] = _ADAM_B1 * m[i] + (1.0 - _ADAM_B1) * g
            v[i] = _ADAM_B2 * v[i] + (1.0 - _ADAM_B2) * g * g
            coords[i] = coords[i] - lr * (m[i] / bc1) / (np.sqrt(v[i] / bc2) + _ADAM_EPS)
        value, grads = evaluate(coords)
        if value < best_value:
            best_value = value
            best_coords = [cv.copy() for cv in coords]

    final_polys: list[Polygon] = []
    reverted: list[int] = []
    for i, cv in enumerate(best_coords):
        if _valid_refined(cv):
            final_polys.append(Polygon(cv))
        else:
            final_polys.append(solution.polygons[i])
            reverted.append(solution.segment_indices[i])
    return solution.with_polygons(tuple(final_polys), reverted=tuple(reverted))


def evaluate_leaf(
    solution: Solution,
    density: DensityMap,
    weights: Weights,
    scorer: FitnessScorer,
    config: SearchConfig,
    angle_prior: AnglePriorParams | None = None,
) -> float:
    """Refine the full-path solution, then score it as -objective."""
    refined = refine_solution(
        solution, density, weights, scorer, config.refine_steps, config.refine_lr,
        angle_prior=angle_prior,
    )
    return -objective(refined, density, weights, scorer, angle_prior=angle_prior)


# ---------------------------------------------------------------------------
# Search drivers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SearchResult:
    solution: Solution
    score: float
    iterations_run: int
    refinement_trace: tuple[float, ...]  # objective value per distinct evaluated leaf
    wall_time: float
    best_score_trace: tuple[float, ...] = ()
    distinct_leaves: int = 0


def check_tree_consistency(root: TreeNode, segment_count: int) -> None:
    """Visits must sum over children (internal) or count own evaluations
    (terminal); score sums likewise."""
    stack = [root]
    while stack:
        node = stack.pop()
        if node.depth < segment_count:
            if node.children:
                child_visits = sum(ch.visit_count for ch in node.children)
                child_scores = sum(ch.score_sum for ch in node.children)
                if node.visit_count != child_visits:
                    raise InternalInvariantError(
                        f"node at depth {node.depth}: visits {node.visit_count} != "
                        f"children sum {child_visits}"
                    )
                if not math.isclose(node.score_sum, child_scores, rel_tol=1e-9, abs_tol=1e-9):
                    raise InternalInvariantError("node score_sum diverges from children")
            elif node.visit_count != 0:
                raise InternalInvariantError("visited internal node has no children")
        stack.extend(node.children)


def _finalize(
    choices: tuple[int | None, ...],
    pset: ProposalSet,
    density: DensityMap,
    weights: Weights,
    scorer: FitnessScorer,
    config: SearchConfig,
    angle_prior: AnglePriorParams | None,
) -> tuple[Solution, float]:
    solution = Solution.from_choices(pset, choices)
    refined = refine_solution(
        solution, density, weights, scorer, config.final_refine_steps, config.refine_lr,
        angle_prior=angle_prior,
    )
    merged: list[Polygon] = []
    for poly in refined.polygons:
        try:
            merged.append(merge_close_vertices(poly, config.merge_threshold))
        except Exception:
            merged.append(poly)  # merging would degenerate this polygon; keep it
    final = refined.with_polygons(tuple(merged), reverted=refined.reverted)
    score = -objective(final, density, weights, scorer, angle_prior=angle_prior)
    return final, score


def run_search(
    pset: ProposalSet,
    density: DensityMap,
    weights: Weights,
    scorer: FitnessScorer,
    config: SearchConfig = SearchConfig(),
    angle_prior: AnglePriorParams | None = None,
) -> SearchResult:
    """Full search: UCB iterations, greedy extraction, final refine + merge."""
    t0 = time.perf_counter()
    if pset.segment_count == 0:
        raise EmptySceneError("proposal set has no segments")
    angle_prior = angle_prior or default_angle_prior()
    rng = np.random.default_rng(config.seed)
    segment_count = pset.segment_count
    max_leaves = pset.leaf_count

    root = TreeNode(None, None, 0, untried=pset.options(0) if segment_count else [])
    bounds = _ScoreBounds()
    memo: dict[tuple, float] = {}
    trace: list[float] = []
    best_trace: list[float] = []

    for _ in range(config.iterations):
        node = root
        while node.depth < segment_count:
            if node.untried:
                pick = int(rng.integers(0, len(node.untried)))
                option = node.untried.pop(pick)
                depth = node.depth + 1
                child = TreeNode(
                    Move(node.depth, option),
                    node,
                    depth,
                    untried=pset.options(depth) if depth < segment_count else [],
                )
                node.children.append(child)
                node = child
            else:
                node = ucb_select(node, config.ucb_c, rng, bounds)

        choices = _path_choices(node, segment_count)
        if choices in memo:
            score = memo[choices]
        else:
            leaf_solution = Solution.from_choices(pset, choices)
            score = evaluate_leaf(leaf_solution, density, weights, scorer, config, angle_prior)
            memo[choices] = score
            trace.append(-score)
            if len(memo) > max_leaves:
                raise InternalInvariantError(
                    f"evaluated {len(memo)} distinct leaves, tree admits only {max_leaves}"
                )
        bounds.update(score)
        cur: TreeNode | None = node
        while cur is not None:
            cur.visit_count += 1
            cur.score_sum += score
            cur.best_score = max(cur.best_score, score)
            cur = cur.parent
        best_trace.append(root.best_score)

    check_tree_consistency(root, segment_count)

    # Greedy extraction: argmax of backed-up best score; every maximum lies on
    # a fully materialized path, so this always reaches a leaf.
    node = root
    while node.depth < segment_count:
        if not node.children:
            raise InternalInvariantError("greedy traversal hit an unexpanded frontier")
        # Ties: lowest proposal index wins, skip last.
        node = max(
            node.children,
            key=lambda ch: (
                ch.best_score,
                -ch.move.option if ch.move.option is not None else -math.inf,
            ),
        )
    final, score = _finalize(
        _path_choices(node, segment_count), pset, density, weights, scorer, config, angle_prior
    )
    return SearchResult(
        solution=final,
        score=score,
        iterations_run=config.iterations,
        refinement_trace=tuple(trace),
        wall_time=time.perf_counter() - t0,
        best_score_trace=tuple(best_trace),
        distinct_leaves=len(memo),
    )


EXHAUSTIVE_BUDGET = 100_000


def exhaustive_search(
    pset: ProposalSet,
    density: DensityMap,
    weights: Weights,
    scorer: FitnessScorer,
    config: SearchConfig = SearchConfig(),
    angle_prior: AnglePriorParams | None = None,
) -> SearchResult:
    """Score every leaf (test oracle); refuses when the space is too large."""
    t0 = time.perf_counter()
    if pset.segment_count == 0:
        raise EmptySceneError("proposal set has no segments")
    angle_prior = angle_prior or default_angle_prior()
    total = pset.leaf_count
    if total > EXHAUSTIVE_BUDGET:
        raise BudgetExceededError(f"{total} leaves exceed the exhaustive budget {EXHAUSTIVE_BUDGET}")
    trace: list[float] = []
    best_choices: tuple | None = None
    best_score = -math.inf
    all_options = [pset.options(k) for k in range(pset.segment_count)]
    for choices in itertools.product(*all_options):
        sol = Solution.from_choices(pset, choices)
        score = evaluate_leaf(sol, density, weights, scorer, config, angle_prior)
        trace.append(-score)
        if score > best_score:
            best_score = score
            best_choices = choices
    final, score = _finalize(best_choices, pset, density, weights, scorer, config, angle_prior)
    return SearchResult(
        solution=final,
        score=score,
        iterations_run=total,
        refinement_trace=tuple(trace),
        wall_time=time.perf_counter() - t0,
        distinct_leaves=total,
    )
