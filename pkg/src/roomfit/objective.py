"""The search objective: fitness scorer plus angle / overlap / anchor losses.

    L(P) = -lambda_f * f(D, F(P))
           + lambda_ang * L_ang(P)
           + lambda_glob * TV(F1_soft(P))
           + lambda_0 * mean_i MSE(R_soft(P_i), M_i)

The search maximizes -L. During refinement the fitness term switches to the
scorer's soft-rendered differentiable variant; the two regularization image
terms are always computed from soft renders. Every term carries an analytic
gradient with respect to all vertex coordinates; the contract is agreement
with central finite differences of the (soft-fitness) objective value.
"""
from __future__ import annotations

import abc
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import raster
from .errors import ContractViolationError, EmptySceneError, InputError
from .geometry import Polygon, SegmentMask
from .proposals import ProposalSet
from .raster import SoftRenderParams, Window
from .scene import DensityMap, GroundTruthPlan


@dataclass(frozen=True)
class Weights:
    """Loss-term weights. Defaults are calibrated on the synthetic corpus so
    each regularizer moves the objective by roughly 1-10% of the fitness
    term; all four are exposed through the CLI and config file."""

    lambda_f: float = 1.0
    lambda_ang: float = 0.05
    lambda_glob: float = 1e-4
    lambda_0: float = 0.5

    def __post_init__(self):
        for name in ("lambda_f", "lambda_ang", "lambda_glob", "lambda_0"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise InputError(f"{name}={v} must be finite and >= 0")


_PI_6 = np.pi / 6.0
_5PI_6 = 5.0 * np.pi / 6.0


def _gauss(x: np.ndarray, mu: float, sigma: float) -> np.ndarray:
    return np.exp(-((x - mu) ** 2) / (2.0 * sigma**2)) / (sigma * np.sqrt(2.0 * np.pi))


@dataclass(frozen=True)
class AnglePriorParams:
    """Parameters of the corner-angle prior.

    The prior over alpha in (-pi, pi] mixes Gaussians in cosine space: near
    0 and pi it falls off (flat corners discouraged), on (pi/6, 5pi/6] and its
    mirror it is a plateau eta plus a Gaussian peaked at +-pi/2 (right angles
    encouraged). eta makes the branches meet; z normalizes the density.
    """

    sigma1: float = 0.1
    sigma2: float = 0.08
    eta: float = field(init=False)
    z: float = field(init=False)

    def __post_init__(self):
        if self.sigma1 <= 0 or self.sigma2 <= 0:
            raise InputError("sigma1 and sigma2 must be positive")
        eta = float(_gauss(np.cos(_PI_6), np.cos(_PI_6), self.sigma1))
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "z", 1.0)
        grid = np.linspace(-np.pi, np.pi, 100_001)
        object.__setattr__(self, "z", float(np.trapezoid(self._branches(grid), grid)))

    def _branches(self, alpha: np.ndarray) -> np.ndarray:
        """Unnormalized four-branch mixture."""
        a = np.asarray(alpha, dtype=np.float64)
        c = np.cos(a)
        out = np.empty_like(a)
        b1 = (a > -_PI_6) & (a <= _PI_6)
        b2 = (a > _PI_6) & (a <= _5PI_6)
        b3 = (a > _5PI_6) | (a <= -_5PI_6)
        b4 = (a > -_5PI_6) & (a <= -_PI_6)
        out[b1] = _gauss(c[b1], np.cos(_PI_6), self.sigma1)
        out[b2] = self.eta + _gauss(c[b2], 0.0, self.sigma2)
        out[b3] = _gauss(c[b3], np.cos(_5PI_6), self.sigma1)
        out[b4] = self.eta + _gauss(c[b4], 0.0, self.sigma2)
        return out

    def _dlogpdf(self, alpha: np.ndarray) -> np.ndarray:
        """d/dalpha log p(alpha), branch-wise analytic."""
        a = np.asarray(alpha, dtype=np.float64)
        c = np.cos(a)
        s = np.sin(a)
        mu = np.empty_like(a)
        sig = np.empty_like(a)
        plateau = np.zeros_like(a)
        b1 = (a > -_PI_6) & (a <= _PI_6)
        b2 = (a > _PI_6) & (a <= _5PI_6)
        b3 = (a > _5PI_6) | (a <= -_5PI_6)
        b4 = (a > -_5PI_6) & (a <= -_PI_6)
        mu[b1], sig[b1] = np.cos(_PI_6), self.sigma1
        mu[b2], sig[b2], plateau[b2] = 0.0, self.sigma2, self.eta
        mu[b3], sig[b3] = np.cos(_5PI_6), self.sigma1
        mu[b4], sig[b4], plateau[b4] = 0.0, self.sigma2, self.eta
        g = _gauss(c, mu, sig)
        return g * (c - mu) * s / sig**2 / (plateau + g)


_DEFAULT_PRIOR: AnglePriorParams | None = None


def default_angle_prior() -> AnglePriorParams:
    global _DEFAULT_PRIOR
    if _DEFAULT_PRIOR is None:
        _DEFAULT_PRIOR = AnglePriorParams()
    return _DEFAULT_PRIOR


def angle_prior_pdf(alpha, params: AnglePriorParams | None = None):
    """Normalized prior density over angles in (-pi, pi].

    Interior angles theta in (pi, 2*pi) must be mapped to theta - 2*pi before
    calling; reflex corners then land on the branch encouraging 270 degrees.
    """
    params = params or default_angle_prior()
    a = np.asarray(alpha, dtype=np.float64)
    out = params._branches(a) / params.z
    return float(out) if np.isscalar(alpha) else out


@dataclass(frozen=True)
class Solution:
    """One selected polygon (or skip) per segment.

    `choices[k]` is the proposal index chosen for segment k, or None for the
    skip move. `polygons`, `masks`, and `segment_indices` run parallel over
    the non-skipped segments in segment order. `reverted` records segments
    whose refinement was rolled back by the validity check.
    """

    choices: tuple[int | None, ...]
    polygons: tuple[Polygon, ...] = ()
    masks: tuple[SegmentMask | None, ...] = ()
    segment_indices: tuple[int, ...] = ()
    reverted: tuple[int, ...] = ()

    def __post_init__(self):
        picked = sum(1 for c in self.choices if c is not None)
        if not (len(self.polygons) == len(self.masks) == len(self.segment_indices) == picked):
            raise ContractViolationError(
                "polygons/masks/segment_indices must align with non-skip choices"
            )

    @staticmethod
    def from_choices(pset: ProposalSet, choices: tuple[int | None, ...]) -> "Solution":
        if len(choices) != pset.segment_count:
            raise ContractViolationError(
                f"expected {pset.segment_count} choices, got {len(choices)}"
            )
        polys, masks, idx = [], [], []
        for k, choice in enumerate(choices):
            if choice is None:
                continue
            if not (0 <= choice < len(pset.proposals[k])):
                raise ContractViolationError(f"choice {choice} invalid for segment {k}")
            polys.append(pset.proposals[k][choice])
            masks.append(pset.segments[k].mask)
            idx.append(k)
        return Solution(tuple(choices), tuple(polys), tuple(masks), tuple(idx))

    def with_polygons(self, polygons: tuple[Polygon, ...], reverted: tuple[int, ...] = ()) -> "Solution":
        return Solution(self.choices, polygons, self.masks, self.segment_indices, reverted)

    def render_windows(self, grid_shape: tuple[int, int]) -> list[Window]:
        """Soft-render window per chosen polygon: mask bbox dilated by 8 px."""
        windows = []
        for poly, mask in zip(self.polygons, self.masks):
            if mask is not None:
                windows.append(mask.dilated_bbox(raster.BBOX_DILATE_PX))
            else:
                windows.append(poly.pixel_window(grid_shape, dilate=raster.BBOX_DILATE_PX))
        return windows


class FitnessScorer(abc.ABC):
    """Scores how well a solution explains the density map, in [0, 1].

    Implementations must be deterministic and hold only read-only state after
    construction so concurrent rollouts can share them. Differentiable
    scorers additionally provide `score_soft`, returning the soft-render
    fitness value and its gradient with respect to each polygon's soft image
    (one window-shaped array per polygon).
    """

    differentiable: bool = False

    @abc.abstractmethod
    def score(self, density: DensityMap, solution: Solution) -> float:
        ...

    def score_soft(
        self, density: DensityMap, solution: Solution, bundle: "SoftRenderBundle"
    ) -> tuple[float, list[np.ndarray]]:
        raise ContractViolationError(f"{type(self).__name__} is not differentiable")


@dataclass
class SoftRenderBundle:
    """Shared soft renders of a solution's polygons (one evaluation point)."""

    grids: list[np.ndarray]        # full-grid soft render per polygon
    grads: list[np.ndarray] | None # (n, 2, wh, ww) per polygon, or None
    windows: list[Window]
    grid_shape: tuple[int, int]


def build_soft_bundle(
    solution: Solution,
    grid_shape: tuple[int, int],
    c: float = 1000.0,
    with_grad: bool = True,
) -> SoftRenderBundle:
    grids, grads, windows = [], [], solution.render_windows(grid_shape)
    for poly, window in zip(solution.polygons, windows):
        params = SoftRenderParams(c=c, bbox=window)
        if with_grad:
            grid, grad, _ = raster.render_soft_with_grad(poly, params, grid_shape)
            grads.append(grad)
        else:
            grid = raster.render_soft(poly, params, grid_shape)
        grids.append(grid)
    return SoftRenderBundle(grids, grads if with_grad else None, windows, grid_shape)


def _window_slice(window: Window) -> tuple[slice, slice]:
    x0, y0, x1, y1 = window
    return slice(y0, y1), slice(x0, x1)


def _windows_intersect(a: Window, b: Window) -> Window | None:
    x0, y0 = max(a[0], b[0]), max(a[1], b[1])
    x1, y1 = min(a[2], b[2]), min(a[3], b[3])
    if x1 <= x0 or y1 <= y0:
        return None
    return (x0, y0, x1, y1)


class ReferenceIoUScorer(FitnessScorer):
    """IoU of the solution's union against a fixed binary reference region.

    Hard path: union of hard renders. Soft path: smooth union
    U = 1 - prod_i (1 - W_i) so the value and gradient stay consistent under
    overlapping polygons.
    """

    differentiable = True

    @abc.abstractmethod
    def _reference(self, density: DensityMap) -> np.ndarray:
        """Binary reference occupancy on the density grid."""

    def score(self, density: DensityMap, solution: Solution) -> float:
        ref = self._reference(density)
        union_sol = np.zeros(ref.shape, dtype=bool)
        for poly in solution.polygons:
            union_sol |= raster.render_hard(poly, ref.shape).astype(bool)
        denom = np.logical_or(union_sol, ref).sum()
        if denom == 0:
            return 1.0
        return float(np.logical_and(union_sol, ref).sum()) / float(denom)

    def score_soft(
        self, density: DensityMap, solution: Solution, bundle: SoftRenderBundle
    ) -> tuple[float, list[np.ndarray]]:
        ref = self._reference(density).astype(np.float64)
        if not solution.polygons:
            return (1.0 if ref.sum() == 0 else 0.0), []
        one_minus = np.ones(bundle.grid_shape)
        for grid, win in zip(bundle.grids, bundle.windows):
            sl = _window_slice(win)
            one_minus[sl] *= 1.0 - grid[sl]
        u = 1.0 - one_minus
        inter = float((u * ref).sum())
        union = float(u.sum() + ref.sum() - inter)
        if union <= 0:
            return 1.0, [np.zeros((w[3] - w[1], w[2] - w[0])) for w in bundle.windows]
        value = inter / union
        # d(IoU)/dU, then per-polygon chain through the smooth union.
        du = (ref * union - inter * (1.0 - ref)) / union**2
        pixel_grads = []
        for i, win in enumerate(bundle.windows):
            sl = _window_slice(win)
            prod_other = np.ones((win[3] - win[1], win[2] - win[0]))
            for j, other_win in enumerate(bundle.windows):
                if j == i:
                    continue
                overlap = _windows_intersect(win, other_win)
                if overlap is None:
                    continue
                osl = _window_slice(overlap)
                local = (
                    slice(overlap[1] - win[1], overlap[3] - win[1]),
                    slice(overlap[0] - win[0], overlap[2] - win[0]),
                )
                prod_other[local] *= 1.0 - bundle.grids[j][osl]
            pixel_grads.append(du[sl] * prod_other)
        return value, pixel_grads


class OracleIoUScorer(ReferenceIoUScorer):
    """IoU against the union of ground-truth rooms (the quantity a learned
    scorer would be trained to predict)."""

    def __init__(self, gt: GroundTruthPlan, grid_shape: tuple[int, int] = raster.GRID_SHAPE):
        self._gt = gt
        ref = np.zeros(grid_shape, dtype=bool)
        for room in gt.rooms:
            ref |= raster.render_hard(room, grid_shape).astype(bool)
        self._ref = ref

    def _reference(self, density: DensityMap) -> np.ndarray:
        if density.grid.shape != self._ref.shape:
            ref = np.zeros(density.grid.shape, dtype=bool)
            for room in self._gt.rooms:
                ref |= raster.render_hard(room, density.grid.shape).astype(bool)
            return ref
        return self._ref


def oracle_iou_scorer(gt: GroundTruthPlan, grid_shape: tuple[int, int] = raster.GRID_SHAPE) -> FitnessScorer:
    return OracleIoUScorer(gt, grid_shape)


class DensityCoverageScorer(ReferenceIoUScorer):
    """IoU against the filled occupancy region derived from the density map:
    threshold, close with a 3-px disc, fill holes. A stand-in fitness for
    scenes without ground truth."""

    _DISC = (lambda r: (np.add.outer(np.arange(-3, 4) ** 2, np.arange(-3, 4) ** 2) <= r * r))(3)

    def __init__(self, threshold: float = 0.05):
        if not (0.0 < threshold < 1.0):
            raise InputError(f"threshold {threshold} outside (0, 1)")
        self.threshold = threshold
        self._cache: tuple[int, np.ndarray, np.ndarray] | None = None

    def _reference(self, density: DensityMap) -> np.ndarray:
        if self._cache is not None and self._cache[0] == id(density.grid):
            return self._cache[2]
        occ = density.grid >= self.threshold
        occ = ndimage.binary_closing(occ, structure=self._DISC)
        occ = ndimage.binary_fill_holes(occ)
        if not occ.any():
            warnings.warn("density-coverage occupancy region is empty", stacklevel=2)
        self._cache = (id(density.grid), density.grid, occ)
        return occ

    def score(self, density: DensityMap, solution: Solution) -> float:
        if not self._reference(density).any():
            return 0.0
        return super().score(density, solution)


def density_coverage_scorer(threshold: float = 0.05) -> FitnessScorer:
    return DensityCoverageScorer(threshold)


# ---------------------------------------------------------------------------
# Loss terms
# ---------------------------------------------------------------------------

def _angle_terms(poly: Polygon, params: AnglePriorParams) -> tuple[float, np.ndarray]:
    """Mean -log p over the polygon's corners, plus d(mean)/d(vertices)."""
    v = poly.vertices
    n = len(v)
    e1 = v - np.roll(v, 1, axis=0)
    e2 = np.roll(v, -1, axis=0) - v
    s = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    c = e1[:, 0] * e2[:, 0] + e1[:, 1] * e2[:, 1]
    tau = np.arctan2(s, c)
    alpha = np.pi - tau
    alpha = np.where(alpha > np.pi, alpha - 2.0 * np.pi, alpha)
    value = float(np.mean(-np.log(params._branches(alpha) / params.z)))

    # d(-log p)/d(vertex) = -dlogp(alpha) * dalpha/dvertex, dalpha/dtau = -1.
    dlp = params._dlogpdf(alpha)
    denom = c * c + s * s
    dtau_de1 = np.stack([(c * e2[:, 1] - s * e2[:, 0]) / denom,
                         (-c * e2[:, 0] - s * e2[:, 1]) / denom], axis=1)
    dtau_de2 = np.stack([(-c * e1[:, 1] - s * e1[:, 0]) / denom,
                         (c * e1[:, 0] - s * e1[:, 1]) / denom], axis=1)
    grad = np.zeros((n, 2))
    coeff = dlp[:, None] / n  # dL/dtau = dlp; dtau/d(vertex) applied below
    prev_idx = np.arange(n) - 1
    next_idx = (np.arange(n) + 1) % n
    np.add.at(grad, prev_idx, coeff * (-dtau_de1))
    np.add.at(grad, np.arange(n), coeff * (dtau_de1 - dtau_de2))
    np.add.at(grad, next_idx, coeff * dtau_de2)
    return value, grad


def loss_ang(solution: Solution, params: AnglePriorParams | None = None) -> float:
    """Mean over polygons of mean corner -log p(angle)."""
    params = params or default_angle_prior()
    if not solution.polygons:
        return 0.0
    return float(np.mean([_angle_terms(p, params)[0] for p in solution.polygons]))


def _loss_ang_with_grad(
    solution: Solution, params: AnglePriorParams
) -> tuple[float, list[np.ndarray]]:
    if not solution.polygons:
        return 0.0, []
    values, grads = [], []
    k = len(solution.polygons)
    for poly in solution.polygons:
        val, grad = _angle_terms(poly, params)
        values.append(val)
        grads.append(grad / k)
    return float(np.mean(values)), grads


def loss_glob(solution: Solution, c: float = 1000.0) -> float:
    """Total variation of the soft composed-sum image of the chosen polygons."""
    if not solution.polygons:
        return 0.0
    grid_shape = _solution_grid_shape(solution)
    bundle = build_soft_bundle(solution, grid_shape, c=c, with_grad=False)
    composed = np.zeros(grid_shape)
    for g in bundle.grids:
        composed += g
    return raster.total_variation(composed)


def loss_zero(solution: Solution, c: float = 1000.0) -> float:
    """Mean over polygons of soft-render-vs-mask MSE over the render window."""
    if not solution.polygons:
        return 0.0
    grid_shape = _solution_grid_shape(solution)
    bundle = build_soft_bundle(solution, grid_shape, c=c, with_grad=False)
    value, _ = _loss_zero_from_bundle(solution, bundle, with_grad=False)
    return value


def _solution_grid_shape(solution: Solution) -> tuple[int, int]:
    for mask in solution.masks:
        if mask is not None:
            return mask.grid.shape
    return raster.GRID_SHAPE


def _loss_zero_from_bundle(
    solution: Solution, bundle: SoftRenderBundle, with_grad: bool
) -> tuple[float, list[np.ndarray] | None]:
    values = []
    grads: list[np.ndarray] = []
    k = len(solution.polygons)
    for i, (mask, win) in enumerate(zip(solution.masks, bundle.windows)):
        if mask is None:
            raise ContractViolationError(
                f"polygon {i} has no originating mask; the anchor loss needs one"
            )
        sl = _window_slice(win)
        diff = bundle.grids[i][sl] - mask.grid[sl].astype(np.float64)
        npix = diff.size
        values.append(float((diff * diff).sum()) / npix)
        if with_grad:
            grads.append(2.0 * diff / (npix * k))
    return float(np.mean(values)) if values else 0.0, (grads if with_grad else None)


def _tv_from_bundle(
    bundle: SoftRenderBundle, with_grad: bool
) -> tuple[float, np.ndarray | None]:
    composed = np.zeros(bundle.grid_shape)
    for g in bundle.grids:
        composed += g
    if with_grad:
        return raster.total_variation_grad(composed)
    return raster.total_variation(composed), None


def objective(
    solution: Solution,
    density: DensityMap,
    weights: Weights,
    scorer: FitnessScorer,
    *,
    soft_fitness: bool = False,
    angle_prior: AnglePriorParams | None = None,
) -> float:
    """Full loss value; the search maximizes its negation.

    `soft_fitness` evaluates the fitness through the scorer's differentiable
    soft-render path (the exact function objective_grad differentiates);
    otherwise the hard-render score is used.
    """
    angle_prior = angle_prior or default_angle_prior()
    value = 0.0
    need_bundle = solution.polygons and (
        weights.lambda_glob > 0 or weights.lambda_0 > 0 or (weights.lambda_f > 0 and soft_fitness)
    )
    bundle = (
        build_soft_bundle(solution, density.grid.shape, with_grad=False) if need_bundle else None
    )
    if weights.lambda_f > 0:
        if soft_fitness and solution.polygons:
            fit, _ = scorer.score_soft(density, solution, bundle)
        else:
            fit = scorer.score(density, solution)
        value -= weights.lambda_f * fit
    if weights.lambda_ang > 0:
        value += weights.lambda_ang * loss_ang(solution, angle_prior)
    if bundle is not None and weights.lambda_glob > 0:
        tv, _ = _tv_from_bundle(bundle, with_grad=False)
        value += weights.lambda_glob * tv
    if bundle is not None and weights.lambda_0 > 0:
        l0, _ = _loss_zero_from_bundle(solution, bundle, with_grad=False)
        value += weights.lambda_0 * l0
    return value


def objective_with_grad(
    solution: Solution,
    density: DensityMap,
    weights: Weights,
    scorer: FitnessScorer,
    *,
    freeze_fitness: bool = False,
    angle_prior: AnglePriorParams | None = None,
) -> tuple[float, list[np.ndarray]]:
    """Soft-fitness objective value and its gradient per polygon, (n, 2) each."""
    angle_prior = angle_prior or default_angle_prior()
    if not solution.polygons:
        return objective(solution, density, weights, scorer, soft_fitness=True), []

    fitness_active = weights.lambda_f > 0 and not freeze_fitness
    if fitness_active and not scorer.differentiable:
        raise ContractViolationError(
            "scorer is not differentiable; pass freeze_fitness=True to hold it fixed"
        )

    bundle = build_soft_bundle(solution, density.grid.shape, with_grad=True)
    value = 0.0
    # pixel_weight[i] accumulates dL/dW_i over polygon i's window.
    pixel_weight = [np.zeros(grad.shape[2:]) for grad in bundle.grads]

    if weights.lambda_f > 0:
        fit, fit_grads = scorer.score_soft(density, solution, bundle)
        value -= weights.lambda_f * fit
        if fitness_active:
            for i, fg in enumerate(fit_grads):
                pixel_weight[i] -= weights.lambda_f * fg

    ang_grads: list[np.ndarray] | None = None
    if weights.lambda_ang > 0:
        ang_val, ang_grads = _loss_ang_with_grad(solution, angle_prior)
        value += weights.lambda_ang * ang_val

    if weights.lambda_glob > 0:
        tv, tv_grad = _tv_from_bundle(bundle, with_grad=True)
        value += weights.lambda_glob * tv
        for i, win in enumerate(bundle.windows):
            pixel_weight[i] += weights.lambda_glob * tv_grad[_window_slice(win)]

    if weights.lambda_0 > 0:
        l0, l0_grads = _loss_zero_from_bundle(solution, bundle, with_grad=True)
        value += weights.lambda_0 * l0
        for i, lg in enumerate(l0_grads):
            pixel_weight[i] += weights.lambda_0 * lg

    grads = []
    for i, poly in enumerate(solution.polygons):
        vert_grad = np.einsum("nchw,hw->nc", bundle.grads[i], pixel_weight[i])
        if ang_grads is not None:
            vert_grad = vert_grad + weights.lambda_ang * ang_grads[i]
        grads.append(vert_grad)
    return value, grads


def objective_grad(
    solution: Solution,
    density: DensityMap,
    weights: Weights,
    scorer: FitnessScorer,
    *,
    freeze_fitness: bool = False,
    angle_prior: AnglePriorParams | None = None,
) -> list[np.ndarray]:
    """Gradient of the (soft-fitness) objective w.r.t. every vertex coordinate."""
    return objective_with_grad(
        solution, density, weights, scorer,
        freeze_fitness=freeze_fitness, angle_prior=angle_prior,
    )[1]
