"""Deterministic bootstrap percolation: synchronous dynamics, closures/spans,
internal spanning, and the propagation-time checks.

Occupation arrays are uint8 with 1 = occupied, 0 = empty. Out-of-window
neighbors follow a boundary convention: "occupied" (default, the most
constrained), "empty", or "free" (out-of-window neighbors are dropped from
threshold counts and satisfy North-East requirements vacuously).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .environment import DIFFICULT, EnvParams, Environment, ModelKind, ParameterError
from .percolation import BoxGrid, ClusterLabeling, origin_cluster_geometry

BOUNDARY_CODES = {"occupied": K.B_OCCUPIED, "empty": K.B_EMPTY, "free": K.B_FREE}

Rect = tuple[int, int, int, int]  # (x0, y0, w, h)


class NotApplicableError(ValueError):
    pass


def model_code(env: Environment) -> int:
    return K.MODEL_FA if env.params.kind is ModelKind.MIXED_FA else K.MODEL_NE


def boundary_code(boundary: str) -> int:
    try:
        return BOUNDARY_CODES[boundary]
    except KeyError:
        raise ParameterError(f"unknown boundary convention {boundary!r}") from None


@dataclass
class BPResult:
    tau0: int | None        # origin emptying step; None when censored
    censored: bool
    emptied_at: np.ndarray  # first-empty step per site, -1 = not within the run
    steps_run: int
    fixed_point: bool


def constraint(env: Environment, config: np.ndarray, x: tuple[int, int],
               boundary: str = "occupied") -> int:
    """The kinetic constraint c_x: 1 iff a flip at x is currently allowed."""
    xi, yi = x
    if not (0 <= xi < env.width and 0 <= yi < env.height):
        raise IndexError(f"site {x} outside {env.width}x{env.height} window")
    return int(K.constraint_at(env.kinds, config, xi, yi,
                               model_code(env), boundary_code(boundary)))


def _padded(config: np.ndarray, fill: int) -> np.ndarray:
    return np.pad(config, 1, constant_values=fill)


def constraint_grid(env: Environment, config: np.ndarray,
                    boundary: str = "occupied") -> np.ndarray:
    """Vectorized c_x for every site (independent of the queue kernels)."""
    fa_fill = 0 if boundary == "empty" else 1       # free counts like occupied
    p = _padded(config, fa_fill) == 0
    counts = (p[:-2, 1:-1].astype(np.int8) + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:])
    sat = counts >= env.kinds
    if env.params.kind is ModelKind.MIXED_NE_FA1F:
        ne_fill = 1 if boundary == "occupied" else 0  # free/empty: vacuously empty
        pn = _padded(config, ne_fill) == 0
        ne_sat = pn[2:, 1:-1] & pn[1:-1, 2:]          # east and north empty
        sat = np.where(env.kinds == DIFFICULT, ne_sat, counts >= 1)
    return sat


def bp_step(env: Environment, config: np.ndarray, boundary: str = "occupied") -> np.ndarray:
    """One synchronous update: occupied sites with satisfied constraints empty;
    empty sites stay empty. Evaluations use the pre-step configuration."""
    sat = constraint_grid(env, config, boundary)
    out = config.copy()
    out[(config == 1) & sat] = 0
    return out


def bp_run(env: Environment, config: np.ndarray, t_max: int | None = None,
           boundary: str = "occupied", stop: str = "origin") -> BPResult:
    """Iterate bp_step until the origin empties (stop="origin"), or until a
    fixed point / t_max (stop="fixpoint"). Records per-site first-empty steps."""
    if stop not in ("origin", "fixpoint"):
        raise ParameterError(f"stop must be 'origin' or 'fixpoint', got {stop!r}")
    if t_max is None:
        t_max = config.size  # finality: a fixed point is reached in <= |window| steps
    if t_max < 0:
        raise ParameterError("t_max must be >= 0")
    ox, oy = env.origin
    emptied_at, steps, fixed_point = K.bp_run_kernel(
        env.kinds, np.ascontiguousarray(config, dtype=np.uint8),
        model_code(env), boundary_code(boundary),
        t_max, ox, oy, stop == "origin")
    t0 = int(emptied_at[ox, oy])
    return BPResult(tau0=t0 if t0 >= 0 else None, censored=t0 < 0,
                    emptied_at=emptied_at, steps_run=int(steps),
                    fixed_point=bool(fixed_point))


def _region_mask(env: Environment, region) -> np.ndarray:
    if isinstance(region, np.ndarray) and region.dtype == bool:
        if region.shape != env.shape:
            raise ParameterError("region mask shape must match the window")
        return region
    x0, y0, w, h = region
    if x0 < 0 or y0 < 0 or x0 + w > env.width or y0 + h > env.height:
        raise ParameterError(f"region {region} outside the window")
    mask = np.zeros(env.shape, dtype=bool)
    mask[x0:x0 + w, y0:y0 + h] = True
    return mask


def bp_closure(env: Environment, config: np.ndarray, region) -> np.ndarray:
    """Span of the region: sites emptiable by bootstrap percolation using only
    the region's empties, everything outside the region held occupied.
    Returns a boolean mask over the window."""
    mask = _region_mask(env, region)
    emptied = K.closure_kernel(env.kinds, np.ascontiguousarray(config, dtype=np.uint8),
                               mask, model_code(env))
    return emptied.astype(bool)


def internally_spanned(env: Environment, config: np.ndarray, rect: Rect) -> bool:
    """True iff the span of the rectangle is the whole rectangle."""
    mask = _region_mask(env, rect)
    return bool((bp_closure(env, config, rect) == mask).all() and mask.any())


def _components(mask: np.ndarray) -> list[list[tuple[int, int]]]:
    w, h = mask.shape
    seen = np.zeros_like(mask)
    comps = []
    for x in range(w):
        for y in range(h):
            if mask[x, y] and not seen[x, y]:
                comp = [(x, y)]
                seen[x, y] = True
                stack = [(x, y)]
                while stack:
                    cx, cy = stack.pop()
                    for nx, ny in ((cx - 1, cy), (cx + 1, cy), (cx, cy - 1), (cx, cy + 1)):
                        if 0 <= nx < w and 0 <= ny < h and mask[nx, ny] and not seen[nx, ny]:
                            seen[nx, ny] = True
                            comp.append((nx, ny))
                            stack.append((nx, ny))
                comps.append(comp)
    return comps


def span_decomposition_check(env: Environment, config: np.ndarray, rect: Rect) -> bool:
    """The span of an all-difficult rectangle must be a union of internally
    spanned rectangles: every connected component's bounding rectangle is
    internally spanned and the hulls exactly cover the span."""
    x0, y0, w, h = rect
    if (env.kinds[x0:x0 + w, y0:y0 + h] != DIFFICULT).any():
        raise NotApplicableError("rectangle contains easy sites; the decomposition "
                                 "fact applies to pure threshold-2 rectangles")
    span = bp_closure(env, config, rect)
    covered = np.zeros_like(span)
    for comp in _components(span):
        xs = [c[0] for c in comp]
        ys = [c[1] for c in comp]
        hull = (min(xs), min(ys), max(xs) - min(xs) + 1, max(ys) - min(ys) + 1)
        if not internally_spanned(env, config, hull):
            return False
        covered[hull[0]:hull[0] + hull[2], hull[1]:hull[1] + hull[3]] = True
    return bool((covered == span).all())


def origin_in_span(env: Environment, config: np.ndarray, rect: Rect) -> bool:
    return bool(bp_closure(env, config, rect)[env.origin])


def inner_boundary(rect: Rect) -> set[tuple[int, int]]:
    x0, y0, w, h = rect
    cells = set()
    for x in range(x0, x0 + w):
        cells.add((x, y0))
        cells.add((x, y0 + h - 1))
    for y in range(y0, y0 + h):
        cells.add((x0, y))
        cells.add((x0 + w - 1, y))
    return cells


def gx_event(env: Environment, config: np.ndarray, x: tuple[int, int], rect: Rect,
             boundary: str = "occupied") -> bool:
    """Span-pivotality of site x for the origin within the rectangle,
    intersected with {c_x = 1}: the origin is in the span for the current
    configuration but not after flipping x, and x is currently flippable."""
    if not origin_in_span(env, config, rect):
        return False
    flipped = config.copy()
    flipped[x] ^= 1
    if origin_in_span(env, flipped, rect):
        return False
    return constraint(env, config, x, boundary) == 1


def subwindow_environment(env: Environment, rect: Rect) -> Environment:
    """Environment restricted to a rectangle (origin at the sub-window center)."""
    x0, y0, w, h = rect
    params = EnvParams(pi=env.params.pi, width=w, height=h,
                       kind=env.params.kind, seed=env.params.seed)
    kinds = np.ascontiguousarray(env.kinds[x0:x0 + w, y0:y0 + h])
    return Environment(params=params, kinds=kinds, origin=(w // 2, h // 2))


def verify_excellent_fill(env: Environment, corner: tuple[int, int], L: int) -> tuple[bool, int]:
    """An excellent square whose (1,1) site starts empty must be entirely empty
    within L^2 steps, using only its own sites (occupied surroundings).
    Returns (ok, steps needed)."""
    sub = subwindow_environment(env, (corner[0], corner[1], L, L))
    config = np.ones((L, L), dtype=np.uint8)
    config[0, 0] = 0
    emptied_at, steps, _ = K.bp_run_kernel(sub.kinds, config, model_code(sub),
                                           K.B_OCCUPIED, L * L + 1, 0, 0, False)
    if (emptied_at < 0).any():
        return False, -1
    t_full = int(emptied_at.max())
    return t_full <= L * L, t_full


def box_empty_times(emptied_at: np.ndarray, L: int) -> np.ndarray:
    """Per-box step at which the box became entirely empty (np.inf if never)."""
    W, H = emptied_at.shape
    bw, bh = W // L, H // L
    blocks = emptied_at[:bw * L, :bh * L].reshape(bw, L, bh, L).astype(float)
    blocks = np.where(blocks < 0, np.inf, blocks)
    return blocks.max(axis=(1, 3))


def verify_propagation(env: Environment, grid: BoxGrid, labeling: ClusterLabeling,
                       config: np.ndarray, boundary: str = "occupied",
                       t_max: int | None = None):
    """Check the emptying-time claims on one realized trajectory:

    - a good box whose neighbor box is entirely empty at step T is itself
      entirely empty by T + L^2;
    - once some boundary box of C0 is entirely empty at step T, the origin
      is empty by T + T0.

    Returns (ok, violations) where violations lists (kind, box, observed, bound).
    """
    if env.params.kind is not ModelKind.MIXED_FA:
        raise NotApplicableError("propagation-time claims apply to the mixed FA model")
    L = grid.L
    result = bp_run(env, config, t_max=t_max, boundary=boundary, stop="fixpoint")
    times = box_empty_times(result.emptied_at, L)
    bw, bh = times.shape
    violations = []
    for bi in range(bw):
        for bj in range(bh):
            if not grid.good[bi, bj]:
                continue
            neigh = [times[ni, nj] for ni, nj in ((bi - 1, bj), (bi + 1, bj),
                                                  (bi, bj - 1), (bi, bj + 1))
                     if 0 <= ni < bw and 0 <= nj < bh]
            if not neigh:
                continue
            t_nb = min(neigh)
            if np.isfinite(t_nb) and not (times[bi, bj] <= t_nb + L * L):
                violations.append(("box-propagation", (bi, bj), times[bi, bj], t_nb + L * L))
    geometry = origin_cluster_geometry(grid, labeling)
    t_boundary = min((times[b] for b in geometry.boundary), default=np.inf)
    if np.isfinite(t_boundary):
        t_origin = result.emptied_at[env.origin]
        t_origin = np.inf if t_origin < 0 else float(t_origin)
        if not (t_origin <= t_boundary + geometry.t0):
            violations.append(("origin-reach", env.origin, t_origin,
                               t_boundary + geometry.t0))
    return len(violations) == 0, violations
