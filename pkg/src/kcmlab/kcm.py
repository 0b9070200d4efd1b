"""Continuous-time kinetically constrained dynamics and hitting-time tooling.

The process: every site carries a rate-1 clock (simulated as a global
exponential clock of rate |V| plus a uniform site choice); when a clock rings
at a site whose constraint is satisfied, the site is resampled to empty with
probability q and occupied with probability 1-q, even when the draw repeats
the current value. No time discretization anywhere.

Also here: the essentially-empty / bad-event machinery on the good-box path
and the explicit legal flip-path construction that moves an empty line from
an essentially empty box to the origin (column/row transport with turns).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .bootstrap import boundary_code, model_code
from .environment import EASY, Environment, ParameterError
from .percolation import BoxGrid


class FlipPathError(RuntimeError):
    """The construction produced an illegal flip or broke an invariant."""


@dataclass(frozen=True)
class SimParams:
    q: float
    t_max: float
    boundary: str = "occupied"
    seed: int = 0
    trial_index: int = 0

    def __post_init__(self):
        if not (0.0 < self.q < 1.0):
            raise ParameterError(f"q must be in (0,1), got {self.q}")
        if self.t_max <= 0:
            raise ParameterError("t_max must be positive")


@dataclass(frozen=True)
class HittingSample:
    tau: float
    censored: bool
    event: str
    rings: int


@dataclass
class FlipPath:
    sites: list
    digests: list
    l_used: int
    box_side: int
    max_diff: int
    capped: bool

    @property
    def n(self) -> int:
        return len(self.sites)

    @property
    def steps(self) -> list:
        """(flipped site, resulting configuration digest) pairs, in order."""
        return list(zip(self.sites, self.digests))

    @property
    def flip_budget(self) -> int:
        return 4 * self.box_side ** 2 * max(self.l_used, 1)

    @property
    def within_budget(self) -> bool:
        return self.n <= self.flip_budget

    @property
    def budget_ratio(self) -> float:
        return self.n / (self.box_side ** 2 * max(self.l_used, 1))


def derive_seed(master: int, *stream: int) -> int:
    """Stable 32-bit seed for a (master, stream...) key; feeds the trial kernels."""
    ss = np.random.SeedSequence(entropy=master, spawn_key=tuple(int(s) for s in stream))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def trial_seeds(master: int, stream: int, trials: int) -> np.ndarray:
    return np.array([derive_seed(master, stream, t) for t in range(trials)], dtype=np.int64)


def sample_equilibrium(q: float, width: int, height: int, seed: int = 0) -> np.ndarray:
    """Product-Bernoulli configuration: each site empty with probability q.
    Drawn C-order from a Philox stream keyed by the seed."""
    if not (0.0 < q < 1.0):
        raise ParameterError(f"q must be in (0,1), got {q}")
    rng = np.random.Generator(np.random.Philox(key=seed))
    return (rng.random((width, height)) >= q).astype(np.uint8)


def kcm_run(env: Environment, config: np.ndarray, target, params: SimParams,
            event: str = "target") -> HittingSample:
    """Exact continuous-time run until `target(config)` holds (checked at t=0
    and after every accepted flip), censored at t_max. Reference implementation
    with an arbitrary predicate; the sweeps use the compiled kernels instead."""
    cfg = np.ascontiguousarray(config, dtype=np.uint8).copy()
    if target(cfg):
        return HittingSample(tau=0.0, censored=False, event=event, rings=0)
    rng = np.random.Generator(np.random.Philox(
        key=derive_seed(params.seed, 0xC1, params.trial_index)))
    W, H = cfg.shape
    n = W * H
    mdl = model_code(env)
    bnd = boundary_code(params.boundary)
    t = 0.0
    rings = 0
    while True:
        t += rng.exponential(1.0 / n)
        if t > params.t_max:
            return HittingSample(tau=params.t_max, censored=True, event=event, rings=rings)
        rings += 1
        i = int(rng.integers(0, n))
        x, y = divmod(i, H)
        if K.constraint_at(env.kinds, cfg, x, y, mdl, bnd):
            old = cfg[x, y]
            cfg[x, y] = 0 if rng.random() < params.q else 1
            if cfg[x, y] != old and target(cfg):
                return HittingSample(tau=t, censored=False, event=event, rings=rings)


def summarize_taus(taus: np.ndarray, censored: np.ndarray, t_max: float) -> dict:
    taus = np.asarray(taus, dtype=float)
    censored = np.asarray(censored, dtype=bool)
    n = len(taus)
    frac = float(censored.mean()) if n else 1.0
    unc = taus[~censored]
    out = {
        "n": n,
        "t_max": t_max,
        "censor_fraction": frac,
        "all_censored": bool(frac == 1.0),
        "median": float(np.median(taus)) if frac < 0.5 else None,
        "mean_uncensored": float(unc.mean()) if len(unc) else None,
        "se_uncensored": float(unc.std(ddof=1) / math.sqrt(len(unc))) if len(unc) > 1 else None,
    }
    if frac == 0.0:
        out["mean"] = float(taus.mean())
        out["se"] = float(taus.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    else:
        out["mean"] = None  # uncensored-only mean would be biased low
        out["se"] = None
    return out


def estimate_tau0(env: Environment, params: SimParams, trials: int) -> tuple[np.ndarray, np.ndarray, dict]:
    """i.i.d. trials of the origin hitting time from fresh equilibrium starts.

    Each trial reseeds from (params.seed, trial index), so results do not
    depend on execution order. Returns (taus, censored, summary)."""
    if trials < 1:
        raise ParameterError("trials must be >= 1")
    seeds = trial_seeds(params.seed, 0, trials)
    ox, oy = env.origin
    taus, censored, rings = K.kcm_origin_batch(
        env.kinds, model_code(env), boundary_code(params.boundary),
        params.q, params.t_max, ox, oy, seeds)
    summary = summarize_taus(taus, censored.astype(bool), params.t_max)
    summary["rings_total"] = int(rings.sum())
    return taus, censored.astype(bool), summary


# ---------------------------------------------------------------------------
# essentially empty boxes, the bad event, and the flip path
# ---------------------------------------------------------------------------

def _box_lines_empty(config: np.ndarray, grid: BoxGrid, box: tuple[int, int]):
    """(empty_rows, empty_cols): global coordinates of fully empty lines."""
    L = grid.L
    bi, bj = box
    block = config[bi * L:(bi + 1) * L, bj * L:(bj + 1) * L]
    rows = [bj * L + j for j in range(L) if (block[:, j] == 0).all()]
    cols = [bi * L + i for i in range(L) if (block[i, :] == 0).all()]
    return rows, cols


def is_essentially_empty(env: Environment, config: np.ndarray, grid: BoxGrid,
                         box: tuple[int, int]) -> bool:
    """Good box containing a fully empty row or column."""
    if not grid.good[box]:
        return False
    rows, cols = _box_lines_empty(config, grid, box)
    return bool(rows or cols)


def bad_event_B(env: Environment, config: np.ndarray, grid: BoxGrid, path) -> bool:
    """No box along the path is essentially empty."""
    return not any(is_essentially_empty(env, config, grid, b) for b in path)


def path_length_budget(q: float, L: int, available: int) -> tuple[int, bool]:
    """l = ceil(q^{-L-1}) capped by the available path length; flags the cap."""
    ideal = math.ceil(q ** (-L - 1))
    return (min(ideal, available), ideal > available)


_ZOBRIST_SEED = 0x51AB1E


def zobrist_table(width: int, height: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(key=_ZOBRIST_SEED))
    return rng.integers(0, 2 ** 63, size=(width, height), dtype=np.int64)


def config_digest(config: np.ndarray, table: np.ndarray) -> int:
    return int(np.bitwise_xor.reduce(table[config == 0], axis=None)) if (config == 0).any() else 0


@dataclass
class _Line:
    orient: str  # 'col' or 'row'
    pos: int     # x for 'col', y for 'row'
    lo: int      # inclusive start of the spanned coordinate
    L: int

    def cells(self):
        if self.orient == "col":
            return [(self.pos, y) for y in range(self.lo, self.lo + self.L)]
        return [(x, self.pos) for x in range(self.lo, self.lo + self.L)]


class _PathBuilder:
    """Carries an empty line from the first essentially empty path box to the
    origin, asserting legality and the locality bookkeeping at every flip."""

    def __init__(self, env, grid, path, config, boundary):
        self.env = env
        self.grid = grid
        self.path = list(path)
        self.L = grid.L
        self.eta0 = np.ascontiguousarray(config, dtype=np.uint8).copy()
        self.cfg = self.eta0.copy()
        self.mdl = model_code(env)
        self.bnd = boundary_code(boundary)
        self.table = zobrist_table(env.width, env.height)
        self.digest = config_digest(self.cfg, self.table)
        self.sites: list[tuple[int, int]] = []
        self.digests: list[int] = []
        self.diff_by_box: dict[tuple[int, int], int] = {}
        self.max_diff = 0
        self.done = False

    # -- bookkeeping ------------------------------------------------------

    def _flip(self, x: int, y: int) -> None:
        if self.done:
            raise FlipPathError("flip after the path reached its target")
        if not K.constraint_at(self.env.kinds, self.cfg, x, y, self.mdl, self.bnd):
            raise FlipPathError(f"illegal flip at {(x, y)}")
        self.cfg[x, y] ^= 1
        self.digest ^= int(self.table[x, y])
        self.sites.append((x, y))
        self.digests.append(self.digest)
        box = (x // self.L, y // self.L)
        delta = -1 if self.cfg[x, y] == self.eta0[x, y] else 1
        self.diff_by_box[box] = self.diff_by_box.get(box, 0) + delta
        if self.diff_by_box[box] == 0:
            del self.diff_by_box[box]
        total = sum(self.diff_by_box.values())
        self.max_diff = max(self.max_diff, total)
        if total > 3 * self.L:
            raise FlipPathError(f"{total} sites differ from the start, above 3L = {3 * self.L}")
        boxes = list(self.diff_by_box)
        if len(boxes) > 2:
            raise FlipPathError(f"differences spread over {len(boxes)} boxes")
        if len(boxes) == 2:
            (a, b), (c, d) = boxes
            if abs(a - c) + abs(b - d) != 1:
                raise FlipPathError(f"differences in non-neighboring boxes {boxes}")
        if self.cfg[self.env.origin] == 0:
            self.done = True

    # -- line primitives ----------------------------------------------------

    def _empty_line(self, line: _Line) -> None:
        cells = line.cells()
        for _ in range(len(cells) + 1):
            if self.done:
                return
            progress = False
            remaining = False
            for (x, y) in cells:
                if self.cfg[x, y] == 1:
                    if K.constraint_at(self.env.kinds, self.cfg, x, y, self.mdl, self.bnd):
                        self._flip(x, y)
                        progress = True
                        if self.done:
                            return
                    else:
                        remaining = True
            if not remaining:
                return
            if not progress:
                raise FlipPathError(f"cannot finish emptying {line}")
        raise FlipPathError(f"emptying {line} did not terminate")

    def _refill_line(self, line: _Line, skip: frozenset = frozenset()) -> None:
        """Restore the line to its starting values, except `skip` stays empty."""
        cells = line.cells()
        targets = [c for c in cells if c not in skip
                   and self.eta0[c] == 1 and self.cfg[c] == 0]
        if not targets:
            return
        holes = {c for c in cells if c in skip or self.eta0[c] == 0}
        pivot = None
        for c in targets:
            if self.env.kinds[c] == EASY:
                pivot = c
                break
        if pivot is None:
            for idx, c in enumerate(cells):
                if c in targets and (
                        (idx > 0 and cells[idx - 1] in holes)
                        or (idx + 1 < len(cells) and cells[idx + 1] in holes)):
                    pivot = c
                    break
        if pivot is None:
            raise FlipPathError(f"no refill pivot in {line}")
        p = cells.index(pivot)
        order = [c for c in cells[:p] if c in targets] \
            + [c for c in reversed(cells[p + 1:]) if c in targets] + [pivot]
        for (x, y) in order:
            self._flip(x, y)

    def _slide(self, line: _Line, step: int, crumb: int | None = None) -> _Line:
        """Move the line one lattice step along its travel axis; the vacated
        line refills to its starting values (keeping the crumb cell empty)."""
        nxt = _Line(line.orient, line.pos + step, line.lo, line.L)
        self._empty_line(nxt)
        if self.done:
            return nxt
        skip = frozenset()
        if crumb is not None:
            cell = (line.pos, crumb) if line.orient == "col" else (crumb, line.pos)
            skip = frozenset({cell})
        self._refill_line(line, skip)
        return nxt

    def _rotate(self, line: _Line, box: tuple[int, int], d_exit: tuple[int, int]) -> _Line:
        """Turn a column into a row (or vice versa) inside a good box: sweep the
        line across the box leaving one empty cell per vacated line on the
        crumb coordinate, so the perpendicular line assembles there."""
        L = self.L
        bi, bj = box
        if line.orient == "col":
            lo_edge, hi_edge = bi * L, bi * L + L - 1
            crumb = bj * L if d_exit[1] > 0 else bj * L + L - 1  # far row from exit
        else:
            lo_edge, hi_edge = bj * L, bj * L + L - 1
            crumb = bi * L if d_exit[0] > 0 else bi * L + L - 1
        # one sweep to the opposite edge covers every vacated line with a crumb;
        # a mid-box start (birth) detours to the nearer edge first
        if line.pos - lo_edge <= hi_edge - line.pos:
            while line.pos > lo_edge and not self.done:
                line = self._slide(line, -1, crumb=crumb)
            while line.pos < hi_edge and not self.done:
                line = self._slide(line, +1, crumb=crumb)
        else:
            while line.pos < hi_edge and not self.done:
                line = self._slide(line, +1, crumb=crumb)
            while line.pos > lo_edge and not self.done:
                line = self._slide(line, -1, crumb=crumb)
        if self.done:
            return line
        new_orient = "row" if line.orient == "col" else "col"
        new_lo = bi * L if new_orient == "row" else bj * L
        return _Line(new_orient, crumb, new_lo, L)

    # -- the walk -----------------------------------------------------------

    @staticmethod
    def _compatible(line: _Line, d: tuple[int, int]) -> bool:
        return (line.orient == "col") == (d[1] == 0)

    def _birth(self, k: int, d0: tuple[int, int] | None) -> _Line:
        box = self.path[k]
        rows, cols = _box_lines_empty(self.cfg, self.grid, box)
        bi, bj = box
        options = [_Line("row", y, bi * self.L, self.L) for y in rows] \
            + [_Line("col", x, bj * self.L, self.L) for x in cols]
        if not options:
            raise FlipPathError(f"box {box} is not essentially empty")
        if d0 is not None:
            compatible = [ln for ln in options if self._compatible(ln, d0)]
            if compatible:
                return compatible[0]
            line = options[0]
            return self._rotate(line, box, d0)
        return options[0]

    def run(self) -> None:
        path = self.path
        if self.cfg[self.env.origin] == 0:
            return
        k_star = None
        for k, b in enumerate(path):
            if is_essentially_empty(self.env, self.cfg, self.grid, b):
                k_star = k
                break
        if k_star is None:
            return  # the bad event holds; the configuration is already in A
        L = self.L
        ox, oy = self.env.origin
        if k_star == 0:
            d0 = None
        else:
            a, b = path[k_star], path[k_star - 1]
            d0 = (b[0] - a[0], b[1] - a[1])
        line = self._birth(k_star, d0)
        for k in range(k_star, 0, -1):
            if self.done:
                return
            cur_box, nxt_box = path[k], path[k - 1]
            d = (nxt_box[0] - cur_box[0], nxt_box[1] - cur_box[1])
            if not self._compatible(line, d):
                line = self._rotate(line, cur_box, d)
            step = d[0] + d[1]  # +-1 along the travel axis
            target = (nxt_box[0] * L if line.orient == "col" else nxt_box[1] * L)
            if step < 0:
                target += L - 1
            # entering the next box changes the spanned coordinate range
            line = _Line(line.orient, line.pos,
                         nxt_box[1] * L if line.orient == "col" else nxt_box[0] * L, L)
            while line.pos != target and not self.done:
                line = self._slide(line, step)
        if self.done:
            return
        goal = ox if line.orient == "col" else oy
        step = 1 if goal > line.pos else -1
        while line.pos != goal and not self.done:
            line = self._slide(line, step)
        if not self.done:
            # the line now covers the origin's coordinate but was assembled
            # earlier; empty it explicitly (covers the k*=0 in-place case)
            self._empty_line(line)
        if not self.done:
            raise FlipPathError("walk finished without emptying the origin")


def build_flip_path(env: Environment, grid: BoxGrid, path, config: np.ndarray,
                    boundary: str = "occupied", capped: bool = False) -> FlipPath:
    """Explicit legal flip sequence from `config` into A = {bad event} ∪
    {origin empty}: single-site legal flips, every intermediate configuration
    within 3L sites of the start confined to two neighboring boxes.

    Raises FlipPathError when the construction would need an illegal flip or
    break the locality bookkeeping (never silently returned).
    """
    builder = _PathBuilder(env, grid, path, config, boundary)
    builder.run()
    fp = FlipPath(sites=builder.sites, digests=builder.digests,
                  l_used=max(len(path) - 1, 0), box_side=grid.L,
                  max_diff=builder.max_diff, capped=capped)
    if builder.sites:
        terminal_ok = builder.cfg[env.origin] == 0
    else:
        terminal_ok = config[env.origin] == 0 or bad_event_B(env, config, grid, path)
    if not terminal_ok:
        raise FlipPathError("terminal configuration not in the target event")
    return fp


# ---------------------------------------------------------------------------
# pivotal-flip (barrier) hitting experiment
# ---------------------------------------------------------------------------

def find_all_difficult_box(env: Environment, L_max: int | None = None):
    """Largest [-L, L]^2 around the origin with only difficult sites, as a
    rect (x0, y0, w, h); None when not even L = 1 qualifies."""
    ox, oy = env.origin
    cap = min(ox, oy, env.width - 1 - ox, env.height - 1 - oy)
    if L_max is not None:
        cap = min(cap, L_max)
    best = None
    for L in range(1, cap + 1):
        block = env.kinds[ox - L:ox + L + 1, oy - L:oy + L + 1]
        if (block == 2).all():
            best = (ox - L, oy - L, 2 * L + 1, 2 * L + 1)
        else:
            break
    return best


def g_hitting_experiment(env: Environment, params: SimParams, trials: int,
                         rect=None, max_rejections: int = 10000):
    """Hitting times of the pivotal-flip event on the all-difficult box.

    Each trial starts at equilibrium conditioned (by rejection) on the origin
    not being in the box's span, then runs until an accepted flip makes the
    span include the origin. Returns (samples, info); each sample reports the
    flipped site so its inner-boundary membership can be asserted.
    """
    if rect is None:
        rect = find_all_difficult_box(env)
        if rect is None:
            raise ParameterError("no all-difficult box around the origin")
    x0, y0, w, h = rect
    region = np.zeros(env.shape, dtype=bool)
    region[x0:x0 + w, y0:y0 + h] = True
    mdl = model_code(env)
    bnd = boundary_code(params.boundary)
    W, H = env.shape
    n = W * H
    samples = []
    flip_sites = []
    rejected = 0
    for trial in range(trials):
        rng = np.random.Generator(np.random.Philox(key=derive_seed(params.seed, 0x6E, trial)))
        cfg = None
        for _ in range(max_rejections):
            cand = (rng.random((W, H)) >= params.q).astype(np.uint8)
            if not bool(K.closure_kernel(env.kinds, cand, region, mdl)[env.origin]):
                cfg = cand
                break
            rejected += 1
        if cfg is None:
            raise RuntimeError("rejection sampling failed; origin almost surely in span")
        t = 0.0
        rings = 0
        while True:
            t += rng.exponential(1.0 / n)
            if t > params.t_max:
                samples.append(HittingSample(tau=params.t_max, censored=True,
                                             event="g-event", rings=rings))
                flip_sites.append(None)
                break
            rings += 1
            i = int(rng.integers(0, n))
            x, y = divmod(i, H)
            if K.constraint_at(env.kinds, cfg, x, y, mdl, bnd):
                old = cfg[x, y]
                cfg[x, y] = 0 if rng.random() < params.q else 1
                if cfg[x, y] != old and region[x, y]:
                    if bool(K.closure_kernel(env.kinds, cfg, region, mdl)[env.origin]):
                        samples.append(HittingSample(tau=t, censored=False,
                                                     event="g-event", rings=rings))
                        flip_sites.append((x, y))
                        break
    acceptance = trials / (trials + rejected) if trials else 0.0
    info = {"rect": rect, "acceptance_rate": acceptance, "flip_sites": flip_sites}
    return samples, info
