"""Hot loops for the Monte Carlo dynamics, compiled with numba.

Conventions shared with the rest of the package:
  occupation: 1 = occupied, 0 = empty
  kinds:      1 = easy (threshold 1 / FA1f), 2 = difficult (threshold 2 / NE)
  model:      0 = mixed-threshold FA, 1 = mixed NE/FA1f
  boundary:   0 = occupied, 1 = empty, 2 = free (out-of-window neighbors are
              dropped from FA counts and make NE requirements vacuous)

Trial kernels reseed numba's thread-local MT19937 at the start of each trial,
so per-trial results depend only on the trial's seed.
"""

import numpy as np
from numba import njit

MODEL_FA = 0
MODEL_NE = 1
B_OCCUPIED = 0
B_EMPTY = 1
B_FREE = 2


@njit(cache=True)
def constraint_at(kinds, config, x, y, model, boundary):
    """Evaluate the kinetic constraint at (x, y); 1 when a flip is allowed."""
    W, H = config.shape
    if model == MODEL_NE and kinds[x, y] == 2:
        if x + 1 < W:
            east = config[x + 1, y] == 0
        else:
            east = boundary != B_OCCUPIED
        if y + 1 < H:
            north = config[x, y + 1] == 0
        else:
            north = boundary != B_OCCUPIED
        return 1 if (east and north) else 0
    c = 0
    if x > 0:
        if config[x - 1, y] == 0:
            c += 1
    elif boundary == B_EMPTY:
        c += 1
    if x + 1 < W:
        if config[x + 1, y] == 0:
            c += 1
    elif boundary == B_EMPTY:
        c += 1
    if y > 0:
        if config[x, y - 1] == 0:
            c += 1
    elif boundary == B_EMPTY:
        c += 1
    if y + 1 < H:
        if config[x, y + 1] == 0:
            c += 1
    elif boundary == B_EMPTY:
        c += 1
    return 1 if c >= kinds[x, y] else 0


@njit(cache=True, inline="always")
def _bp_sat(kinds, emptied, j, t, model, boundary, W, H):
    """Constraint at flat index j against the step-(t-1) empty set."""
    x = j // H
    y = j - x * H
    if kinds[x, y] == 2 and model == MODEL_NE:
        if x + 1 < W:
            east = 0 <= emptied[j + H] < t
        else:
            east = boundary != B_OCCUPIED
        if y + 1 < H:
            north = 0 <= emptied[j + 1] < t
        else:
            north = boundary != B_OCCUPIED
        return east and north
    c = 0
    if x > 0:
        if 0 <= emptied[j - H] < t:
            c += 1
    elif boundary == B_EMPTY:
        c += 1
    if x + 1 < W:
        if 0 <= emptied[j + H] < t:
            c += 1
    elif boundary == B_EMPTY:
        c += 1
    if y > 0:
        if 0 <= emptied[j - 1] < t:
            c += 1
    elif boundary == B_EMPTY:
        c += 1
    if y + 1 < H:
        if 0 <= emptied[j + 1] < t:
            c += 1
    elif boundary == B_EMPTY:
        c += 1
    return c >= kinds[x, y]


@njit(cache=True)
def _bp_sweep(kinds, emptied, cur, nxt, seen, ncur, model, boundary, t, W, H):
    """Evaluate the occupied neighbors of the step-(t-1) frontier; returns the
    number of sites newly emptied at step t (written into nxt)."""
    nn = 0
    for k in range(ncur):
        i = cur[k]
        x = i // H
        y = i - x * H
        for d in range(4):
            if d == 0:
                if x == 0:
                    continue
                j = i - H
            elif d == 1:
                if x == W - 1:
                    continue
                j = i + H
            elif d == 2:
                if y == 0:
                    continue
                j = i - 1
            else:
                if y == H - 1:
                    continue
                j = i + 1
            if emptied[j] >= 0 or seen[j] == t:
                continue
            seen[j] = t
            if _bp_sat(kinds, emptied, j, t, model, boundary, W, H):
                emptied[j] = t
                nxt[nn] = j
                nn += 1
    return nn


@njit(cache=True)
def _bp_edge_pass(kinds, emptied, nxt, seen, nn, model, boundary, W, H):
    """Step-1 evaluation of window-edge sites, which can be satisfiable from
    out-of-window contributions alone under non-occupied conventions."""
    t = 1
    for x in range(W):
        for y in (0, H - 1):
            j = x * H + y
            if emptied[j] < 0 and seen[j] != t:
                seen[j] = t
                if _bp_sat(kinds, emptied, j, t, model, boundary, W, H):
                    emptied[j] = t
                    nxt[nn] = j
                    nn += 1
    for y in range(H):
        for x in (0, W - 1):
            j = x * H + y
            if emptied[j] < 0 and seen[j] != t:
                seen[j] = t
                if _bp_sat(kinds, emptied, j, t, model, boundary, W, H):
                    emptied[j] = t
                    nxt[nn] = j
                    nn += 1
    return nn


@njit(cache=True)
def bp_run_kernel(kinds, config, model, boundary, t_max, ox, oy, stop_at_origin):
    """Synchronous bootstrap percolation via an active frontier.

    Returns (emptied_at, steps_run, fixed_point) where emptied_at[x, y] is the
    first step the site is empty (-1 if never within the run).
    """
    W, H = config.shape
    n = W * H
    emptied = np.full(n, -1, np.int32)
    cur = np.empty(n, np.int32)
    nxt = np.empty(n, np.int32)
    seen = np.full(n, -1, np.int32)
    ncur = 0
    for x in range(W):
        base = x * H
        for y in range(H):
            if config[x, y] == 0:
                emptied[base + y] = 0
                cur[ncur] = base + y
                ncur += 1
    oidx = ox * H + oy
    t = 0
    fixed_point = False
    if not (stop_at_origin and emptied[oidx] == 0):
        while t < t_max:
            t += 1
            nn = _bp_sweep(kinds, emptied, cur, nxt, seen, ncur, model, boundary, t, W, H)
            if t == 1 and boundary != B_OCCUPIED:
                nn = _bp_edge_pass(kinds, emptied, nxt, seen, nn, model, boundary, W, H)
            cur, nxt = nxt, cur
            ncur = nn
            if ncur == 0:
                fixed_point = True
                break
            if stop_at_origin and emptied[oidx] >= 0:
                break
    else:
        fixed_point = ncur == 0
    return emptied.reshape(W, H), t, fixed_point


@njit(cache=True)
def bp_tau0_batch(kinds, model, boundary, q, t_max, ox, oy, seeds):
    """Fresh equilibrium config per trial (seeded), origin emptying time in steps.

    Returns (tau, censored); tau is the step count, censored marks trials where
    the origin never emptied (fixed point or t_max reached).
    """
    W, H = kinds.shape
    n = W * H
    ntr = len(seeds)
    taus = np.empty(ntr, np.int64)
    censored = np.zeros(ntr, np.uint8)
    emptied = np.empty(n, np.int32)
    cur = np.empty(n, np.int32)
    nxt = np.empty(n, np.int32)
    seen = np.empty(n, np.int32)
    oidx = ox * H + oy
    for k in range(ntr):
        np.random.seed(seeds[k])
        ncur = 0
        for i in range(n):
            seen[i] = -1
            if np.random.random() < q:
                emptied[i] = 0
                cur[ncur] = i
                ncur += 1
            else:
                emptied[i] = -1
        if emptied[oidx] == 0:
            taus[k] = 0
            continue
        t = 0
        done = False
        while t < t_max:
            t += 1
            nn = _bp_sweep(kinds, emptied, cur, nxt, seen, ncur, model, boundary, t, W, H)
            if t == 1 and boundary != B_OCCUPIED:
                nn = _bp_edge_pass(kinds, emptied, nxt, seen, nn, model, boundary, W, H)
            cur, nxt = nxt, cur
            ncur = nn
            if emptied[oidx] >= 0:
                taus[k] = t
                done = True
                break
            if ncur == 0:
                break
        if not done:
            taus[k] = t
            censored[k] = 1
    return taus, censored


@njit(cache=True)
def closure_kernel(kinds, config, region, model):
    """Span of `region`: bootstrap emptying seeded only by the region's empties,
    with every site outside the region treated as occupied. Returns the emptied
    mask (uint8, window shape)."""
    W, H = config.shape
    n = W * H
    emptied = np.zeros(n, np.uint8)
    cur = np.empty(n, np.int32)
    nxt = np.empty(n, np.int32)
    ncur = 0
    for x in range(W):
        base = x * H
        for y in range(H):
            if region[x, y] and config[x, y] == 0:
                emptied[base + y] = 1
                cur[ncur] = base + y
                ncur += 1
    while ncur > 0:
        nn = 0
        for k in range(ncur):
            i = cur[k]
            x = i // H
            y = i - x * H
            for d in range(4):
                if d == 0:
                    if x == 0:
                        continue
                    j = i - H
                elif d == 1:
                    if x == W - 1:
                        continue
                    j = i + H
                elif d == 2:
                    if y == 0:
                        continue
                    j = i - 1
                else:
                    if y == H - 1:
                        continue
                    j = i + 1
                xj = j // H
                yj = j - xj * H
                if emptied[j] or not region[xj, yj]:
                    continue
                if kinds[xj, yj] == 2 and model == MODEL_NE:
                    east = xj + 1 < W and region[xj + 1, yj] and emptied[j + H] == 1
                    north = yj + 1 < H and region[xj, yj + 1] and emptied[j + 1] == 1
                    sat = east and north
                else:
                    c = 0
                    if xj > 0 and region[xj - 1, yj] and emptied[j - H] == 1:
                        c += 1
                    if xj < W - 1 and region[xj + 1, yj] and emptied[j + H] == 1:
                        c += 1
                    if yj > 0 and region[xj, yj - 1] and emptied[j - 1] == 1:
                        c += 1
                    if yj < H - 1 and region[xj, yj + 1] and emptied[j + 1] == 1:
                        c += 1
                    sat = c >= kinds[xj, yj]
                if sat:
                    emptied[j] = 1
                    nxt[nn] = j
                    nn += 1
        cur, nxt = nxt, cur
        ncur = nn
    return emptied.reshape(W, H)


@njit(cache=True)
def kcm_origin_batch(kinds, model, boundary, q, t_max, ox, oy, seeds):
    """Continuous-time runs to {origin empty}, one per seed, equilibrium start.

    Every site rings at rate 1 (global Exp(|V|) clock + uniform site); a ring
    at a constraint-satisfied site resamples it to empty with probability q.
    Returns (tau, censored, rings).
    """
    W, H = kinds.shape
    n = W * H
    ntr = len(seeds)
    taus = np.empty(ntr, np.float64)
    censored = np.zeros(ntr, np.uint8)
    rings_used = np.zeros(ntr, np.int64)
    config = np.empty((W, H), np.uint8)
    for k in range(ntr):
        np.random.seed(seeds[k])
        for x in range(W):
            for y in range(H):
                config[x, y] = 0 if np.random.random() < q else 1
        if config[ox, oy] == 0:
            taus[k] = 0.0
            continue
        t = 0.0
        rings = 0
        while True:
            t += np.random.exponential(1.0 / n)
            if t > t_max:
                taus[k] = t_max
                censored[k] = 1
                break
            rings += 1
            i = np.random.randint(0, n)
            x = i // H
            y = i - (i // H) * H
            if constraint_at(kinds, config, x, y, model, boundary):
                if np.random.random() < q:
                    config[x, y] = 0
                    if x == ox and y == oy:
                        taus[k] = t
                        break
                else:
                    config[x, y] = 1
        rings_used[k] = rings
    return taus, censored, rings_used
