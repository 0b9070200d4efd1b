"""Independent oracles and small builders shared by the test modules.

Everything here is deliberately written from the definitions, not via the
package's own fast paths, so tests compare two routes."""

import numpy as np

from kcmlab.environment import DIFFICULT, EnvParams, Environment, ModelKind


def env_from_kinds(kinds, kind=ModelKind.MIXED_FA, pi=0.5, seed=0, origin=None):
    kinds = np.ascontiguousarray(kinds, dtype=np.uint8)
    w, h = kinds.shape
    params = EnvParams(pi=pi, width=w, height=h, kind=kind, seed=seed)
    if origin is None:
        origin = (w // 2, h // 2)
    return Environment(params=params, kinds=kinds, origin=origin)


def constraint_oracle(env, config, x, boundary="occupied"):
    """Pure-python constraint evaluation straight from the definitions."""
    xi, yi = x
    w, h = env.shape

    def occ(nx, ny):
        if 0 <= nx < w and 0 <= ny < h:
            return int(config[nx, ny])
        return {"occupied": 1, "empty": 0, "free": None}[boundary]

    kind = env.kinds[xi, yi]
    if env.params.kind is ModelKind.MIXED_NE_FA1F and kind == DIFFICULT:
        east = occ(xi + 1, yi)
        north = occ(xi, yi + 1)
        return int((east is None or east == 0) and (north is None or north == 0))
    empties = 0
    for nx, ny in ((xi - 1, yi), (xi + 1, yi), (xi, yi - 1), (xi, yi + 1)):
        v = occ(nx, ny)
        if v == 0:
            empties += 1
    return int(empties >= kind)


def exhaustive_good_probability(pi, L):
    """Enumerate all 2^(L*L) easy/difficult assignments."""
    total = 0.0
    for mask in range(1 << (L * L)):
        easy = np.array([(mask >> i) & 1 for i in range(L * L)]).reshape(L, L)
        if easy.any(axis=0).all() and easy.any(axis=1).all():
            k = easy.sum()
            total += pi ** k * (1 - pi) ** (L * L - k)
    return total


def flood_fill_partition(flags):
    """Set of frozensets: the 4-connected components of True cells."""
    w, h = flags.shape
    seen = np.zeros_like(flags)
    parts = set()
    for x in range(w):
        for y in range(h):
            if flags[x, y] and not seen[x, y]:
                comp = []
                stack = [(x, y)]
                seen[x, y] = True
                while stack:
                    cx, cy = stack.pop()
                    comp.append((cx, cy))
                    for nx, ny in ((cx-1, cy), (cx+1, cy), (cx, cy-1), (cx, cy+1)):
                        if 0 <= nx < w and 0 <= ny < h and flags[nx, ny] and not seen[nx, ny]:
                            seen[nx, ny] = True
                            stack.append((nx, ny))
                parts.add(frozenset(comp))
    return parts


def bfs_distances(inside, sources):
    """Plain BFS on the True cells of `inside` from the source list."""
    w, h = inside.shape
    dist = np.full((w, h), np.inf)
    frontier = [s for s in sources]
    for s in frontier:
        dist[s] = 0
    d = 0
    while frontier:
        d += 1
        nxt = []
        for (x, y) in frontier:
            for nx, ny in ((x-1, y), (x+1, y), (x, y-1), (x, y+1)):
                if 0 <= nx < w and 0 <= ny < h and inside[nx, ny] and dist[nx, ny] == np.inf:
                    dist[nx, ny] = d
                    nxt.append((nx, ny))
        frontier = nxt
    return dist


def encircles(loop, cell):
    """Even-odd ray casting through the polygon of loop cell centers."""
    cx, cy = cell
    cnt = 0
    pts = list(loop) + [loop[0]]
    for (x1, y1), (x2, y2) in zip(pts, pts[1:]):
        if (y1 > cy) != (y2 > cy):
            xint = x1 + (cy - y1) * (x2 - x1) / (y2 - y1)
            if xint > cx:
                cnt += 1
    return cnt % 2 == 1


def nearest_empty_linf(config, origin):
    """Chebyshev... no: nearest-empty graph (L1) distance used by the all-easy
    bootstrap oracle: with every site easy, the origin empties exactly when
    the emptiness front from the nearest empty site arrives."""
    empties = np.argwhere(config == 0)
    if len(empties) == 0:
        return np.inf
    ox, oy = origin
    return int(np.abs(empties - [ox, oy]).sum(axis=1).min())


def first_empty_times_oracle(env, config, boundary="occupied", t_cap=10000):
    """Synchronous bootstrap times by direct definition (full-grid sweeps)."""
    w, h = env.shape
    cur = config.copy()
    emptied = np.where(cur == 0, 0, -1).astype(np.int64)
    for t in range(1, t_cap + 1):
        nxt = cur.copy()
        for x in range(w):
            for y in range(h):
                if cur[x, y] == 1 and constraint_oracle(env, cur, (x, y), boundary):
                    nxt[x, y] = 0
                    emptied[x, y] = t
        if np.array_equal(nxt, cur):
            break
        cur = nxt
    return emptied
