"""Cluster geometry on the coarse-grained box lattice and on sites.

The window-spanning cluster stands in for the infinite cluster: a cluster
spans when it touches both the left and right box columns, or both the top
and bottom box rows. C0 is the cluster of the origin enclosed by the spanning
cluster (just the origin box/site when that itself belongs to it), and its
boundary consists of spanning-cluster cells adjacent to C0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .environment import (
    DIFFICULT,
    EASY,
    Environment,
    ModelKind,
    ParameterError,
    is_excellent_square,
)


class GeometryUnavailable(RuntimeError):
    """No spanning cluster (or the construction leaves the window)."""


class PathTooShort(RuntimeError):
    def __init__(self, achieved: int, requested: int):
        super().__init__(f"path exhausted at length {achieved} < requested {requested}")
        self.achieved = achieved
        self.requested = requested


class UnionFind:
    """Union by size with path compression over n integer cells."""

    def __init__(self, n: int):
        self.parent = np.arange(n, dtype=np.int64)
        self.size = np.ones(n, dtype=np.int64)

    def find(self, a: int) -> int:
        parent = self.parent
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:
            parent[a], a = root, parent[a]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]


@dataclass(frozen=True)
class BoxGrid:
    """Good/excellent flags for the boxes L*i + [L]^2 tiling the window."""

    env: Environment
    L: int
    good: np.ndarray       # bool, shape (width//L, height//L)
    excellent: np.ndarray  # bool, same shape
    origin_box: tuple[int, int]

    @property
    def shape(self) -> tuple[int, int]:
        return self.good.shape


@dataclass(frozen=True)
class ClusterLabeling:
    """Connected components (4-adjacency) of the flagged cells.

    ``labels`` is -1 on unflagged cells, otherwise a component id in
    [0, n_clusters). ``spanning`` marks ids whose component touches two
    opposite window edges.
    """

    labels: np.ndarray
    sizes: np.ndarray
    spanning: np.ndarray

    @property
    def n_clusters(self) -> int:
        return len(self.sizes)

    def spanning_label(self) -> int:
        """Largest spanning cluster id, or -1 when none spans."""
        ids = np.flatnonzero(self.spanning)
        if len(ids) == 0:
            return -1
        return int(ids[np.argmax(self.sizes[ids])])


@dataclass(frozen=True)
class ClusterGeometry:
    """The origin's enclosed cluster, its boundary in the spanning cluster,
    and the derived emptying-time budget T0 = (|boundary| + |C0|) * L^2."""

    c0: frozenset
    boundary: frozenset
    t0: float
    diameter: int
    cell_side: int = 1
    enclosed: bool = True
    path: tuple = field(default=())   # only set by easy_site_geometry
    encircle_len: int = 0             # prefix of `path` that closes around C0


def coarse_grain(env: Environment, L: int) -> BoxGrid:
    """Flag each box of the LxL tiling as good/excellent."""
    if env.width % L or env.height % L:
        raise ParameterError(f"window {env.width}x{env.height} not divisible by box side {L}")
    bw, bh = env.width // L, env.height // L
    easy = (env.kinds == EASY).reshape(bw, L, bh, L)
    rows_ok = easy.any(axis=1).all(axis=2)   # every row of the box has an easy site
    cols_ok = easy.any(axis=3).all(axis=1)   # every column too
    good = rows_ok & cols_ok
    excellent = np.empty((bw, bh), dtype=bool)
    for bi in range(bw):
        for bj in range(bh):
            excellent[bi, bj] = is_excellent_square(env, (bi * L, bj * L), L)
    ox, oy = env.origin
    return BoxGrid(env=env, L=L, good=good, excellent=excellent,
                   origin_box=(ox // L, oy // L))


def label_clusters(flags: np.ndarray) -> ClusterLabeling:
    """Union-find labeling of 4-connected components of True cells."""
    w, h = flags.shape
    uf = UnionFind(w * h)
    idx = np.arange(w * h).reshape(w, h)
    right = flags[:-1, :] & flags[1:, :]
    up = flags[:, :-1] & flags[:, 1:]
    for a, b in zip(idx[:-1, :][right], idx[1:, :][right]):
        uf.union(int(a), int(b))
    for a, b in zip(idx[:, :-1][up], idx[:, 1:][up]):
        uf.union(int(a), int(b))

    labels = np.full((w, h), -1, dtype=np.int64)
    roots = {}
    for x in range(w):
        for y in range(h):
            if flags[x, y]:
                r = uf.find(int(idx[x, y]))
                if r not in roots:
                    roots[r] = len(roots)
                labels[x, y] = roots[r]
    n = len(roots)
    sizes = np.bincount(labels[labels >= 0], minlength=n)
    spanning = np.zeros(n, dtype=bool)
    if n:
        left = set(labels[0, :][labels[0, :] >= 0])
        rightside = set(labels[-1, :][labels[-1, :] >= 0])
        bottom = set(labels[:, 0][labels[:, 0] >= 0])
        top = set(labels[:, -1][labels[:, -1] >= 0])
        for lab in (left & rightside) | (bottom & top):
            spanning[lab] = True
    return ClusterLabeling(labels=labels, sizes=sizes, spanning=spanning)


def _component_of(mask: np.ndarray, start: tuple[int, int]) -> set:
    """4-connected component of `start` inside mask (flood fill)."""
    w, h = mask.shape
    if not mask[start]:
        return set()
    comp = {start}
    stack = [start]
    while stack:
        x, y = stack.pop()
        for nx, ny in ((x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)):
            if 0 <= nx < w and 0 <= ny < h and mask[nx, ny] and (nx, ny) not in comp:
                comp.add((nx, ny))
                stack.append((nx, ny))
    return comp


def _geometry_from_masks(in_spanning: np.ndarray, origin_cell: tuple[int, int],
                         cell_side: int) -> ClusterGeometry:
    w, h = in_spanning.shape
    if in_spanning[origin_cell]:
        c0 = {origin_cell}
    else:
        c0 = _component_of(~in_spanning, origin_cell)
    boundary = set()
    enclosed = True
    for (x, y) in c0:
        if x in (0, w - 1) or y in (0, h - 1):
            enclosed = False
        for nx, ny in ((x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)):
            if 0 <= nx < w and 0 <= ny < h and in_spanning[nx, ny]:
                boundary.add((nx, ny))
    if in_spanning[origin_cell]:
        enclosed = True
        # the degenerate case: C0 = {origin}, its boundary within the cluster
        boundary = {(nx, ny) for nx, ny in boundary}
    if c0:
        pts = np.array(sorted(c0))
        diameter = int(np.max(np.abs(pts[:, None, :] - pts[None, :, :]).max(axis=2))) if len(pts) > 1 else 0
    else:
        diameter = 0
    t0 = (len(boundary) + len(c0)) * float(cell_side) ** 2
    return ClusterGeometry(c0=frozenset(c0), boundary=frozenset(boundary), t0=t0,
                           diameter=diameter, cell_side=cell_side, enclosed=enclosed)


def origin_cluster_geometry(grid: BoxGrid, labeling: ClusterLabeling) -> ClusterGeometry:
    """C0 and its spanning-cluster boundary on the box lattice."""
    span = labeling.spanning_label()
    if span < 0:
        raise GeometryUnavailable("no spanning cluster of good boxes; enlarge the window or L")
    in_spanning = labeling.labels == span
    return _geometry_from_masks(in_spanning, grid.origin_box, grid.L)


def chemical_distance(labeling: ClusterLabeling, sources) -> np.ndarray:
    """BFS graph distance inside the sources' cluster; np.inf where unreachable
    (including every cell outside that cluster)."""
    sources = [tuple(s) for s in sources]
    if not sources:
        raise ParameterError("empty source set")
    labels = labeling.labels
    lab = labels[sources[0]]
    if lab < 0 or any(labels[s] != lab for s in sources):
        raise ParameterError("sources must lie in a single cluster")
    w, h = labels.shape
    dist = np.full((w, h), np.inf)
    frontier = sources
    for s in sources:
        dist[s] = 0.0
    d = 0
    inside = labels == lab
    while frontier:
        d += 1
        nxt = []
        for (x, y) in frontier:
            for nx, ny in ((x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)):
                if 0 <= nx < w and 0 <= ny < h and inside[nx, ny] and not np.isfinite(dist[nx, ny]):
                    dist[nx, ny] = d
                    nxt.append((nx, ny))
        frontier = nxt
    return dist


def count_excellent_within(grid: BoxGrid, labeling: ClusterLabeling,
                           geometry: ClusterGeometry, l: int) -> int:
    """Excellent spanning-cluster boxes at chemical distance <= l from the boundary."""
    if not geometry.boundary:
        return 0
    dist = chemical_distance(labeling, sorted(geometry.boundary))
    near = np.isfinite(dist) & (dist <= l)
    return int((near & grid.excellent).sum())


def good_box_path(grid: BoxGrid, labeling: ClusterLabeling, l: int) -> list[tuple[int, int]]:
    """Deterministic self-avoiding path of good boxes i_0..i_l from the origin box.

    Walks outward on BFS distances from the origin box inside its cluster,
    taking the lexicographically smallest neighbor at distance d+1 each step,
    so reruns reproduce the path exactly.
    """
    start = grid.origin_box
    if labeling.labels[start] < 0:
        raise GeometryUnavailable("origin box is not good; choose L via min_good_L")
    dist = chemical_distance(labeling, [start])
    path = [start]
    w, h = labeling.labels.shape
    while len(path) <= l:
        x, y = path[-1]
        d = dist[x, y]
        candidates = [(nx, ny) for nx, ny in ((x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1))
                      if 0 <= nx < w and 0 <= ny < h and np.isfinite(dist[nx, ny])
                      and dist[nx, ny] == d + 1]
        if not candidates:
            raise PathTooShort(len(path) - 1, l)
        path.append(min(candidates))
    return path


def _trace_contour(free: np.ndarray, obstacle: set) -> list[tuple[int, int]]:
    """Right-hand-rule walk in `free` cells around the 8-connected `obstacle`.

    Starts at the free cell west of the lexicographically smallest obstacle
    cell, keeps the obstacle on the right, and returns the closed loop of free
    cells visited (first cell not repeated at the end).
    """
    w, h = free.shape
    sx, sy = min(obstacle)
    start = (sx - 1, sy)
    if not (0 <= start[0] < w) or not free[start]:
        raise GeometryUnavailable("contour start outside window")
    # headings: 0=N(+y) 1=E(+x) 2=S(-y) 3=W(-x); wall initially to the East
    moves = {0: (0, 1), 1: (1, 0), 2: (0, -1), 3: (-1, 0)}
    pos, heading = start, 0
    loop = [pos]
    state0 = None
    for _ in range(8 * w * h):
        # try right, straight, left, back (keep right hand on the wall)
        for turn in (1, 0, -1, 2):
            nh = (heading + turn) % 4
            dx, dy = moves[nh]
            nxt = (pos[0] + dx, pos[1] + dy)
            if 0 <= nxt[0] < w and 0 <= nxt[1] < h and free[nxt]:
                pos, heading = nxt, nh
                break
        else:
            raise GeometryUnavailable("contour walk trapped")
        if state0 is None:
            state0 = (pos, heading)
        elif (pos, heading) == state0 and len(loop) > 2:
            break
        loop.append(pos)
    else:
        raise GeometryUnavailable("contour walk did not close")
    # drop the duplicated closing cell
    if loop[-1] == loop[0] and len(loop) > 1:
        loop.pop()
    return loop


def easy_site_geometry(env: Environment) -> ClusterGeometry:
    """Site-level C0 / boundary for the NE/FA1f model plus an encircling path.

    The path starts with a loop of spanning-cluster easy sites encircling C0
    (right-hand-rule walk around the 8-connected non-cluster island containing
    C0) and then extends by a shortest easy-site path toward the window edge.
    """
    if env.params.kind is not ModelKind.MIXED_NE_FA1F:
        raise ParameterError("easy_site_geometry applies to the NE/FA1f model")
    easy = env.easy_mask()
    labeling = label_clusters(easy)
    span = labeling.spanning_label()
    if span < 0:
        raise GeometryUnavailable("no spanning easy cluster; is pi above the site threshold?")
    in_spanning = labeling.labels == span
    geom = _geometry_from_masks(in_spanning, env.origin, cell_side=1)
    if in_spanning[env.origin]:
        # degenerate: the origin is itself in the cluster; no loop needed
        return ClusterGeometry(c0=geom.c0, boundary=geom.boundary, t0=geom.t0,
                               diameter=geom.diameter, cell_side=1, enclosed=True,
                               path=(env.origin,), encircle_len=1)
    if not geom.enclosed:
        raise GeometryUnavailable("origin's complement component touches the window edge")
    # the island to encircle: 8-connected closure of non-cluster cells around C0
    # (a 4-connected loop of cluster sites around an 8-connected island exists
    # exactly when the island stays clear of the window border)
    w, h = in_spanning.shape
    island = set(geom.c0)
    stack = list(geom.c0)
    while stack:
        x, y = stack.pop()
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                nx, ny = x + dx, y + dy
                if 0 <= nx < w and 0 <= ny < h and not in_spanning[nx, ny] \
                        and (nx, ny) not in island:
                    island.add((nx, ny))
                    stack.append((nx, ny))
    if any(x in (0, w - 1) or y in (0, h - 1) for x, y in island):
        raise GeometryUnavailable("the origin's surrounding island reaches the "
                                  "window edge; enlarge the window")
    loop = _trace_contour(in_spanning, island)
    # extend from the loop to the nearest window-edge cluster site (BFS)
    dist = chemical_distance(labeling, loop)
    edge_cells = [(x, y) for (x, y) in zip(*np.where(in_spanning))
                  if x in (0, w - 1) or y in (0, h - 1)]
    if edge_cells:
        target = min(edge_cells, key=lambda c: (dist[c], c))
        tail = []
        cur = target
        while dist[cur] > 0 and np.isfinite(dist[cur]):
            tail.append(cur)
            x, y = cur
            cur = min((n for n in ((x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1))
                       if 0 <= n[0] < w and 0 <= n[1] < h and dist[n] == dist[cur] - 1))
        tail.reverse()
        # rotate the loop so it ends adjacent to the tail's attachment point
        if tail:
            attach = cur
            k = loop.index(attach)
            loop = loop[k + 1:] + loop[:k + 1]
        path = tuple(loop + tail)
    else:
        path = tuple(loop)
    return ClusterGeometry(c0=geom.c0, boundary=geom.boundary, t0=geom.t0,
                           diameter=geom.diameter, cell_side=1, enclosed=True,
                           path=path, encircle_len=len(loop))


def oriented_occupied_path_exists(env: Environment, config: np.ndarray) -> bool:
    """Window proxy for an infinite up-right path of occupied difficult sites:
    monotone (+e1/+e2) path of such sites from the bottom or left edge to the
    top or right edge."""
    if env.params.kind is not ModelKind.MIXED_NE_FA1F:
        raise ParameterError("oriented paths apply to the NE/FA1f model")
    ok = (env.kinds == DIFFICULT) & (config == 1)
    w, h = ok.shape
    reach = np.zeros((w, h), dtype=bool)
    for x in range(w):
        for y in range(h):
            if ok[x, y]:
                from_start = x == 0 or y == 0
                from_west = x > 0 and reach[x - 1, y]
                from_south = y > 0 and reach[x, y - 1]
                reach[x, y] = from_start or from_west or from_south
    return bool(reach[-1, :].any() or reach[:, -1].any())
