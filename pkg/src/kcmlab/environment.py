"""Quenched random environments: per-site constraint kinds on a finite window.

A site is *easy* (kind 1: threshold-1 / FA1f rule) with probability pi and
*difficult* (kind 2: threshold-2 / North-East rule) otherwise, i.i.d. over the
window. The window is a finite stand-in for the infinite lattice: the origin
sits at its center, coordinates are (x, y) with x increasing east and y
increasing north, and ``kinds[x, y]`` stores the label.

The label field is drawn from a counter-based generator (Philox keyed by the
seed) in one C-order call, so site (x, y) always consumes draw number
``x * height + y`` regardless of traversal order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum

import numpy as np

EASY = 1
DIFFICULT = 2

# Site / oriented-site percolation thresholds on the square lattice
# (external numerical constants from the percolation literature).
P_SITE = 0.592746
P_ORIENTED = 0.7055

ENV_MAGIC = b"KCME"
ENV_VERSION = 1
_HEADER = struct.Struct("<4sHBBIIdQ")  # magic, version, kind, pad, width, height, pi, seed
assert _HEADER.size == 32


class ParameterError(ValueError):
    pass


class FormatError(ValueError):
    pass


class ModelKind(str, Enum):
    """Which pair of constraints the difficult/easy labels select."""

    MIXED_FA = "fa12"        # easy: FA1f (threshold 1), difficult: FA2f (threshold 2)
    MIXED_NE_FA1F = "ne-fa1f"  # easy: FA1f, difficult: North-East


@dataclass(frozen=True)
class EnvParams:
    pi: float
    width: int
    height: int
    kind: ModelKind = ModelKind.MIXED_FA
    seed: int = 0

    def __post_init__(self):
        # pi = 1 is the degenerate all-easy environment; pi = 0 is rejected
        if not (0.0 < self.pi <= 1.0):
            raise ParameterError(f"pi must be in (0,1], got {self.pi}")
        if self.width < 1 or self.height < 1:
            raise ParameterError(f"window must be at least 1x1, got {self.width}x{self.height}")
        if not (0 <= int(self.seed) < 2 ** 64):
            raise ParameterError("seed must fit in 64 unsigned bits")


@dataclass(frozen=True)
class Environment:
    """Immutable quenched disorder: params + per-site kind labels.

    ``kinds`` has shape (width, height), dtype uint8, values EASY/DIFFICULT.
    ``origin`` is the window center, the proxy for 0 of the infinite lattice.
    """

    params: EnvParams
    kinds: np.ndarray
    origin: tuple[int, int]

    def __post_init__(self):
        self.kinds.setflags(write=False)

    @property
    def width(self) -> int:
        return self.params.width

    @property
    def height(self) -> int:
        return self.params.height

    @property
    def shape(self) -> tuple[int, int]:
        return (self.params.width, self.params.height)

    def easy_mask(self) -> np.ndarray:
        return self.kinds == EASY


def sample_environment(params: EnvParams) -> Environment:
    """Draw the i.i.d. label field: easy with probability pi, else difficult."""
    rng = np.random.Generator(np.random.Philox(key=params.seed))
    u = rng.random((params.width, params.height))
    kinds = np.where(u < params.pi, EASY, DIFFICULT).astype(np.uint8)
    origin = (params.width // 2, params.height // 2)
    return Environment(params=params, kinds=kinds, origin=origin)


def _check_square(env: Environment, corner: tuple[int, int], L: int) -> None:
    x0, y0 = corner
    if L < 1:
        raise ParameterError(f"square side must be >= 1, got {L}")
    if x0 < 0 or y0 < 0 or x0 + L > env.width or y0 + L > env.height:
        raise IndexError(f"square {corner}+[{L}]^2 does not fit in {env.width}x{env.height} window")


def is_good_square(env: Environment, corner: tuple[int, int], L: int) -> bool:
    """True iff every row and every column of the LxL square has an easy site."""
    _check_square(env, corner, L)
    x0, y0 = corner
    easy = env.kinds[x0:x0 + L, y0:y0 + L] == EASY
    rows_ok = easy.any(axis=0).all()   # each row y: some x easy
    cols_ok = easy.any(axis=1).all()   # each column x: some y easy
    return bool(rows_ok and cols_ok)


def is_excellent_square(env: Environment, corner: tuple[int, int], L: int) -> bool:
    """Growth-step condition: for each 2 <= i <= L, the column prefix
    {i} x [i-1] and the row prefix [i-1] x {i} (square-local, 1-based)
    each contain an easy site. Vacuously true for L = 1."""
    _check_square(env, corner, L)
    x0, y0 = corner
    easy = env.kinds[x0:x0 + L, y0:y0 + L] == EASY
    for i in range(2, L + 1):
        if not easy[i - 1, :i - 1].any():
            return False
        if not easy[:i - 1, i - 1].any():
            return False
    return True


def _good_batch(pi: float, L: int, trials: int, rng: np.random.Generator) -> np.ndarray:
    u = rng.random((trials, L, L))
    easy = u < pi
    rows_ok = easy.any(axis=1).all(axis=1)
    cols_ok = easy.any(axis=2).all(axis=1)
    return rows_ok & cols_ok


def estimate_good_probability(pi: float, L: int, trials: int, seed: int = 0) -> tuple[float, float]:
    """Monte Carlo estimate of P(an LxL square is good) with its standard error."""
    if trials < 1:
        raise ParameterError("trials must be >= 1")
    if not (0.0 < pi <= 1.0):
        raise ParameterError(f"pi must be in (0,1], got {pi}")
    if pi == 1.0:
        return 1.0, 0.0
    rng = np.random.Generator(np.random.Philox(key=seed))
    hits = int(_good_batch(pi, L, trials, rng).sum())
    p = hits / trials
    se = float(np.sqrt(p * (1.0 - p) / trials))
    return p, se


def good_probability_lower_bound(pi: float, L: int) -> float:
    """Union-bound guarantee 1 - 2L exp(-pi L); may be negative (vacuous)."""
    return 1.0 - 2.0 * L * float(np.exp(-pi * L))


class SearchError(RuntimeError):
    pass


def min_good_L(pi: float, margin: float = 0.01, precision: int = 20000,
               seed: int = 0, L_cap: int = 64) -> int:
    """Smallest square side whose estimated good-probability exceeds P_SITE + margin.

    Scans L = 1, 2, ... with `precision` Monte Carlo trials per L; deterministic
    for a fixed (seed, precision). Raises SearchError when L_cap is reached.
    """
    if not (0.0 < pi < 1.0):
        raise ParameterError(f"pi must be in (0,1), got {pi}")
    target = P_SITE + margin
    for L in range(1, L_cap + 1):
        if pi > target and L == 1:
            return 1
        est, _ = estimate_good_probability(pi, L, precision, seed=seed + L)
        if est > target:
            return L
    raise SearchError(f"no L <= {L_cap} with estimated good probability > {target}")


def save_environment(env: Environment, path) -> None:
    """Binary format: 32-byte header then row-major (C-order) label bytes."""
    kind_code = 0 if env.params.kind is ModelKind.MIXED_FA else 1
    header = _HEADER.pack(ENV_MAGIC, ENV_VERSION, kind_code, 0,
                          env.params.width, env.params.height,
                          env.params.pi, env.params.seed)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(env.kinds.tobytes(order="C"))


def load_environment(path) -> Environment:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise FormatError("file shorter than header")
    magic, version, kind_code, _, width, height, pi, seed = _HEADER.unpack(raw[:_HEADER.size])
    if magic != ENV_MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != ENV_VERSION:
        raise FormatError(f"unsupported version {version}")
    body = raw[_HEADER.size:]
    if len(body) != width * height:
        raise FormatError(f"expected {width * height} label bytes, found {len(body)}")
    kinds = np.frombuffer(body, dtype=np.uint8).reshape(width, height).copy()
    if not np.isin(kinds, (EASY, DIFFICULT)).all():
        raise FormatError("label bytes outside {easy, difficult}")
    kind = ModelKind.MIXED_FA if kind_code == 0 else ModelKind.MIXED_NE_FA1F
    params = EnvParams(pi=pi, width=width, height=height, kind=kind, seed=seed)
    return Environment(params=params, kinds=kinds, origin=(width // 2, height // 2))


def regeneration_matches(env: Environment) -> bool:
    """Whether the stored label field equals a fresh draw from its params."""
    return bool(np.array_equal(env.kinds, sample_environment(env.params).kinds))
