"""Exact finite-state analysis: generator assembly, Poisson-problem hitting
times, Dirichlet forms, spectral gaps, the variational time scale, survival
probabilities, and the restricted-dynamics / block-dynamics checks.

States of an n-site region are integers 0..2^n-1; bit i holds the occupation
of ``sites[i]`` (1 = occupied). The stationary weight of a state is
q^{#empty} (1-q)^{#occupied}. Sites outside the region are frozen at the
boundary convention ("occupied" realizes the restricted dynamics).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components
from scipy.stats import poisson

from .bootstrap import boundary_code, model_code
from .environment import Environment, ParameterError
from ._kernels import B_EMPTY, B_OCCUPIED, MODEL_NE

STATE_CAP = 20
DENSE_STATE_LIMIT = 1 << 12


class CapacityError(ValueError):
    pass


class NumericalError(RuntimeError):
    pass


class PrecisionError(RuntimeError):
    pass


@dataclass(frozen=True)
class StateSpace:
    sites: tuple
    q: float
    mu: np.ndarray

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    @property
    def n_states(self) -> int:
        return 1 << len(self.sites)

    def index_of(self, occupations) -> int:
        s = 0
        for i, occ in enumerate(occupations):
            if occ:
                s |= 1 << i
        return s

    def occupations(self, state: int) -> np.ndarray:
        return np.array([(state >> i) & 1 for i in range(self.n_sites)], dtype=np.uint8)


@dataclass(frozen=True)
class GeneratorMatrix:
    space: StateSpace
    matrix: sp.csr_matrix          # the generator; rows sum to zero
    constraints: tuple             # per site, bool array over states
    boundary: str

    @property
    def n_states(self) -> int:
        return self.space.n_states


def _as_sites(env: Environment, region) -> list:
    if isinstance(region, tuple) and len(region) == 4 and all(isinstance(v, int) for v in region):
        x0, y0, w, h = region
        sites = [(x, y) for x in range(x0, x0 + w) for y in range(y0, y0 + h)]
    else:
        sites = [tuple(s) for s in region]
    for (x, y) in sites:
        if not (0 <= x < env.width and 0 <= y < env.height):
            raise ParameterError(f"region site {(x, y)} outside the window")
    if len(set(sites)) != len(sites):
        raise ParameterError("region sites must be distinct")
    return sites


def build_generator(env: Environment, region, q: float, boundary: str = "occupied",
                    cap: int = STATE_CAP) -> GeneratorMatrix:
    """Assemble the sparse generator of the dynamics on `region` with all
    out-of-region sites frozen at the boundary convention."""
    if not (0.0 < q < 1.0):
        raise ParameterError(f"q must be in (0,1), got {q}")
    sites = _as_sites(env, region)
    n = len(sites)
    if n > cap:
        raise CapacityError(f"{n} sites exceeds the {cap}-site cap")
    index = {s: i for i, s in enumerate(sites)}
    bnd = boundary_code(boundary)
    mdl = model_code(env)
    out_empty = bnd == B_EMPTY  # "free" drops missing neighbors: same count as occupied

    N = 1 << n
    states = np.arange(N, dtype=np.int64)
    bits = [((states >> i) & 1).astype(np.int8) for i in range(n)]

    constraints = []
    rows, cols, data = [], [], []
    for i, (x, y) in enumerate(sites):
        neighbors = [(x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)]
        if mdl == MODEL_NE and env.kinds[x, y] == 2:
            # out-of-region neighbors are frozen by the convention; "free"
            # treats a missing north/east requirement as vacuously satisfied
            east, north = (x + 1, y), (x, y + 1)
            e_ok = (bits[index[east]] == 0) if east in index \
                else np.full(N, bnd != B_OCCUPIED)
            n_ok = (bits[index[north]] == 0) if north in index \
                else np.full(N, bnd != B_OCCUPIED)
            c = e_ok & n_ok
        else:
            count = np.zeros(N, dtype=np.int8)
            fixed = 0
            for nb in neighbors:
                if nb in index:
                    count += (bits[index[nb]] == 0)
                elif out_empty:
                    fixed += 1  # occupied / free out-of-region adds no empties
            c = (count + fixed) >= env.kinds[x, y]
        constraints.append(c)
        idx = states[c]
        rate = np.where((idx >> i) & 1 == 1, q, 1.0 - q)
        rows.append(idx)
        cols.append(idx ^ (1 << i))
        data.append(rate)

    if rows:
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        data = np.concatenate(data)
    gen = sp.coo_matrix((data, (rows, cols)), shape=(N, N)).tocsr()
    gen = gen - sp.diags(np.asarray(gen.sum(axis=1)).ravel())

    occupied = np.bitwise_count(states.astype(np.uint64)).astype(np.float64)
    mu = np.exp(occupied * np.log1p(-q) + (n - occupied) * np.log(q))
    space = StateSpace(sites=tuple(sites), q=q, mu=mu)
    return GeneratorMatrix(space=space, matrix=gen, constraints=tuple(constraints),
                           boundary=boundary)


def site_empty_mask(gen: GeneratorMatrix, site) -> np.ndarray:
    i = gen.space.sites.index(tuple(site))
    states = np.arange(gen.n_states, dtype=np.int64)
    return ((states >> i) & 1) == 0


def origin_empty_mask(gen: GeneratorMatrix, env: Environment) -> np.ndarray:
    return site_empty_mask(gen, env.origin)


def _support_components(gen: GeneratorMatrix):
    off = gen.matrix.copy().tolil()
    off.setdiag(0)
    adj = (off.tocsr() != 0)
    return connected_components(adj, directed=False)


@dataclass
class HittingSolution:
    tau: np.ndarray
    mean: float
    dirichlet: float
    finite: bool
    unreachable: np.ndarray
    residual: float


def solve_poisson(gen: GeneratorMatrix, A: np.ndarray,
                  residual_tol: float = 1e-9) -> HittingSolution:
    """Expected hitting times of A from every state: the generator applied to
    tau equals -1 off A and tau vanishes on A. States whose communication
    class misses A get tau = +inf (reported, not an error)."""
    A = np.asarray(A, dtype=bool)
    if not A.any():
        raise ParameterError("target event A is empty")
    N = gen.n_states
    ncomp, labels = _support_components(gen)
    comp_has_A = np.zeros(ncomp, dtype=bool)
    np.logical_or.at(comp_has_A, labels, A)
    finite_mask = comp_has_A[labels]
    unreachable = np.flatnonzero(~finite_mask)

    tau = np.zeros(N)
    tau[unreachable] = np.inf
    solve_idx = np.flatnonzero(finite_mask & ~A)
    residual = 0.0
    if len(solve_idx):
        block = gen.matrix[np.ix_(solve_idx, solve_idx)].tocsc()
        b = -np.ones(len(solve_idx))
        if len(solve_idx) <= DENSE_STATE_LIMIT:
            sol = scipy.linalg.solve(block.toarray(), b)
        else:
            sol = spla.spsolve(block, b)
        residual = float(np.abs(block @ sol - b).max())
        if residual > residual_tol:
            delta = (scipy.linalg.solve(block.toarray(), b - block @ sol)
                     if len(solve_idx) <= DENSE_STATE_LIMIT
                     else spla.spsolve(block, b - block @ sol))
            sol = sol + delta
            residual = float(np.abs(block @ sol - b).max())
            if residual > residual_tol:
                raise NumericalError(f"Poisson solve residual {residual:.2e} above {residual_tol}")
        tau[solve_idx] = sol
    finite = len(unreachable) == 0
    mean = float(gen.space.mu @ tau) if finite else np.inf
    dire = dirichlet_form(gen, tau) if finite else np.inf
    return HittingSolution(tau=tau, mean=mean, dirichlet=dire, finite=finite,
                           unreachable=unreachable, residual=residual)


def dirichlet_form(gen: GeneratorMatrix, f: np.ndarray) -> float:
    """mu( sum_x c_x Var_x f ): the quadratic form of the generator."""
    f = np.asarray(f, dtype=float)
    if f.shape != (gen.n_states,):
        raise ParameterError("f must be defined on every state")
    q = gen.space.q
    mu = gen.space.mu
    total = 0.0
    for i, c in enumerate(gen.constraints):
        partner = np.arange(gen.n_states, dtype=np.int64) ^ (1 << i)
        df = f - f[partner]
        total += float(np.sum(mu * c * (q * (1.0 - q)) * df * df))
    return total


@dataclass
class SpectralResult:
    gap: float
    ergodic: bool
    n_components: int
    gap_lower_bound: float
    method: str


def _symmetrized(gen: GeneratorMatrix) -> sp.csr_matrix:
    sq = np.sqrt(gen.space.mu)
    A = -(sp.diags(sq) @ gen.matrix @ sp.diags(1.0 / sq))
    return ((A + A.T) * 0.5).tocsr()


def _lobpcg_smallest(A: sp.csr_matrix, deflate: np.ndarray | None, seed: int = 7,
                     maxiter: int = 220, inner: int = 60):
    """Smallest eigenvalue of a PSD matrix, optionally with one exact null
    vector removed via constraint; inner-CG preconditioning. Returns
    (rayleigh, residual_norm)."""
    N = A.shape[0]
    v = None
    if deflate is not None:
        v = deflate / np.linalg.norm(deflate)

    def prec(X):
        X = np.asarray(X)
        one_d = X.ndim == 1
        Xm = X.reshape(N, -1)
        out = np.empty_like(Xm)
        for j in range(Xm.shape[1]):
            b = Xm[:, j]
            if v is not None:
                b = b - v * (v @ b)
            sol, _ = spla.cg(A, b, rtol=1e-12, maxiter=inner)
            if v is not None:
                sol = sol - v * (v @ sol)
            out[:, j] = sol
        return out[:, 0] if one_d else out

    M = spla.LinearOperator((N, N), matvec=prec, matmat=prec)
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((N, 2))
    Y = v.reshape(-1, 1) if v is not None else None
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        w, V = spla.lobpcg(A, X, M=M, Y=Y, tol=1e-9, maxiter=maxiter, largest=False)
    x = V[:, int(np.argmin(w))]
    if v is not None:
        x = x - v * (v @ x)
    x = x / np.linalg.norm(x)
    lam = float(x @ (A @ x))
    res = float(np.linalg.norm(A @ x - lam * x))
    return lam, res


def spectral_gap(gen: GeneratorMatrix, seed: int = 7) -> SpectralResult:
    """Smallest nonzero eigenvalue of the negated generator in the
    mu-weighted inner product; gap 0 with ergodic=False when the positive-rate
    graph is disconnected (all states carry positive weight)."""
    ncomp, _ = _support_components(gen)
    if ncomp > 1:
        return SpectralResult(gap=0.0, ergodic=False, n_components=ncomp,
                              gap_lower_bound=0.0, method="reducible")
    A = _symmetrized(gen)
    if gen.n_states <= DENSE_STATE_LIMIT:
        w = scipy.linalg.eigvalsh(A.toarray())
        gap = float(w[1])
        return SpectralResult(gap=gap, ergodic=True, n_components=1,
                              gap_lower_bound=gap - 1e-10, method="dense")
    lam, res = _lobpcg_smallest(A, deflate=np.sqrt(gen.space.mu), seed=seed)
    return SpectralResult(gap=lam, ergodic=True, n_components=1,
                          gap_lower_bound=lam - res, method="lobpcg")


def taubar(gen: GeneratorMatrix, A: np.ndarray) -> float:
    """Variational time scale: the largest mu(f^2)/D(f) over functions
    vanishing on A, i.e. the inverse principal Dirichlet eigenvalue of the
    complement block. +inf when some state cannot reach A."""
    A = np.asarray(A, dtype=bool)
    if not A.any():
        raise ParameterError("target event A is empty")
    ncomp, labels = _support_components(gen)
    comp_has_A = np.zeros(ncomp, dtype=bool)
    np.logical_or.at(comp_has_A, labels, A)
    if not comp_has_A.all():
        return np.inf
    idx = np.flatnonzero(~A)
    if len(idx) == 0:
        return 0.0
    S = _symmetrized(gen)
    block = S[np.ix_(idx, idx)]
    if len(idx) <= DENSE_STATE_LIMIT:
        w = scipy.linalg.eigvalsh(block.toarray())
        lam = float(w[0])
    else:
        lam, _ = _lobpcg_smallest(block.tocsr(), deflate=None)
    if lam <= 0:
        return np.inf
    return 1.0 / lam


def survival_probability(gen: GeneratorMatrix, A: np.ndarray, ts,
                         tol: float = 1e-8, k_cap: int = 2_000_000) -> np.ndarray:
    """P_mu[tau_A > t] on a grid of times, by uniformized series on the
    complement block (states already in A at t=0 count as hit). Absolute
    truncation error below `tol`."""
    A = np.asarray(A, dtype=bool)
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    if (ts < 0).any():
        raise ParameterError("times must be nonnegative")
    idx = np.flatnonzero(~A)
    if len(idx) == 0:
        return np.zeros_like(ts)
    Q = gen.matrix[np.ix_(idx, idx)].tocsr()
    v0 = gen.space.mu[idx]
    lam = float(np.max(-Q.diagonal())) if Q.nnz else 0.0
    if lam == 0.0:
        return np.full_like(ts, v0.sum())
    P = (sp.identity(len(idx), format="csr") + Q * (1.0 / lam)).tocsr()
    t_big = float(ts.max())
    K = int(poisson.isf(tol / 2.0, lam * t_big)) + 1 if t_big > 0 else 0
    if K > k_cap:
        achieved = float(poisson.sf(k_cap, lam * t_big))
        raise PrecisionError(f"needs {K} uniformization terms; error {achieved:.2e} at cap")
    s = np.empty(K + 1)
    v = v0.copy()
    s[0] = v.sum()
    for k in range(1, K + 1):
        v = v @ P
        s[k] = v.sum()
    out = np.empty_like(ts)
    ks = np.arange(K + 1)
    for j, t in enumerate(ts):
        out[j] = float(np.sum(poisson.pmf(ks, lam * t) * s))
    return out


def functional_T(gen: GeneratorMatrix, f: np.ndarray, A: np.ndarray) -> float:
    """2 mu(f) - D(f), the variational objective maximized by the expected
    hitting time over functions vanishing on A."""
    A = np.asarray(A, dtype=bool)
    f = np.asarray(f, dtype=float)
    if np.abs(f[A]).max(initial=0.0) != 0.0:
        raise ParameterError("f must vanish on A")
    return 2.0 * float(gen.space.mu @ f) - dirichlet_form(gen, f)


def random_va_functions(gen: GeneratorMatrix, A: np.ndarray, samples: int,
                        seed: int = 0) -> np.ndarray:
    """i.i.d. standard-normal entries off A, zero on A; one row per sample."""
    A = np.asarray(A, dtype=bool)
    rng = np.random.default_rng(seed)
    F = rng.standard_normal((samples, gen.n_states))
    F[:, A] = 0.0
    return F


def verify_restricted_inequalities(env: Environment, region, H, A: np.ndarray,
                                   q: float, samples: int = 100, seed: int = 0,
                                   boundary: str = "occupied") -> dict:
    """Check D(f) >= mu(A) * gamma_H * (mu f)^2 and
    D(f) >= mu(A)/(1+mu(A)) * gamma_H * mu(f^2) for random f vanishing on A,
    where gamma_H is the gap of the H-restricted (occupied-boundary) dynamics
    and A depends only on the occupations of H."""
    gen = build_generator(env, region, q, boundary)
    sites = gen.space.sites
    H_sites = _as_sites(env, H)
    if not set(H_sites) <= set(sites):
        raise ParameterError("H must be a subset of the region")
    A = np.asarray(A, dtype=bool)
    states = np.arange(gen.n_states, dtype=np.int64)
    for i, s in enumerate(sites):
        if s not in H_sites:
            if not np.array_equal(A, A[states ^ (1 << i)]):
                raise ParameterError(f"A depends on non-H site {s}")
    gen_H = build_generator(env, H_sites, q, "occupied")
    gamma_H = spectral_gap(gen_H).gap
    mu = gen.space.mu
    mu_A = float(mu[A].sum())
    worst1 = np.inf
    worst2 = np.inf
    ok = True
    tol = 1e-12
    for f in random_va_functions(gen, A, samples, seed):
        D = dirichlet_form(gen, f)
        bound1 = mu_A * gamma_H * float(mu @ f) ** 2
        bound2 = mu_A / (1.0 + mu_A) * gamma_H * float(mu @ (f * f))
        worst1 = min(worst1, D - bound1)
        worst2 = min(worst2, D - bound2)
        if D < bound1 - tol or D < bound2 - tol:
            ok = False
    return {"ok": ok, "gamma_H": gamma_H, "mu_A": mu_A,
            "worst_slack_mean_sq": worst1, "worst_slack_second_moment": worst2}


def _block_resample_matrix(n: int, block: list, q: float,
                           gate: np.ndarray | None = None) -> np.ndarray:
    """Dense generator of 'resample the block from its product measure',
    optionally gated by a per-state indicator."""
    N = 1 << n
    mask = 0
    for i in block:
        mask |= 1 << i
    states = np.arange(N, dtype=np.int64)
    A = np.zeros((N, N))
    assignments = [a for a in range(N) if (a & ~mask) == 0]
    for a in assignments:
        occ = bin(a).count("1")
        weight = (1.0 - q) ** occ * q ** (len(block) - occ)
        targets = (states & ~mask) | a
        A[states, targets] += weight
    A[states, states] -= 1.0
    if gate is not None:
        A *= gate[:, None]
    return A


def verify_block_gap(sites, gated_block, gate_sites, q: float,
                     rtol: float = 1e-8) -> dict:
    """Exact gap of the two-block auxiliary dynamics (free block resampled
    from mu; the other block gated on `gate_sites` all empty) against the
    closed form 1 - sqrt(1 - mu(gate))."""
    sites = [tuple(s) if isinstance(s, (list, tuple)) else s for s in sites]
    n = len(sites)
    if n > 12:
        raise CapacityError("block-gap verification is dense; use <= 12 sites")
    index = {s: i for i, s in enumerate(sites)}
    gated = [index[tuple(s) if isinstance(s, (list, tuple)) else s] for s in gated_block]
    gates = [index[tuple(s) if isinstance(s, (list, tuple)) else s] for s in gate_sites]
    free = [i for i in range(n) if i not in gated]
    if not set(gates) <= set(free):
        raise ParameterError("gate sites must belong to the free block")
    N = 1 << n
    states = np.arange(N, dtype=np.int64)
    gate = np.ones(N)
    for i in gates:
        gate *= ((states >> i) & 1) == 0
    Lb = _block_resample_matrix(n, free, q) + _block_resample_matrix(n, gated, q, gate)
    occupied = np.bitwise_count(states.astype(np.uint64)).astype(np.float64)
    mu = np.exp(occupied * np.log1p(-q) + (n - occupied) * np.log(q))
    sq = np.sqrt(mu)
    S = -(sq[:, None] * Lb / sq[None, :])
    S = (S + S.T) * 0.5
    w = scipy.linalg.eigvalsh(S)
    gap = float(w[1])
    p = float(q ** len(gates))
    closed = 1.0 - np.sqrt(1.0 - p)
    ok = abs(gap - closed) <= rtol * max(closed, 1e-300)
    return {"ok": ok, "gap": gap, "closed_form": closed, "gate_probability": p}
