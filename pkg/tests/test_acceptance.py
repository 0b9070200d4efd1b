"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines; the whole file is part of the default suite.
"""

import time

import numpy as np

from kcmlab.bootstrap import bp_closure, constraint, span_decomposition_check, subwindow_environment, verify_excellent_fill
from kcmlab.environment import (
    DIFFICULT,
    EASY,
    EnvParams,
    ModelKind,
    is_excellent_square,
    min_good_L,
    sample_environment,
)
from kcmlab.exact import (
    build_generator,
    functional_T,
    origin_empty_mask,
    random_va_functions,
    solve_poisson,
    spectral_gap,
    survival_probability,
    taubar,
)
from kcmlab.harness import SweepSpec, bp_scaling_sweep, kcm_scaling_sweep, ne_tail_experiment
from kcmlab.kcm import (
    SimParams,
    bad_event_B,
    build_flip_path,
    estimate_tau0,
    path_length_budget,
    sample_equilibrium,
)
from kcmlab.percolation import (
    GeometryUnavailable,
    PathTooShort,
    coarse_grain,
    good_box_path,
    label_clusters,
    oriented_occupied_path_exists,
)

from helpers import env_from_kinds


def _report(number, name, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    print(f"[acceptance {number:02d}] {status} {name} {detail}")
    assert ok, f"criterion {number} ({name}) failed: {detail}"


def _noisy_sizes():
    # window shapes up to 12 sites; a couple at the 12-site cap
    return [(3, 3), (2, 5), (4, 2), (3, 4), (2, 6), (5, 2), (3, 3), (2, 4),
            (4, 3), (2, 5), (3, 2), (2, 2), (3, 4), (2, 6), (4, 2), (3, 3),
            (2, 5), (5, 2), (3, 3), (2, 4)]


def test_criterion_01_exact_tool_identities():
    t0 = time.time()
    qs = [0.1, 0.3, 0.5]
    n_done = 0
    worst_rel = 0.0
    for trial, (w, h) in enumerate(_noisy_sizes()):
        kind = ModelKind.MIXED_FA if trial % 2 else ModelKind.MIXED_NE_FA1F
        env = sample_environment(EnvParams(pi=0.5, width=w, height=h, kind=kind,
                                           seed=100 + trial))
        q = qs[trial % 3]
        gen = build_generator(env, (0, 0, w, h), q, "empty")
        A = origin_empty_mask(gen, env)
        sol = solve_poisson(gen, A)
        assert sol.finite, (trial, "instance not ergodic; adjust boundary")
        rel = abs(sol.mean - sol.dirichlet) / sol.mean
        worst_rel = max(worst_rel, rel)
        assert rel <= 1e-9, (trial, rel)
        t_tau = functional_T(gen, sol.tau, A)
        assert abs(t_tau - sol.mean) <= 1e-9 * sol.mean
        F = random_va_functions(gen, A, 1000, seed=trial)
        for f in F:
            assert functional_T(gen, f, A) <= t_tau + 1e-9 * max(1.0, t_tau)
        tb = taubar(gen, A)
        assert tb >= sol.mean - 1e-12
        ts = np.linspace(0.0, 4.0 * tb, 20)
        sv = survival_probability(gen, A, ts)
        assert (sv <= np.exp(-ts / tb) + 1e-8).all()
        n_done += 1
    dt = time.time() - t0
    _report(1, "exact-tool identities", n_done >= 20 and dt < 60,
            f"({n_done} instances, worst identity rel err {worst_rel:.2e}, {dt:.1f}s)")


def test_criterion_02_monte_carlo_exact_agreement():
    t0 = time.time()
    instances = [
        dict(pi=0.6, w=3, h=3, kind=ModelKind.MIXED_FA, q=0.3, seed=17),
        dict(pi=0.5, w=3, h=4, kind=ModelKind.MIXED_FA, q=0.2, seed=5),
        dict(pi=0.7, w=2, h=6, kind=ModelKind.MIXED_NE_FA1F, q=0.3, seed=8),
        dict(pi=0.4, w=2, h=5, kind=ModelKind.MIXED_FA, q=0.4, seed=21),
        dict(pi=0.6, w=4, h=3, kind=ModelKind.MIXED_NE_FA1F, q=0.25, seed=33),
    ]
    zs = []
    for k, inst in enumerate(instances):
        env = sample_environment(EnvParams(pi=inst["pi"], width=inst["w"], height=inst["h"],
                                           kind=inst["kind"], seed=inst["seed"]))
        gen = build_generator(env, (0, 0, inst["w"], inst["h"]), inst["q"], "empty")
        sol = solve_poisson(gen, origin_empty_mask(gen, env))
        assert sol.finite
        params = SimParams(q=inst["q"], t_max=1e4, boundary="empty", seed=1000 + k)
        taus, censored, summary = estimate_tau0(env, params, 10000)
        assert summary["censor_fraction"] == 0.0
        z = abs(summary["mean"] - sol.mean) / summary["se"]
        zs.append(z)
        assert z <= 3.0, (k, summary["mean"], sol.mean, z)
    dt = time.time() - t0
    _report(2, "Monte-Carlo/exact agreement", dt < 300,
            f"(5 instances, |z| = {', '.join(f'{z:.2f}' for z in zs)}, {dt:.1f}s)")


def test_criterion_03_bp_scaling():
    t0 = time.time()
    spec = SweepSpec(qs=(0.002, 0.005, 0.01, 0.02, 0.05), width=2001, height=2001,
                     trials=200, pi=0.5, dynamics="bp", seed=7)
    fit, points, env = bp_scaling_sweep(spec)
    dt = time.time() - t0
    ok = abs(fit.slope - 0.5) <= 0.1 and not fit.excluded_qs and dt < 900
    _report(3, "BP emptying-time scaling",
            ok, f"(slope {fit.slope:.3f}, CI [{fit.ci_low:.3f},{fit.ci_high:.3f}], {dt:.0f}s)")


def test_criterion_04_kcm_random_exponent():
    t0 = time.time()
    width = height = 25
    surround = sample_environment(EnvParams(pi=0.5, width=width, height=height, seed=42))
    ox, oy = surround.origin
    kinds_easy = surround.kinds.copy()
    kinds_easy[ox - 6:ox + 7, oy - 6:oy + 7] = EASY
    kinds_hard = surround.kinds.copy()
    kinds_hard[ox - 6:ox + 7, oy - 6:oy + 7] = DIFFICULT
    env_easy = env_from_kinds(kinds_easy, seed=42)
    env_hard = env_from_kinds(kinds_hard, seed=42)
    spec = SweepSpec(qs=(0.1, 0.15, 0.2, 0.3), width=width, height=height,
                     trials=200, pi=0.5, dynamics="kcm", seed=9,
                     t_max=16000.0, t_max_budget=7e4)
    fits, points, _, _ = kcm_scaling_sweep(spec, envs=[env_easy, env_hard])
    fit_easy, fit_hard = fits
    gap = fit_hard.slope - fit_easy.slope
    ci_sum = fit_easy.ci_half_width + fit_hard.ci_half_width
    ok_sep = gap > ci_sum
    ok_low = fit_hard.slope >= 2.0 - fit_hard.ci_half_width
    dt = time.time() - t0
    _report(4, "KCM planted random exponent", ok_sep and ok_low and dt < 1800,
            f"(alpha_easy {fit_easy.slope:.2f}, alpha_hard {fit_hard.slope:.2f}, "
            f"CI sum {ci_sum:.2f}, {dt:.0f}s)")


def test_criterion_05_relaxation_divergence_mechanism():
    t0 = time.time()
    # (a) mixed model on a 4x4 all-difficult sub-box, occupied boundary:
    # reducible (the all-occupied state is frozen), so the gap is 0 and
    # matches the pure threshold-2 model on the same box
    kinds = np.full((4, 4), DIFFICULT)
    env_mixed = env_from_kinds(kinds, origin=(1, 1))
    gA = spectral_gap(build_generator(env_mixed, (0, 0, 4, 4), 0.3, "occupied"))
    env_pure = env_from_kinds(np.full((4, 4), DIFFICULT), origin=(1, 1))
    gB = spectral_gap(build_generator(env_pure, (0, 0, 4, 4), 0.3, "occupied"))
    ok_a = (not gA.ergodic) and gA.gap == 0.0 and gA.gap <= gB.gap
    # (b) NE/FA1f window with an occupied up-right difficult crossing: gap 0
    kinds = np.full((4, 4), EASY)
    cross = [(0, 0), (0, 1), (1, 1), (2, 1), (2, 2), (3, 2), (3, 3)]
    for c in cross:
        kinds[c] = DIFFICULT
    env_ne = env_from_kinds(kinds, kind=ModelKind.MIXED_NE_FA1F, origin=(1, 1))
    cfg = np.zeros((4, 4), dtype=np.uint8)
    for c in cross:
        cfg[c] = 1
    assert oriented_occupied_path_exists(env_ne, cfg)
    gC = spectral_gap(build_generator(env_ne, (0, 0, 4, 4), 0.3, "occupied"))
    ok_b = gC.gap == 0.0 and not gC.ergodic and gC.n_components > 1
    dt = time.time() - t0
    _report(5, "relaxation-time divergence mechanism", ok_a and ok_b,
            f"(mixed gap {gA.gap}, FA2f gap {gB.gap}, NE-crossing components "
            f"{gC.n_components}, {dt:.1f}s)")


def test_criterion_06_ne_gap_bound():
    t0 = time.time()
    results = []
    ok = True
    for L in (1, 2, 3, 4):
        kinds = np.full((L, L), DIFFICULT)
        env = env_from_kinds(kinds, kind=ModelKind.MIXED_NE_FA1F, origin=(0, 0))
        for q in (0.1, 0.3, 0.5):
            gen = build_generator(env, (0, 0, L, L), q, "empty")
            res = spectral_gap(gen)
            bound = q ** (3 * L)
            certified = max(res.gap_lower_bound, 0.0)
            good = res.ergodic and certified >= bound
            ok &= good
            results.append((L, q, res.gap, bound, good))
    dt = time.time() - t0
    worst = min(r[2] / r[3] for r in results)
    _report(6, "NE gap lower bound", ok and dt < 60,
            f"(12 instances, min gap/bound ratio {worst:.1e}, {dt:.0f}s)")


def test_criterion_07_ne_fa1f_tails():
    t0 = time.time()
    spec = SweepSpec(qs=(0.2,), width=21, height=21, trials=500, pi=0.7,
                     kind=ModelKind.MIXED_NE_FA1F, dynamics="kcm",
                     t_max=5e4, seed=77)
    per_omega, across = ne_tail_experiment(spec, n_omega=100)
    usable = [e for e in per_omega if e["usable"]]
    passes = sum(e["ks_pvalue"] > 0.01 for e in usable)
    frac_pass = passes / len(usable)
    heavy_ok = (np.isfinite(across["loglog_tail_slope"])
                and across["loglog_tail_slope"] < 0
                and across["frac_above_10x_median"]
                >= 5 * across["exponential_reference"])
    dt = time.time() - t0
    ok = frac_pass >= 0.9 and heavy_ok and len(usable) >= 95 and dt < 1800
    _report(7, "NE/FA1f exponential tails", ok,
            f"(KS pass {passes}/{len(usable)}, across-omega tail slope "
            f"{across['loglog_tail_slope']:.2f}, heavy frac "
            f"{across['frac_above_10x_median']:.3f} vs exp "
            f"{across['exponential_reference']:.1e}, {dt:.0f}s)")


def _flip_path_instance(trial, rng):
    pi = float(rng.uniform(0.45, 0.75))
    L = int(min_good_L(pi, precision=1500, seed=trial))
    if L > 6:
        return None
    nb = int(rng.integers(6, 12))
    env = sample_environment(EnvParams(pi=pi, width=L * nb, height=L * nb,
                                       seed=500000 + trial))
    grid = coarse_grain(env, L)
    lab = label_clusters(grid.good)
    if lab.labels[grid.origin_box] < 0:
        return None
    q = float(rng.uniform(0.2, 0.45))
    l, capped = path_length_budget(q, L, available=3 * nb)
    try:
        path = good_box_path(grid, lab, l)
    except PathTooShort as e:
        if e.achieved < 2:
            return None
        path = good_box_path(grid, lab, e.achieved)
        capped = True
    except GeometryUnavailable:
        return None
    cfg = sample_equilibrium(q, env.width, env.height, seed=900000 + trial)
    if cfg[env.origin] == 0 or bad_event_B(env, cfg, grid, path):
        return None
    return env, grid, path, cfg, capped


def test_criterion_08_flip_path_soundness():
    t0 = time.time()
    rng = np.random.default_rng(123)
    done = 0
    trial = 0
    worst_ratio = 0.0
    while done < 1000:
        trial += 1
        assert trial < 60000, "conditioned sampling starved"
        inst = _flip_path_instance(trial, rng)
        if inst is None:
            continue
        env, grid, path, cfg, capped = inst
        fp = build_flip_path(env, grid, path, cfg, capped=capped)
        replay = cfg.copy()
        for (x, y) in fp.sites:
            assert constraint(env, replay, (x, y)) == 1, "illegal flip on replay"
            replay[x, y] ^= 1
        assert replay[env.origin] == 0, "terminal configuration not in the target event"
        assert fp.within_budget, f"flip count {fp.n} above 4 L^2 l = {fp.flip_budget}"
        assert fp.max_diff <= 3 * grid.L
        worst_ratio = max(worst_ratio, fp.budget_ratio)
        done += 1
    dt = time.time() - t0
    _report(8, "flip-path soundness", done >= 1000 and dt < 120,
            f"(1000 instances, worst N/(L^2 l) = {worst_ratio:.2f} of 4, {dt:.0f}s)")


def test_criterion_09_bp_combinatorics():
    t0 = time.time()
    rng = np.random.default_rng(321)
    # excellent squares fill within L^2 steps
    filled = 0
    while filled < 1000:
        L = int(rng.integers(2, 7))
        env = sample_environment(EnvParams(pi=float(rng.uniform(0.35, 0.9)),
                                           width=L, height=L, seed=int(rng.integers(1 << 30))))
        if not is_excellent_square(env, (0, 0), L):
            continue
        ok, steps = verify_excellent_fill(env, (0, 0), L)
        assert ok and steps <= L * L
        filled += 1
    # span decomposition on all-difficult 8x8
    env8 = env_from_kinds(np.full((8, 8), DIFFICULT))
    for t in range(1000):
        q = float(rng.uniform(0.05, 0.3))
        cfg = (rng.random((8, 8)) >= q).astype(np.uint8)
        assert span_decomposition_check(env8, cfg, (0, 0, 8, 8))
    # span locality under interior/exterior legal flips
    rect = (2, 2, 5, 5)
    locality = 0
    t = 0
    while locality < 1000:
        t += 1
        env = sample_environment(EnvParams(pi=float(rng.uniform(0.3, 0.8)),
                                           width=10, height=10, seed=777000 + t))
        cfg = (rng.random((10, 10)) >= 0.25).astype(np.uint8)
        span0 = bp_closure(env, cfg, rect)
        x, y = int(rng.integers(0, 10)), int(rng.integers(0, 10))
        if not (2 <= x < 7 and 2 <= y < 7):
            cfg2 = cfg.copy()
            cfg2[x, y] ^= 1
            assert np.array_equal(bp_closure(env, cfg2, rect), span0)
            locality += 1
        xi, yi = int(rng.integers(3, 6)), int(rng.integers(3, 6))
        sub = subwindow_environment(env, rect)
        if constraint(sub, cfg[2:7, 2:7], (xi - 2, yi - 2), "occupied"):
            cfg3 = cfg.copy()
            cfg3[xi, yi] ^= 1
            assert np.array_equal(bp_closure(env, cfg3, rect), span0)
            locality += 1
    dt = time.time() - t0
    _report(9, "BP combinatorics", dt < 120,
            f"(1000 fills, 1000 decompositions, {locality} locality flips, {dt:.0f}s)")


def test_criterion_10_bad_event_bound():
    t0 = time.time()
    pi, q = 0.5, 0.3
    L = min_good_L(pi, precision=20000, seed=1)
    nb = 12
    env = None
    for seed in range(50):
        cand = sample_environment(EnvParams(pi=pi, width=L * nb, height=L * nb, seed=seed))
        grid = coarse_grain(cand, L)
        lab = label_clusters(grid.good)
        if lab.labels[grid.origin_box] < 0:
            continue
        l_ideal, _ = path_length_budget(q, L, available=2 * nb)
        try:
            path = good_box_path(grid, lab, l_ideal)
            env = cand
            break
        except (PathTooShort, GeometryUnavailable) as e:
            if isinstance(e, PathTooShort) and e.achieved >= 8:
                path = good_box_path(grid, lab, e.achieved)
                env = cand
                break
    assert env is not None
    l = len(path) - 1
    n = 10000
    # vectorized equilibrium sampling + essentially-empty check per path box
    rng = np.random.Generator(np.random.Philox(key=4242))
    configs = (rng.random((n, env.width, env.height)) >= q)
    occupied = configs  # True = occupied
    bad = np.ones(n, dtype=bool)
    for (bi, bj) in path:
        block = occupied[:, bi * L:(bi + 1) * L, bj * L:(bj + 1) * L]
        ess = (~block).all(axis=1).any(axis=1) | (~block).all(axis=2).any(axis=1)
        if grid.good[bi, bj]:
            bad &= ~ess
    p_hat = bad.mean()
    se = np.sqrt(p_hat * (1 - p_hat) / n)
    bound = (1 - q ** L) ** l
    ok = p_hat <= bound + 3 * se
    dt = time.time() - t0
    _report(10, "bad-event probability bound", ok and dt < 120,
            f"(L={L}, l={l}, P(B)={p_hat:.3f} <= {bound:.3f} + 3*{se:.4f}, {dt:.0f}s)")
