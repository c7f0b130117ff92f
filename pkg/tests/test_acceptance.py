"""Acceptance suite: one test per criterion, each reporting a pass/fail line."""

import itertools
import time

import numpy as np
import pytest

from parot import colorxfer as X
from parot import estimators as E
from parot import family as F
from parot import hf, reduction as rd
from parot.cli import median_time
from parot.errors import InfeasibleError
from parot.reconstruct import map_from_aggregates, map_from_plan, map_from_reduced


def test_01_strong_duality(gauss, gauss_cost, acceptance):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst_gap = worst_viol = 0.0
    for _ in range(100):
        mu, nu = F.blend(gauss, F.random_alpha(rng, 2, 2))
        sol = hf.solve_lp(gauss_cost, mu, nu)
        J = sol.duals.objective(mu, nu)
        worst_gap = max(worst_gap, abs(sol.cost - J) / (1 + abs(sol.cost)))
        worst_viol = max(worst_viol, sol.duals.max_violation(gauss_cost))
    elapsed = time.perf_counter() - t0
    ok = worst_gap <= 1e-8 and worst_viol <= 1e-9 and elapsed < 60
    acceptance(1, ok, f"max rel |I-J| = {worst_gap:.2e}, max dual violation = {worst_viol:.2e}, "
                      f"{elapsed:.1f} s")
    assert ok


def test_02_upper_bound(gauss, models, test_alphas, hf_truth, acceptance):
    worst = {}
    for R in (4, 100, 400):
        vals = np.array([rd.solve_reduced(models[R], gauss, a).I_R for a in test_alphas])
        worst[R] = float((vals - hf_truth).min())
    ok = all(v >= -1e-9 for v in worst.values())
    acceptance(2, ok, "min(I_R - I) per R: " + ", ".join(f"R={R}: {v:.2e}" for R, v in worst.items()))
    assert ok


def test_03_feasibility(gauss, models, acceptance):
    rng = np.random.default_rng(303)
    alphas = [F.random_alpha(rng, 2, 2) for _ in range(200)]
    failures = 0
    for R in (4, 16):
        for a in alphas:
            try:
                rd.solve_reduced(models[R], gauss, a)
            except InfeasibleError:
                failures += 1
    ok = failures == 0
    acceptance(3, ok, f"{failures} infeasible out of 400 solves (R=4 and R=16, 200 alphas each)")
    assert ok


def test_04_rank_condition(gauss, models, test_alphas, acceptance):
    model = models[100]
    worst = 0.0
    for a in test_alphas:
        I_R = rd.solve_reduced(model, gauss, a).I_R
        _, I_RP = rd.solve_semi_reduced(model, gauss, a)
        worst = max(worst, abs(I_R - I_RP) / (1 + abs(I_RP)))
    ok = worst <= 1e-8
    acceptance(4, ok, f"max |I_R - I_RP| / (1 + |I_RP|) = {worst:.2e} (R=100)")
    assert ok


def test_05_error_decay(gauss, models, test_alphas, hf_truth, acceptance):
    means = []
    for R in (4, 16, 100, 400):
        vals = np.array([rd.solve_reduced(models[R], gauss, a).I_R for a in test_alphas])
        means.append(float(np.abs(vals - hf_truth).mean()))
    ok = all(b <= 1.1 * a for a, b in zip(means, means[1:]))
    acceptance(5, ok, "mean error R=4,16,100,400: " + ", ".join(f"{m:.3e}" for m in means))
    assert ok


def test_06_estimator_validity(gauss, gauss_cost, models, test_alphas, hf_truth, acceptance):
    model = models[100]
    cinf = float(np.abs(gauss_cost).max())
    slack_exact = slack_cont = np.inf
    for a, I in zip(test_alphas, hf_truth):
        sol = rd.solve_reduced(model, gauss, a)
        mu, nu = F.blend(gauss, a)
        pair = rd.lift_potentials(model, sol.a, sol.b)
        exact = E.exact_gap_bound(pair, gauss_cost, mu, nu, sol.I_R)
        cont = E.continuity_bound(model.training_costs(), a, sol.I_R, cinf, 2, 2)
        slack_exact = min(slack_exact, exact - (sol.I_R - I))
        slack_cont = min(slack_cont, cont - abs(I - sol.I_R))
    ok = slack_exact >= 0 and slack_cont >= 0
    acceptance(6, ok, f"min(bound_exact - gap) = {slack_exact:.2e}, "
                      f"min(bound_continuity - |gap|) = {slack_cont:.2e} (R=100)")
    assert ok


def _brute(phi, C):
    return np.array([min(C[i, j] - phi[i] for i in range(C.shape[0])) for j in range(C.shape[1])])


def test_07_c_transform(acceptance):
    rng = np.random.default_rng(707)
    feasible = osc = brute = True
    for _ in range(20):
        nx, ny = rng.integers(1, 9, 2)
        C = rng.random((nx, ny)) * 4
        phi = rng.normal(size=nx) * 3
        psi = rng.normal(size=ny) * 3
        phic = E.c_transform(phi, C)
        psib = E.cbar_transform(psi, C)
        feasible &= bool(np.all((C - phi[:, None]) - phic[None, :] >= 0))
        feasible &= bool(np.all((C - psi[None, :]) - psib[:, None] >= 0))
        osc &= phic.max() - phic.min() <= 2 * np.abs(C).max()
        osc &= psib.max() - psib.min() <= 2 * np.abs(C).max()
        brute &= np.array_equal(phic, _brute(phi, C)) and np.array_equal(psib, _brute(psi, C.T))
    ok = feasible and osc and brute
    acceptance(7, ok, f"feasibility exact: {feasible}, oscillation <= 2|C|: {osc}, "
                      f"brute-force equal (tol 0): {brute}")
    assert ok


def test_08_eim(gauss, gauss_cost, models, acceptance):
    model = models[100]
    b, bb = E.eim_from_model(model, gauss, gauss_cost, 10, 10)
    worst_interp = 0.0
    for a in model.snapshot_alphas:
        sol = rd.solve_reduced(model, gauss, a)
        pair = rd.lift_potentials(model, sol.a, sol.b)
        for basis, g in ((b, E.c_transform(pair.phi, gauss_cost)),
                         (bb, E.cbar_transform(pair.psi, gauss_cost))):
            worst_interp = max(worst_interp,
                               float(np.abs(basis.interpolant(g)[basis.J_eim] - g[basis.J_eim]).max()))

    # complete basis on a small instance: spanning random snapshots, all rows
    rng = np.random.default_rng(808)
    n = 8
    x = np.linspace(-1, 1, n)
    fam = F.MeasureFamily([rng.random(n), rng.random(n)], [rng.random(n), rng.random(n)], x, x)
    C = hf.quadratic_cost(x, x)
    phis = rng.normal(size=(3 * n, n))
    psis = rng.normal(size=(3 * n, n))
    full = E.eim_offline(phis, [E.c_transform(p, C) for p in phis], n, n, C, full_rows=True, family=fam)
    full_bar = E.eim_offline(psis, [E.cbar_transform(p, C) for p in psis], n, n, C, side="cbar",
                             full_rows=True, family=fam)
    worst_full = 0.0
    for _ in range(20):
        a = F.random_alpha(rng, 2, 2)
        mu, nu = F.blend(fam, a)
        pair = hf.DualPair(rng.normal(size=n), rng.normal(size=n))
        I_R = float(rng.random())
        worst_full = max(worst_full, abs(E.eim_fast_gap(full, pair, C, fam, a, I_R, basis_bar=full_bar)
                                         - E.exact_gap_bound(pair, C, mu, nu, I_R)))
    ok = worst_interp <= 1e-12 and worst_full <= 1e-9 and full.M == n and full_bar.M == n
    acceptance(8, ok, f"max magic-point residual = {worst_interp:.2e} (R=100, M_eim=10); "
                      f"complete basis |fast - exact| = {worst_full:.2e}")
    assert ok


def test_09_lipschitz(gauss, gauss_cost, acceptance):
    rng = np.random.default_rng(909)
    L = E.lipschitz_constant(float(np.abs(gauss_cost).max()), 2, 2)
    worst = np.inf
    for _ in range(100):
        a, b = F.random_alpha(rng, 2, 2), F.random_alpha(rng, 2, 2)
        Ia = hf.solve_lp(gauss_cost, *F.blend(gauss, a)).cost
        Ib = hf.solve_lp(gauss_cost, *F.blend(gauss, b)).cost
        worst = min(worst, L * a.distance(b) - abs(Ia - Ib))
    ok = worst >= 0
    acceptance(9, ok, f"min(L |a - a'| - |I(a) - I(a')|) = {worst:.3e} over 100 pairs, L = {L:g}")
    assert ok


def test_10_reduced_map(acceptance):
    snapshot_ok = dense_ok = True
    for n, res in ((12, 3), (20, 4)):
        fam = F.gaussian_family(n, n)
        C = hf.quadratic_cost(fam.support_x, fam.support_y)
        model = rd.build_offline(fam, F.training_grid(2, 2, res))
        plans = [hf.solve_lp(C, *F.blend(fam, a)).plan for a in model.snapshot_alphas]
        for r in range(model.R):
            snapshot_ok &= map_from_reduced(model, np.eye(model.R)[r]) == map_from_plan(plans[r])
        rng = np.random.default_rng(n)
        for a in [F.random_alpha(rng, 2, 2) for _ in range(10)]:
            p = rd.solve_reduced(model, fam, a).p
            p = np.maximum(p, 0)
            dense = sum(pr * P for pr, P in zip(p, plans))
            dense_ok &= map_from_reduced(model, p) == map_from_plan(dense)
    ok = snapshot_ok and dense_ok
    acceptance(10, ok, f"e_r maps equal snapshot maps: {snapshot_ok}; dense-path oracle (N<=20): {dense_ok}")
    assert ok


def test_11_online_scaling(acceptance):
    rows = []
    for n in (50, 100, 200):
        fam = F.gaussian_family(n, n)
        C = hf.quadratic_cost(fam.support_x, fam.support_y)
        rng = np.random.default_rng(1111)
        train = F.extreme_points(2, 2) + [F.random_alpha(rng, 2, 2) for _ in range(46)]
        model = rd.build_offline(fam, train)
        a = F.Alpha([0.3, 0.7], [0.6, 0.4])
        mu, nu = F.blend(fam, a)
        sol = rd.solve_reduced(model, None, a)
        # per-iteration work of the reduced simplex is O(m^2 + m R) on an m x R system
        m, R = model.A_hat.shape
        ops = (sol.iterations + 1) * (m * m + m * R) + model.U_mu.size + model.V_nu.size
        t_red = median_time(lambda: rd.solve_reduced(model, None, a), 5)
        t_hf = median_time(lambda: hf.solve_lp(C, mu, nu), 5)
        rows.append((n, model.A_hat.shape, ops, t_red, t_hf))
    shapes_fixed = len({r[1] for r in rows}) == 1
    ops = [r[2] for r in rows]
    ops_flat = max(ops) <= 1.5 * min(ops)
    hf_grows = rows[0][4] < rows[1][4] < rows[2][4]
    speedup = rows[2][4] / rows[2][3]
    ok = shapes_fixed and ops_flat and hf_grows and speedup >= 10
    acceptance(11, ok, "N, reduced ops, t_reduced, t_hf: "
               + "; ".join(f"{n}: {o}, {tr * 1e3:.2f} ms, {th * 1e3:.1f} ms" for n, _, o, tr, th in rows)
               + f"; speedup at N=200 = {speedup:.0f}x")
    assert ok


def _synthetic(rng, shift, size=64):
    px = np.clip(rng.normal(128, 40, (size * size, 3)) + shift, 0, 255).astype(np.uint8)
    return X.ImageRGB(size, size, px)


def test_12_color_transfer(acceptance):
    rng = np.random.default_rng(1212)
    src = _synthetic(rng, [0, 0, 0])
    red = _synthetic(rng, [80, -30, -30])
    blue = _synthetic(rng, [-30, -30, 80])
    t0 = time.perf_counter()
    rom = X.build_color_model(src, [red, blue], bins=16, resolution=3)
    t_off = time.perf_counter() - t0
    t0 = time.perf_counter()
    out = X.transfer_pipeline(src, [red, blue], [0.5, 0.5], 16, rom)
    t_on = time.perf_counter() - t0
    corners_ok = True
    for l in range(2):
        r = next(k for k, a in enumerate(rom.snapshot_alphas) if a.alpha_y[l] == 1.0)
        snap = X.recolor(src, map_from_aggregates(rom.map_numer[r], rom.map_denom[r], (16, 16, 16)), 16)
        got = X.transfer_pipeline(src, [red, blue], np.eye(2)[l], 16, rom)
        corners_ok &= np.array_equal(got.pixels, snap.pixels)
    ok = t_off < 120 and t_on < 1 and corners_ok and out.pixels.shape == src.pixels.shape
    acceptance(12, ok, f"bins=16 offline {t_off:.1f} s, online {t_on * 1e3:.1f} ms, "
                       f"corner outputs equal snapshot recolorings: {corners_ok}")
    assert ok


def _quarter_margins(n):
    return [np.array(c) for c in itertools.product(range(5), repeat=n) if sum(c) == 4]


def _integral_plans(rows, cols):
    """All nonnegative integer matrices with the given margins (these contain every vertex)."""
    nx, ny = len(rows), len(cols)
    out = []
    plan = np.zeros((nx, ny), dtype=int)

    def fill(k, r, c):
        if k == nx * ny:
            if not r.any() and not c.any():
                out.append(plan.copy())
            return
        i, j = divmod(k, ny)
        hi = min(r[i], c[j])
        lo = r[i] if j == ny - 1 else 0  # the last cell of a row takes what is left
        for v in range(lo, hi + 1):
            plan[i, j] = v
            r[i] -= v
            c[j] -= v
            fill(k + 1, r, c)
            r[i] += v
            c[j] += v
        plan[i, j] = 0

    fill(0, rows.copy(), cols.copy())
    return out


def test_13_small_instance_oracle(acceptance):
    rng = np.random.default_rng(1313)
    worst = 0.0
    count = 0
    for nx in range(1, 6):
        for ny in range(1, 6):
            # every pair of quarter-valued margins, one random integer cost each
            for a, b in itertools.product(_quarter_margins(nx), _quarter_margins(ny)):
                C = rng.integers(0, 10, (nx, ny)).astype(float)
                best = min(float((P * C).sum()) / 4 for P in _integral_plans(a, b))
                got = hf.solve_lp(C, a / 4, b / 4).cost
                worst = max(worst, abs(got - best))
                count += 1
    ok = worst <= 1e-9
    acceptance(13, ok, f"max |LP - enumeration| = {worst:.2e} over {count} instances, N_x, N_y <= 5")
    assert ok
