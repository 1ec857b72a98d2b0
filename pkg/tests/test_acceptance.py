"""
Acceptance suite: one test per criterion, each printing a PASS/FAIL line
(collected in the terminal summary under "acceptance criteria").
"""
import math
import time

import numpy as np
import pytest

from securemimo.channel import ChannelSet, ErrorModel, SystemDims, draw_channel_set
from securemimo.cli import PRESETS, main, preset_path
from securemimo.config import parse_config_text
from securemimo.design import (
    DesignProblem,
    coordinate_descent,
    lagrangian,
    lagrangian_grad_R,
    lagrangian_grad_V,
    lagrangian_grad_W,
    nbe_design,
    worst_case_delta_eve,
    worst_case_delta_legitimate,
)
from securemimo.experiments import system_params
from securemimo.mse import (
    RobustFlags,
    TransceiverSolution,
    UncertaintyInput,
    monte_carlo_mse_eavesdropper,
    monte_carlo_mse_legitimate,
    monte_carlo_power,
    mse_eavesdropper,
    mse_legitimate,
    transmit_power,
)
from securemimo.numerics import finite_diff_gradient, make_rng
from securemimo.simkit import LinkTemplate, SnrSweep, TargetNotBracketed, security_gap, sweep, system_level_run

from conftest import crandn, record_criterion

SMALL = SystemDims(K_T=2, K_R=2, K_E=1, N_T=4, N_R=2, N_E=2, N_s=2, sigma_nl=0.5, sigma_ne=0.5, sigma_zt=0.3)
DEFAULT = SystemDims(K_T=4, K_R=8, K_E=2, N_T=16, N_R=8, N_E=4, N_s=2, sigma_zt=0.3, Gamma=0.5)


def random_solution(dims, r, scale=0.5):
    sol = TransceiverSolution(
        scale * crandn(r, dims.K_T, dims.N_T, dims.N_s),
        crandn(r, dims.K_T, dims.N_T, dims.N_T) / dims.N_T,
        crandn(r, dims.K_R, dims.N_s, dims.N_R),
        crandn(r, dims.K_E, dims.N_s, dims.N_E),
    )
    sol.lambda_e = r.uniform(0.1, 0.5, dims.K_E)
    sol.lambda_t = r.uniform(0.5, 2.0, dims.K_T)
    return sol


def at_snr(dims, snr_db):
    nv = dims.P_T / 10 ** (snr_db / 10)
    return SystemDims(**{**dims.__dict__, "sigma_nl": math.sqrt(nv), "sigma_ne": math.sqrt(nv)})


def median_crossing(snr, ber, target):
    """SNR where a BER curve first falls to ``target`` (log-linear), NaN if never."""
    for i in range(1, len(snr)):
        if ber[i] <= target < ber[i - 1]:
            l0, l1 = math.log10(ber[i - 1]), math.log10(max(ber[i], 1e-12))
            return snr[i - 1] + (math.log10(target) - l0) * (snr[i] - snr[i - 1]) / (l1 - l0)
    return float("nan")


# ---------------------------------------------------------------------------
# 1. closed-form MSE and power against Monte Carlo


def test_c01_mse_power_monte_carlo():
    t0 = time.time()
    worst, ok = 0.0, True
    for i in range(10):
        r = make_rng(100, i)
        ch = draw_channel_set(SMALL, r, ErrorModel.stochastic(0.04), ErrorModel.stochastic(0.09))
        sol = random_solution(SMALL, r)
        u = UncertaintyInput.from_channels(ch, SMALL)
        f = RobustFlags(1, 1)
        checks = []
        for l in range(SMALL.K_R):
            mc, se = monte_carlo_mse_legitimate(sol, ch, SMALL, l, 200_000, make_rng(101, i, l))
            checks.append((mse_legitimate(sol, ch, SMALL, f, u, l), mc, se))
        for e in range(SMALL.K_E):
            mc, se = monte_carlo_mse_eavesdropper(sol, ch, SMALL, e, 200_000, make_rng(102, i, e))
            checks.append((mse_eavesdropper(sol, ch, SMALL, f, u, e), mc, se))
        for t in range(SMALL.K_T):
            mc, se = monte_carlo_power(sol.V[t], sol.W[t], 0.3, 200_000, make_rng(103, i, t))
            checks.append((transmit_power(sol.V[t], sol.W[t], 0.3), mc, se))
        for cf, mc, se in checks:
            z = abs(cf - mc) / se
            worst = max(worst, z)
            ok &= z <= 3.0
    dt = time.time() - t0
    passed = ok and dt < 60
    record_criterion(1, passed, f"max |closed form - MC| = {worst:.2f} stderr over 50 checks, {dt:.1f} s")
    assert passed


# ---------------------------------------------------------------------------
# 2. analytic gradients against finite differences


def _with_block(sol, name, t, X):
    out = sol.copy()
    arr = getattr(out, name).copy()
    arr[t] = X
    setattr(out, name, arr)
    return out


def test_c02_gradient_suite():
    t0 = time.time()
    worst = 0.0
    for i in range(5):
        r = make_rng(200, i)
        ch = draw_channel_set(SMALL, r, ErrorModel.stochastic(0.04), ErrorModel.stochastic(0.09))
        p = DesignProblem(SMALL, ch, RobustFlags(1, 1))
        sol = random_solution(SMALL, r)
        pairs = []
        for t in range(SMALL.K_T):
            pairs.append((lagrangian_grad_V(p, sol)[t],
                          finite_diff_gradient(lambda X: lagrangian(p, _with_block(sol, "V", t, X)), sol.V[t])))
            pairs.append((lagrangian_grad_W(p, sol)[t],
                          finite_diff_gradient(lambda X: lagrangian(p, _with_block(sol, "W", t, X)), sol.W[t])))
        for l in range(SMALL.K_R):
            pairs.append((lagrangian_grad_R(p, sol, l),
                          finite_diff_gradient(lambda X: lagrangian(p, _with_block(sol, "R", l, X)), sol.R[l])))
        for g, fd in pairs:
            worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12))
    dt = time.time() - t0
    passed = worst <= 1e-5 and dt < 30
    record_criterion(2, passed, f"max relative gradient error {worst:.2e} at 5 points, {dt:.1f} s")
    assert passed


# ---------------------------------------------------------------------------
# 3 and 4. constraint feasibility and convergence envelope at the default dimensions

SNR_DESIGN_DB = 10.0


@pytest.fixture(scope="module")
def se_runs():
    dims = at_snr(DEFAULT, SNR_DESIGN_DB)
    out = []
    for seed in range(50):
        ch = draw_channel_set(dims, make_rng(300, seed), ErrorModel.stochastic(0.04), ErrorModel.stochastic(0.09))
        p = DesignProblem(dims, ch, RobustFlags(1, 1), seed=seed, max_outer_iters=50)
        sol, rep = coordinate_descent(p)
        out.append((p, sol, rep))
    return out


@pytest.fixture(scope="module")
def nbe_runs():
    dims = at_snr(DEFAULT, SNR_DESIGN_DB)
    out = []
    for seed in range(50):
        ch = draw_channel_set(dims, make_rng(400, seed), ErrorModel.norm_bounded(0.04), ErrorModel.norm_bounded(0.09))
        p = DesignProblem(dims, ch, RobustFlags(1, 1), seed=seed)
        out.append(nbe_design(p, max_outer_iters=30))
    return out


def test_c03_constraint_feasibility(se_runs):
    worst_p, worst_e, n_conv, ok = 0.0, 0.0, 0, True
    for p, sol, rep in se_runs[:20]:
        if not rep.converged:
            continue
        n_conv += 1
        d = p.dims
        pw = np.array([transmit_power(sol.V[t], sol.W[t], math.sqrt(d.an_var[t])) for t in range(d.K_T)])
        over = np.maximum(pw - d.P_T, 0.0)
        slack_p = np.where(sol.lambda_t > 0, np.abs(pw - d.P_T), over)
        eps = np.array([mse_eavesdropper(sol, p.channels, d, p.flags, p.u, e) for e in range(d.K_E)])
        short = np.maximum(d.Gamma - eps, 0.0)
        slack_e = np.where(sol.lambda_e > 0, np.abs(eps - d.Gamma), short)
        worst_p = max(worst_p, float(slack_p.max()))
        worst_e = max(worst_e, float(slack_e.max()))
        ok &= slack_p.max() <= 1e-4 * d.P_T and slack_e.max() <= 1e-4
    passed = ok and n_conv > 0
    record_criterion(3, passed, f"{n_conv}/20 converged runs; max power violation {worst_p:.1e}, "
                                f"max eve-MSE violation {worst_e:.1e}")
    assert passed


def test_c04_convergence_envelope(se_runs, nbe_runs):
    se_ok = sum(rep.converged and rep.iterations_used <= 20 for _, _, rep in se_runs)
    nbe_ok = sum(rep.converged and rep.iterations_used <= 30 for _, _, rep in nbe_runs)
    se_iters = np.median([rep.iterations_used for _, _, rep in se_runs])
    nbe_iters = np.median([rep.iterations_used for _, _, rep in nbe_runs])
    passed = se_ok >= 45 and nbe_ok >= 45
    record_criterion(4, passed, f"stochastic design {se_ok}/50 within 20 iterations (median {se_iters:g}), "
                                f"norm-bounded design {nbe_ok}/50 within 30 (median {nbe_iters:g})")
    assert passed


# ---------------------------------------------------------------------------
# 5 and 6. robustness ordering and security gap

CURVE_POINTS = [-20.0, -17.5, -15.0, -12.5, -10.0, -7.5, -5.0, -2.5, 0.0, 10.0]
CURVE_POLICIES = ["NR@SE", "R-SE@SE", "NR@NBE", "R-NBE@NBE"]


@pytest.fixture(scope="module")
def curves():
    t0 = time.time()
    tpl = LinkTemplate(DEFAULT)
    sw = SnrSweep(CURVE_POINTS, trials_per_point=1, symbols_per_trial=10_000, error_draws=4)
    out = {pol: [sweep(tpl, sw, pol, seed).rows for seed in range(10)] for pol in CURVE_POLICIES}
    top = SnrSweep([10.0], trials_per_point=1, symbols_per_trial=10_000, error_draws=4)
    out["Perfect@none"] = [sweep(tpl, top, "Perfect@none", seed).rows for seed in range(10)]
    return out, time.time() - t0


def _median_at(rows_by_seed, key, snr):
    return float(np.median([next(r[key] for r in rows if r["x_value"] == snr) for rows in rows_by_seed]))


def _median_curve(rows_by_seed, key):
    return np.median(np.array([[r[key] for r in rows] for rows in rows_by_seed]), axis=0)


def test_c05_robustness_ordering(curves):
    data, dt = curves
    ber = {p: _median_at(data[p], "ber_legit", 10.0) for p in CURVE_POLICIES}
    mse = {p: _median_at(data[p], "mse_legit", 10.0) for p in CURVE_POLICIES + ["Perfect@none"]}
    ber_ok = ber["R-SE@SE"] < ber["NR@SE"] and ber["R-NBE@NBE"] < ber["NR@NBE"]
    mse_ok = mse["Perfect@none"] < mse["R-SE@SE"] < mse["R-NBE@NBE"] < mse["NR@SE"]
    gains = {}
    for robust, nominal in (("R-SE@SE", "NR@SE"), ("R-NBE@NBE", "NR@NBE")):
        s_r = median_crossing(CURVE_POINTS, _median_curve(data[robust], "ber_legit"), 1e-2)
        s_n = median_crossing(CURVE_POINTS, _median_curve(data[nominal], "ber_legit"), 1e-2)
        gains[robust] = s_n - s_r
    gain_ok = all(g >= 1.0 for g in gains.values())
    passed = ber_ok and mse_ok and gain_ok and dt < 600
    record_criterion(5, passed, "BER@10dB " + ", ".join(f"{p}={v:.2e}" for p, v in ber.items())
                     + "; MSE@10dB " + ", ".join(f"{p}={v:.4f}" for p, v in mse.items())
                     + "; gain@1e-2 " + ", ".join(f"{p}={v:.2f} dB" for p, v in gains.items())
                     + f"; {dt:.0f} s")
    assert passed


def test_c06_security_gap_ordering(curves):
    data, _ = curves
    pts = CURVE_POINTS[:-1]  # contiguous part of the grid
    wins, details = 0, []
    for seed in range(5):
        gap = {}
        for pol in ("NR@SE", "R-NBE@NBE", "R-SE@SE"):
            rows = data[pol][seed][:-1]
            try:
                gap[pol] = security_gap(pts, [r["ber_legit"] for r in rows], [r["ber_eve"] for r in rows]).gap_db
            except TargetNotBracketed:
                gap[pol] = float("nan")
        ordered = gap["NR@SE"] > gap["R-NBE@NBE"] > gap["R-SE@SE"]
        wins += ordered
        details.append("/".join(f"{v:.2f}" for v in gap.values()))
    passed = wins >= 3
    record_criterion(6, passed, f"gap NR/R-NBE/R-SE ordered in {wins}/5 seeds: " + "; ".join(details))
    assert passed


# ---------------------------------------------------------------------------
# 7. artificial noise


def _an_template(var, gamma=0.5):
    return LinkTemplate(SystemDims(**{**DEFAULT.__dict__, "sigma_zt": math.sqrt(var), "Gamma": gamma}))


def test_c07_artificial_noise_effect():
    variances = [0.0, 0.04, 0.09]
    sw = SnrSweep([0.0], trials_per_point=1, symbols_per_trial=10_000, error_draws=4)
    increasing = 0
    eve_ber = []
    for seed in range(10):
        be = [sweep(_an_template(v), sw, "R-NBE@NBE", seed).rows[0]["ber_eve"] for v in variances]
        eve_ber.append(be)
        increasing += be[0] < be[1] < be[2]
    med = np.median(np.array(eve_ber), axis=0)
    gammas = [0.1, 0.3, 0.5, 0.7, 0.9]
    sw_lo = SnrSweep([-10.0], trials_per_point=1, symbols_per_trial=4000, error_draws=4)
    achieved = {}
    for var in (0.09, 0.0):
        achieved[var] = [float(np.median([sweep(_an_template(var, g), sw_lo, "R-NBE@NBE", seed).rows[0]["mse_eve"]
                                          for seed in range(5)])) for g in gammas]
    on_ok = all(m >= g for m, g in zip(achieved[0.09], gammas))
    off_fails = any(m < g for m, g in zip(achieved[0.0], gammas))
    passed = increasing >= 6 and on_ok and off_fails
    record_criterion(7, passed, f"eve BER increasing in AN variance for {increasing}/10 seeds "
                                f"(median {med[0]:.3f}/{med[1]:.3f}/{med[2]:.3f}); eve MSE at Gamma grid "
                                f"AN on {['%.2f' % m for m in achieved[0.09]]}, "
                                f"AN off {['%.2f' % m for m in achieved[0.0]]}")
    assert passed


# ---------------------------------------------------------------------------
# 8. worst-case errors against sphere probes


def test_c08_worst_case_oracles():
    t0 = time.time()
    tau, ok = 0.05, True
    worst_margin = np.inf
    zero = UncertaintyInput.zeros(SMALL)
    for i in range(10):
        r = make_rng(800, i)
        ch = draw_channel_set(SMALL, r)
        sol = random_solution(SMALL, r)

        def legit(C0):
            C = ch.C_hat.copy()
            C[0, 0] = C0
            return mse_legitimate(sol, ChannelSet(C, ch.G_hat), SMALL, RobustFlags(), zero, 0)

        def eve(G0):
            G = ch.G_hat.copy()
            G[0, 0] = G0
            return -mse_eavesdropper(sol, ChannelSet(ch.C_hat, G), SMALL, RobustFlags(), zero, 0)

        for fn, base, D in ((legit, ch.C_hat[0, 0], worst_case_delta_legitimate(sol, ch, 0, 0, tau, 0.3)),
                            (eve, ch.G_hat[0, 0], worst_case_delta_eve(sol, ch, 0, 0, tau, 0.3))):
            h = 1e-6

            def slope(X):
                return (fn(base + h * X) - fn(base - h * X)) / (2 * h)

            best = slope(D)
            for _ in range(200):
                P = crandn(r, *D.shape)
                P *= math.sqrt(tau) / np.linalg.norm(P)
                margin = best - slope(P)
                worst_margin = min(worst_margin, margin)
                ok &= margin >= -1e-6
    dt = time.time() - t0
    passed = ok and dt < 60
    record_criterion(8, passed, f"smallest margin over 4000 probes {worst_margin:.2e}, {dt:.1f} s")
    assert passed


# ---------------------------------------------------------------------------
# 9. system-level clustering


def test_c09_system_level_ordering():
    t0 = time.time()
    cfg = parse_config_text(preset_path("fig8_system").read_text())
    params = system_params(cfg)
    med_l, med_e = {}, {}
    for policy in ("MBSFN", "Greedy", "SCPTM"):
        groups = system_level_run(params, policy, cfg.seed, K_prime=10)
        med_l[policy] = float(np.nanmedian([g["ber_legit"] for g in groups]))
        med_e[policy] = float(np.nanmedian([g["ber_eve"] for g in groups]))
    dt = time.time() - t0
    # BER CDFs are read on a log axis, so the gap is measured in decades
    gap = {p: math.log10(max(med_e[p], 1e-12) / max(med_l[p], 1e-12)) for p in med_l}
    lin = {p: med_e[p] - med_l[p] for p in med_l}
    order_ok = med_l["MBSFN"] <= med_l["Greedy"] <= med_l["SCPTM"]
    gap_ok = gap["MBSFN"] >= max(gap["Greedy"], gap["SCPTM"])
    passed = order_ok and gap_ok and dt < 600
    record_criterion(9, passed, "median legit BER " + ", ".join(f"{p}={v:.4f}" for p, v in med_l.items())
                     + "; eve/legit gap (decades) " + ", ".join(f"{p}={v:.2f}" for p, v in gap.items())
                     + "; linear difference " + ", ".join(f"{p}={v:.4f}" for p, v in lin.items())
                     + f"; {params.n_groups} groups, {dt:.0f} s")
    assert passed


# ---------------------------------------------------------------------------
# 10. determinism

SMALL_OVERRIDES = ["dims.K_T=2", "dims.K_R=2", "dims.K_E=1", "dims.N_T=4", "dims.N_R=2", "dims.N_E=2",
                   "sweep.points=[-5, 5]", "sweep.trials_per_point=1", "sweep.symbols_per_trial=200",
                   "sweep.error_draws=1", "threshold.gammas=[0.5]", "an.variances=[0.0, 0.09]",
                   "system.n_groups=2", "system.symbols_per_group=200", "system.n_members=3",
                   "system.n_eves=1", "system.K_prime=3"]


def test_c10_determinism(tmp_path):
    same = []
    for name in PRESETS:
        args = ["run", name, "--quiet"]
        for s in SMALL_OVERRIDES:
            args += ["--set", s]
        outs = []
        for k in range(2):
            out = tmp_path / f"{name}_{k}"
            assert main(args + ["--out", str(out)]) == 0
            outs.append((out / f"{name}.csv").read_bytes())
        same.append(outs[0] == outs[1])
    passed = all(same)
    record_criterion(10, passed, f"{sum(same)}/{len(PRESETS)} presets byte-identical on re-run (reduced scale)")
    assert passed
