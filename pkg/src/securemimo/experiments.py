"""
Drivers that turn a resolved :class:`~securemimo.config.ExperimentConfig`
into CSV rows.

Each experiment kind maps to a short recipe over :func:`simkit.sweep`,
:func:`simkit.security_gap` and :func:`simkit.system_level_run`.
"""
from dataclasses import replace
import math

import numpy as np

from .simkit import (
    ExperimentResult,
    LinkTemplate,
    SnrSweep,
    SystemLevelParams,
    TargetNotBracketed,
    blank_row,
    security_gap,
    sweep,
    system_level_run,
)

__all__ = ["DEFAULT_POLICIES", "run_experiment", "link_template", "system_params"]

DEFAULT_POLICIES = {
    "fig3_ber": ["NR@SE", "R-SE@SE", "NR@NBE", "R-NBE@NBE"],
    "fig4_mse": ["Perfect@none", "R-SE@SE", "R-NBE@NBE", "NR@SE"],
    "fig5_gap": ["NR@SE", "R-NBE@NBE", "R-SE@SE"],
    "fig6_an": ["R-NBE@NBE"],
    "fig7_threshold": ["R-NBE@NBE"],
    "custom": ["NR@SE", "R-SE@SE"],
}


def link_template(cfg, dims=None):
    e, d = cfg.values["errors"], cfg.values["design"]
    return LinkTemplate(cfg.dims() if dims is None else dims, sigma_tl2=e["sigma_tl2"], sigma_te2=e["sigma_te2"],
                        tau_tl=e["tau_tl"], tau_te=e["tau_te"], beta=d["beta"],
                        max_outer_iters=d["max_outer_iters"], nbe_max_outer_iters=d["nbe_max_outer_iters"],
                        init=d["init"])


def snr_sweep(cfg, points=None):
    s = cfg.values["sweep"]
    return SnrSweep(list(s["points"]) if points is None else points, s["trials_per_point"],
                    s["symbols_per_trial"], s["error_draws"])


def system_params(cfg):
    s, d, des, e = cfg.values["system"], cfg.values["dims"], cfg.values["design"], cfg.values["errors"]
    return SystemLevelParams(
        n_bs=s["n_bs"], area_km2=s["area_km2"], sync_size=s["sync_size"], n_members=s["n_members"],
        n_eves=s["n_eves"], radius_m=s["radius_m"], carrier_freq=s["carrier_freq"], h_bs_m=s["h_bs_m"],
        h_ue_m=s["h_ue_m"], tx_power_dbm=s["tx_power_dbm"], bandwidth_hz=s["bandwidth_hz"],
        noise_figure_db=s["noise_figure_db"], N_T=d["N_T"], N_R=d["N_R"], N_E=d["N_E"], N_s=d["N_s"],
        an_var=s["an_var"], Gamma=d["Gamma"], tau_tl=e["tau_tl"], tau_te=e["tau_te"], beta=des["beta"],
        max_outer_iters=des["max_outer_iters"], nbe_max_outer_iters=des["nbe_max_outer_iters"],
        n_groups=s["n_groups"], symbols_per_group=s["symbols_per_group"], error_draws=s["error_draws"],
    )


def _policies(cfg):
    return list(cfg.values["experiment"]["policies"]) or DEFAULT_POLICIES.get(cfg.kind, DEFAULT_POLICIES["custom"])


def _an_label(policy, var):
    return f"{policy};sigma_z2={var:g}"


def run_experiment(cfg, on_row=None):
    """
    Run the experiment named by ``cfg.kind``.

    ``on_row`` is called with every finished row (for progress output).

    Returns
    -------
    ExperimentResult
    """
    kind, seed = cfg.kind, cfg.seed
    out = ExperimentResult(metadata={"seed": seed, "kind": kind, "config_sha256": cfg.digest()})

    def emit(row):
        out.rows.append(row)
        if on_row is not None:
            on_row(row)

    if kind in ("fig3_ber", "fig4_mse", "custom"):
        tpl, sw = link_template(cfg), snr_sweep(cfg)
        for policy in _policies(cfg):
            for row in sweep(tpl, sw, policy, seed, experiment=kind).rows:
                emit(row)
    elif kind == "fig5_gap":
        _run_gap(cfg, emit)
    elif kind == "fig6_an":
        sw = snr_sweep(cfg)
        for var in cfg.values["an"]["variances"]:
            tpl = link_template(cfg, replace(cfg.dims(), sigma_zt=math.sqrt(var)))
            for policy in _policies(cfg):
                for row in sweep(tpl, sw, policy, seed, experiment=kind).rows:
                    row["policy"] = _an_label(policy, var)
                    emit(row)
    elif kind == "fig7_threshold":
        th = cfg.values["threshold"]
        sw = snr_sweep(cfg, [th["snr_db"]])
        for var in cfg.values["an"]["variances"]:
            for gamma in th["gammas"]:
                tpl = link_template(cfg, replace(cfg.dims(), sigma_zt=math.sqrt(var), Gamma=float(gamma)))
                for policy in _policies(cfg):
                    row = sweep(tpl, sw, policy, seed, experiment=kind).rows[0]
                    row.update(policy=_an_label(policy, var), x_name="Gamma", x_value=float(gamma))
                    emit(row)
    elif kind == "fig8_system":
        _run_system(cfg, emit)
    else:
        raise ValueError(f"unknown experiment kind {kind!r}")
    return out


def _run_gap(cfg, emit):
    tpl, sw = link_template(cfg), snr_sweep(cfg)
    g = cfg.values["gap"]
    for policy in _policies(cfg):
        rows = sweep(tpl, sw, policy, cfg.seed, experiment=cfg.kind).rows
        for row in rows:
            emit(row)
        gap = blank_row(cfg.kind, policy, "gap", "", "")
        gap["n_trials"] = sw.trials_per_point
        try:
            r = security_gap([x["x_value"] for x in rows], [x["ber_legit"] for x in rows],
                             [x["ber_eve"] for x in rows], g["target_legit"], g["target_eve"])
            gap.update(snr_min_legit_db=r.snr_min_legit_db, snr_max_eve_db=r.snr_max_eve_db, gap_db=r.gap_db)
        except TargetNotBracketed:
            gap.update(snr_min_legit_db=float("nan"), snr_max_eve_db=float("nan"), gap_db=float("nan"))
        emit(gap)


def _run_system(cfg, emit):
    params = system_params(cfg)
    K_prime = cfg.values["system"]["K_prime"]
    for policy in cfg.values["system"]["policies"]:
        groups = system_level_run(params, policy, cfg.seed, K_prime=K_prime)
        for g in groups:
            row = blank_row(cfg.kind, policy, "group", "group", g["group"])
            row.update(ber_legit=g["ber_legit"], ber_eve=g["ber_eve"], n_trials=1,
                       n_nonconverged=0 if g["converged"] else 1, cluster_size=g["cluster_size"])
            emit(row)
        bl = np.array([g["ber_legit"] for g in groups], dtype=float)
        be = np.array([g["ber_eve"] for g in groups], dtype=float)
        med = blank_row(cfg.kind, policy, "median", "group", "")
        med.update(ber_legit=float(np.nanmedian(bl)) if np.any(np.isfinite(bl)) else float("nan"),
                   ber_eve=float(np.nanmedian(be)) if np.any(np.isfinite(be)) else float("nan"),
                   n_trials=len(groups), n_nonconverged=sum(not g["converged"] for g in groups),
                   cluster_size=float(np.mean([g["cluster_size"] for g in groups])) if groups else float("nan"))
        emit(med)
