"""Batch verification driver.

Parses a scenario configuration, runs one of the named verification suites
across the library modules, and emits machine-readable reports: one JSON
file with per-check (name, anchor, value, tolerance, pass) rows and CSV data
tables alongside.  Exit status 0 iff every check passed, 1 on check failure,
2 on configuration errors.

Every suite has a complete default scenario (printable with the
``default-config`` subcommand) that reproduces the package's acceptance
criteria; user configs must spell out all physical constants explicitly --
there are no hidden defaults for beta, dt, or seeds.  Reports are
deterministic for a fixed (config, seed): no timestamps, sorted keys.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

SCHEMA_VERSION = "1.0.0"

SUITES = (
    "kernel-identities",
    "boson-commutators",
    "sv-algebra",
    "equilibrium-loop",
    "dbm-moments",
    "girsanov",
    "npoint",
    "np-brackets",
    "hermite-example",
)


def report_schema_version() -> str:
    return SCHEMA_VERSION


def check(name, anchor, value, tolerance, passed=None, **extra):
    if passed is None:
        passed = bool(abs(value) <= tolerance)
    row = {"name": name, "anchor": anchor, "value": float(value), "tolerance": float(tolerance), "pass": bool(passed)}
    row.update(extra)
    return row


# ----------------------------------------------------------------------
# default scenarios (the acceptance configurations)


def default_scenario(suite: str) -> dict:
    base = {"schema_version": SCHEMA_VERSION, "suite": suite, "seed": 2024, "threads": 1}
    if suite == "kernel-identities":
        base.update(
            {
                "k_max": 12,
                "times": [0.1, 0.3],
                "identity_times": [0.3, 0.2, 0.1],
                "potentials": {
                    "quadratic-force": {"beta": 2.0, "b": {"2": 1.0}},
                    "mixed-force": {"beta": 2.0, "b": {"1": 0.5, "2": 0.3}},
                    "hermite": {"beta": 2.0, "b": {"1": 1.0}},
                    "hermite-beta1": {"beta": 1.0, "b": {"1": 1.0}},
                    "hermite-beta4": {"beta": 4.0, "b": {"1": 1.0}},
                    "generic-beta1": {"beta": 1.0, "b": {"1": 0.5, "2": 0.3}},
                    "generic-beta4": {"beta": 4.0, "b": {"1": 0.5, "2": 0.3}},
                },
                "tolerances": {
                    "route_equivalence": 1e-8,
                    "hermite_diagonal": 1e-12,
                    "hermite_closed": 1e-10,
                    "semigroup": 1e-10,
                    "kolmogorov": 1e-10,
                    "technical_lemma_rel": 1e-7,
                    "route_runtime_s": 5.0,
                },
                "debug": {"flip_generator_sign": False},
            }
        )
    elif suite == "boson-commutators":
        base.update(
            {
                "k_max": 6,
                "n_particles": 5,
                "grid": {"dt": 0.1, "steps": 6},
                "potentials": {
                    "hermite": {"beta": 2.0, "b": {"1": 1.0}},
                    "generic-beta1": {"beta": 1.0, "b": {"1": 0.5, "2": 0.3}},
                },
                "tolerances": {"commutator": 1e-12},
            }
        )
    elif suite == "sv-algebra":
        base.update(
            {
                "k_max": 8,
                "interior_modes": 6,
                "n_particles": 5,
                "grids": [{"dt": 0.02, "steps": 50}, {"dt": 0.01, "steps": 100}],
                "potentials": {
                    "hermite": {"beta": 2.0, "b": {"1": 1.0}},
                    "generic": {"beta": 2.0, "b": {"1": 0.5, "2": 0.3}},
                },
                "constraint_mc": {
                    "beta": 2.0,
                    "b": {"1": 1.0},
                    "n_particles": 5,
                    "grid": {"dt": 1e-3, "steps": 1000},
                    "replicas": 20000,
                    "k_max": 4,
                    "init_shift": 0.4,
                },
                "tolerances": {"ratio_low": 1.6, "ratio_high": 2.4, "runtime_s": 120.0, "mc_sigmas": 3.0},
            }
        )
    elif suite == "equilibrium-loop":
        base.update(
            {
                "sweeps": 100000,
                "chains": 200,
                "orders": [0, 1, 2],
                "cases": [
                    {"n_particles": 2, "beta": 1.0},
                    {"n_particles": 2, "beta": 2.0},
                    {"n_particles": 5, "beta": 1.0},
                    {"n_particles": 5, "beta": 2.0},
                ],
                "b": {"1": 1.0},
                "tolerances": {"sigmas": 3.0},
            }
        )
    elif suite == "dbm-moments":
        base.update(
            {
                "beta": 2.0,
                "b": {"1": 1.0},
                "n_particles": 5,
                "grid": {"dt": 1e-3, "steps": 4000},
                "replicas": 20000,
                "init": {"kind": "equispaced", "shift": 0.5},
                "pi1_times": [0.5, 1.0],
                "pi2_window": [3.0, 4.0],
                "moment_ks": [1, 2, 3, 4],
                "tolerances": {
                    "sigmas": 3.0,
                    "noise_sigmas": 4.0,
                    "runtime_s": 180.0,
                    "bias_per_dt": 200.0,
                },
            }
        )
    elif suite == "girsanov":
        base.update(
            {
                "beta": 2.0,
                "b": {"1": 1.0},
                "n_particles": 5,
                "grid": {"dt": 1e-3, "steps": 400},
                "replicas": 12000,
                "tau": {"2": 0.05},
                "init_values": [-4.0, -2.0, 0.0, 2.0, 4.0],
                "tolerances": {"sigmas": 3.0},
            }
        )
    elif suite == "npoint":
        base.update(
            {
                "beta": 2.0,
                "b": {"1": 1.0},
                "n_particles": 5,
                "grid": {"dt": 1e-3, "steps": 800},
                "replicas": 8000,
                "modes": [1, 2],
                "k_max": 4,
                "init": {"kind": "equispaced", "shift": 0.4},
                "tolerances": {"sigmas": 3.0},
            }
        )
    elif suite == "np-brackets":
        base.update(
            {
                "grid_points": 2000,
                "t_max": 1.0,
                "exponents": [-1, 0, 1, 2],
                "eps": 1e-2,
                "beta": 2.0,
                "b": {"1": 1.0},
                "tolerances": {"bracket_rel": 1e-4, "jacobi": 1e-3, "shuffle": 1e-9, "sv_exact": 1e-12},
            }
        )
    elif suite == "hermite-example":
        base.update(
            {
                "sigma": 1.0,
                "n_particles": 5,
                "k_max": 6,
                "t_max": 3.0,
                "dts": [0.01, 0.005],
                "linquadr_t_max": 1.0,
                "tolerances": {"pair_rel": 1e-3, "trend_low": 1.4, "trend_high": 2.6},
            }
        )
    else:
        raise ValueError(f"unknown suite {suite!r}")
    return base


# ----------------------------------------------------------------------
# suite implementations


def _pot(spec):
    from .kernel import Potential

    return Potential(float(spec["beta"]), {int(k): float(v) for k, v in spec["b"].items()})


def run_kernel_identities(scn):
    from .kernel import (
        generator_matrix,
        hermite_kernel,
        kernel_beta2_closed,
        kernel_to_csv_rows,
        propagator,
        verify_kernel_identities,
        expm_tol,
    )

    checks, tables = [], {}
    tol = scn["tolerances"]
    k_max = scn["k_max"]
    pots = {name: _pot(sp) for name, sp in scn["potentials"].items()}

    t0 = time.perf_counter()
    for name in ("quadratic-force", "mixed-force"):
        pot = pots[name]
        worst = 0.0
        for t in scn["times"]:
            ka = propagator(pot, t, k_max).entries
            kb = kernel_beta2_closed(pot.b, t, k_max).entries
            worst = max(worst, float(np.max(np.abs(ka - kb))))
        checks.append(check(f"route-equivalence/{name}", "exp(tA) vs characteristics", worst, tol["route_equivalence"]))
    elapsed = time.perf_counter() - t0
    checks.append(check("route-equivalence/runtime", "wall clock seconds", elapsed, tol["route_runtime_s"]))

    worst = 0.0
    for t in (0.25, 0.5, 1.0):
        k = propagator(pots["hermite"], t, k_max).entries
        want = np.diag([math.exp(-kk * t) for kk in range(k_max + 1)])
        worst = max(worst, float(np.max(np.abs(k - want))))
    checks.append(check("hermite-diagonal", "K_kl = delta e^{-kt/s^2}", worst, tol["hermite_diagonal"]))

    for name in ("hermite-beta1", "hermite-beta4"):
        pot = pots[name]
        worst = 0.0
        for t in (0.2, 0.5, 1.0):
            ka = propagator(pot, t, k_max).entries
            kb = hermite_kernel(1.0, pot.beta, t, k_max).entries
            worst = max(worst, float(np.max(np.abs(ka - kb))))
        checks.append(
            check(
                f"hermite-closed/{name}",
                "re-derived coefficients k!/(m!(k-2m)!) f^m e^{-(k-2m)t}",
                worst,
                tol["hermite_closed"],
                note="coefficients from the generating construction; printed binomial/power form rejected by this oracle",
            )
        )

    flip = scn.get("debug", {}).get("flip_generator_sign", False)
    for name in ("hermite", "generic-beta1", "generic-beta4"):
        pot = pots[name]
        if flip:
            a = -generator_matrix(pot, k_max)
            t, tp, ts = scn["identity_times"]
            k1 = expm_tol((t - tp) * a)
            k2 = expm_tol((tp - ts) * a)
            k3 = propagator(pot, t - ts, k_max).entries
            resid = float(np.max(np.abs(k1 @ k2 - k3)))
            checks.append(check(f"semigroup/{name}", "K(t-t')K(t'-t'')=K(t-t'')", resid, tol["semigroup"]))
            continue
        rep = verify_kernel_identities(pot, tuple(scn["identity_times"]), k_max)
        checks.append(
            check(
                f"semigroup/{name}",
                "K(t-t')K(t'-t'')=K(t-t''), relative to the kernel scale",
                rep["semigroup_rel"],
                tol["semigroup"],
                absolute=rep["semigroup"],
            )
        )
        checks.append(
            check(
                f"kolmogorov-forward/{name}",
                "dK/dt = (generator) K, relative",
                rep["kolmogorov_forward_rel"],
                tol["kolmogorov"],
                absolute=rep["kolmogorov_forward"],
            )
        )
        checks.append(
            check(
                f"kolmogorov-backward/{name}",
                "dK/dt = K (generator), relative",
                rep["kolmogorov_backward_rel"],
                tol["kolmogorov"],
                absolute=rep["kolmogorov_backward"],
            )
        )
        lem = rep["technical_lemma"]
        checks.append(
            check(
                f"technical-lemma/u=1/{name}",
                "d/dt' contour pair sum, weight ub'-u'b",
                lem["u=1"]["as_stated_rel"],
                tol["technical_lemma_rel"],
            )
        )
        key = "as_stated_rel" if pot.beta == 2.0 else "corrected_rel"
        checks.append(
            check(
                f"technical-lemma/u=z/{name}",
                "d/dt' contour pair sum, weight ub'-u'b (+ second-derivative band correction off the transport line)",
                lem["u=z"][key],
                tol["technical_lemma_rel"],
                as_stated_rel=lem["u=z"]["as_stated_rel"],
                corrected_rel=lem["u=z"]["corrected_rel"],
            )
        )

    rows = kernel_to_csv_rows(propagator(pots["mixed-force"], scn["times"][-1], k_max))
    tables["kernel_mixed_force"] = (("k", "l", "t", "value"), rows)
    return checks, tables


def run_boson_commutators(scn):
    from .boson import TimeGrid, commutator, dynamic_boson, kernel_table, static_boson
    from .kernel import retarded_propagator_modes

    checks, tables = [], {}
    tol = scn["tolerances"]["commutator"]
    grid = TimeGrid(scn["grid"]["dt"], scn["grid"]["steps"])
    k_max = scn["k_max"]
    n_part = scn["n_particles"]
    rows = []
    for name, spec in scn["potentials"].items():
        pot = _pot(spec)
        tab = kernel_table(pot, grid, k_max)
        j, jp = grid.steps - 1, 2
        g = retarded_propagator_modes(pot, grid.dt * (j - jp), k_max)
        g0 = retarded_propagator_modes(pot, 0.0, k_max)
        worst_psi = worst_cross = worst_delta = worst_plus = worst_phiphi = 0.0
        for k in range(1, k_max + 1):
            for l in range(1, k_max + 1):
                c = commutator(
                    dynamic_boson(k, j, pot, n_part, grid, k_max, tab),
                    dynamic_boson(-l, jp, pot, n_part, grid, k_max, tab),
                )
                worst_psi = max(worst_psi, abs(c.const - g.entries[k, l]))
                c2 = commutator(
                    dynamic_boson(k, j, pot, n_part, grid, k_max, tab),
                    static_boson(-l, jp, pot.beta, grid, k_max),
                )
                worst_cross = max(worst_cross, abs(c2.const - g.entries[k, l]))
                c3 = commutator(static_boson(k, j, pot.beta, grid, k_max), static_boson(-l, j, pot.beta, grid, k_max))
                want = (l / grid.dt) if k == l else 0.0
                worst_delta = max(worst_delta, abs(c3.const - want))
                c4 = commutator(static_boson(k, j, pot.beta, grid, k_max), static_boson(-l, jp, pot.beta, grid, k_max))
                worst_phiphi = max(worst_phiphi, c4.field_max_abs())
                rows.append((name, k, l, c.const, g.entries[k, l]))
            d = dynamic_boson(-k, 3, pot, n_part, grid, k_max, tab) - static_boson(-k, 3, pot.beta, grid, k_max)
            worst_plus = max(worst_plus, d.field_max_abs())
            ceq = commutator(
                dynamic_boson(k, j, pot, n_part, grid, k_max, tab),
                static_boson(-k, j, pot.beta, grid, k_max),
            )
            worst_cross = max(worst_cross, abs(ceq.const - g0.entries[k, k]))
        checks.append(check(f"psi-psi-retarded/{name}", "[psi_k(t), psi_-l(t')] = l K_kl(t-t')", worst_psi, tol))
        checks.append(check(f"psi-phi/{name}", "[psi_k(t), phi_-l(t')] = l K_kl, incl. equal-time", worst_cross, tol))
        checks.append(check(f"phi-phi-delta/{name}", "[phi_k, phi_-l] = (l/dt) delta_kl delta_jj'", worst_delta, tol))
        checks.append(check(f"phi-phi-unequal/{name}", "[phi(t), phi(t')] = 0 for t != t'", worst_phiphi, tol))
        checks.append(check(f"psi-plus-equals-phi-plus/{name}", "multiplier halves coincide exactly", worst_plus, tol))
    tables["psi_psi_commutators"] = (("potential", "k", "l", "commutator", "l*K_kl"), rows)
    return checks, tables


def run_sv_algebra(scn):
    from .boson import TimeGrid, kernel_table
    from .dyson import InitSpec, simulate_dbm
    from .svconstraints import (
        build_dynamical_constraint,
        constraint_residual_mc,
        verify_sv_algebra_linear,
        verify_sv_algebra_quadratic,
    )
    from .timefunc import bump, poly_t

    checks, tables = [], {}
    tol = scn["tolerances"]
    rows = []
    residual_reports = []
    t0 = time.perf_counter()
    for name, spec in scn["potentials"].items():
        pot = _pot(spec)
        resid = {}
        for gspec in scn["grids"]:
            grid = TimeGrid(gspec["dt"], gspec["steps"])
            tmax = grid.dt * grid.steps
            f = bump(0.0, tmax, 4)
            g = bump(0.0, tmax, 4) * poly_t(1)
            tab = kernel_table(pot, grid, scn["k_max"])
            reps = verify_sv_algebra_quadratic(
                f, g, pot, scn["n_particles"], grid, scn["k_max"], mode_int=scn["interior_modes"], ktable=tab
            )
            reps += verify_sv_algebra_linear(
                f, g, pot, scn["n_particles"], grid, scn["k_max"], mode_int=scn["interior_modes"], ktable=tab
            )
            for r in reps:
                resid.setdefault(r["relation"], []).append(r["residual"])
                rows.append((name, r["relation"], gspec["dt"], scn["k_max"], r["residual"], r["relative"]))
                residual_reports.append(
                    {
                        "potential": name,
                        "relation": r["relation"],
                        "dt": gspec["dt"],
                        "K_max": scn["k_max"],
                        "residual": r["residual"],
                        "tolerance": None,  # pinned through the dt-halving ratio below
                        "pass": None,
                    }
                )
        for rel, vals in resid.items():
            ratio = vals[0] / vals[1] if vals[1] else float("inf")
            ok = tol["ratio_low"] <= ratio <= tol["ratio_high"]
            for rr in residual_reports:
                if rr["potential"] == name and rr["relation"] == rel:
                    rr["tolerance"] = f"ratio in [{tol['ratio_low']}, {tol['ratio_high']}]"
                    rr["pass"] = ok
            checks.append(
                check(
                    f"bracket-ratio/{name}/{rel}",
                    "first-order dt trend of the bracket residual",
                    ratio,
                    tol["ratio_high"],
                    passed=ok,
                )
            )
    elapsed = time.perf_counter() - t0
    checks.append(check("sv-algebra/runtime", "wall clock seconds", elapsed, tol["runtime_s"]))
    tables["sv_bracket_residuals"] = (("potential", "relation", "dt", "k_max", "residual", "relative"), rows)
    tables["__json__bracket_residuals"] = residual_reports

    mc = scn.get("constraint_mc")
    if mc:
        pot = _pot(mc)
        grid = TimeGrid(mc["grid"]["dt"], mc["grid"]["steps"])
        tmax = grid.dt * grid.steps
        a = bump(0.0, tmax, 4)
        ens = simulate_dbm(
            pot,
            mc["n_particles"],
            grid,
            mc["replicas"],
            InitSpec("equispaced", shift=mc["init_shift"]),
            seed=scn["seed"],
            k_track=4,
            track_slin=(1, 2),
            store_paths="none",
        )
        for n in (-1, 0):
            cop = build_dynamical_constraint(n, a, pot, mc["n_particles"], grid, mc["k_max"], parts="affine")
            mean, se = constraint_residual_mc(cop, ens, 0)
            checks.append(
                check(
                    f"constraint-order0/n={n}",
                    "dynamical constraint annihilates the generating functional at order tau^0",
                    mean,
                    tol["mc_sigmas"] * se if se else 1e-12,
                    se=se,
                )
            )
    return checks, tables


def run_equilibrium_loop(scn):
    from .dyson import loop_equation_residual, sample_equilibrium
    from .kernel import Potential

    checks, tables = [], {}
    sig = scn["tolerances"]["sigmas"]
    rows = []
    for case in scn["cases"]:
        n_part, beta = case["n_particles"], case["beta"]
        pot = Potential(beta, {int(k): float(v) for k, v in scn["b"].items()})
        eq = sample_equilibrium(pot, n_part, scn["sweeps"], seed=scn["seed"], chains=scn["chains"])
        for order in scn["orders"]:
            res, se = loop_equation_residual(eq, order, pot)
            rows.append((n_part, beta, order, res, se))
            checks.append(
                check(
                    f"loop-equation/N={n_part}/beta={beta}/n={order}",
                    "integration-by-parts moment identity",
                    res,
                    sig * se,
                    se=se,
                )
            )
        mean, mse = eq.pi_mean_se(2)
        want = pot.sigma**2 * (beta * n_part * (n_part - 1) / 2.0 + n_part)
        checks.append(
            check(
                f"pi2-stationary/N={n_part}/beta={beta}",
                "<pi_2> = sigma^2 (beta N(N-1)/2 + N)",
                mean - want,
                sig * mse,
                mean=mean,
                expected=want,
            )
        )
    tables["loop_residuals"] = (("n_particles", "beta", "order", "residual", "se"), rows)
    return checks, tables


def run_dbm_moments(scn):
    from .boson import TimeGrid
    from .dyson import InitSpec, simulate_dbm

    checks, tables = [], {}
    tol = scn["tolerances"]
    pot = _pot(scn)
    n_part = scn["n_particles"]
    grid = TimeGrid(scn["grid"]["dt"], scn["grid"]["steps"])
    t0 = time.perf_counter()
    ens = simulate_dbm(
        pot,
        n_part,
        grid,
        scn["replicas"],
        InitSpec(**scn["init"]),
        seed=scn["seed"],
        k_track=6,
        track_moment_residual=tuple(scn["moment_ks"]),
        store_paths="none",
    )
    elapsed = time.perf_counter() - t0

    pi1_0 = ens.pi_mean(1)[0]
    for t in scn["pi1_times"]:
        j = int(round(t / grid.dt))
        want = pi1_0 * math.exp(-t)
        checks.append(
            check(
                f"pi1-decay/t={t}",
                "E pi_1(t) = pi_1(0) e^{-t/sigma^2}",
                ens.pi_mean(1)[j] - want,
                tol["sigmas"] * ens.pi_se(1)[j],
                mean=float(ens.pi_mean(1)[j]),
                expected=want,
            )
        )
    j0, j1 = (int(round(x / grid.dt)) for x in scn["pi2_window"])
    window = ens.pi_mean(2)[j0 : j1 + 1]
    se_w = float(np.mean(ens.pi_se(2)[j0 : j1 + 1]))  # correlated in time: no 1/sqrt(T) gain claimed
    want = pot.sigma**2 * (pot.beta * n_part * (n_part - 1) / 2.0 + n_part)
    checks.append(
        check(
            "pi2-longtime",
            "<pi_2> relaxes to sigma^2 (beta N(N-1)/2 + N)",
            float(np.mean(window)) - want,
            tol["sigmas"] * se_w,
            mean=float(np.mean(window)),
            expected=want,
        )
    )
    var = ens.noise_sumsq / ens.noise_count - (ens.noise_sum / ens.noise_count) ** 2
    se_var = var * math.sqrt(2.0 / (ens.noise_count - 1))
    checks.append(
        check("noise-variance", "Var(dB) = 2 dt", var - 2 * grid.dt, tol["noise_sigmas"] * se_var, variance=float(var))
    )
    rows = []
    for k in scn["moment_ks"]:
        r = ens.moment_residual_samples[k]
        se = float(r.std(ddof=1) / math.sqrt(r.size))
        bias = tol["bias_per_dt"] * (1 + k * k) * grid.dt
        rows.append((k, float(r.mean()), se, bias))
        checks.append(
            check(
                f"moment-hierarchy/k={k}",
                "time-averaged residual of the averaged evolution identity",
                float(r.mean()),
                tol["sigmas"] * se + bias,
                se=se,
                bias_bound=bias,
            )
        )
        s = ens.martingale_samples[k]
        s_se = float(s.std(ddof=1) / math.sqrt(s.size))
        checks.append(
            check(
                f"action-density-mean/k={k}",
                "E S_k(t) = 0 (martingale density)",
                float(s.mean()),
                tol["sigmas"] * s_se,
                se=s_se,
            )
        )
    checks.append(check("dbm-moments/runtime", "wall clock seconds", elapsed, tol["runtime_s"]))
    checks.append(check("rejection-rate", "step rejections below the weak-order budget", ens.rejection_rate, 0.01))
    tables["moment_residuals"] = (("k", "residual", "se", "bias_bound"), rows)
    tables["pi_moments"] = (
        ("t", "pi1_mean", "pi1_se", "pi2_mean", "pi2_se"),
        [
            (float(grid.times[j]), float(ens.pi_mean(1)[j]), float(ens.pi_se(1)[j]), float(ens.pi_mean(2)[j]), float(ens.pi_se(2)[j]))
            for j in range(0, grid.steps + 1, max(1, grid.steps // 100))
        ],
    )
    return checks, tables


def run_girsanov(scn):
    from .boson import TimeGrid
    from .dyson import (
        InitSpec,
        girsanov_logweight,
        girsanov_quadratic_correction,
        linear_statistics,
        perturbed_potential,
        simulate_dbm,
    )

    checks, tables = [], {}
    sig = scn["tolerances"]["sigmas"]
    pot = _pot(scn)
    grid = TimeGrid(scn["grid"]["dt"], scn["grid"]["steps"])
    tau = {int(k): float(v) for k, v in scn["tau"].items()}
    init = InitSpec("explicit", values=tuple(scn["init_values"]))
    base = simulate_dbm(pot, scn["n_particles"], grid, scn["replicas"], init, seed=scn["seed"], store_paths="all", k_track=4)
    lw = girsanov_logweight(base, tau)
    qc = girsanov_quadratic_correction(base, tau)
    w = np.exp(lw + qc)
    mean_w = float(w.mean())
    se_w = float(w.std(ddof=1) / math.sqrt(w.size))
    checks.append(check("full-weight-mean", "E[exp(logweight + quadratic correction)] = 1", mean_w - 1.0, sig * se_w, mean=mean_w))

    pi2 = linear_statistics(base, 2)[:, -1]
    rew = float(np.sum(w * pi2) / np.sum(w))
    se_rew = float(np.std(w * (pi2 - rew), ddof=1) / (np.mean(w) * math.sqrt(base.m)))
    tilted = perturbed_potential(pot, tau)
    direct = simulate_dbm(tilted, scn["n_particles"], grid, scn["replicas"], init, seed=scn["seed"] + 1, k_track=4, store_paths="none")
    d_mean = float(direct.pi_mean(2)[-1])
    d_se = float(direct.pi_se(2)[-1])
    checks.append(
        check(
            "reweighted-vs-direct",
            "tilt by the stored weight = drift shift -2 d(sum tau_k pi_k)",
            rew - d_mean,
            sig * math.hypot(se_rew, d_se),
            reweighted=rew,
            direct=d_mean,
        )
    )
    tables["girsanov"] = (
        ("quantity", "value", "se"),
        [("full_weight_mean", mean_w, se_w), ("reweighted_pi2", rew, se_rew), ("direct_pi2", d_mean, d_se)],
    )
    return checks, tables


def run_npoint(scn):
    from .boson import TimeGrid
    from .dyson import InitSpec, npoint_functionals, npoint_vs_kernel, simulate_dbm
    from .timefunc import bump

    checks, tables = [], {}
    tol = scn["tolerances"]
    pot = _pot(scn)
    grid = TimeGrid(scn["grid"]["dt"], scn["grid"]["steps"])
    tmax = grid.dt * grid.steps
    f = bump(0.0, tmax, 2)
    funcs = {}
    for k in scn["modes"]:
        fl = npoint_functionals(pot, grid, f, k, scn["k_max"])
        funcs[f"npoint{k}:lhs"] = fl["lhs"]
        funcs[f"npoint{k}:rhs"] = fl["rhs"]
    ens = simulate_dbm(
        pot,
        scn["n_particles"],
        grid,
        scn["replicas"],
        InitSpec(**scn["init"]),
        seed=scn["seed"],
        k_track=6,
        functionals=funcs,
        store_paths="none",
    )
    rows = []
    for k in scn["modes"]:
        lhs, rhs, disc, se = npoint_vs_kernel(ens, f, k)
        rows.append((k, lhs, rhs, disc, se))
        checks.append(
            check(
                f"npoint/k={k}",
                "int f <pi_k> = kernel convolution of the action-density source (+ initial term)",
                disc,
                tol["sigmas"] * se + 1e-12 * abs(lhs),  # floor: the k=1 discrepancy telescopes to rounding
                lhs=lhs,
                rhs=rhs,
                se=se,
            )
        )
    tables["npoint"] = (("k", "lhs", "rhs", "discrepancy", "se"), rows)
    return checks, tables


def run_np_brackets(scn):
    from .nptransform import (
        IIWord,
        NPGenerator,
        SampledPath,
        elementary_bracket,
        evaluate_iterated_exact,
        force_change,
        numeric_commutator_richardson,
        shuffle_product,
        sv_bracket,
    )
    from .timefunc import TimePoly, poly_t

    checks, tables = [], {}
    tol = scn["tolerances"]
    path = SampledPath.from_function(lambda t: 2.0 + np.sin(t), 0.0, scn["t_max"], scn["grid_points"] + 1)
    a1, a2 = poly_t(2), TimePoly([0.0, 1.0, 0.5])
    eps = scn["eps"]
    worst = 0.0
    rows = []
    for n1 in scn["exponents"]:
        for n2 in scn["exponents"]:
            num = numeric_commutator_richardson(NPGenerator(n1, a1.deriv(1)), NPGenerator(n2, a2.deriv(1)), path, eps)
            sym = elementary_bracket(n1, a1, n2, a2).variation(path)
            sl = np.s_[10:-10]
            scale = max(float(np.max(np.abs(sym[sl]))), float(np.max(np.abs(num[sl]))))
            rel = float(np.max(np.abs(num[sl] - sym[sl]))) / scale if scale > 1e-10 else float(np.max(np.abs(num[sl])))
            rows.append((n1, n2, rel, scale))
            worst = max(worst, rel)
    checks.append(check("elementary-bracket", "closed bracket vs 4-point stencil, eps-Richardson", worst, tol["bracket_rel"]))

    gens = [
        NPGenerator(-1, poly_t(2).deriv(1)),
        NPGenerator(0, TimePoly([0.0, 1.0, 0.4]).deriv(1)),
        NPGenerator(1, poly_t(3).deriv(1)),
    ]
    labels = [poly_t(2), TimePoly([0.0, 1.0, 0.4]), poly_t(3)]
    ns = [-1, 0, 1]
    total = np.zeros_like(path.values)
    for i, j, k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        inner = elementary_bracket(ns[i], labels[i], ns[j], labels[j])
        total += numeric_commutator_richardson(inner, gens[k], path, 2 * eps)
    checks.append(check("jacobi", "cyclic bracket sum vanishes", float(np.max(np.abs(total[10:-10]))), tol["jacobi"]))

    lam_poly = TimePoly([2.0, 1.0, -1.0 / 3.0])
    w1 = IIWord(((1, TimePoly([1.0])), (0, poly_t(1))))
    w2 = IIWord(((2, TimePoly([1.0])),))
    t = np.linspace(0.0, scn["t_max"], 101)
    lhs = evaluate_iterated_exact(w1, lam_poly)(t) * evaluate_iterated_exact(w2, lam_poly)(t)
    rhs = np.zeros_like(t)
    for c, w in shuffle_product(w1, w2):
        rhs += c * evaluate_iterated_exact(w, lam_poly)(t)
    checks.append(
        check(
            "shuffle-identity",
            "product of iterated integrals = shuffle sum (exact polynomial path)",
            float(np.max(np.abs(lhs - rhs))),
            tol["shuffle"],
        )
    )

    from .kernel import Potential

    pot = _pot(scn)
    tH = np.linspace(0, 1, 101)
    hist = np.sort(np.vstack([np.sin(tH) - 1, 0.3 * tH, 2 + 0.1 * np.cos(tH)]).T, axis=1)
    worst_delay = 0.0
    for n in (-1, 0):
        out = force_change(n, poly_t(2), pot, hist[-1], hist_matrix=(tH, hist))
        worst_delay = max(worst_delay, float(np.max(np.abs(out["delay"]))))
    checks.append(check("delayed-force-closed-family", "equal time shifts kill the delayed term for n in {-1, 0}", worst_delay, 1e-12))

    kind, lbl = sv_bracket("Y", TimePoly([1.0]), "X", poly_t(1))
    err = float(np.max(np.abs(lbl.coeffs - np.array([-0.5]))))
    kind2, lbl2 = sv_bracket("X", poly_t(1), "X", TimePoly([1.0]))
    err = max(err, float(np.max(np.abs(lbl2.coeffs - np.array([1.0])))))
    kind3, _ = sv_bracket("Y", poly_t(1), "Y", poly_t(2))
    checks.append(
        check(
            "sv-bracket-exact",
            "[X_f,X_g]=X_{f'g-fg'}, [Y_f,X_g]=Y_{f'g-fg'/2}, [Y,Y]=0",
            err,
            tol["sv_exact"],
            passed=err <= tol["sv_exact"] and kind == "Y" and kind2 == "X" and kind3 == "0",
        )
    )
    tables["np_brackets"] = (("n1", "n2", "relative_error", "scale"), rows)
    return checks, tables


def run_hermite_example(scn):
    from .boson import TimeGrid
    from .kernel import Potential
    from .svconstraints import hermite_cancellation_pairs, hermite_lin_quadr_bracket
    from .timefunc import bump, poly_t

    checks, tables = [], {}
    tol = scn["tolerances"]
    sigma, n_part = scn["sigma"], scn["n_particles"]
    rows = []
    rels = {}
    for dt in scn["dts"]:
        grid = TimeGrid(dt, int(round(scn["t_max"] / dt)))
        f = bump(0.0, scn["t_max"], 3)
        g = bump(0.0, scn["t_max"], 3) * poly_t(1)
        rep = hermite_cancellation_pairs(f, g, sigma, n_part, grid, scn["k_max"])
        for name, v in rep.items():
            rels.setdefault(name, []).append(v["relative"])
            rows.append((name, dt, v["residual"], v["magnitude"], v["relative"]))
    for name, vals in rels.items():
        checks.append(check(f"cancellation/{name}", "paired contributions cancel", vals[-1], tol["pair_rel"]))
        if vals[-1] > 1e-10:  # display-level pairs cancel identically; no trend
            ratio = vals[0] / vals[-1]
            checks.append(
                check(
                    f"cancellation-trend/{name}",
                    "pair residual shrinks at first order in dt",
                    ratio,
                    tol["trend_high"] * 2,
                    passed=tol["trend_low"] <= ratio <= tol["trend_high"] * 2,
                )
            )
    pot = Potential(2.0, {1: 1.0 / sigma**2})
    consts = []
    for dt in scn["dts"]:
        grid = TimeGrid(dt, int(round(scn["linquadr_t_max"] / dt)))
        f = bump(0.0, scn["linquadr_t_max"], 4)
        g = bump(0.0, scn["linquadr_t_max"], 4) * poly_t(1)
        rep = hermite_lin_quadr_bracket(f, g, pot, n_part, grid, scn["k_max"])
        consts.append(rep["const_minus_analytic"])
        checks.append(
            check(
                f"linquadr-analytic/dt={dt}",
                "scalar part equals N * total-derivative quadrature (= 0)",
                rep["analytic_total_derivative"],
                1e-9,
            )
        )
    ratio = consts[0] / consts[1] if consts[1] else float("inf")
    checks.append(
        check(
            "linquadr-trend",
            "total-derivative cancellation at first order in dt",
            ratio,
            tol["trend_high"],
            passed=tol["trend_low"] <= ratio <= tol["trend_high"],
        )
    )
    tables["hermite_cancellations"] = (("pair", "dt", "residual", "magnitude", "relative"), rows)
    return checks, tables


RUNNERS = {
    "kernel-identities": run_kernel_identities,
    "boson-commutators": run_boson_commutators,
    "sv-algebra": run_sv_algebra,
    "equilibrium-loop": run_equilibrium_loop,
    "dbm-moments": run_dbm_moments,
    "girsanov": run_girsanov,
    "npoint": run_npoint,
    "np-brackets": run_np_brackets,
    "hermite-example": run_hermite_example,
}


# ----------------------------------------------------------------------
# orchestration


def run_suite(scn: dict):
    suite = scn["suite"]
    if suite not in RUNNERS:
        raise ValueError(f"unknown suite {suite!r}")
    checks, tables = RUNNERS[suite](scn)
    report = {
        "schema_version": SCHEMA_VERSION,
        "suite": suite,
        "scenario": scn,
        "checks": checks,
        "passed": all(c["pass"] for c in checks),
    }
    return report, tables


def write_report(report, tables, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    name = report["suite"]
    with open(out_dir / f"{name}.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for tname, payload in tables.items():
        if tname.startswith("__json__"):
            with open(out_dir / f"{name}_{tname[8:]}.json", "w") as fh:
                json.dump(payload, fh, indent=2, sort_keys=True)
                fh.write("\n")
            continue
        header, rows = payload
        with open(out_dir / f"{name}_{tname}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)


def validate_scenario(scn: dict):
    if "suite" not in scn:
        raise ValueError("config must name a suite")
    if scn["suite"] not in SUITES:
        raise ValueError(f"unknown suite {scn['suite']!r}; choose from {', '.join(SUITES)}")
    ref = default_scenario(scn["suite"])
    missing = [k for k in ref if k not in scn and k not in ("schema_version",)]
    if missing:
        raise ValueError(f"config is missing explicit settings: {', '.join(sorted(missing))}")
    return scn


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="coulombgas", description="verification suites for the Coulomb-gas dynamics engine")
    sub = parser.add_subparsers(dest="command", required=True)
    runp = sub.add_parser("run", help="run a suite from a JSON scenario config")
    runp.add_argument("config", help="path to the scenario JSON")
    runp.add_argument("--out", default=None, help="output directory (default: COULOMBGAS_OUT or ./reports)")
    runp.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    runp.add_argument("--threads", type=int, default=None, help="worker hint, recorded in the report")
    defp = sub.add_parser("default-config", help="print the complete default scenario for a suite")
    defp.add_argument("suite", choices=SUITES)
    args = parser.parse_args(argv)

    if args.command == "default-config":
        print(json.dumps(default_scenario(args.suite), indent=2, sort_keys=True))
        return 0

    try:
        with open(args.config) as fh:
            scn = json.load(fh)
        validate_scenario(scn)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        scn["seed"] = args.seed
    if args.threads is not None:
        scn["threads"] = args.threads
    out_dir = Path(args.out or os.environ.get("COULOMBGAS_OUT", "reports"))

    report, tables = run_suite(scn)
    write_report(report, tables, out_dir)
    for c in report["checks"]:
        status = "pass" if c["pass"] else "FAIL"
        print(f"[{status}] {c['name']}: value={c['value']:.6g} tol={c['tolerance']:.6g}")
    print(f"suite {report['suite']}: {'PASS' if report['passed'] else 'FAIL'}")
    return 0 if report["passed"] else 1


if __name__ == "__main__":
    sys.exit(main())
