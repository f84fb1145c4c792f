"""Command line entry point.

Exit codes: 0 success, 1 configuration error, 2 numerical failure,
3 a ``verify`` check failed.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time

import numpy as np

from . import harness
from .config import ExperimentConfig, apply_overrides, initial_profile, load_config
from .deterministic import equilibrium_density, integrate_bd
from .errors import BDError, ConfigError, DomainError, NoFixedPointError, NumericalError
from .fluctuation import covariance_ode, em_integrate, stationary_covariance
from .operators import RateKernel, mass
from .ssa import init_from_profile, init_monomers, qv_report, replica_rng, run, sim_truncation

logger = logging.getLogger("bdfluct")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECK = 0, 1, 2, 3

VERIFY_DEFAULTS = {
    "lln": dict(n_list=[1000, 10_000, 100_000], replicas=100, t_end=1.0, samples=32),
    "clt": dict(n_list=[1000, 10_000, 100_000], replicas=500, t_end=1.0, samples=32, k_stat=10),
    "qv": dict(n_list=[100_000], replicas=500, t_end=1.0, samples=2),
    "moments": dict(n_list=[1000, 10_000, 100_000], replicas=100, t_end=1.0, samples=32,
                    alpha=1.5, beta=2.0),
}


# --------------------------------------------------------------------------
# output helpers


def _header(cfg: ExperimentConfig, command: str) -> list[str]:
    return [f"# bdfluct {command}",
            f"# fingerprint={harness.config_fingerprint(cfg.as_dict())} seed={cfg.seed}"]


def _write_csv(path: str, header: list[str], columns: list[str], rows) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write(line + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                        for v in row])


def _write_json(path: str, header: list[str], payload: dict) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    doc = {"header": header, **payload}
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1, allow_nan=True)
        fh.write("\n")


def _say(args, msg: str) -> None:
    if not args.quiet:
        print(msg)


# --------------------------------------------------------------------------
# subcommands


def cmd_ode(cfg: ExperimentConfig, args) -> int:
    kernel = cfg.kernel()
    c0 = initial_profile(cfg, kernel)
    traj = integrate_bd(c0, kernel, cfg.t_end, np.linspace(0.0, cfg.t_end, cfg.samples)
                        if cfg.t_end > 0 else [0.0], rtol=cfg.rtol, atol=cfg.atol)
    k = cfg.k_out
    rows = ([t, *c[:k], mass(c)] for t, c in zip(traj.times, traj.states))
    path = os.path.join(cfg.out, "ode.csv")
    _write_csv(path, _header(cfg, "ode"), ["t", *[f"c_{i}" for i in range(1, k + 1)], "mass"],
               rows)
    _say(args, f"wrote {path} ({traj.times.size} rows); mass_drift={traj.mass_drift:.3e}")
    return EXIT_OK


def cmd_equilibrium(cfg: ExperimentConfig, args) -> int:
    kernel = cfg.kernel()
    eq = equilibrium_density(kernel)
    prof_path = os.path.join(cfg.out, "equilibrium_profile.csv")
    _write_csv(prof_path, _header(cfg, "equilibrium"), ["k", "c_k"],
               ((i + 1, v) for i, v in enumerate(eq.profile)))
    payload = {"c1": eq.c1, "profile_path": prof_path, "zs": eq.zs,
               "mass_residual": eq.mass_residual, "balance_residual": eq.balance_residual}
    path = os.path.join(cfg.out, "equilibrium.json")
    _write_json(path, _header(cfg, "equilibrium"), payload)
    _say(args, f"c1={eq.c1:.12f} zs={eq.zs:.6g} balance_residual={eq.balance_residual:.2e}")
    return EXIT_OK


def cmd_simulate(cfg: ExperimentConfig, args) -> int:
    kernel = cfg.kernel()
    K_sim = sim_truncation(cfg.n, kernel.K)
    kernel = kernel.truncate(K_sim) if K_sim < kernel.K else kernel
    c0 = initial_profile(cfg, cfg.kernel())
    if cfg.init == "monomers":
        state = init_monomers(cfg.n, K_sim)
    else:
        if np.any(c0[K_sim:] > 0):
            c0 = c0[:K_sim] / mass(c0[:K_sim])
        state = init_from_profile(c0[:K_sim], cfg.n)
    times = np.linspace(0.0, cfg.t_end, cfg.samples) if cfg.samples > 1 else [cfg.t_end]
    k = min(cfg.k_out, K_sim)
    run(init_monomers(2, 2), RateKernel.constant(2), 1.0, rng=replica_rng(0))  # load compiled loop
    t0 = time.perf_counter()
    traj = run(state, kernel, cfg.t_end, times, replica_rng(cfg.seed, cfg.n, 0), qv=True,
               k_out=k)
    elapsed = time.perf_counter() - t0
    header = _header(cfg, "simulate")
    cols = ["t", *[f"x_{i}" for i in range(1, k + 1)], "mass", "events"]
    rows = ([t, *x, m, e] for t, x, m, e in zip(traj.sample_times, traj.x.tolist(),
                                                 traj.sample_mass, traj.events))
    path = os.path.join(cfg.out, "trajectory.csv")
    _write_csv(path, header, cols, rows)
    qpath = os.path.join(cfg.out, "qv.csv")
    _write_csv(qpath, header, ["channel", "counts", "integrated_rate", "zscore"],
               ([r.channel, r.counts, r.integrated_rate, "" if r.zscore is None else r.zscore]
                for r in qv_report(traj.qv)))
    events = traj.state.event_count
    rate = events / elapsed if elapsed > 0 else float("inf")
    _say(args, f"wrote {path} and {qpath}; {events} events, {rate:.3g} events/s"
               + (" (absorbed)" if traj.absorbed else ""))
    return EXIT_OK


def _cov_rows(S):
    K = S.shape[0]
    return ([i + 1, j + 1, S[i, j]] for i in range(K) for j in range(K))


def cmd_fluctuate(cfg: ExperimentConfig, args) -> int:
    kernel = cfg.kernel()
    header = _header(cfg, "fluctuate")
    summary = {"mode": cfg.mode}
    if cfg.mode == "stationary":
        eq = equilibrium_density(kernel)
        cov = stationary_covariance(eq.profile, kernel)
        summary.update(cov.summary(min(4, kernel.K)))
        summary["slowest_decay_rate"] = float(np.abs(cov.eigenvalues.real).min())
    else:
        c0 = initial_profile(cfg, kernel)
        ode = integrate_bd(c0, kernel, cfg.t_end, [cfg.t_end], rtol=1e-10, atol=1e-14)
        cov = covariance_ode(np.zeros((kernel.K, kernel.K)), ode, kernel, cfg.t_end, cfg.dt)
        summary.update(cov.summary(min(4, kernel.K)))
        if cfg.mode == "em":
            path = em_integrate(np.zeros((cfg.paths, kernel.K)), ode, kernel, cfg.dt,
                                replica_rng(cfg.seed, 0), t_end=cfg.t_end,
                                record_every=max(1, int(round(cfg.t_end / cfg.dt))))
            W = path.W[-1]
            ks = min(cfg.k_stat, kernel.K)
            emp, se = harness._cov_with_se(W[:, :ks])
            model = cov.sigma[:ks, :ks]
            live = se > 1e-12
            z = np.abs(emp - model)[live] / se[live]
            max_z = float(z.max()) if z.size else 0.0
            summary.update({"paths": cfg.paths, "max_abs_z": max_z,
                            "stability_warning": bool(path.stability_warning)})
            _say(args, f"em vs ode: max |z| = {max_z:.3f} over {int(live.sum())} entries")
    cpath = os.path.join(cfg.out, "covariance.csv")
    _write_csv(cpath, header, ["row", "col", "value"], _cov_rows(cov.sigma))
    jpath = os.path.join(cfg.out, "covariance.json")
    _write_json(jpath, header, summary)
    _say(args, f"wrote {cpath}; trace={summary['trace']:.6g} "
               f"min_eigenvalue={summary['min_eigenvalue']:.3e}")
    return EXIT_OK


def _verify_spec(cfg: ExperimentConfig, name: str) -> tuple[harness.EnsembleSpec, ExperimentConfig]:
    for key, value in VERIFY_DEFAULTS[name].items():
        if key not in cfg.explicit:
            setattr(cfg, key, value)
    cfg.validate()
    kernel = cfg.kernel()
    spec = harness.EnsembleSpec(kernel, tuple(cfg.n_list), cfg.replicas, cfg.t_end,
                                n_samples=cfg.samples, K_stat=min(cfg.k_stat, kernel.K),
                                master_seed=cfg.seed, c0=initial_profile(cfg, kernel),
                                weights=cfg.weights())
    return spec, cfg


def _table_rows(report) -> tuple[list[str], list]:
    d = report.to_dict()
    if d["kind"] == "lln":
        return ["N", "M", "mean_error", "se"], [[r["N"], r["M"], r["mean_error"], r["se"]]
                                               for r in d["rows"]]
    if d["kind"] == "clt":
        return (["N", "t", "frobenius_rel_error", "max_abs_z", "mean_sq_wnorm"],
                [[e["N"], e["t"], e["frobenius_rel_error"], e["max_abs_z"], e["mean_sq_wnorm"]]
                 for e in d["entries"]])
    if d["kind"] == "qv":
        return (["N", "channel", "active", "mean_integrated_rate", "limit", "rel_error",
                 "variance_ratio"],
                [[r["N"], r["channel"], int(r["active"]), r["mean_integrated_rate"],
                  r["limit"] * r["N"], "" if r["rel_error"] is None else r["rel_error"],
                  "" if r["variance_ratio"] is None else r["variance_ratio"]]
                 for r in d["rows"]])
    return (["N", "zeta", "zeta_se", "kappa", "kappa_se"],
            [[r["N"], r["zeta"], r["zeta_se"], r["kappa"], r["kappa_se"]] for r in d["rows"]])


def run_verify(name: str, cfg: ExperimentConfig):
    """Build the ensemble for ``name`` and return its report."""
    spec, cfg = _verify_spec(cfg, name)
    if name == "lln":
        return harness.lln_rate(spec)
    if name == "clt":
        return harness.clt_compare(spec)
    if name == "qv":
        return harness.qv_limit_check(spec)
    return harness.moment_diagnostics(spec, cfg.companion())


def cmd_verify(cfg: ExperimentConfig, args) -> int:
    name = args.check
    t0 = time.perf_counter()
    report = run_verify(name, cfg)
    header = _header(cfg, f"verify {name}")
    jpath = os.path.join(cfg.out, f"verify_{name}.json")
    _write_json(jpath, header, {"report": report.to_dict()})
    cols, rows = _table_rows(report)
    _write_csv(os.path.join(cfg.out, f"verify_{name}.csv"), header, cols, rows)
    ok = report.passed()
    _say(args, f"verify {name}: {'PASS' if ok else 'FAIL'} ({time.perf_counter() - t0:.1f} s); "
               f"report in {jpath}")
    _say(args, report.note)
    return EXIT_OK if ok else EXIT_CHECK


def cmd_bench(cfg: ExperimentConfig, args) -> int:
    K = cfg.truncation if "truncation" in cfg.explicit else 1000
    N = cfg.n if "n" in cfg.explicit else 100_000
    kernel = RateKernel.constant(sim_truncation(N, K))
    state = init_monomers(N, kernel.K)
    n_events = args.events
    run(state, kernel, np.inf, rng=replica_rng(cfg.seed, 0), max_events=1000)  # warm-up
    t0 = time.perf_counter()
    traj = run(state, kernel, np.inf, rng=replica_rng(cfg.seed, 1), max_events=n_events)
    elapsed = time.perf_counter() - t0
    rate = traj.state.event_count / elapsed
    _say(args, f"bench: N={N} K={kernel.K} events={traj.state.event_count} "
               f"time={elapsed:.2f}s rate={rate:.3g} events/s")
    return EXIT_OK


COMMANDS = {"ode": cmd_ode, "equilibrium": cmd_equilibrium, "simulate": cmd_simulate,
            "fluctuate": cmd_fluctuate, "verify": cmd_verify, "bench": cmd_bench}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI configuration file")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--n", type=int, nargs="+", metavar="N",
                        help="mass (one value) or size ladder (several values)")
    common.add_argument("--replicas", type=int, help="replicas per size")
    common.add_argument("--t-end", type=float, help="time horizon")
    common.add_argument("--truncation", type=int, help="largest cluster size K")
    common.add_argument("--weights-alpha", type=float, help="weight exponent alpha")
    common.add_argument("--quiet", action="store_true", help="suppress progress output")

    p = argparse.ArgumentParser(prog="bdfluct", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("ode", parents=[common], help="integrate the mean-field equations")
    sub.add_parser("equilibrium", parents=[common], help="equilibrium profile")
    sub.add_parser("simulate", parents=[common], help="one exact stochastic trajectory")
    sub.add_parser("fluctuate", parents=[common], help="fluctuation covariance")
    v = sub.add_parser("verify", parents=[common], help="statistical checks of the limits")
    v.add_argument("check", choices=["lln", "clt", "qv", "moments"])
    b = sub.add_parser("bench", parents=[common], help="simulator throughput")
    b.add_argument("--events", type=int, default=10_000_000)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        cfg = apply_overrides(cfg, seed=args.seed, out=args.out, n=args.n,
                              replicas=args.replicas, t_end=args.t_end,
                              truncation=args.truncation, weights_alpha=args.weights_alpha)
        if args.command != "verify":
            cfg.validate()
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, NoFixedPointError, DomainError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except BDError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
