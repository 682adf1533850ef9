"""Command-line harness.

Exit codes: 0 success, 2 invalid input or configuration, 3 numerical failure
or a failed internal check.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import platform
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__, bounds, exact, montecarlo
from .config import COMMANDS, ConfigError, RunConfig, from_dict, parse_grid
from .errors import NumericalError, UsageError
from .lattice import Torus, reverse

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3

CSV_COLUMNS = {
    "exact-duality": "A, B (site indices joined by '|'), t, lhs = P[eta^A_t hits B], "
                     "rhs = P[A hit by dual eta^B_t], diff = |lhs - rhs|",
    "submult": "s, t, lhs = E|eta_{s+t}|, rhs = E|eta_s| E|eta_t|, ok",
    "mc-growth": "t, mean_size (extinct replicas count as 0), log_mean",
    "mc-survival": "delta, theta_hat, ci_lo, ci_hi (Wilson 95%), n, t_horizon",
    "find-critical": "delta, theta_hat, survives (theta_hat > p_star)",
    "verify-bound": "gamma, delta = (1 - gamma) delta_c, phi_gamma, theta_hat, ci_lo, pass "
                    "(theta_hat + 2 SE >= phi_gamma)",
    "bound-table": "gamma, eps, eps1, eps2, phi_gamma, taylor_approx = gamma - gamma^2/2, "
                   "diff = phi_gamma - taylor_approx",
    "submartingale-fuzz": "case, states, eps, max_rel_error, identity_holds, f_subharmonic, "
                          "drift_nonnegative, equivalent",
}

HELP = {
    "exact-r": "exact growth rate on a finite torus (JSON: exact_r.json)",
    "exact-duality": "exact duality check on random (A, B, t) (CSV: exact_duality.csv)",
    "eigenmeasure": "eigenmeasure, harmonic function and resolvent ladder (JSON: eigenmeasure.json)",
    "submult": "submultiplicativity of E|eta_t| on random (s, t) (CSV: submult.csv)",
    "mc-growth": "Monte Carlo growth-rate fit (CSV: growth.csv, JSON: growth_fit.json)",
    "mc-survival": "Monte Carlo survival probability (CSV: survival.csv)",
    "find-critical": "bisection for the critical recovery rate (CSV: critical_path.csv, JSON: critical.json)",
    "verify-bound": "Monte Carlo check of the survival lower bound (CSV: bound_check.csv)",
    "bound-table": "table of phi(gamma) and its Taylor approximation (CSV: bound_table.csv)",
    "submartingale-fuzz": "random Q-matrix check of the submartingale transform (CSV: fuzz.csv)",
    "drift-report": "modified-generator drift on f_eps(h) (JSON: drift.json)",
}


def _versions() -> dict:
    import numba

    return {"contactproc": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "numba": numba.__version__}


def _csv_text(rows: list, columns: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in columns])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


class Output:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.dir = Path(cfg.out) if cfg.out else None
        if self.dir:
            self.dir.mkdir(parents=True, exist_ok=True)

    def _write(self, name: str, text: str):
        if self.dir is None:
            return
        (self.dir / name).write_text(text)
        manifest = {"file": name, "command": self.cfg.command, "seed": self.cfg.seed,
                    "config": asdict(self.cfg), "versions": _versions()}
        (self.dir / (name + ".manifest.json")).write_text(
            json.dumps(manifest, sort_keys=True, indent=2) + "\n")

    def csv(self, name: str, rows: list, columns: list):
        self._write(name, _csv_text(rows, columns))

    def json(self, name: str, obj):
        self._write(name, json.dumps(obj, sort_keys=True, indent=2, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def _torus(cfg: RunConfig) -> Torus:
    g = cfg.group_spec()
    if not isinstance(g, Torus):
        raise UsageError(f"{cfg.command} needs a torus group, got {cfg.group}")
    return g


def _rng(cfg: RunConfig) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(cfg.seed or 0)))


def _mask_text(index, mask: int) -> str:
    return "|".join(str(k) for k in range(len(index)) if mask >> k & 1)


def cmd_exact_r(cfg: RunConfig, out: Output) -> bool:
    g, k = _torus(cfg), cfg.kernel_spec()
    tol = cfg.tol("residual", 1e-9)
    records, ok = [], True
    for delta in cfg.deltas():
        eig = exact.exact_growth_rate(exact.build_generator(g, k, delta))
        rec = {"group": cfg.group, "kernel": k.to_pairs(), "delta": delta, "r": eig.r,
               "residuals": {"nu": eig.residual_nu, "h": eig.residual_h},
               "normalization": eig.normalization}
        records.append(rec)
        in_range = -delta - 1e-12 <= eig.r <= k.total - delta + 1e-12
        ok &= in_range and max(eig.residual_nu, eig.residual_h) <= tol
        print(f"delta={delta!r} r={eig.r:.10f}")
    out.json("exact_r.json", records)
    return ok


def cmd_exact_duality(cfg: RunConfig, out: Output) -> bool:
    g, k = _torus(cfg), cfg.kernel_spec()
    delta = cfg.deltas()[0]
    gen = exact.build_generator(g, k, delta)
    dual = exact.build_generator(g, reverse(k), delta)
    rng = _rng(cfg)
    N = gen.n_states
    tol = cfg.tol("duality", 1e-9)
    rows = []
    for _ in range(cfg.cases):
        a, b = int(rng.integers(1, N)), int(rng.integers(1, N))
        t = float(cfg.t_max * (1.0 - rng.random()))
        lhs = exact.semigroup_apply(gen, exact.point_mass(gen, a), t) @ gen.indicator_hits(b)
        rhs = exact.semigroup_apply(dual, exact.point_mass(dual, b), t) @ dual.indicator_hits(a)
        rows.append({"A": _mask_text(gen.index, a), "B": _mask_text(gen.index, b), "t": t,
                     "lhs": float(lhs), "rhs": float(rhs), "diff": abs(float(lhs - rhs))})
    worst = max(r["diff"] for r in rows) if rows else 0.0
    print(f"cases={len(rows)} max_diff={worst:.3e}")
    out.csv("exact_duality.csv", rows, ["A", "B", "t", "lhs", "rhs", "diff"])
    return worst <= tol


def cmd_eigenmeasure(cfg: RunConfig, out: Output) -> bool:
    g, k = _torus(cfg), cfg.kernel_spec()
    delta = cfg.deltas()[0]
    gen = exact.build_generator(g, k, delta)
    eig = exact.exact_growth_rate(gen)
    semigroup = {}
    for t in (0.5, 1.0, 2.0):
        moved = exact.semigroup_apply(gen, eig.nu, t)
        semigroup[str(t)] = float(np.abs(moved - np.exp(eig.r * t) * eig.nu).max())
    inc = exact.increments(eig.h, gen.n_sites)
    rec = {
        "group": cfg.group, "kernel": k.to_pairs(), "delta": delta, "r": eig.r,
        "residuals": {"nu": eig.residual_nu, "h": eig.residual_h, "semigroup": semigroup},
        "normalization": eig.normalization,
        "homogeneity_defect": exact.homogeneity_defect(gen, eig.nu),
        "h_singletons": [float(eig.h[1 << i]) for i in range(gen.n_sites)],
        "max_increment": float(inc.max()), "min_increment": float(inc.min()),
    }
    ok = (max(eig.residual_nu, eig.residual_h) <= cfg.tol("residual", 1e-9)
          and max(semigroup.values()) <= cfg.tol("semigroup", 1e-8)
          and rec["homogeneity_defect"] <= cfg.tol("homogeneity", 1e-9)
          and rec["max_increment"] <= 1 + 1e-9 and rec["min_increment"] >= -1e-12)
    if delta > 0:
        ladder = []
        offsets = cfg.lambdas or [1.0, 0.5, 0.1, 0.05, 0.01]
        for off in sorted(offsets, reverse=True):
            res = exact.resolvent_eigenmeasure(gen, eig.r + off, eig.r)
            ladder.append({"lambda": res.lam, "pi": res.pi, "residual": res.residual,
                           "distance": float(np.abs(res.nu / res.pi - eig.nu).max())})
        rec["resolvent"] = ladder
        pis = [x["pi"] for x in ladder]
        ok &= all(b > a for a, b in zip(pis, pis[1:]))
        ok &= max(x["residual"] for x in ladder) <= cfg.tol("residual", 1e-9)
    print(f"r={eig.r:.10f} residual_nu={eig.residual_nu:.2e} residual_h={eig.residual_h:.2e}")
    out.json("eigenmeasure.json", rec)
    return ok


def cmd_submult(cfg: RunConfig, out: Output) -> bool:
    g, k = _torus(cfg), cfg.kernel_spec()
    gen = exact.build_generator(g, k, cfg.deltas()[0])
    rng = _rng(cfg)
    rows = []
    for _ in range(cfg.cases):
        s, t = (float(x) for x in rng.uniform(0.0, cfg.t_max, size=2))
        lhs, rhs = exact.submultiplicativity_check(gen, s, t)
        rows.append({"s": s, "t": t, "lhs": lhs, "rhs": rhs, "ok": lhs <= rhs + 1e-9})
    bad = sum(not r["ok"] for r in rows)
    print(f"cases={len(rows)} violations={bad}")
    out.csv("submult.csv", rows, ["s", "t", "lhs", "rhs", "ok"])
    return bad == 0


def sim_config(cfg: RunConfig, delta: float | None = None) -> montecarlo.SimConfig:
    g = cfg.group_spec()
    grid = np.linspace(0.0, cfg.horizon, cfg.grid_points)
    return montecarlo.SimConfig(
        group=g, kernel=cfg.kernel_spec(), delta=cfg.deltas()[0] if delta is None else delta,
        horizon=cfg.horizon, replicas=cfg.replicas, seed=cfg.seed, size_cap=cfg.size_cap,
        grid=tuple(grid))


def cmd_mc_growth(cfg: RunConfig, out: Output) -> bool:
    sc = sim_config(cfg)
    window = tuple(cfg.window) if cfg.window else None
    fit = montecarlo.estimate_growth_rate(sc, window=window, threads=cfg.threads)
    print(f"r_hat={fit.slope:.6f} se={fit.se:.6f} window={fit.window}")
    out.csv("growth.csv", fit.rows(), ["t", "mean_size", "log_mean"])
    out.json("growth_fit.json", {"r_hat": fit.slope, "se": fit.se, "window": list(fit.window),
                                 "points_used": fit.points_used, "capped": fit.capped,
                                 "config": sc.to_record()})
    return True


def cmd_mc_survival(cfg: RunConfig, out: Output) -> bool:
    rows = []
    for delta in cfg.deltas():
        st = montecarlo.estimate_survival(sim_config(cfg, delta), threads=cfg.threads)
        rows.append(st.to_row())
        print(f"delta={delta!r} theta_hat={st.theta_hat} ci=[{st.ci[0]:.4f}, {st.ci[1]:.4f}]")
    out.csv("survival.csv", rows, ["delta", "theta_hat", "ci_lo", "ci_hi", "n", "t_horizon"])
    return True


def _find_critical(cfg: RunConfig) -> montecarlo.CriticalEstimate:
    if cfg.delta_lo is None or cfg.delta_hi is None:
        raise ConfigError("find-critical needs delta_lo and delta_hi")
    sc = sim_config(cfg, cfg.delta_lo)
    return montecarlo.bisect_critical(sc, cfg.delta_lo, cfg.delta_hi, cfg.iterations,
                                      cfg.p_star, threads=cfg.threads)


def cmd_find_critical(cfg: RunConfig, out: Output) -> bool:
    est = _find_critical(cfg)
    rows = [{"delta": d, "theta_hat": th, "survives": ok} for d, th, ok in est.path]
    print(f"delta_c in [{est.bracket[0]:.6f}, {est.bracket[1]:.6f}] estimate={est.estimate:.6f}")
    out.csv("critical_path.csv", rows, ["delta", "theta_hat", "survives"])
    out.json("critical.json", {"bracket": list(est.bracket), "estimate": est.estimate,
                               "horizon": est.horizon, "replicas": est.replicas,
                               "p_star": est.p_star, "consistent": est.consistent})
    return est.consistent


def cmd_verify_bound(cfg: RunConfig, out: Output) -> bool:
    delta_c = cfg.delta_c
    if delta_c is None:
        delta_c = _find_critical(cfg).estimate
    sc = sim_config(cfg, delta_c)
    rows = montecarlo.verify_lower_bound(sc, delta_c, cfg.gammas, threads=cfg.threads)
    for r in rows:
        print(f"gamma={r.gamma} delta={r.delta:.6f} phi={r.phi_gamma:.6f} "
              f"theta_hat={r.theta_hat:.4f} pass={r.passed}")
    out.csv("bound_check.csv", [r.to_row() for r in rows],
            ["gamma", "delta", "phi_gamma", "theta_hat", "ci_lo", "pass"])
    return all(r.passed for r in rows)


def cmd_bound_table(cfg: RunConfig, out: Output) -> bool:
    rows = []
    for gamma in parse_grid(cfg.gamma_grid):
        eps = bounds.eps_of_gamma(gamma)
        p = bounds.eps_params(eps)
        phi = p.phi
        taylor = gamma - 0.5 * gamma * gamma
        rows.append({"gamma": gamma, "eps": eps, "eps1": p.eps1, "eps2": p.eps2,
                     "phi_gamma": phi, "taylor_approx": taylor, "diff": phi - taylor})
    phis = [r["phi_gamma"] for r in rows]
    increasing = all(b > a for a, b in zip(phis, phis[1:]))
    print(f"rows={len(rows)} strictly_increasing={increasing}")
    out.csv("bound_table.csv", rows,
            ["gamma", "eps", "eps1", "eps2", "phi_gamma", "taylor_approx", "diff"])
    return increasing


def cmd_submartingale_fuzz(cfg: RunConfig, out: Output) -> bool:
    rows = []
    for case, (eps, rep) in enumerate(bounds.fuzz_submartingale(cfg.cases, cfg.seed or 0)):
        rows.append({"case": case, "states": rep.g_f.size, "eps": eps,
                     "max_rel_error": rep.max_rel_error, "identity_holds": rep.identity_holds,
                     "f_subharmonic": rep.f_subharmonic,
                     "drift_nonnegative": rep.drift_nonnegative, "equivalent": rep.equivalent})
    bad = sum(not r["identity_holds"] for r in rows)
    print(f"cases={len(rows)} identity_failures={bad}")
    out.csv("fuzz.csv", rows, ["case", "states", "eps", "max_rel_error", "identity_holds",
                               "f_subharmonic", "drift_nonnegative", "equivalent"])
    return bad == 0


def cmd_drift_report(cfg: RunConfig, out: Output) -> bool:
    g, k = _torus(cfg), cfg.kernel_spec()
    rep = bounds.drift_certificate(g, k, cfg.deltas()[0], cfg.eps, cfg.eps1, cfg.eps2)
    rec = rep.to_record()
    print(json.dumps(rec, sort_keys=True))
    out.json("drift.json", rec)
    return rep.identity_holds and rep.min_chain_slack >= -1e-9


HANDLERS = {
    "exact-r": cmd_exact_r, "exact-duality": cmd_exact_duality,
    "eigenmeasure": cmd_eigenmeasure, "submult": cmd_submult, "mc-growth": cmd_mc_growth,
    "mc-survival": cmd_mc_survival, "find-critical": cmd_find_critical,
    "verify-bound": cmd_verify_bound, "bound-table": cmd_bound_table,
    "submartingale-fuzz": cmd_submartingale_fuzz, "drift-report": cmd_drift_report,
}

# flag name -> (RunConfig field, type)
FLAGS = {
    "--group": ("group", str), "--kernel": ("kernel", str), "--delta": ("delta", float),
    "--delta-grid": ("delta_grid", str), "--horizon": ("horizon", float),
    "--replicas": ("replicas", int), "--seed": ("seed", int), "--size-cap": ("size_cap", int),
    "--grid-points": ("grid_points", int), "--delta-lo": ("delta_lo", float),
    "--delta-hi": ("delta_hi", float), "--iterations": ("iterations", int),
    "--p-star": ("p_star", float), "--delta-c": ("delta_c", float),
    "--gamma-grid": ("gamma_grid", str), "--eps": ("eps", float), "--eps1": ("eps1", float),
    "--eps2": ("eps2", float), "--cases": ("cases", int), "--t-max": ("t_max", float),
    "--out": ("out", str), "--threads": ("threads", int),
}


def _float_list(text: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    epilog = "CSV columns:\n" + "\n".join(f"  {k}: {v}" for k, v in CSV_COLUMNS.items())
    parser = argparse.ArgumentParser(
        prog="contactproc", formatter_class=argparse.RawDescriptionHelpFormatter,
        description="Exact and Monte Carlo experiments for contact processes on groups.",
        epilog=epilog)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=HELP[name], description=HELP[name],
                           epilog=f"CSV columns: {CSV_COLUMNS[name]}" if name in CSV_COLUMNS else None)
        p.add_argument("--config", help="JSON config file; flags override its values")
        for flag, (dest, typ) in FLAGS.items():
            p.add_argument(flag, dest=dest, type=typ, default=None)
        p.add_argument("--gammas", dest="gammas", type=_float_list, default=None)
        p.add_argument("--window", dest="window", type=_float_list, default=None)
        p.add_argument("--lambdas", dest="lambdas", type=_float_list, default=None,
                       help="offsets above r for the resolvent ladder")
        p.add_argument("--tol", dest="tolerances", action="append", default=None,
                       metavar="NAME=VALUE", help="tolerance override, repeatable")
    return parser


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    data = {}
    if ns.config:
        text = Path(ns.config).read_text()
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{ns.config}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        if data.get("command", ns.command) != ns.command:
            raise ConfigError(f"config is for {data['command']!r}, not {ns.command!r}")
    data["command"] = ns.command
    for dest, _ in list(FLAGS.values()) + [("gammas", None), ("window", None), ("lambdas", None)]:
        v = getattr(ns, dest)
        if v is not None:
            data[dest] = v
    if ns.tolerances:
        tols = dict(data.get("tolerances", {}))
        for item in ns.tolerances:
            name, _, value = item.partition("=")
            try:
                tols[name] = float(value)
            except ValueError:
                raise ConfigError(f"bad tolerance {item!r}") from None
        data["tolerances"] = tols
    return from_dict(data)


def run(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        cfg = config_from_args(ns)
        ok = HANDLERS[cfg.command](cfg, Output(cfg))
    except (UsageError, json.JSONDecodeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    if not ok:
        print("check failed", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
