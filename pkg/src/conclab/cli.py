"""Command line entry point: ``conclab <verify|certify|tails|constants|scan> --config PATH``."""
from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import chaos, dynamics, functionals, suites
from .config import VERIFY_SUITES, ConfigError, ExperimentConfig, build_model, fmt, parse_config
from .ising import DobrushinViolated, gibbs_measure, lsi_certificate, tail_constant
from .spaces import IndexFamily, LimitExceeded

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _write_csv(path: Path, header: str, rows) -> None:
    lines = [header] + [",".join(fmt(v) if not isinstance(v, str) else v for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def _mode(cfg: ExperimentConfig):
    m = cfg.section("model").get("mode", "auto")
    return None if m == "auto" else m


def run_verify(cfg: ExperimentConfig, out: Path, threads: int) -> int:
    model = build_model(cfg)
    v = cfg.section("verify")
    names = v.get("suites", list(VERIFY_SUITES))
    rng = np.random.default_rng(cfg.seed if cfg.seed is not None else 0)
    rows = suites.run_verify(model, rng, int(v.get("instances", 5)), names, cfg.tolerances, _mode(cfg))
    _write_csv(out / "verify.csv", suites.REPORT_HEADER,
               [(r.check, r.instance, r.p_or_d, r.lhs, r.rhs, r.slack, r.ok) for r in rows])
    failed = [r for r in rows if not r.ok]
    print(f"verify: {len(rows) - len(failed)}/{len(rows)} checks passed")
    for r in failed:
        print(f"FAIL {r.check} instance={r.instance} p_or_d={fmt(r.p_or_d)} slack={fmt(r.slack)}")
    return EXIT_FAIL if failed else EXIT_OK


def run_certify(cfg: ExperimentConfig, out: Path, threads: int) -> int:
    model = build_model(cfg)
    report = lsi_certificate(model, _mode(cfg))
    rows = report.rows()
    _write_csv(out / "certificate.csv", "name,value", rows)
    for name, value in rows:
        print(f"{name} = {fmt(value)}")
    return EXIT_OK


def _observable(cfg: ExperimentConfig, n: int, d: int) -> chaos.CoefficientTensor:
    t = cfg.section("tails")
    if "tensor" in t:
        try:
            return chaos.read_tensor(cfg.base / t["tensor"], n, d)
        except ValueError as exc:
            raise ConfigError(f"'tails.tensor': {exc}") from None
    return chaos.CoefficientTensor.all_ones(n, d)


def run_tails(cfg: ExperimentConfig, out: Path, threads: int) -> int:
    model = build_model(cfg)
    n = model.n
    t = cfg.section("tails")
    d = int(t.get("d", 2))
    A = _observable(cfg, n, d)
    _, a_inf = chaos.tensor_norms(A)
    chains = int(t.get("chains", 4))
    samples = int(t.get("samples", 100_000))
    per_chain = -(-samples // chains)
    thinning = int(t.get("thinning", n))
    burn_in = int(t.get("burn_in", dynamics.default_burn_in(n)))
    spec = dynamics.ChainSpec("glauber", n, steps=burn_in + per_chain * thinning, burn_in=burn_in,
                              thinning=thinning, seed=cfg.seed, model=model)
    batches = dynamics.run_chains(spec, lambda s: chaos.poly_eval(s, A), chains, threads)
    values = np.concatenate([b.values for b in batches])[:samples]
    dev_max = float(np.abs(values - values.mean()).max())
    if "t_grid" in t:
        grid = np.array(t["t_grid"], dtype=float)
    else:
        grid = np.linspace(0.0, float(t.get("t_max", dev_max)), int(t.get("t_points", 41)))
    curve = dynamics.empirical_tail(values, grid)
    bound = np.full(grid.shape, np.nan)
    c_used = math.nan
    if t.get("bound", "thm13") == "thm13":
        if "c" in t:
            c_used = float(t["c"])
        else:
            c_used = tail_constant(lsi_certificate(model, _mode(cfg)).sigma2_cert, d)
        bound = np.asarray(chaos.tail_bound("thm13", d, grid, c=c_used, n=n, a_inf=a_inf))
    _write_csv(out / "tail.csv", "t,empirical,bound,stderr",
               zip(grid, curve.empirical, bound, curve.stderr))
    if t.get("dump_samples", True):
        _write_csv(out / "samples.csv", "step,value",
                   ((burn_in + (k % per_chain + 1) * thinning, v) for k, v in enumerate(values)))
    bad = np.flatnonzero(curve.empirical > bound) if not math.isnan(c_used) else np.array([], dtype=int)
    print(f"tails: {values.size} samples, c = {fmt(c_used)}, {grid.size} grid points")
    for k in bad:
        print(f"FAIL t={fmt(grid[k])} empirical={fmt(curve.empirical[k])} bound={fmt(bound[k])}")
    return EXIT_FAIL if bad.size else EXIT_OK


def run_constants(cfg: ExperimentConfig, out: Path, threads: int) -> int:
    c = cfg.section("constants")
    kinds = c.get("kinds", ["transposition", "bl", "ssep"])
    ns = [int(v) for v in c.get("n", [4, 8, 16, 32])]
    rs = c.get("r")
    scale = float(c.get("c", 1.0))
    rows = []
    for kind in kinds:
        sc = dynamics.named_lsi_scalings(kind)
        for k, n in enumerate(ns):
            r = int(rs[k]) if rs is not None else n // 2
            if kind == "bl" and not 0 < r < n:
                raise ConfigError(f"'constants.r' must satisfy 0 < r < n for bl (n={n}, r={r})")
            value = sc(n, r, scale)
            rows.append((kind, n, r if kind != "transposition" else "", sc.formula, sc.family, value, sc.c_unspecified))
            print(f"{kind} n={n} r={r}: {sc.formula} = {fmt(value)}")
    _write_csv(out / "constants.csv", "kind,n,r,formula,family,value,c_unspecified", rows)
    return EXIT_OK


def run_scan(cfg: ExperimentConfig, out: Path, threads: int) -> int:
    s = cfg.section("scan")
    if cfg.section("model").get("j", {}).get("kind") != "curie_weiss":
        raise ConfigError("'scan' over beta0 needs model.j.kind = \"curie_weiss\"")
    values = [float(v) for v in s["values"]]
    search = bool(s.get("search", True))
    rows, failed = [], False
    for k, b in enumerate(values):
        model = build_model(cfg, beta0=b)
        try:
            rep = lsi_certificate(model, _mode(cfg))
        except DobrushinViolated:
            rows.append((b, False, math.nan, math.nan, math.nan, math.nan, math.nan, True))
            continue
        pi = lower = math.nan
        ok = True
        if model.n <= 10:
            mu = gibbs_measure(model)
            fam = IndexFamily.singletons(model.n)
            pi = functionals.pi_constant_exact(mu, fam).constant
            if search:
                found = functionals.lsi_ratio_search(
                    mu, fam, restarts=int(s.get("restarts", 4)), steps=int(s.get("steps", 300)),
                    seed=int(np.random.SeedSequence([cfg.seed, k]).generate_state(1)[0]),
                    seeds=functionals.pi_seeds(mu, fam))
                lower = found.value
                ok = pi <= lower + 1e-9 and lower <= rep.sigma2_cert + 1e-9
            else:
                ok = pi <= rep.sigma2_cert + 1e-9
        failed |= not ok
        rows.append((b, True, rep.beta_min, rep.a_norm, rep.sigma2_cert, pi, lower, ok))
    _write_csv(out / "scan.csv", "beta0,dobrushin,beta_min,a_norm,sigma2_cert,pi_exact,lsi_lower,pass", rows)
    print(f"scan: {len(rows)} rows")
    return EXIT_FAIL if failed else EXIT_OK


RUNNERS = {"verify": run_verify, "certify": run_certify, "tails": run_tails,
           "constants": run_constants, "scan": run_scan}


def run_experiment(cfg: ExperimentConfig, out: Path | None = None, threads: int | None = None) -> int:
    out = Path(out) if out is not None else (cfg.out if cfg.out is not None else Path("."))
    out.mkdir(parents=True, exist_ok=True)
    return RUNNERS[cfg.kind](cfg, out, threads or cfg.threads)


def _threads(arg: int | None) -> int | None:
    if arg is not None:
        return arg
    env = os.environ.get("CONCLAB_THREADS")
    if env:
        try:
            k = int(env)
        except ValueError:
            raise ConfigError(f"CONCLAB_THREADS must be an integer, got {env!r}") from None
        if k < 1:
            raise ConfigError("CONCLAB_THREADS must be >= 1")
        return k
    return None


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="conclab", description=__doc__)
    parser.add_argument("command", choices=sorted(RUNNERS))
    parser.add_argument("--config", required=True, type=Path)
    parser.add_argument("--out", type=Path)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--threads", type=int)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must fit in an unsigned 64-bit integer")
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = parse_config(args.config, seed=args.seed)
        if cfg.kind != args.command:
            raise ConfigError(f"command {args.command!r} does not match experiment.kind = {cfg.kind!r}")
        return run_experiment(cfg, args.out, _threads(args.threads))
    except (ConfigError, LimitExceeded) as exc:
        print(f"conclab: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DobrushinViolated as exc:
        print(f"conclab: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
