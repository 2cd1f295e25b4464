"""Experiment configuration: TOML files validated against a fixed schema."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import tomli

from .ising import IsingModel
from .spaces import SPIN_LIMIT

EXPERIMENT_KINDS = ("verify", "certify", "tails", "constants", "scan")


class ConfigError(ValueError):
    """Invalid configuration; the CLI maps it to exit status 2."""


# schema: a dict maps keys to sub-schemas, a tuple lists accepted Python types
_NUM = (int, float)
_JSPEC = {"kind": (str,), "beta0": _NUM, "path": (str,), "norm": _NUM, "seed": (int,)}
_HSPEC = {"kind": (str,), "value": _NUM, "path": (str,), "max": _NUM, "seed": (int,)}
SCHEMA: dict[str, Any] = {
    "experiment": {"kind": (str,), "seed": (int,), "out": (str,), "threads": (int,)},
    "model": {"n": (int,), "limit": (int,), "j": _JSPEC, "h": _HSPEC, "mode": (str,)},
    "tolerances": {"identity": _NUM, "inequality": _NUM, "w2": _NUM, "lemma": _NUM},
    "verify": {"instances": (int,), "suites": (list,)},
    "tails": {
        "d": (int,), "samples": (int,), "burn_in": (int,), "thinning": (int,), "chains": (int,),
        "tensor": (str,), "t_max": _NUM, "t_points": (int,), "t_grid": (list,), "bound": (str,),
        "c": _NUM, "dump_samples": (bool,),
    },
    "constants": {"kinds": (list,), "n": (list,), "r": (list,), "c": _NUM},
    "scan": {"parameter": (str,), "values": (list,), "search": (bool,), "restarts": (int,), "steps": (int,)},
}

VERIFY_SUITES = (
    "identities", "lemma_chain", "moments", "tensorization", "coupling", "lsi_bracket",
    "w2", "certificate", "chaos", "chains", "slices",
)


def _check(table: dict, schema: dict, prefix: str) -> None:
    for key, value in table.items():
        where = f"{prefix}{key}"
        if key not in schema:
            # name the first leaf so a misspelled table reports e.g. 'modle.n'
            while isinstance(value, dict) and value:
                inner = next(iter(value))
                where, value = f"{where}.{inner}", value[inner]
            raise ConfigError(f"unknown key '{where}'")
        spec = schema[key]
        if isinstance(spec, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"'{where}' must be a table")
            _check(value, spec, where + ".")
        else:
            if isinstance(value, bool) and bool not in spec:
                raise ConfigError(f"'{where}' has the wrong type")
            if not isinstance(value, spec):
                names = "/".join(t.__name__ for t in spec)
                raise ConfigError(f"'{where}' must be {names}, got {type(value).__name__}")


@dataclass
class ExperimentConfig:
    kind: str
    raw: dict
    base: Path
    seed: int | None = None
    out: Path | None = None
    threads: int = 1
    tolerances: dict = field(default_factory=dict)

    def section(self, name: str) -> dict:
        return self.raw.get(name, {})

    @property
    def model_n(self) -> int:
        return int(self.section("model")["n"])


def _resolve(base: Path, rel: str, key: str) -> Path:
    p = (base / rel) if not Path(rel).is_absolute() else Path(rel)
    if not p.is_file():
        raise ConfigError(f"'{key}' refers to missing file {rel}")
    return p


def parse_config(path, seed: int | None = None) -> ExperimentConfig:
    """Read and validate ``path``; ``seed`` (from the command line) overrides the file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except UnicodeDecodeError:
        raise ConfigError(f"config {path} is not UTF-8") from None
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: parse error: {exc}") from None
    _check(raw, SCHEMA, "")
    exp = raw.get("experiment", {})
    if "kind" not in exp:
        raise ConfigError("missing required key 'experiment.kind'")
    kind = exp["kind"]
    if kind not in EXPERIMENT_KINDS:
        raise ConfigError(f"'experiment.kind' must be one of {', '.join(EXPERIMENT_KINDS)}")
    base = path.parent
    seed = exp.get("seed") if seed is None else seed
    if seed is not None and not 0 <= seed < 2**64:
        raise ConfigError("'experiment.seed' must fit in an unsigned 64-bit integer")
    threads = exp.get("threads", 1)
    if threads < 1:
        raise ConfigError("'experiment.threads' must be >= 1")
    tol = {"identity": 1e-10, "inequality": 1e-9, "w2": 1e-6, "lemma": 1e-12}
    tol.update(raw.get("tolerances", {}))
    cfg = ExperimentConfig(kind, raw, base, seed, Path(exp["out"]) if "out" in exp else None, threads, tol)
    _validate_kind(cfg)
    return cfg


def _validate_kind(cfg: ExperimentConfig) -> None:
    raw = cfg.raw
    if cfg.kind in ("verify", "certify", "tails", "scan"):
        model = raw.get("model")
        if model is None or "n" not in model:
            raise ConfigError(f"'{cfg.kind}' needs 'model.n'")
        if model["n"] < 1:
            raise ConfigError("'model.n' must be positive")
        for key in ("j", "h"):
            sub = model.get(key, {"kind": "zero"})
            if "kind" not in sub:
                raise ConfigError(f"missing required key 'model.{key}.kind'")
            if sub.get("kind") == "file":
                if "path" not in sub:
                    raise ConfigError(f"missing required key 'model.{key}.path'")
                _resolve(cfg.base, sub["path"], f"model.{key}.path")
        jk = model.get("j", {"kind": "zero"})["kind"]
        if jk not in ("zero", "curie_weiss", "file", "random"):
            raise ConfigError(f"'model.j.kind' must be zero, curie_weiss, file or random, got {jk!r}")
        if jk == "curie_weiss" and "beta0" not in model["j"] and cfg.kind != "scan":
            raise ConfigError("missing required key 'model.j.beta0'")
        hk = model.get("h", {"kind": "zero"})["kind"]
        if hk not in ("zero", "const", "file", "random"):
            raise ConfigError(f"'model.h.kind' must be zero, const, file or random, got {hk!r}")
        if hk == "const" and "value" not in model["h"]:
            raise ConfigError("missing required key 'model.h.value'")
        if model.get("mode", "auto") not in ("auto", "exact", "bound"):
            raise ConfigError("'model.mode' must be auto, exact or bound")
    if cfg.kind in ("tails", "scan") and cfg.seed is None:
        raise ConfigError(f"'{cfg.kind}' requires a master seed ('experiment.seed' or --seed)")
    if cfg.kind == "verify":
        for s in raw.get("verify", {}).get("suites", []):
            if s not in VERIFY_SUITES:
                raise ConfigError(f"unknown suite {s!r} in 'verify.suites'")
    if cfg.kind == "tails":
        t = raw.get("tails", {})
        if t.get("d", 2) < 1:
            raise ConfigError("'tails.d' must be >= 1")
        if "tensor" in t:
            _resolve(cfg.base, t["tensor"], "tails.tensor")
        if t.get("bound", "thm13") not in ("thm13", "none"):
            raise ConfigError("'tails.bound' must be thm13 or none")
    if cfg.kind == "scan":
        s = raw.get("scan", {})
        if s.get("parameter") not in ("beta0",):
            raise ConfigError("'scan.parameter' must be beta0")
        if not s.get("values"):
            raise ConfigError("missing required key 'scan.values'")
    if cfg.kind == "constants":
        c = raw.get("constants", {})
        for k in c.get("kinds", ["transposition", "bl", "ssep"]):
            if k not in ("transposition", "bl", "ssep"):
                raise ConfigError(f"unknown scaling kind {k!r} in 'constants.kinds'")


def _read_matrix(path: Path) -> np.ndarray:
    try:
        return np.loadtxt(path, ndmin=2)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def build_model(cfg: ExperimentConfig, beta0: float | None = None) -> IsingModel:
    model = cfg.section("model")
    n = int(model["n"])
    limit = int(model.get("limit", SPIN_LIMIT))
    js = model.get("j", {"kind": "zero"})
    hs = model.get("h", {"kind": "zero"})
    kind = js["kind"]
    if kind == "zero":
        J = np.zeros((n, n))
    elif kind == "curie_weiss":
        b = float(js["beta0"]) if beta0 is None else float(beta0)
        J = np.full((n, n), b / n)
        np.fill_diagonal(J, 0.0)
    elif kind == "file":
        J = _read_matrix(_resolve(cfg.base, js["path"], "model.j.path"))
        if J.shape != (n, n):
            raise ConfigError(f"'model.j.path' holds a {J.shape} matrix, expected ({n}, {n})")
    else:
        rng = np.random.default_rng(int(js.get("seed", 0)))
        J = IsingModel.random(n, rng, j_norm=float(js.get("norm", 0.9)), h_max=0.0).J
    hk = hs["kind"]
    if hk == "zero":
        h = np.zeros(n)
    elif hk == "const":
        h = np.full(n, float(hs["value"]))
    elif hk == "file":
        h = _read_matrix(_resolve(cfg.base, hs["path"], "model.h.path")).reshape(-1)
        if h.size != n:
            raise ConfigError(f"'model.h.path' holds {h.size} values, expected {n}")
    else:
        rng = np.random.default_rng(int(hs.get("seed", 0)))
        h = rng.uniform(-float(hs.get("max", 1.0)), float(hs.get("max", 1.0)), size=n)
    if not (np.all(np.isfinite(J)) and np.all(np.isfinite(h))):
        raise ConfigError("model parameters must be finite")
    try:
        return IsingModel(J, h, limit=limit)
    except ValueError as exc:
        raise ConfigError(f"invalid model: {exc}") from None


def fmt(x) -> str:
    """17 significant digits, enough to round-trip a double."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.17g}"
