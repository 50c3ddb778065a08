"""Reproducible batch experiments: configuration, seeding, runners and the
run manifest.

Every runner takes a validated ExperimentConfig, writes its outputs into
the configured directory with write-temp-then-rename, and returns the
list of files it wrote.  ``run`` wraps a runner with the manifest.
"""

from __future__ import annotations

import collections
import csv
import hashlib
import io
import json
import math
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import __version__
from .approximation import domination_checks, kl_decay_curve
from .divergence import (RiskReport, loglog_slope, mc_hellinger_risk, mixture_density,
                         rejection_sample)
from .em import EmConfig
from .errors import AuditFailure, ConfigError, InputError
from .holder import (PerturbationFamily, audit_separation, build_bump, build_omega,
                     choose_D, proposition1_params, verify_class_conditions, vg_subset)
from .mixture import Mixture, Sample, map_cluster, read_mixture, read_sample
from .selection import (SieveConfig, approx_order, calibrate_kappa, rescore, select_model)

COMMANDS = ("select", "cluster", "rate", "approx", "lowerbound", "audit")


# ---------------------------------------------------------------------------
# configuration


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SieveSection(_Strict):
    beta_low: float = 1.0
    beta_high: float = 3.0
    a_bar: float = 1.5
    g_tilde: float = 6.0
    lambda_bar: float = 4.0
    kappa: float = 1.0
    c1: float = 1.0
    m_max: int = 50

    def build(self, **override) -> SieveConfig:
        return SieveConfig(**{**self.model_dump(), **override})


class EmSection(_Strict):
    max_iterations: int = 500
    rel_tolerance: float = 1e-8
    n_starts: int = 10
    init_strategy: Literal["quantile", "random_points", "plus_plus_style"] = "quantile"
    seed: int = 0

    def build(self) -> EmConfig:
        return EmConfig(**self.model_dump())


class TruthSection(_Strict):
    """A named truth: an explicit mixture or the smooth base density."""

    family: Literal["mixture", "omega"] = "omega"
    weights: Optional[List[float]] = None
    means: Optional[List[float]] = None
    variances: Optional[List[float]] = None
    alpha: float = 1.2
    xi: float = 0.2

    @model_validator(mode="after")
    def _mixture_fields(self):
        if self.family == "mixture":
            parts = (self.weights, self.means, self.variances)
            if any(p is None for p in parts) or len({len(p) for p in parts}) != 1:
                raise ValueError("a mixture truth needs weights, means and variances of equal length")
        return self

    def mixture(self) -> Mixture:
        return Mixture.from_arrays(self.weights, self.means, self.variances)

    def density(self):
        if self.family == "mixture":
            return mixture_density(self.mixture(), name="truth")
        return build_omega(self.alpha, self.xi).density()


class ExperimentConfig(_Strict):
    command: Literal[COMMANDS]
    seed: int
    output_dir: Path = Path("out")
    sample_path: Optional[Path] = None
    mixture_path: Optional[Path] = None
    sieve: SieveSection = SieveSection()
    em: EmSection = EmSection()
    m_range: List[int] = Field(default_factory=lambda: list(range(2, 11)))
    kappa_calibration: Literal["fixed", "slope"] = "fixed"
    pilot_m_range: List[int] = Field(default_factory=lambda: list(range(2, 21)))
    truth: TruthSection = TruthSection()
    n_grid: List[int] = Field(default_factory=lambda: [500, 1000, 2000, 4000, 8000])
    reps: int = Field(default=50, ge=1)
    sigma_grid: List[float] = Field(default_factory=lambda: [0.4, 0.3, 0.2, 0.1, 0.05])
    beta: float = Field(default=2.0, gt=0)
    n: int = Field(default=100, ge=1)
    D: Optional[int] = None
    alpha_code: float = Field(default=0.5, gt=0, lt=1)
    n_theta: int = Field(default=10, ge=1)
    risk_tol: float = Field(default=1e-8, gt=0)

    @field_validator("m_range", "pilot_m_range", "n_grid", "sigma_grid")
    @classmethod
    def _nonempty(cls, v):
        if not v:
            raise ValueError("grid must be nonempty")
        return v

    @field_validator("m_range", "pilot_m_range")
    @classmethod
    def _models(cls, v):
        if min(v) < 2:
            raise ValueError("model indices start at 2")
        return sorted(set(v))

    @field_validator("n_grid")
    @classmethod
    def _sizes(cls, v):
        if min(v) < 2:
            raise ValueError("sample sizes must be at least 2")
        return v

    @field_validator("sigma_grid")
    @classmethod
    def _scales(cls, v):
        if min(v) <= 0:
            raise ValueError("scales must be positive")
        return v

    @model_validator(mode="after")
    def _files(self):
        for name in ("sample_path", "mixture_path"):
            p = getattr(self, name)
            if p is not None and not p.is_file():
                raise ValueError(f"{name} does not exist: {p}")
        if self.command in ("select", "cluster") and self.sample_path is None:
            raise ValueError(f"{self.command} needs sample_path")
        if self.D is not None and (self.D < 2 or self.D % 2):
            raise ValueError("D must be a positive even integer")
        return self


def load_config(path, seed: Optional[int] = None, out: Optional[str] = None) -> ExperimentConfig:
    """Read a JSON config; relative paths resolve against its directory.
    ``seed`` and ``out`` override the file."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    if seed is not None:
        data["seed"] = seed
    if out is not None:
        data["output_dir"] = str(Path(out).resolve())
    base = path.resolve().parent
    data.setdefault("output_dir", ExperimentConfig.model_fields["output_dir"].default)
    for key in ("sample_path", "mixture_path", "output_dir"):
        if data.get(key) is not None and not Path(data[key]).is_absolute():
            data[key] = str((base / data[key]).resolve())
    return parse_config(data)


def parse_config(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_short_validation(exc)) from exc


def _short_validation(exc: ValidationError) -> str:
    parts = []
    for e in exc.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "config"
        parts.append(f"{loc}: {e['msg']}")
    return "; ".join(parts)


def config_digest(cfg: ExperimentConfig) -> str:
    """sha256 of the canonical config, excluding the output directory."""
    d = cfg.model_dump(mode="json", exclude={"output_dir"})
    return hashlib.sha256(_canonical(d).encode()).hexdigest()


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------------------------
# seeds, parallelism, files


def derive_seed(root: int, *labels) -> int:
    """Child seed from the root seed and a task path such as ("rate", n, r).

    sha256 of the canonical JSON of [root, *labels], first 8 bytes, top bit
    cleared.  Independent of scheduling order.
    """
    h = hashlib.sha256(_canonical([int(root), *labels]).encode()).digest()
    return int.from_bytes(h[:8], "big") & (2 ** 63 - 1)


def thread_count() -> int:
    raw = os.environ.get("MSIEVE_THREADS", "")
    if not raw:
        return 1
    try:
        v = int(raw)
    except ValueError as exc:
        raise ConfigError("MSIEVE_THREADS must be a positive integer") from exc
    if v < 1:
        raise ConfigError("MSIEVE_THREADS must be a positive integer")
    return v


class OrderedPool:
    """Order-preserving map over at most MSIEVE_THREADS worker threads."""

    def __init__(self, threads: Optional[int] = None):
        self.threads = thread_count() if threads is None else threads
        self._ex = ThreadPoolExecutor(self.threads) if self.threads > 1 else None

    def map(self, fn, items):
        if self._ex is None:
            return list(map(fn, items))
        return list(self._ex.map(fn, items))

    def close(self):
        if self._ex is not None:
            self._ex.shutdown()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def atomic_write(path: Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)
    return path


def dump_json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, Path):
        return str(obj)
    return obj


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# runners


def _out(cfg: ExperimentConfig) -> Path:
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    return cfg.output_dir


def _selection(cfg: ExperimentConfig, sample: Sample, pool=None):
    sieve = cfg.sieve.build()
    table = select_model(sample, cfg.m_range, sieve, cfg.em.build())
    info = {"kappa": sieve.kappa, "calibration": cfg.kappa_calibration}
    if cfg.kappa_calibration == "slope":
        cal = calibrate_kappa(table, sieve)
        table = rescore(table, sieve, cal.kappa)
        info.update(kappa=cal.kappa, slope=cal.slope, slope_ci=list(cal.slope_ci),
                    jump_kappa=cal.jump_kappa, jump_size=cal.jump_size)
    return table, info


def run_select(cfg: ExperimentConfig, pool=None) -> list:
    out = _out(cfg)
    sample = read_sample(cfg.sample_path)
    table, info = _selection(cfg, sample)
    report = {**table.to_dict(), "kappa": info}
    files = [atomic_write(out / "selection.csv", table.to_csv()),
             atomic_write(out / "selection.json", dump_json(report)),
             atomic_write(out / "mixture.json", dump_json(table.selected_row.fit.mixture.to_dict()))]
    return files


def run_cluster(cfg: ExperimentConfig, pool=None) -> list:
    """Labels from a given mixture, or from the selected fit when none is given."""
    out = _out(cfg)
    sample = read_sample(cfg.sample_path)
    files = []
    if cfg.mixture_path is not None:
        mix = read_mixture(cfg.mixture_path)
    else:
        table, _ = _selection(cfg, sample)
        mix = table.selected_row.fit.mixture
        files.append(atomic_write(out / "mixture.json", dump_json(mix.to_dict())))
    labels, post = map_cluster(mix, sample)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "label"] + [f"posterior_{u}" for u in range(mix.m)])
    for i, (lab, row) in enumerate(zip(labels.tolist(), post.tolist())):
        w.writerow([i, lab] + [repr(float(p)) for p in row])
    files.append(atomic_write(out / "labels.csv", buf.getvalue()))
    return files


def _risk_csv(rows, report: Optional[RiskReport]):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n", "reps", "mean_risk", "stderr", "failures"])
    for r in rows:
        w.writerow([r.n, r.reps, repr(float(r.mean_risk)), repr(float(r.stderr)), r.failures])
    return buf.getvalue()


def rate_target(beta: float) -> float:
    return -2.0 * beta / (2.0 * beta + 1.0)


def run_rate(cfg: ExperimentConfig, pool=None) -> list:
    """Monte Carlo Hellinger risk of the selection pipeline per n.

    risk.csv is rewritten after every completed n, so a crash keeps the
    finished rows.  With kappa_calibration = "slope" the penalty constant
    is calibrated once on a pilot sample of the largest n (its own seed)
    and then held fixed for every replication.
    """
    out = _out(cfg)
    pool = pool or OrderedPool(1)
    truth = cfg.truth.density()
    sieve = cfg.sieve.build()
    em_cfg = cfg.em.build()
    kappa_info = {"kappa": sieve.kappa, "calibration": cfg.kappa_calibration}
    if cfg.kappa_calibration == "slope":
        n_pilot = max(cfg.n_grid)
        rng = np.random.default_rng(derive_seed(cfg.seed, "rate", "pilot"))
        pilot = Sample(rejection_sample(truth, n_pilot, rng))
        table = select_model(pilot, cfg.pilot_m_range, sieve, em_cfg)
        cal = calibrate_kappa(table, sieve)
        sieve = cfg.sieve.build(kappa=cal.kappa)
        kappa_info.update(kappa=cal.kappa, pilot_n=n_pilot, slope=cal.slope,
                          slope_ci=list(cal.slope_ci), jump_kappa=cal.jump_kappa)

    lock = threading.Lock()
    chosen = collections.defaultdict(collections.Counter)

    def procedure(sample):
        tab = select_model(sample, cfg.m_range, sieve, em_cfg)
        with lock:
            chosen[sample.n][tab.selected_m] += 1
        return mixture_density(tab.selected_row.fit.mixture)

    rows = []
    for n in cfg.n_grid:
        rep = mc_hellinger_risk(truth, procedure, [n], cfg.reps, cfg.seed,
                                seed_for=lambda nn, r: derive_seed(cfg.seed, "rate", nn, r),
                                tol=cfg.risk_tol, map_fn=pool.map)
        rows.extend(rep.rows)
        atomic_write(out / "risk.csv", _risk_csv(rows, None))
    ns = [r.n for r in rows]
    risks = [r.mean_risk for r in rows]
    defined = len(set(ns)) >= 2 and min(risks) > 0
    slope, ci = loglog_slope(ns, risks) if defined else (None, None)
    target = rate_target(cfg.beta)
    summary = {
        "slope": slope, "slope_ci": list(ci) if ci else None, "slope_defined": defined,
        "target": target, "within_band": None if slope is None else abs(slope - target) <= 0.2,
        "kappa": kappa_info,
        "rows": [{"n": r.n, "reps": r.reps, "mean_risk": r.mean_risk, "stderr": r.stderr,
                  "failures": r.failures,
                  "selected_m": {str(m): c for m, c in sorted(chosen[r.n].items())}}
                 for r in rows],
    }
    return [out / "risk.csv", atomic_write(out / "rate.json", dump_json(summary))]


def run_approx(cfg: ExperimentConfig, pool=None) -> list:
    out = _out(cfg)
    pool = pool or OrderedPool(1)
    f = cfg.truth.density()
    curve = kl_decay_curve(f, cfg.beta, sorted(cfg.sigma_grid, reverse=True),
                           map_fn=pool.map, keep_reports=True)
    disc = []
    for r in curve.rows:
        if r.report is None:
            continue
        d = r.report.discretization.to_dict()
        disc.append({"sigma": r.sigma, "mu_sigma": r.report.budget.mu_sigma,
                     "epsilon": r.report.budget.epsilon, **d})
    return [atomic_write(out / "decay.csv", curve.to_csv()),
            atomic_write(out / "decay.json", dump_json(curve.to_dict())),
            atomic_write(out / "discretization.json", dump_json(disc))]


def _family(cfg: ExperimentConfig, D: int):
    base = build_omega(cfg.truth.alpha, cfg.truth.xi)
    return PerturbationFamily(cfg.beta, D, (0,) * D, base,
                              build_bump(cfg.beta))


def run_lowerbound(cfg: ExperimentConfig, pool=None) -> list:
    """Pairwise separation audit of the hypercube family on a code.

    D comes from the config or from choose_D(n, beta).  Exit status 4 is
    raised after the files are written when any pair fails.
    """
    out = _out(cfg)
    D = cfg.D if cfg.D is not None else choose_D(cfg.n, cfg.beta)
    Theta = vg_subset(D, cfg.alpha_code, seed=derive_seed(cfg.seed, "lowerbound", "code"))
    report = audit_separation(_family(cfg, D), Theta, n=cfg.n)
    buf = io.StringIO()
    cols = ["theta_a", "theta_b", "hamming", "h2", "h2_lower", "h2_upper", "kl", "kl_upper",
            "pass", "strict_pass"]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for p in report.pairs:
        w.writerow([repr(p[c]) if isinstance(p[c], float) else
                    (str(p[c]).lower() if isinstance(p[c], bool) else p[c]) for c in cols])
    files = [atomic_write(out / "audit.csv", buf.getvalue()),
             atomic_write(out / "audit.json", dump_json({**report.to_dict(), "code_size": len(Theta)}))]
    extra = {"D": D, "theorem3_bound": report.bound}
    if not report.passed:
        raise AuditFailure("separation audit failed", files=files, extra=extra)
    return files, extra


def run_audit(cfg: ExperimentConfig, pool=None) -> list:
    """Class-condition checks of n_theta random family members and the
    domination inequalities for the base density."""
    out = _out(cfg)
    pool = pool or OrderedPool(1)
    D = cfg.D if cfg.D is not None else 8
    fam = _family(cfg, D)
    P = proposition1_params(fam.base, cfg.sieve.beta_low, cfg.sieve.beta_high)
    rng = np.random.default_rng(derive_seed(cfg.seed, "audit", "theta"))
    thetas = [tuple(int(t) for t in rng.integers(0, 2, D)) for _ in range(cfg.n_theta)]

    def check(th):
        rep = verify_class_conditions(fam.with_theta(th), cfg.beta, P)
        return {"theta": "".join(map(str, th)), **rep.to_dict()}

    members = pool.map(check, thetas)
    k = max(approx_order(cfg.beta), 1)
    p = 0.5
    sigma = 0.5 * (1.0 - p ** (1.0 / k))
    dom = domination_checks(fam.base.density(), sigma, k, P, p=p)
    passed = all(m["passed"] for m in members) and dom.passed
    report = {"beta": cfg.beta, "D": D, "params": {
        "gamma": P.gamma, "l_plus": P.l_plus, "L_coef": list(P.L_coef), "eps": P.eps,
        "C": P.C, "alpha": P.alpha, "xi": P.xi, "M": P.M},
        "members": members, "domination": dom.to_dict(), "passed": passed}
    files = [atomic_write(out / "class_audit.json", dump_json(report))]
    if not passed:
        raise AuditFailure("class or domination audit failed", files=files, extra={"D": D})
    return files, {"D": D}


RUNNERS = {"select": run_select, "cluster": run_cluster, "rate": run_rate,
           "approx": run_approx, "lowerbound": run_lowerbound, "audit": run_audit}


# ---------------------------------------------------------------------------
# manifest


def write_manifest(cfg: ExperimentConfig, files, started: float, extra=None, status="ok"):
    out = _out(cfg)
    entries = {}
    for f in files:
        f = Path(f)
        if f.name != "manifest.json" and f.exists():
            entries[f.name] = file_digest(f)
    manifest = {
        "tool": "msieve", "version": __version__, "command": cfg.command,
        "config_sha256": config_digest(cfg),
        "config": cfg.model_dump(mode="json", exclude={"output_dir"}),
        "seeds": {"root": cfg.seed, "derivation": "sha256(json([root, *labels]))[:8] & (2^63-1)"},
        "threads": thread_count(),
        "wall_clock_seconds": round(time.monotonic() - started, 3),
        "status": status,
        "files": dict(sorted(entries.items())),
        **(extra or {}),
    }
    return atomic_write(out / "manifest.json", dump_json(manifest))


def run(cfg: ExperimentConfig) -> Path:
    """Run the configured command and write manifest.json; returns its path.

    Failures still write the manifest (status "failed") for whatever files
    exist before the exception propagates.
    """
    started = time.monotonic()
    runner = RUNNERS[cfg.command]
    with OrderedPool() as pool:
        try:
            res = runner(cfg, pool)
        except AuditFailure as exc:
            write_manifest(cfg, exc.files, started, exc.extra, status="audit_failed")
            raise
    files, extra = res if isinstance(res, tuple) else (res, None)
    return write_manifest(cfg, files, started, extra)
