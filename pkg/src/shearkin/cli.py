"""Command-line surface: config parsing, experiment runners, verdicts.

    shearkin moments --mu 1 --t-end 1e4
    shearkin fp --config fp.toml
    shearkin dsmc --seed 7 --n 100000
    shearkin hypo
    shearkin report --input runs/<run-id>

Every run writes ``<root>/<run-id>/manifest.json``, ``series/*.csv`` and,
where a mode has one, ``fields/*.bin``.  The run id is derived from the
config hash and nothing time-dependent is written, so repeating a run
reproduces its directory byte for byte.

Exit codes: 0 all verdicts pass (or skip), 1 a verdict failed, 2 config or
usage error.
"""

from __future__ import annotations

import argparse
import difflib
import math
import os
import re
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from . import diagnostics as dg
from .fitting import InsufficientData, loglog_fit, semilog_fit
from .tensor_core import ShearFrame, SymTensor2

OUT_ENV = "SHEARKIN_OUT"
MODES = ("moments", "fp", "dsmc", "hypo", "report")
INIT_SHAPES = ("maxwellian", "gaussian", "two_bump")
EXIT_PASS, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

# section -> key -> ExperimentConfig attribute
SCHEMA = {
    "": {"mode": "mode"},
    "shear": {"mu": "mu", "alpha": "alpha", "beta": "beta"},
    "grid": {"n": "grid_n", "L": "grid_l"},
    "time": {"t_start": "t_start", "t_end": "t_end", "outputs": "n_out"},
    "ensemble": {"particles": "particles", "seed": "seed", "dt": "dt", "init": "ensemble_init"},
    "fp": {"init": "init", "scheme": "scheme"},
    "moments": {"T0": "T0"},
    "output": {"dir": "out_root", "run_id": "run_id"},
    "run": {"backend": "backend", "criteria": "criteria"},
}
TOLERANCE_SECTION = "tolerances"


# ---------------------------------------------------------------- errors


class ParseError(ValueError):
    """One config problem, located by line (None for flags) and dotted field."""

    def __init__(self, line: int | None, field: str, message: str):
        self.line, self.field, self.message = line, field, message
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{field}: {message}")


class ConfigError(ValueError):
    """All problems found in a config, not just the first."""

    def __init__(self, errors: list[ParseError]):
        self.errors = sorted(errors, key=lambda e: (e.line is None, e.line or 0))
        super().__init__("\n".join(str(e) for e in self.errors))


# ---------------------------------------------------------------- config


@dataclass
class ExperimentConfig:
    mode: str = "fp"
    mu: float = 1.0
    alpha: tuple = (1.0, 0.0)
    beta: tuple = (0.0, 1.0)
    grid_n: int = 128
    grid_l: float = 8.0
    t_start: float | None = None
    t_end: float | None = None
    n_out: int | None = None
    particles: int = 100_000
    seed: int = 0
    dt: float = 0.02
    ensemble_init: str = "maxwellian"
    init: str = "two_bump"
    scheme: str = "balanced"
    T0: tuple = (1.0, 0.0, 1.0)
    out_root: str | None = None
    run_id: str | None = None
    backend: str | None = None
    criteria: str | None = None
    tolerances: dict = field(default_factory=dict)

    @property
    def shear(self) -> ShearFrame:
        return ShearFrame(self.mu, self.alpha, self.beta)

    def resolved(self) -> "ExperimentConfig":
        """Copy with the mode-dependent time window filled in."""
        c = ExperimentConfig(**asdict(self))
        start, end, n_out = {
            "moments": (0.0, 1e4, 200),
            "fp": (1.0, 1e3, 121) if self.mu != 0 else (0.0, 10.0, 41),
            "dsmc": (0.0, 5.0, 26),
            "hypo": (0.0, 8.0, 41),
        }.get(self.mode, (0.0, 1.0, 2))
        c.t_start = start if c.t_start is None else c.t_start
        c.t_end = end if c.t_end is None else c.t_end
        c.n_out = n_out if c.n_out is None else c.n_out
        return c

    def science_dict(self) -> dict:
        """Everything that can change results; this is what gets hashed."""
        d = asdict(self)
        for k in ("out_root", "run_id", "criteria"):
            d.pop(k)
        d["alpha"], d["beta"], d["T0"] = list(self.alpha), list(self.beta), list(self.T0)
        return d


def _line_map(text: str) -> dict[str, int]:
    """Dotted key -> 1-based line number (first occurrence)."""
    out: dict[str, int] = {}
    section = ""
    header = re.compile(r"^\s*\[\s*([^\]\s]+)\s*\]")
    key = re.compile(r"""^\s*(?:"([^"]+)"|'([^']+)'|([A-Za-z0-9_\-]+))\s*=""")
    for n, line in enumerate(text.splitlines(), 1):
        m = header.match(line)
        if m:
            section = m.group(1).strip("\"'")
            out.setdefault(section, n)
            continue
        m = key.match(line)
        if m:
            k = next(g for g in m.groups() if g is not None)
            out.setdefault(f"{section}.{k}" if section else k, n)
    return out


def _nearest(name: str, candidates) -> str:
    hit = difflib.get_close_matches(name, list(candidates), n=1, cutoff=0.5)
    return f"; did you mean {hit[0]!r}?" if hit else f"; valid keys: {', '.join(sorted(candidates))}"


def _is_real(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _flatten(raw: dict, lines: dict, registry: dict, errors: list) -> dict:
    """TOML tree -> {attribute: (value, line, dotted name)}; unknown keys become errors."""
    flat: dict = {}
    sections = [s for s in SCHEMA if s] + [TOLERANCE_SECTION]
    for k, v in raw.items():
        if isinstance(v, dict) and k not in SCHEMA[""]:
            if k == TOLERANCE_SECTION:
                for cid, thr in v.items():
                    name = f"{k}.{cid}"
                    flat.setdefault("tolerances", ({}, lines.get(k), k))[0][cid] = (thr, lines.get(name), name)
                continue
            if k not in SCHEMA:
                errors.append(ParseError(lines.get(k), k, "unknown section" + _nearest(k, sections)))
                continue
            for kk, vv in v.items():
                name = f"{k}.{kk}"
                if kk not in SCHEMA[k]:
                    errors.append(ParseError(lines.get(name), name, "unknown key" + _nearest(kk, SCHEMA[k])))
                    continue
                flat[SCHEMA[k][kk]] = (vv, lines.get(name), name)
        elif k in SCHEMA[""]:
            flat[SCHEMA[""][k]] = (v, lines.get(k), k)
        else:
            errors.append(ParseError(lines.get(k), k, "unknown key" + _nearest(k, list(SCHEMA[""]) + sections)))
    return flat


def _validate(flat: dict, registry: dict, errors: list) -> ExperimentConfig:
    cfg = ExperimentConfig()

    def err(attr, msg):
        _, line, name = flat[attr]
        errors.append(ParseError(line, name, msg))

    def take(attr, ok, msg, convert=lambda x: x):
        if attr not in flat:
            return
        v = flat[attr][0]
        if ok(v):
            setattr(cfg, attr, convert(v))
        else:
            err(attr, f"{msg}, got {v!r}")

    take("mode", lambda v: v in MODES, f"must be one of {', '.join(MODES)}")
    take("mu", _is_real, "must be a finite real number", float)
    for attr in ("alpha", "beta"):
        take(attr, lambda v: isinstance(v, (list, tuple)) and len(v) == 2 and all(map(_is_real, v)),
             "must be a list of two real numbers", lambda v: (float(v[0]), float(v[1])))
    take("grid_n", lambda v: _is_int(v) and v >= 16, "must be an integer >= 16")
    take("grid_l", lambda v: _is_real(v) and v >= 6.0, "must be a real number >= 6", float)
    take("t_start", lambda v: _is_real(v) and v >= 0, "must be a real number >= 0", float)
    take("t_end", lambda v: _is_real(v) and v > 0, "must be a positive real number", float)
    take("n_out", lambda v: _is_int(v) and v >= 2, "must be an integer >= 2")
    take("particles", lambda v: _is_int(v) and v >= 1000, "must be an integer >= 1000")
    take("seed", lambda v: _is_int(v) and 0 <= v < 2**64, "must be an integer in [0, 2^64)")
    take("dt", lambda v: _is_real(v) and v > 0, "must be a positive real number", float)
    take("ensemble_init", lambda v: v in ("maxwellian", "bimodal"), "must be 'maxwellian' or 'bimodal'")
    take("init", lambda v: v in INIT_SHAPES, f"must be one of {', '.join(INIT_SHAPES)}")
    take("scheme", lambda v: v in ("balanced", "central"), "must be 'balanced' or 'central'")
    take("T0", lambda v: isinstance(v, (list, tuple)) and len(v) == 3 and all(map(_is_real, v)),
         "must be [T_xx, T_xy, T_yy]", lambda v: tuple(float(x) for x in v))
    take("out_root", lambda v: isinstance(v, str) and v != "", "must be a non-empty path")
    take("run_id", lambda v: isinstance(v, str) and re.fullmatch(r"[A-Za-z0-9_.\-]+", v) is not None,
         "must be a plain directory name")
    take("backend", lambda v: v in ("numba", "numpy"), "must be 'numba' or 'numpy'")
    take("criteria", lambda v: isinstance(v, str) and Path(v).is_file(), "must name an existing file")

    for attr in ("alpha", "beta"):
        if attr in flat and isinstance(getattr(cfg, attr), tuple):
            norm = math.hypot(*getattr(cfg, attr))
            if abs(norm - 1.0) > 1e-12:
                err(attr, f"must be a unit vector, |{attr}| = {norm!r}")
    if all(math.isclose(math.hypot(*v), 1.0, abs_tol=1e-12) for v in (cfg.alpha, cfg.beta)):
        dot = cfg.alpha[0] * cfg.beta[0] + cfg.alpha[1] * cfg.beta[1]
        if abs(dot) > 1e-12:
            attr = "beta" if "beta" in flat else ("alpha" if "alpha" in flat else None)
            msg = f"alpha and beta must be orthogonal, alpha.beta = {dot!r}"
            if attr:
                err(attr, msg)
            else:
                errors.append(ParseError(None, "shear", msg))
    if "T0" in flat and len(cfg.T0) == 3 and not SymTensor2(*cfg.T0).is_positive_definite():
        err("T0", "initial stress must be positive definite")
    if cfg.t_start is not None and cfg.t_end is not None and cfg.t_end <= cfg.t_start:
        err("t_end" if "t_end" in flat else "t_start", f"t_end ({cfg.t_end}) must exceed t_start ({cfg.t_start})")

    if "tolerances" in flat:
        for cid, (thr, line, name) in flat["tolerances"][0].items():
            if cid not in registry:
                errors.append(ParseError(line, name, "unknown criterion" + _nearest(cid, registry)))
            elif not _is_real(thr):
                errors.append(ParseError(line, name, f"threshold must be a real number, got {thr!r}"))
            else:
                cfg.tolerances[cid] = float(thr)
    return cfg


def _read_toml(path) -> tuple[dict, dict, list]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        return {}, {}, [ParseError(None, str(path), f"cannot read config: {e.strerror or e}")]
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        m = re.search(r"line (\d+)", str(e))
        return {}, {}, [ParseError(int(m.group(1)) if m else None, str(path), f"not valid TOML: {e}")]
    return raw, _line_map(text), []


def parse_config(path, registry: dict | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Read a TOML config; ``overrides`` (attribute -> value, from flags) win.

    Raises ConfigError listing every problem found.
    """
    raw, lines, errors = _read_toml(path) if path is not None else ({}, {}, [])
    return _build(raw, lines, errors, registry, overrides)


def _build(raw, lines, errors, registry, overrides) -> ExperimentConfig:
    if registry is None:
        crit = raw.get("run", {}).get("criteria") if isinstance(raw.get("run"), dict) else None
        if overrides and overrides.get("criteria"):
            crit = overrides["criteria"]
        try:
            registry = dg.load_criteria(crit if crit and Path(crit).is_file() else None)
        except (dg.UnknownCriterion, tomllib.TOMLDecodeError) as e:
            errors.append(ParseError(None, "criteria", str(e)))
            registry = {}
    flat = _flatten(raw, lines, registry, errors)
    flag_names = {v: k for sec in SCHEMA.values() for k, v in sec.items()}
    for attr, v in (overrides or {}).items():
        if v is not None:
            flat[attr] = (v, None, "--" + flag_names.get(attr, attr).replace("_", "-"))
    cfg = _validate(flat, registry, errors)
    if errors:
        raise ConfigError(errors)
    return cfg


# ---------------------------------------------------------------- runners


@dataclass
class RunOutput:
    tables: dict  # name -> columns
    fields: dict = field(default_factory=dict)  # name -> callable(path)


def _moments_run(cfg: ExperimentConfig) -> RunOutput:
    from .moment_dynamics import (MomentVector, abc_limit, coefficient_frame, integrate_moments,
                                  integrate_stress, matrix_M, matrix_N4)

    shear = cfg.shear
    traj = integrate_stress(SymTensor2(*cfg.T0), shear, cfg.t_end)
    t_end = cfg.t_end
    lo = min(1e-2, t_end / 100)
    times = np.unique(np.concatenate([[0.0], np.geomspace(lo, t_end, cfg.n_out)]))
    Ts = np.array([traj.T_at(t).as_tuple() for t in times])
    abc = np.array([traj.abc_at(t) if t > 0 else (np.nan,) * 3 for t in times])
    residual = np.array([coefficient_frame(traj, t).resmeq2_residual() for t in times])
    tables = {"stress": {"t": times, "T_11": Ts[:, 0], "T_12": Ts[:, 1], "T_22": Ts[:, 2],
                         "a": abc[:, 0], "b": abc[:, 1], "c": abc[:, 2], "consistency": residual}}

    checkpoints = sorted({10.0**k for k in range(0, 9) if 10.0**k <= t_end} | {t_end})
    rows = dg.asymptotics_table(traj, checkpoints)
    keys = sorted({k for r in rows for k in r if k != "t"})
    tables["asymptotics"] = {"t": [r["t"] for r in rows],
                             **{k: [float(r.get(k, np.nan)) for r in rows] for k in keys}}

    eig = np.sort(np.linalg.eigvals(matrix_M(shear.mu)).real)
    summary = {
        "t_end": t_end, "mu": shear.mu,
        "spectrum_error": float(np.max(np.abs(eig - [-3.0, -2.0, -1.0]))),
        "consistency": float(np.max(residual)),
        "n4_abscissa": float(np.max(np.linalg.eigvals(matrix_N4()).real)),
    }
    last = rows[-1]
    if shear.mu != 0:
        summary["ratio_dev"] = max(abs(last[k] - 1.0) for k in ("Txx_ratio", "Txy_ratio", "Tyy_ratio", "theta_ratio"))
        lim = np.array(abc_limit(shear.mu))
        summary["abc_dev"] = float(np.max(np.abs(np.array(traj.abc_at(t_end)) / lim - 1.0)))
    else:
        summary["isotropy_defect"] = last["isotropy_defect"]

    if t_end > 1.0:
        h0 = MomentVector(4, [1.0, 0.3, -0.2, 0.1, 0.5])
        ms = integrate_moments(h0, traj, t_end, t0=1.0, n_out=max(cfg.n_out, 50))
        norms = ms.norms(4)
        tables["h4"] = {"t": ms.times, "h4_norm": norms}
        mask = (ms.times >= 1e2) & (ms.times <= 1e4 * (1 + 1e-12)) & (norms > 0)
        if mask.sum() >= 5:
            slope, _, r2 = loglog_fit(ms.times[mask], norms[mask])
            summary["h4_exponent"], summary["h4_r2"] = slope, r2
    tables["summary"] = {k: [v] for k, v in summary.items()}
    return RunOutput(tables)


def fp_transient_end(t_start: float, t_end: float) -> float:
    """Start of the post-transient window used by the monotonicity and entropy checks."""
    return max(10.0 * t_start, t_end / 100.0) if t_start > 0 else t_end / 100.0


def entropy_rate_mismatch(t, H, D, t_from) -> np.ndarray:
    """|(dH/dt) / D - 1| at interior outputs with t >= t_from.

    ``D`` is the signed dissipation rate (negative); dH/dt uses centred
    differences on the possibly non-uniform output times.
    """
    t, H, D = (np.asarray(a, dtype=float) for a in (t, H, D))
    dH = np.gradient(H, t)
    k = np.arange(1, t.size - 1)
    k = k[(t[k] >= t_from) & (D[k] < 0)]
    return np.abs(dH[k] / D[k] - 1.0)


def exp_fit_window(t, l1, floor: float = 1e-11):
    """Semi-log fit of L1 over the samples after the first quarter that stay above ``floor``."""
    t, l1 = np.asarray(t, dtype=float), np.asarray(l1, dtype=float)
    mask = (t >= t[0] + 0.25 * (t[-1] - t[0])) & (l1 > floor)
    if mask.sum() < 5:
        raise InsufficientData("too few L1 samples above the floor for a semi-log fit")
    return semilog_fit(t[mask], l1[mask])


def _fp_run(cfg: ExperimentConfig) -> RunOutput:
    from . import fp_shape_solver as fp
    from .moment_dynamics import integrate_stress

    grid = fp.VelocityGrid(cfg.grid_n, cfg.grid_l)
    t0, t1 = cfg.t_start, cfg.t_end
    G0 = fp.initial_shape(cfg.init, grid, t0)
    fields_out = {}
    if cfg.mu != 0:
        traj = integrate_stress(SymTensor2(*cfg.T0), cfg.shear, t1)
        outs = np.geomspace(t0, t1, cfg.n_out) if t0 > 0 else np.linspace(t0, t1, cfg.n_out)
        r = fp.run_coupled(G0, traj, (t0, t1), outputs=outs, scheme=cfg.scheme, backend=cfg.backend)
        tables = {"fp": r.columns()}
        summary = {"t_start": t0, "t_end": t1, "mu": cfg.mu, "steps": float(r.steps),
                   "max_step_mass_error": r.max_step_mass_error}
        final = r.final
    else:
        outs = np.linspace(t0, t1, cfg.n_out)
        r = fp.mu_zero_run(G0, (t0, t1), outputs=outs, backend=cfg.backend)
        tables = {"fp0": {"t": r.times, "mass": r.mass, "momentum_1": r.momentum[:, 0],
                          "momentum_2": r.momentum[:, 1], "energy": r.energy, "l1": r.l1,
                          "theta": r.theta_used}}
        drift = grid.integrate(np.abs(r.final.values - G0.values))
        summary = {"t_start": t0, "t_end": t1, "mu": 0.0, "maxwellian_drift": drift,
                   "maxwellian_init": float(cfg.init == "maxwellian")}
        final = r.final
        fields_out["reference.bin"] = lambda p: dg.write_field(p, r.reference, grid.L, final.t)
    tables["summary"] = {k: [v] for k, v in summary.items()}
    fields_out["final.bin"] = lambda p: dg.write_field(p, final.values, grid.L, final.t)
    return RunOutput(tables, fields_out)


def _dsmc_run(cfg: ExperimentConfig) -> RunOutput:
    from . import boltzmann_dsmc as ds

    make = ds.ParticleEnsemble.maxwellian if cfg.ensemble_init == "maxwellian" else ds.ParticleEnsemble.bimodal
    ens = make(cfg.particles, seed=cfg.seed)
    ens.t = cfg.t_start
    r = ds.run(ens, cfg.shear, ds.CollisionConfig(dt=cfg.dt), cfg.t_end, n_out=cfg.n_out, backend=cfg.backend)
    cols = r.columns()
    cols["theta_bound_excess"] = ds.theta_bound_violations(r, cfg.mu)
    summary = {"t_end": cfg.t_end, "mu": cfg.mu, "collisions": float(r.collisions), "steps": float(r.steps),
               "max_momentum_error": r.max_momentum_error, "max_energy_error": r.max_energy_error}
    hist = r.histograms[-1]
    return RunOutput({"dsmc": cols, "summary": {k: [v] for k, v in summary.items()}}, {
        "particles.bin": lambda p: ds.write_snapshot(p, r.final),
        "histogram.bin": lambda p: dg.write_field(p, hist, ds.HIST_RANGE, float(r.times[-1])),
    })


def _hypo_run(cfg: ExperimentConfig) -> RunOutput:
    from .fp_shape_solver import VelocityGrid
    from .hypocoercivity import autonomous_decay_run, hypoco_check

    n = cfg.grid_n
    res = (n // 2, n, 2 * n)
    rep = hypoco_check(VelocityGrid(n, cfg.grid_l), resolutions=res)
    h = [2 * cfg.grid_l / m for m in res]
    comm = {"h": h, **{"err_" + k.replace("^", "").replace(" ", "_"): v for k, v in rep.commutator_errors.items()}, "adjointness": rep.adjointness}
    orders = [o for o in rep.commutator_order.values() if o == o]
    decay = autonomous_decay_run(lambda p1, p2: p1, s_span=(cfg.t_start, cfg.t_end),
                                 grid=VelocityGrid(max(n // 2, 16), cfg.grid_l), num=cfg.n_out)
    summary = {"commutator_order": min(orders) if orders else float("nan"), "bc_error": rep.bc_error,
               "kappa": rep.kappa, "decay_rate": rep.decay_rate, "decay_r2": rep.decay_r2}
    return RunOutput({"commutator": comm, "decay": {"s": decay.s, "h1_norm": decay.norm},
                      "summary": {k: [v] for k, v in summary.items()}})


RUNNERS = {"moments": _moments_run, "fp": _fp_run, "dsmc": _dsmc_run, "hypo": _hypo_run}


# ---------------------------------------------------------------- evaluation


def _s(tables, key):
    v = tables.get("summary", {}).get(key)
    return None if v is None else float(np.asarray(v).reshape(-1)[0])


def _measure_moments(tables, cfg):
    g = lambda k: _s(tables, k)  # noqa: E731
    return {"moments.spectrum": g("spectrum_error"), "moments.stress_ratios": g("ratio_dev"),
            "moments.abc_limit": g("abc_dev"), "moments.consistency": g("consistency"),
            "moments.n4_abscissa": g("n4_abscissa"), "moments.h4_exponent": g("h4_exponent"),
            "moments.h4_r2": g("h4_r2")}


def _measure_fp(tables, cfg):
    out = {}
    if "fp" in tables:
        s = tables["fp"]
        t = s["t"]
        t_from = fp_transient_end(cfg.t_start, cfg.t_end)
        late = t >= t_from
        out["fp.mass"] = float(np.max(np.abs(s["mass"] / s["mass"][0] - 1.0)))
        out["fp.covariance"] = float(np.max(s["cov_dev"]))
        out["fp.l1_monotone"] = s["l1"][late]
        tail = (t >= t[-1] / 10.0) & (s["l1"] > 0)
        if tail.sum() >= 5:
            slope, _, r2 = loglog_fit(t[tail], s["l1"][tail])
            out["fp.l1_exponent"], out["fp.l1_r2"] = slope, r2
        out["fp.entropy_monotone"] = s["rel_entropy"]
        mm = entropy_rate_mismatch(t, s["rel_entropy"], s["dissipation"], t_from)
        out["fp.entropy_dissipation"] = float(np.max(mm)) if mm.size else None
    if "fp0" in tables:
        s = tables["fp0"]
        th = float(s["theta"][0])
        out["fp0.mass"] = float(np.max(np.abs(s["mass"] / s["mass"][0] - 1.0)))
        dp = np.hypot(s["momentum_1"] - s["momentum_1"][0], s["momentum_2"] - s["momentum_2"][0])
        out["fp0.momentum"] = float(np.max(dp)) / math.sqrt(th)
        out["fp0.energy"] = float(np.max(np.abs(s["energy"] / s["energy"][0] - 1.0)))
        if _s(tables, "maxwellian_init"):
            out["fp0.maxwellian_drift"] = _s(tables, "maxwellian_drift")
        else:
            try:
                out["fp0.exp_r2"] = exp_fit_window(s["t"], s["l1"])[2]
            except InsufficientData:
                pass
    return out


def _measure_dsmc(tables, cfg):
    s = tables["dsmc"]
    eta = [SymTensor2(*e).as_matrix() for e in zip(s["eta_xx"][-1:], s["eta_xy"][-1:], s["eta_yy"][-1:])][0]
    T = SymTensor2(s["T_xx"][-1], s["T_xy"][-1], s["T_yy"][-1]).as_matrix()
    out = {"dsmc.momentum_per_collision": _s(tables, "max_momentum_error"),
           "dsmc.energy_per_collision": _s(tables, "max_energy_error"),
           "dsmc.mass": s["mass"] - s["mass"][0],
           "dsmc.theta_bound": float(np.max(s["theta_bound_excess"])),
           "dsmc.renormalised_stress": float(np.max(np.abs(eta @ T @ eta - np.eye(2))))}
    if cfg.mu == 0:
        out["dsmc.theta_constant"] = float(np.max(np.abs(s["theta"] / s["theta"][0] - 1.0)))
    return out


def _measure_hypo(tables, cfg):
    return {"hypo.commutator_order": _s(tables, "commutator_order"), "hypo.coercivity": _s(tables, "kappa"),
            "hypo.decay_rate": _s(tables, "decay_rate")}


MEASURES = {"moments": _measure_moments, "fp": _measure_fp, "dsmc": _measure_dsmc, "hypo": _measure_hypo}


def apply_tolerances(registry: dict, tolerances: dict) -> dict:
    out = {k: dict(v) for k, v in registry.items()}
    for cid, thr in tolerances.items():
        if cid not in out:
            raise dg.UnknownCriterion(cid)
        key = "threshold" if "threshold" in out[cid] else "slack"
        out[cid][key] = thr
    return out


def evaluate(mode: str, tables: dict, cfg: ExperimentConfig, registry: dict) -> list[dg.Verdict]:
    """Verdicts for every registered check of ``mode``; a pure function of the tables."""
    measured = MEASURES[mode](tables, cfg)
    out = []
    for cid, rule in sorted(dg.criteria_for(mode, registry).items()):
        series = measured.get(cid)
        rule = dict(rule)
        if cfg.t_end < rule.get("min_t_end", -math.inf):
            series, rule["skip_reason"] = None, f"needs t_end >= {rule['min_t_end']:g}"
        elif series is None:
            rule["skip_reason"] = "not applicable to this configuration"
        out.append(dg.verdict(series, rule))
    return out


def _thresholds(registry, mode):
    return {k: v.get("threshold", v.get("slack")) for k, v in sorted(dg.criteria_for(mode, registry).items())}


def build_manifest(cfg: ExperimentConfig, verdicts, registry) -> dg.RunManifest:
    sci = cfg.science_dict()
    man = dg.RunManifest(mode=cfg.mode, config_hash=dg.config_hash(sci),
                         seed=cfg.seed if cfg.mode == "dsmc" else None,
                         versions=dg.module_versions(), tolerances=_thresholds(registry, cfg.mode), config=sci)
    for v in verdicts:
        man.add(v)
    man.complete(dg.criteria_for(cfg.mode, registry))
    return man


def default_root(cfg_root: str | None) -> Path:
    return Path(cfg_root or os.environ.get(OUT_ENV) or "runs")


def write_run(root: Path, cfg: ExperimentConfig, out: RunOutput, man: dg.RunManifest) -> Path:
    run_dir = root / (cfg.run_id or f"{cfg.mode}-{man.config_hash[:12]}")
    (run_dir / "series").mkdir(parents=True, exist_ok=True)
    for name, cols in out.tables.items():
        dg.write_csv(run_dir / "series" / f"{name}.csv", cols, plot=name != "summary")
    if out.fields:
        (run_dir / "fields").mkdir(exist_ok=True)
        for name, writer in out.fields.items():
            writer(run_dir / "fields" / name)
    man.to_json(run_dir / "manifest.json")
    return run_dir


def _print_verdicts(verdicts, stream=None):
    stream = stream or sys.stdout

    def f(x):
        return "-" if x is None else f"{x:.4g}"

    for v in verdicts:
        v = v if isinstance(v, dict) else asdict(v)
        print(f"{v['status']:4s}  {v['id']:<30s} measured={f(v['measured']):>11s} "
              f"threshold={f(v['threshold']):>9s} margin={f(v['margin']):>9s}", file=stream)


# ---------------------------------------------------------------- report


def load_run(run_dir) -> tuple[dg.RunManifest, dict]:
    run_dir = Path(run_dir)
    man = dg.RunManifest.from_json(run_dir / "manifest.json")
    tables = {p.stem: dg.read_csv(p) for p in sorted((run_dir / "series").glob("*.csv"))}
    return man, tables


def report(run_dir, registry: dict | None = None) -> tuple[dg.RunManifest, bool]:
    """Re-evaluate a finished run from its CSVs; returns (new manifest, identical to stored)."""
    old, tables = load_run(run_dir)
    cfg = _config_from_manifest(old)
    if registry is None:
        registry = apply_tolerances(dg.load_criteria(), {k: v for k, v in old.tolerances.items() if v is not None})
    new = build_manifest(cfg, evaluate(cfg.mode, tables, cfg, registry), registry)
    new.versions = old.versions
    same = new.to_json() == old.to_json()
    return new, same


def _config_from_manifest(man: dg.RunManifest) -> ExperimentConfig:
    c = dict(man.config)
    names = {f.name for f in fields(ExperimentConfig)}
    c = {k: v for k, v in c.items() if k in names}
    for k in ("alpha", "beta", "T0"):
        c[k] = tuple(c[k])
    return ExperimentConfig(**c)


# ---------------------------------------------------------------- argparse


def _vec(text: str):
    try:
        return [float(x) for x in text.replace("(", "").replace(")", "").split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _seed(text: str):
    try:
        return int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None


def _count(text: str):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v != int(v):
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    return int(v)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("experiment")
    g.add_argument("--config", help="TOML config file; flags override its values")
    g.add_argument("--criteria", help="alternative criteria registry (TOML)")
    g.add_argument("--mu", type=float, help="shear strength")
    g.add_argument("--alpha", type=_vec, help="unit shear direction, e.g. 1,0")
    g.add_argument("--beta", type=_vec, help="unit gradient direction, orthogonal to alpha")
    g.add_argument("--t-start", dest="t_start", type=float)
    g.add_argument("--t-end", dest="t_end", type=float)
    g.add_argument("--outputs", dest="n_out", type=_count, help="number of output times")
    g.add_argument("--grid-n", dest="grid_n", type=_count)
    g.add_argument("--grid-l", dest="grid_l", type=float)
    g.add_argument("--particles", "--n", dest="particles", type=_count)
    g.add_argument("--seed", type=_seed)
    g.add_argument("--dt", type=float, help="DSMC time step")
    g.add_argument("--init", help="FP initial shape (maxwellian, gaussian, two_bump)")
    g.add_argument("--ensemble-init", dest="ensemble_init", help="DSMC initial ensemble (maxwellian, bimodal)")
    g.add_argument("--scheme", help="FP discretisation (balanced, central)")
    g.add_argument("--backend", help="kernel backend (numba, numpy)")
    g.add_argument("--out", dest="out_root", help=f"output root (default ${OUT_ENV} or ./runs)")
    g.add_argument("--run-id", dest="run_id", help="run directory name (default from the config hash)")

    p = _Parser(prog="shearkin", description="Homoenergetic shear flow experiments.")
    sub = p.add_subparsers(dest="mode", required=True, parser_class=_Parser)
    helps = {"moments": "stress ODE, asymptotics and 4th-moment stability",
             "fp": "rescaled Fokker-Planck shape solver", "dsmc": "hard-sphere particle solver",
             "hypo": "discrete hypocoercivity checks"}
    for mode, text in helps.items():
        sub.add_parser(mode, parents=[common], help=text, description=text)
    rp = sub.add_parser("report", help="re-evaluate verdicts of a finished run from its CSV files")
    rp.add_argument("--input", required=True, help="run directory containing manifest.json")
    rp.add_argument("--criteria", help="alternative criteria registry (TOML)")
    return p


OVERRIDE_ATTRS = ("mu", "alpha", "beta", "t_start", "t_end", "n_out", "grid_n", "grid_l", "particles",
                  "seed", "dt", "init", "ensemble_init", "scheme", "backend", "out_root", "run_id", "criteria")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_PASS if e.code in (0, None) else EXIT_USAGE

    if args.mode == "report":
        return _main_report(args)

    overrides = {a: getattr(args, a) for a in OVERRIDE_ATTRS}
    overrides["mode"] = args.mode
    try:
        cfg = parse_config(args.config, overrides=overrides)
    except ConfigError as e:
        print("config error:", file=sys.stderr)
        for pe in e.errors:
            print(f"  {pe}", file=sys.stderr)
        return EXIT_USAGE
    cfg = cfg.resolved()
    if cfg.t_end <= cfg.t_start:
        print(f"config error:\n  t_end ({cfg.t_end}) must exceed t_start ({cfg.t_start})", file=sys.stderr)
        return EXIT_USAGE
    if cfg.backend:
        os.environ["SHEARKIN_BACKEND"] = cfg.backend
    registry = apply_tolerances(dg.load_criteria(cfg.criteria), cfg.tolerances)

    try:
        out = RUNNERS[cfg.mode](cfg)
    except (ValueError, ArithmeticError) as e:
        print(f"{cfg.mode} run failed: {e}", file=sys.stderr)
        return EXIT_FAIL
    verdicts = evaluate(cfg.mode, out.tables, cfg, registry)
    man = build_manifest(cfg, verdicts, registry)
    run_dir = write_run(default_root(cfg.out_root), cfg, out, man)
    _print_verdicts(man.verdicts)
    print(f"run directory: {run_dir}")
    return EXIT_PASS if man.all_passed else EXIT_FAIL


def _main_report(args) -> int:
    run_dir = Path(args.input)
    if not (run_dir / "manifest.json").is_file():
        print(f"report: no manifest.json in {run_dir}", file=sys.stderr)
        return EXIT_USAGE
    registry = None
    if args.criteria:
        try:
            registry = dg.load_criteria(args.criteria)
        except (OSError, dg.UnknownCriterion, tomllib.TOMLDecodeError) as e:
            print(f"report: bad criteria file: {e}", file=sys.stderr)
            return EXIT_USAGE
    man, same = report(run_dir, registry)
    _print_verdicts(man.verdicts)
    print("verdicts reproduced from CSV: " + ("identical" if same else "DIFFERENT from stored manifest"))
    return EXIT_PASS if man.all_passed else EXIT_FAIL


def main_entry() -> None:
    """Console-script wrapper."""
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    main_entry()
