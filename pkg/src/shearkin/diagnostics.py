"""Asymptotics tables, threshold verdicts, run manifests and file output."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from .moment_dynamics import StressTrajectory, coefficient_frame

PASS, FAIL, SKIP = "PASS", "FAIL", "SKIP"


class UnknownCriterion(KeyError):
    """A criterion refers to a check id that is not registered."""


# ------------------------------------------------------------ asymptotics


def _limit_residual_F(F: np.ndarray, t: float, frame) -> float:
    a, b = frame.a, frame.b
    target = math.sqrt(3.0) * (np.outer(a, b) - np.outer(b, a)) + 4.0 * np.outer(b, b)
    return float(np.linalg.norm(2.0 * t * F + target))


def asymptotics_table(traj: StressTrajectory, checkpoints) -> list[dict]:
    """Ratios of the stress to its leading-order growth at each checkpoint.

    Columns: T_xx/(mu^2 t^3/3), T_xy/(-mu t^2/2), T_yy/t, theta*3/(mu^2 t^3)
    and |2tF + sqrt3(a(x)b - b(x)a) + 4 b(x)b|, all in frame coordinates.
    ``order_*`` is log2 of the error ratio between t and 2t when 2t is also
    inside the trajectory (about 1 for an O(1/t) correction).

    For mu = 0 only the isotropy defect |T - (tr T/2) Id| / tr T is reported.
    """
    frame = traj.frame
    mu = frame.mu
    rows = []

    def ratios(t):
        cf = coefficient_frame(traj, t)
        T = frame.to_frame(cf.T)
        if mu == 0.0:
            iso = math.hypot(T.xx - T.yy, 2 * T.xy) / (2 * T.trace)
            return {"isotropy_defect": iso}
        return {
            "Txx_ratio": T.xx / (mu * mu * t**3 / 3.0),
            "Txy_ratio": T.xy / (-mu * t * t / 2.0),
            "Tyy_ratio": T.yy / t,
            "theta_ratio": cf.theta * 3.0 / (mu * mu * t**3),
            "F_residual": _limit_residual_F(cf.F, t, frame),
        }

    def err(key, v):
        return abs(v) if key in ("F_residual", "isotropy_defect") else abs(v - 1.0)

    for t in checkpoints:
        t = float(t)
        if t < traj.t0 or t > traj.t_end * (1 + 1e-12):
            raise ValueError(f"checkpoint {t} outside trajectory [{traj.t0}, {traj.t_end}]")
        row = {"t": t, **ratios(t)}
        keys = [k for k in row if k != "t"]
        if mu != 0.0:
            row["within_1pct"] = all(err(k, row[k]) <= 0.01 for k in keys if k != "F_residual") \
                and row["F_residual"] <= 0.01 * math.sqrt(22.0)  # 1% of |limit|
        else:
            row["within_1pct"] = row["isotropy_defect"] <= 0.01
        if 2 * t <= traj.t_end * (1 + 1e-12):
            nxt = ratios(2 * t)
            for k in keys:
                e0, e1 = err(k, row[k]), err(k, nxt[k])
                row[f"order_{k}"] = math.log2(e0 / e1) if e0 > 0 and e1 > 0 else float("nan")
        rows.append(row)
    return rows


# ------------------------------------------------------------ verdicts


@dataclass(frozen=True)
class Verdict:
    id: str
    status: str
    measured: float | None
    threshold: float | None
    margin: float | None
    detail: str = ""

    @property
    def passed(self) -> bool:
        return self.status == PASS


def _margin(threshold, measured, upper: bool):
    if threshold is None or measured is None or not math.isfinite(measured):
        return None
    diff = (threshold - measured) if upper else (measured - threshold)
    return diff / abs(threshold) if threshold != 0 else diff


def _scalar(series) -> float:
    return float(np.asarray(series, dtype=float).reshape(-1)[-1]) if np.ndim(series) else float(series)


def _check_below(series, rule):
    m = _scalar(series)
    return m < rule["threshold"], m, True


def _check_at_most(series, rule):
    m = _scalar(series)
    return m <= rule["threshold"], m, True


def _check_above(series, rule):
    m = _scalar(series)
    return m > rule["threshold"], m, False


def _check_at_least(series, rule):
    m = _scalar(series)
    return m >= rule["threshold"], m, False


def _check_max_abs_below(series, rule):
    m = float(np.max(np.abs(np.asarray(series, dtype=float))))
    return m <= rule["threshold"], m, True


def _check_monotone(series, rule):
    """Largest single increase of a series against a slack."""
    v = np.asarray(series, dtype=float)
    up = float(np.max(np.diff(v))) if v.size > 1 else 0.0
    up = max(up, 0.0)
    return up <= rule.get("slack", rule.get("threshold", 0.0)), up, True


def _check_zscore(series, rule):
    """series = (estimate, stderr[, expected])."""
    vals = list(np.asarray(series, dtype=float).reshape(-1))
    est, se = vals[0], vals[1]
    ref = vals[2] if len(vals) > 2 else rule.get("expected", 0.0)
    if se == 0:
        z = 0.0 if est == ref else math.inf
    else:
        z = abs(est - ref) / se
    return z <= rule["threshold"], z, True


def _check_relative(series, rule):
    """series = (value, reference)."""
    v, ref = (float(x) for x in np.asarray(series, dtype=float).reshape(-1)[:2])
    r = abs(v / ref - 1.0)
    return r <= rule["threshold"], r, True


CHECKS = {
    "below": _check_below,
    "at_most": _check_at_most,
    "above": _check_above,
    "at_least": _check_at_least,
    "max_abs_below": _check_max_abs_below,
    "monotone_nonincreasing": _check_monotone,
    "zscore_within": _check_zscore,
    "relative_within": _check_relative,
}


def verdict(series, rule: dict) -> Verdict:
    """Deterministic PASS/FAIL of ``series`` against a registry entry.

    ``rule`` needs ``id`` and ``check`` (a key of CHECKS) plus ``threshold``
    or ``slack``.  ``series=None`` yields SKIP.
    """
    check = rule.get("check")
    if check not in CHECKS:
        raise UnknownCriterion(f"criterion {rule.get('id')!r} uses unregistered check {check!r}")
    thr = rule.get("threshold", rule.get("slack"))
    if series is None:
        return Verdict(rule["id"], SKIP, None, thr, None, rule.get("skip_reason", "not evaluated"))
    ok, measured, upper = CHECKS[check](series, rule)
    measured = float(measured)
    return Verdict(rule["id"], PASS if bool(ok) else FAIL, measured, thr, _margin(thr, measured, upper),
                   rule.get("description", ""))


def load_criteria(path=None) -> dict[str, dict]:
    """Criteria registry keyed by id (the packaged criteria.toml by default)."""
    if path is None:
        text = resources.files("shearkin").joinpath("criteria.toml").read_text()
    else:
        text = Path(path).read_text()
    raw = tomllib.loads(text)
    out = {}
    for cid, rule in raw.get("criteria", {}).items():
        rule = dict(rule)
        rule["id"] = cid
        if rule.get("check") not in CHECKS:
            raise UnknownCriterion(f"criterion {cid!r} uses unregistered check {rule.get('check')!r}")
        out[cid] = rule
    return out


def criteria_for(mode: str, registry: dict) -> dict[str, dict]:
    return {k: v for k, v in registry.items() if v.get("mode") == mode}


# ------------------------------------------------------------ manifest


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def module_versions() -> dict[str, str]:
    import numpy
    import scipy

    from . import __version__

    out = {"shearkin": __version__, "numpy": numpy.__version__, "scipy": scipy.__version__}
    try:
        import numba

        out["numba"] = numba.__version__
    except ImportError:  # pragma: no cover
        pass
    return out


@dataclass
class RunManifest:
    mode: str
    config_hash: str
    seed: int | None
    versions: dict
    tolerances: dict
    config: dict = field(default_factory=dict)
    verdicts: list = field(default_factory=list)

    def add(self, v: Verdict):
        if any(x["id"] == v.id for x in self.verdicts):
            raise ValueError(f"verdict {v.id!r} recorded twice")
        self.verdicts.append(asdict(v))

    def complete(self, expected_ids):
        """Mark every expected check that has no verdict yet as SKIP."""
        have = {x["id"] for x in self.verdicts}
        for cid in expected_ids:
            if cid not in have:
                self.add(Verdict(cid, SKIP, None, None, None, "not evaluated in this run"))

    @property
    def all_passed(self) -> bool:
        return all(x["status"] != FAIL for x in self.verdicts)

    def to_json(self, path=None) -> str:
        text = json.dumps(asdict(self), indent=2, sort_keys=True, default=_json_default) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_json(cls, path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


# ------------------------------------------------------------ CSV and plots


def write_csv(path, columns: dict, plot: bool = True) -> Path:
    """Write equal-length columns with round-trip float formatting; optionally
    emit a gnuplot script ``<stem>.gp`` with log-log and semi-log panels."""
    path = Path(path)
    names = list(columns)
    cols = [np.asarray(columns[n], dtype=float).reshape(-1) for n in names]
    length = {c.size for c in cols}
    if len(length) > 1:
        raise ValueError(f"columns have different lengths: {dict(zip(names, (c.size for c in cols)))}")
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(names)
        for row in zip(*cols):
            wr.writerow([repr(float(v)) for v in row])
    if plot and len(names) > 1:
        write_gnuplot(path, names)
    return path


def read_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        names = next(rd)
        rows = [[float(x) for x in r] for r in rd]
    arr = np.array(rows, dtype=float).reshape(len(rows), len(names))
    return {n: arr[:, k].copy() for k, n in enumerate(names)}


def write_gnuplot(csv_path, names) -> Path:
    csv_path = Path(csv_path)
    gp = csv_path.with_suffix(".gp")
    n = len(names)
    lines = [
        "# log-log and semi-log views of " + csv_path.name,
        "set datafile separator ','",
        "set key autotitle columnhead",
        "set terminal pngcairo size 1200,500",
        f"set output '{csv_path.stem}.png'",
        "set multiplot layout 1,2",
        "set logscale xy",
        f"set title '{csv_path.stem} (log-log)'",
        f"plot for [i=2:{n}] '{csv_path.name}' using 1:(abs(column(i))) with lines",
        "unset logscale x",
        f"set title '{csv_path.stem} (semi-log)'",
        f"plot for [i=2:{n}] '{csv_path.name}' using 1:(abs(column(i))) with lines",
        "unset multiplot",
    ]
    gp.write_text("\n".join(lines) + "\n")
    return gp


# ------------------------------------------------------------ field binaries


def write_field(path, values: np.ndarray, L: float, t: float) -> Path:
    """Header: int64 n, float64 L, float64 t (little-endian); then n*n row-major float64."""
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    if values.shape != (n, n):
        raise ValueError("field must be square")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<qdd", n, float(L), float(t)))
        fh.write(np.ascontiguousarray(values, dtype="<f8").tobytes())
    return path


def read_field(path) -> tuple[np.ndarray, float, float]:
    raw = Path(path).read_bytes()
    n, L, t = struct.unpack_from("<qdd", raw, 0)
    v = np.frombuffer(raw, dtype="<f8", offset=24)
    if v.size != n * n:
        raise ValueError(f"field file holds {v.size} values, expected {n * n}")
    return v.reshape(n, n).astype(np.float64), L, t
