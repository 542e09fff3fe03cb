"""Run one experiment config and write its outputs.

Each run directory holds one tab-separated file per series, ``fits.tsv``
with every fitted or derived number, ``config.json`` (the resolved config),
a gnuplot script and ``manifest.json``.  Data files carry a ``#`` header
with the config hash; nothing time-dependent goes into them, so identical
configs give identical bytes.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .. import __version__
from ..ensembles import PairSpec
from ..fidelity import (
    REQUIRED,
    FidelityCurve,
    Regime,
    RegimeParams,
    dr_overlap,
    estimate_regime_params,
    predict_fidelity,
)
from ..quantum import grid_index, position_state, quantum_fidelity
from ..statistics import (
    fit_exponential_rate,
    fit_loglog_slope,
    force_correlator,
    integrate_correlator,
    pair_variance_vs_separation,
    pair_variance_vs_time,
    potential_correlator,
    variance_delta_action,
)
from .config import ExperimentConfig

log = logging.getLogger(__name__)

EXIT_CODES = {"success": 0, "flagged": 2, "failed": 1}
M_FLOOR = 0.01


@dataclass
class FitRecord:
    name: str
    kind: str
    value: float
    stderr: float = math.nan
    lo: float = math.nan
    hi: float = math.nan
    r_squared: float = math.nan
    residual: float = math.nan
    n_points: int = 0
    note: str = ""
    flagged: bool = False


FIT_COLUMNS = ("name", "kind", "value", "stderr", "lo", "hi", "r_squared", "residual",
               "n_points", "note")


@dataclass
class RunManifest:
    config_hash: str
    version: str
    wall_time: float
    status: str
    out_dir: str
    files: list = field(default_factory=list)
    records: list = field(default_factory=list)
    messages: list = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.status]

    def record(self, name: str) -> FitRecord:
        for r in self.records:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_json(self) -> str:
        d = asdict(self)
        d["records"] = [asdict(r) for r in self.records]
        return json.dumps(d, indent=2, sort_keys=True, default=_json_default)


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(type(x).__name__)


# -- comparison -----------------------------------------------------------------


@dataclass
class CompareReport:
    times: np.ndarray
    deviation: np.ndarray
    rate_dr: float
    rate_quantum: float
    rate_ratio: float
    max_deviation: float
    cutoff_time: int | None


def _decay_rate(t, M, window, power):
    lo, hi = window
    sel = (t >= lo) & (t <= hi)
    if np.count_nonzero(sel) < 2:
        raise ValueError(f"rate window {window} holds fewer than 2 points")
    if np.any(M[sel] <= 0):
        raise ValueError("fidelity reaches zero inside the rate window")
    g = t[sel] ** power
    A = np.column_stack([g, np.ones_like(g)])
    (slope, _), *_ = np.linalg.lstsq(A, np.log(M[sel]), rcond=None)
    return float(-slope)


def compare(dr_curve: FidelityCurve, quantum_curve: FidelityCurve, window=(1.0, 50.0),
            power: float = 1.0) -> CompareReport:
    """Deviation between two fidelity curves on the same time grid.

    Rates are ``r`` in ln M = a - r t^power over ``window``.  The maximum
    deviation is taken over times before either curve first drops below
    0.01.
    """
    t = np.asarray(dr_curve.times)
    if not np.array_equal(t, np.asarray(quantum_curve.times)):
        raise ValueError("time grids differ; compare needs matched curves")
    a = np.asarray(dr_curve.M, dtype=float)
    b = np.asarray(quantum_curve.M, dtype=float)
    dev = np.abs(a - b)
    below = np.flatnonzero(np.minimum(a, b) < M_FLOOR)
    cutoff = int(t[below[0]]) if below.size else None
    head = dev if cutoff is None else dev[: below[0]]
    max_dev = float(head.max()) if head.size else 0.0

    tf = t.astype(float)
    r_dr = _decay_rate(tf, a, window, power)
    r_q = _decay_rate(tf, b, window, power)
    if r_q == 0.0:
        ratio = 1.0 if r_dr == 0.0 else math.inf
    else:
        ratio = r_dr / r_q
    return CompareReport(t, dev, r_dr, r_q, ratio, max_dev, cutoff)


# -- helpers ----------------------------------------------------------------------


class _Run:
    def __init__(self, cfg: ExperimentConfig, out_dir: Path):
        self.cfg = cfg
        self.out = out_dir
        self.hash = cfg.config_hash()
        self.files = []
        self.records = []
        self.messages = []
        self.flagged = False

    def flag(self, message):
        log.warning(message)
        self.messages.append(message)
        self.flagged = True

    def table(self, filename, columns, data):
        arr = np.column_stack([np.asarray(c, dtype=float) for c in data])
        header = (
            f"dephasing {__version__} config_hash={self.hash} "
            f"name={self.cfg.name} kind={self.cfg.kind}\n" + "\t".join(columns)
        )
        path = self.out / filename
        np.savetxt(path, arr, fmt="%.17g", delimiter="\t", header=header, comments="# ")
        self.files.append({"path": filename, "rows": int(arr.shape[0]), "columns": list(columns)})
        return filename

    def fit(self, spec, x, y):
        yv = -np.log(y) if spec.series == "neglog" else y
        try:
            fn = fit_loglog_slope if spec.kind == "loglog" else fit_exponential_rate
            with np.errstate(divide="ignore", invalid="ignore"):
                f = fn((x, yv), spec.window)
        except ValueError as exc:
            self.flag(f"fit {spec.name}: {exc}")
            self.records.append(FitRecord(spec.name, spec.kind, math.nan, note=str(exc), flagged=True))
            return None
        self.records.append(FitRecord(spec.name, spec.kind, f.slope, math.nan, *f.fit_window,
                                      f.r_squared, f.residual, f.n_points,
                                      note=f"intercept={f.intercept!r}"))
        return f

    def fits(self, x, y):
        for spec in self.cfg.fits:
            self.fit(spec, x, y)

    def write_records(self):
        rows = []
        for r in self.records:
            rows.append("\t".join(_fmt(getattr(r, c)) for c in FIT_COLUMNS))
        header = (f"# dephasing {__version__} config_hash={self.hash} "
                  f"name={self.cfg.name} kind={self.cfg.kind}\n# " + "\t".join(FIT_COLUMNS) + "\n")
        (self.out / "fits.tsv").write_text(header + "".join(r + "\n" for r in rows))
        self.files.append({"path": "fits.tsv", "rows": len(rows), "columns": list(FIT_COLUMNS)})


def _fmt(v):
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v).replace("\t", " ").replace("\n", " ")


# -- experiment kinds --------------------------------------------------------------


def _variance_vs_time(r: _Run):
    cfg = r.cfg
    vs = variance_delta_action(cfg.ensemble, cfg.map_params, cfg.T, workers=cfg.workers)
    if cfg.smoothing == "window":
        vs = vs.smoothed()
    cols = ["t", "variance", "stderr", "mean", "excess_kurtosis"]
    data = [vs.times, vs.variance, vs.stderr, vs.mean, vs.excess_kurtosis]
    if vs.raw is not None:
        cols.append("raw_variance")
        data.append(vs.raw)
    r.table("variance.tsv", cols, data)
    r.fits(vs.times, vs.variance)
    return [("variance.tsv", "t", "variance", True)]


def _pair_vs_time(r: _Run):
    cfg = r.cfg
    vs = pair_variance_vs_time(PairSpec(cfg.ensemble, cfg.p_minus), cfg.map_params, cfg.T,
                               smoothing=cfg.smoothing, workers=cfg.workers)
    cols = ["t", "moment", "stderr", "mean", "excess_kurtosis"]
    data = [vs.times, vs.variance, vs.stderr, vs.mean, vs.excess_kurtosis]
    if vs.raw is not None:
        cols.append("raw_moment")
        data.append(vs.raw)
    r.table("pair_variance.tsv", cols, data)
    r.fits(vs.times, vs.variance)
    return [("pair_variance.tsv", "t", "moment", True)]


def _pair_vs_separation(r: _Run):
    cfg = r.cfg
    grid = cfg.grid.values()
    scan = pair_variance_vs_separation(cfg.ensemble, cfg.map_params, cfg.t, grid,
                                       workers=cfg.workers)
    p, m = scan.xy()
    r.table("pair_separation.tsv", ["p_minus", "moment", "stderr", "excess_kurtosis"],
            [p, m, scan.stderr[:, 0], scan.excess_kurtosis[:, 0]])
    r.fits(p, m)

    # large-separation factorization: plateau moment against twice the variance
    var = variance_delta_action(cfg.ensemble, cfg.map_params, cfg.t, workers=cfg.workers)
    lo, hi = next((f.window for f in cfg.fits if f.name == "plateau" and f.window),
                  (0.1, math.pi))
    sel = (p >= lo) & (p <= hi)
    if np.any(sel):
        ratio = float(m[sel].mean() / (2.0 * var.variance[cfg.t]))
        r.records.append(FitRecord("factorization_ratio", "ratio", ratio, lo=lo, hi=hi,
                                   n_points=int(sel.sum()),
                                   note=f"single_orbit_variance={float(var.variance[cfg.t])!r}"))
    return [("pair_separation.tsv", "p_minus", "moment", True)]


def _correlators(r: _Run):
    cfg = r.cfg
    cv = potential_correlator(cfg.ensemble, cfg.map_params, cfg.T_max, workers=cfg.workers)
    cf = force_correlator(cfg.ensemble, cfg.map_params, cfg.T_max, workers=cfg.workers)
    r.table("correlators.tsv", ["lag", "C_V", "C_V_stderr", "C_F", "C_F_stderr"],
            [cv.lag, cv.value, cv.stderr, cf.value, cf.stderr])
    for name, series, mode in (("K", cv, "sum-to-plateau"), ("C_V_inf", cv, "cesaro"),
                               ("D", cf, "sum-to-plateau")):
        res = integrate_correlator(series, mode)
        note = "converged" if res.converged else "unconverged"
        r.records.append(FitRecord(name, mode, res.value, lo=0.0, hi=float(res.cutoff),
                                   note=note, flagged=not res.converged))
        if not res.converged:
            r.flag(f"integral {name} did not converge")
    return [("correlators.tsv", "lag", "C_V", False)]


def _dr_curve(r: _Run, ensemble=None) -> FidelityCurve:
    cfg = r.cfg
    curve = dr_overlap(ensemble or cfg.ensemble, cfg.map_params, cfg.effective_hbar, cfg.T, workers=cfg.workers)
    r.table("fidelity_dr.tsv", ["t", "M", "stderr", "overlap_re", "overlap_im"],
            [curve.times, curve.M, curve.stderr, curve.overlap.real, curve.overlap.imag])
    return curve


def _quantum_curve(r: _Run) -> FidelityCurve:
    cfg = r.cfg
    psi0 = position_state(cfg.n, cfg.ensemble.Q)
    curve = quantum_fidelity(psi0, cfg.n, cfg.k, cfg.epsilon, cfg.T, hbar_eff=cfg.effective_hbar)
    r.table("fidelity_quantum.tsv", ["t", "M"], [curve.times, curve.M])
    idx = grid_index(cfg.n, cfg.ensemble.Q)
    r.records.append(FitRecord("grid_Q", "parameter", _snapped_Q(cfg),
                               note=f"index={idx} of n={cfg.n}; requested Q={cfg.ensemble.Q!r}"))
    return curve


def _snapped_Q(cfg) -> float:
    return 2.0 * math.pi * grid_index(cfg.n, cfg.ensemble.Q) / cfg.n


def _dr_fidelity(r: _Run):
    curve = _dr_curve(r)
    r.fits(curve.times, curve.M)
    return [("fidelity_dr.tsv", "t", "M", False)]


def _quantum_fidelity(r: _Run):
    curve = _quantum_curve(r)
    r.fits(curve.times, curve.M)
    return [("fidelity_quantum.tsv", "t", "M", False)]


def _compare(r: _Run):
    cfg = r.cfg
    # both engines start from the grid point the quantum state occupies
    dr = _dr_curve(r, replace(cfg.ensemble, Q=_snapped_Q(cfg)))
    q = _quantum_curve(r)
    rep = compare(dr, q, cfg.compare.window, cfg.compare.power)
    r.table("compare.tsv", ["t", "M_dr", "M_quantum", "abs_deviation"], [rep.times, dr.M, q.M, rep.deviation])
    lo, hi = cfg.compare.window
    power = f"power={cfg.compare.power!r}"
    r.records += [
        FitRecord("rate_dr", "decay-rate", rep.rate_dr, lo=lo, hi=hi, note=power),
        FitRecord("rate_quantum", "decay-rate", rep.rate_quantum, lo=lo, hi=hi, note=power),
        FitRecord("rate_ratio", "ratio", rep.rate_ratio, lo=lo, hi=hi, note=power),
        FitRecord("max_deviation", "deviation", rep.max_deviation,
                  hi=math.nan if rep.cutoff_time is None else float(rep.cutoff_time),
                  note="before M<0.01" if rep.cutoff_time is not None else "M stayed above 0.01"),
    ]
    r.fits(dr.times, dr.M)
    return [("compare.tsv", "t", "M_dr", False), ("compare.tsv", "t", "M_quantum", False)]


def _predict(r: _Run):
    cfg = r.cfg
    regime = Regime(cfg.regime)
    given = dict(cfg.regime_params)
    missing = [n for n in REQUIRED[regime] if n not in given]
    if missing:
        measured, diag = estimate_regime_params(cfg.ensemble, cfg.map_params, cfg.effective_hbar,
                                                T_max=cfg.T_max, workers=cfg.workers)
        for name in missing:
            given[name] = getattr(measured, name)
        for name, res in diag.items():
            if name in missing and not res.converged:
                r.flag(f"measured {name} did not converge")
    given.setdefault("hbar", cfg.effective_hbar)
    given.setdefault("epsilon", cfg.epsilon)
    rp = RegimeParams(**given)
    times = np.arange(cfg.T + 1)
    curve = predict_fidelity(regime, rp, times)
    r.table("prediction.tsv", ["t", "M", "clamped"], [times, curve.M, curve.clamped])
    for name in REQUIRED[regime]:
        src = "measured" if name in missing else "given"
        r.records.append(FitRecord(name, "parameter", float(getattr(rp, name)), note=src))
    if curve.flagged:
        r.flag(f"prediction clamped to 1 at {int(curve.clamped.sum())} points")
    r.fits(times, curve.M)
    return [("prediction.tsv", "t", "M", False)]


DISPATCH = {
    "variance-vs-time": _variance_vs_time,
    "pair-variance-vs-time": _pair_vs_time,
    "pair-variance-vs-separation": _pair_vs_separation,
    "correlators": _correlators,
    "dr-fidelity": _dr_fidelity,
    "quantum-fidelity": _quantum_fidelity,
    "compare": _compare,
    "predict": _predict,
}


def _plot_script(cfg: ExperimentConfig, series, files) -> str:
    columns = {f["path"]: f.get("columns", []) for f in files}
    lines = [
        f"# gnuplot script for {cfg.name} ({cfg.kind})",
        "set terminal pngcairo size 800,600",
        "set output 'plot.png'",
        f"set title '{cfg.name}'",
    ]
    if any(logscale for *_, logscale in series):
        lines.append("set logscale xy")
    elif cfg.kind in ("dr-fidelity", "quantum-fidelity", "compare", "predict"):
        lines.append("set logscale y")
    if series:
        lines.append(f"set xlabel '{series[0][1]}'")
    parts = []
    for fname, xcol, ycol, _ in series:
        cols = columns[fname]
        parts.append(f"'{fname}' using {cols.index(xcol) + 1}:{cols.index(ycol) + 1} "
                     f"with lines title '{ycol}'")
    lines.append("plot " + ", \\\n     ".join(parts))
    return "\n".join(lines) + "\n"


def run(cfg: ExperimentConfig, out_dir=None) -> RunManifest:
    """Execute ``cfg``; writes into ``out_dir`` (default ``cfg.out``)."""
    out = Path(cfg.out if out_dir is None else out_dir)
    out.mkdir(parents=True, exist_ok=True)
    r = _Run(cfg, out)
    start = time.perf_counter()
    status = "success"
    (out / "config.json").write_text(cfg.to_json() + "\n")
    r.files.append({"path": "config.json", "rows": cfg.to_json().count("\n") + 1})
    try:
        series = DISPATCH[cfg.kind](r)
        r.write_records()
        script = _plot_script(cfg, series, r.files)
        (out / "plot.gp").write_text(script)
        r.files.append({"path": "plot.gp", "rows": script.count("\n")})
        if r.flagged:
            status = "flagged"
    except Exception as exc:  # reported through the manifest
        log.exception("run %s failed", cfg.name)
        r.messages.append(f"{type(exc).__name__}: {exc}")
        status = "failed"
    manifest = RunManifest(
        config_hash=r.hash,
        version=__version__,
        wall_time=time.perf_counter() - start,
        status=status,
        out_dir=str(out),
        files=r.files,
        records=r.records,
        messages=r.messages,
    )
    (out / "manifest.json").write_text(manifest.to_json() + "\n")
    return manifest
