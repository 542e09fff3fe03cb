"""Experiment configuration, its JSON form and the shipped presets.

A config file is one JSON object.  Keys (all optional except ``kind``):

``name``           label used in headers and the default output directory
``kind``           one of ``KINDS``
``map``            ``{"k": float, "epsilon": float}``
``ensemble``       ``{"kind", "count", "seed", "Q", "placement", "points"}``
``T``              last time step of time series
``t``              time at which a separation scan is taken
``p_minus``        momentum separation for pair-vs-time runs
``grid``           ``{"start", "stop", "num", "spacing": "log" | "linear"}``
``n``              Hilbert-space dimension; hbar defaults to 2 pi / n
``hbar``           explicit hbar (must equal 2 pi / n for quantum runs)
``smoothing``      ``"none"`` or ``"window"`` ((t/2, t] running mean)
``T_max``          largest correlator lag
``regime``         decay regime for ``predict``
``regime_params``  constants for ``predict``; missing ones are measured
``compare``        ``{"window": [lo, hi], "power": p}``; rates come from
                   ln M = a - r t^p fitted over the window
``fits``           list of ``{"name", "kind": "loglog" | "exponential",
                   "window": [lo, hi], "series": "main" | "neglog"}``
``out``            output directory
``workers``        thread count; never changes results

``out`` and ``workers`` are left out of the config hash.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..ensembles import EnsembleSpec
from ..fidelity import Regime
from ..maps import MapParams

KINDS = (
    "variance-vs-time",
    "pair-variance-vs-time",
    "pair-variance-vs-separation",
    "correlators",
    "dr-fidelity",
    "quantum-fidelity",
    "compare",
    "predict",
)
FIT_KINDS = ("loglog", "exponential")
FIT_SERIES = ("main", "neglog")
SMOOTHING = ("none", "window")
HASH_EXCLUDED = ("out", "workers")


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class GridSpec:
    start: float = 1e-12
    stop: float = math.pi
    num: int = 131
    spacing: str = "log"

    def values(self) -> np.ndarray:
        if self.spacing == "log":
            return np.geomspace(self.start, self.stop, self.num)
        return np.linspace(self.start, self.stop, self.num)


@dataclass(frozen=True)
class FitSpec:
    name: str
    kind: str = "loglog"
    window: tuple[float, float] | None = None
    series: str = "main"


@dataclass(frozen=True)
class CompareSpec:
    window: tuple[float, float] = (1.0, 50.0)
    power: float = 1.0


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    name: str = "custom"
    k: float = 20.0
    epsilon: float = 0.003
    ensemble: EnsembleSpec = field(default_factory=EnsembleSpec)
    T: int = 100
    t: int = 7
    p_minus: float = 1e-9
    grid: GridSpec = field(default_factory=GridSpec)
    n: int = 1000
    hbar: float | None = None
    smoothing: str = "none"
    T_max: int = 50
    regime: str | None = None
    regime_params: dict = field(default_factory=dict)
    compare: CompareSpec = field(default_factory=CompareSpec)
    fits: tuple[FitSpec, ...] = ()
    out: str = "runs"
    workers: int = 1

    def __post_init__(self):
        validate(self)

    @property
    def map_params(self) -> MapParams:
        return MapParams(self.k, self.epsilon)

    @property
    def effective_hbar(self) -> float:
        return 2 * math.pi / self.n if self.hbar is None else self.hbar

    def to_dict(self) -> dict:
        ens = dataclasses.asdict(self.ensemble)
        if ens["points"] is not None:
            ens["points"] = [list(p) for p in ens["points"]]
        return {
            "name": self.name,
            "kind": self.kind,
            "map": {"k": self.k, "epsilon": self.epsilon},
            "ensemble": ens,
            "T": self.T,
            "t": self.t,
            "p_minus": self.p_minus,
            "grid": dataclasses.asdict(self.grid),
            "n": self.n,
            "hbar": self.hbar,
            "smoothing": self.smoothing,
            "T_max": self.T_max,
            "regime": self.regime,
            "regime_params": dict(self.regime_params),
            "compare": {"window": list(self.compare.window), "power": self.compare.power},
            "fits": [
                {"name": f.name, "kind": f.kind,
                 "window": None if f.window is None else list(f.window), "series": f.series}
                for f in self.fits
            ],
            "out": self.out,
            "workers": self.workers,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        return _from_dict(data)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"not valid JSON ({exc})") from None
        return _from_dict(data)

    def config_hash(self) -> str:
        d = self.to_dict()
        for key in HASH_EXCLUDED:
            d.pop(key)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


# -- parsing ------------------------------------------------------------------


def _number(name, value, kind=float, minimum=None, allow_none=False):
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(name, f"expected a number, got {value!r}")
    if kind is int:
        # ints pass untouched: a float round trip loses precision above 2**53
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(name, f"expected an integer, got {value!r}")
        value = int(value)
    else:
        value = float(value)
        if not math.isfinite(value):
            raise ConfigError(name, f"must be finite, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(name, f"must be >= {minimum}, got {value!r}")
    return value


def _window(name, value):
    if value is None:
        return None
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(name, f"expected [lo, hi], got {value!r}")
    lo, hi = (_number(name, v) for v in value)
    if not lo < hi:
        raise ConfigError(name, f"needs lo < hi, got {value!r}")
    return (lo, hi)


def _keys(name, data, allowed):
    if not isinstance(data, dict):
        raise ConfigError(name, f"expected an object, got {type(data).__name__}")
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        prefix = f"{name}." if name != "config" else ""
        raise ConfigError(prefix + unknown[0], "unknown key")


_TOP = ("name", "kind", "map", "ensemble", "T", "t", "p_minus", "grid", "n", "hbar",
        "smoothing", "T_max", "regime", "regime_params", "compare", "fits", "out", "workers")


def _from_dict(data: dict) -> ExperimentConfig:
    _keys("config", data, _TOP)
    if "kind" not in data:
        raise ConfigError("kind", "missing")
    kw = {"kind": data["kind"]}
    if "name" in data:
        kw["name"] = str(data["name"])
    if "map" in data:
        _keys("map", data["map"], ("k", "epsilon"))
        if "k" in data["map"]:
            kw["k"] = _number("map.k", data["map"]["k"])
        if "epsilon" in data["map"]:
            kw["epsilon"] = _number("map.epsilon", data["map"]["epsilon"])
    if "ensemble" in data:
        e = data["ensemble"]
        _keys("ensemble", e, ("kind", "count", "seed", "Q", "placement", "points"))
        ekw = {}
        for key in ("kind", "placement"):
            if key in e:
                ekw[key] = e[key]
        if "count" in e:
            ekw["count"] = _number("ensemble.count", e["count"], int, 1)
        if "seed" in e:
            ekw["seed"] = _number("ensemble.seed", e["seed"], int, 0)
        if "Q" in e:
            ekw["Q"] = _number("ensemble.Q", e["Q"], allow_none=True)
        if e.get("points") is not None:
            ekw["points"] = tuple(tuple(p) for p in e["points"])
        try:
            kw["ensemble"] = EnsembleSpec(**ekw)
        except (ValueError, TypeError) as exc:
            raise ConfigError("ensemble", str(exc)) from None
    for key, kind, minimum in (("T", int, 0), ("t", int, 0), ("n", int, 2),
                               ("T_max", int, 0), ("workers", int, 1)):
        if key in data:
            kw[key] = _number(key, data[key], kind, minimum)
    if "p_minus" in data:
        kw["p_minus"] = _number("p_minus", data["p_minus"], minimum=0.0)
    if "hbar" in data:
        kw["hbar"] = _number("hbar", data["hbar"], allow_none=True)
    if "grid" in data:
        g = data["grid"]
        _keys("grid", g, ("start", "stop", "num", "spacing"))
        gkw = {}
        for key in ("start", "stop"):
            if key in g:
                gkw[key] = _number(f"grid.{key}", g[key])
        if "num" in g:
            gkw["num"] = _number("grid.num", g["num"], int, 2)
        if "spacing" in g:
            gkw["spacing"] = g["spacing"]
        kw["grid"] = GridSpec(**gkw)
    for key in ("smoothing", "regime", "out"):
        if key in data:
            kw[key] = data[key]
    if "regime_params" in data:
        rp = data["regime_params"]
        if not isinstance(rp, dict):
            raise ConfigError("regime_params", "expected an object")
        kw["regime_params"] = {str(k): _number(f"regime_params.{k}", v) for k, v in rp.items()}
    if "compare" in data:
        c = data["compare"]
        _keys("compare", c, ("window", "power"))
        ckw = {}
        if "window" in c:
            ckw["window"] = _window("compare.window", c["window"])
        if "power" in c:
            ckw["power"] = _number("compare.power", c["power"])
        kw["compare"] = CompareSpec(**ckw)
    if "fits" in data:
        if not isinstance(data["fits"], list):
            raise ConfigError("fits", "expected a list")
        fits = []
        for i, f in enumerate(data["fits"]):
            _keys(f"fits[{i}]", f, ("name", "kind", "window", "series"))
            if "name" not in f:
                raise ConfigError(f"fits[{i}].name", "missing")
            fits.append(FitSpec(str(f["name"]), f.get("kind", "loglog"),
                                _window(f"fits[{i}].window", f.get("window")),
                                f.get("series", "main")))
        kw["fits"] = tuple(fits)
    return ExperimentConfig(**kw)


def validate(cfg: ExperimentConfig) -> None:
    if cfg.kind not in KINDS:
        raise ConfigError("kind", f"unknown experiment kind {cfg.kind!r}; expected one of {KINDS}")
    try:
        cfg.map_params
    except ValueError as exc:
        raise ConfigError("map", str(exc)) from None
    if cfg.smoothing not in SMOOTHING:
        raise ConfigError("smoothing", f"expected one of {SMOOTHING}, got {cfg.smoothing!r}")
    if cfg.grid.spacing not in ("log", "linear"):
        raise ConfigError("grid.spacing", f"expected 'log' or 'linear', got {cfg.grid.spacing!r}")
    if cfg.grid.spacing == "log" and not cfg.grid.start > 0:
        raise ConfigError("grid.start", "log spacing needs start > 0")
    if not 0 <= cfg.grid.start < cfg.grid.stop:
        raise ConfigError("grid.stop", "needs 0 <= start < stop")
    if cfg.hbar is not None and not cfg.hbar > 0:
        raise ConfigError("hbar", "must be > 0")
    for i, f in enumerate(cfg.fits):
        if f.kind not in FIT_KINDS:
            raise ConfigError(f"fits[{i}].kind", f"expected one of {FIT_KINDS}, got {f.kind!r}")
        if f.series not in FIT_SERIES:
            raise ConfigError(f"fits[{i}].series", f"expected one of {FIT_SERIES}, got {f.series!r}")
    if cfg.kind in ("quantum-fidelity", "compare"):
        if cfg.ensemble.kind != "position-state":
            raise ConfigError("ensemble.kind", "quantum runs need a position-state ensemble")
        if cfg.n % 2:
            raise ConfigError("n", "must be even")
        if cfg.hbar is not None and not math.isclose(cfg.hbar, 2 * math.pi / cfg.n, rel_tol=1e-12):
            raise ConfigError("hbar", f"must equal 2pi/n = {2 * math.pi / cfg.n!r} for quantum runs")
    if cfg.kind in ("variance-vs-time", "pair-variance-vs-time", "pair-variance-vs-separation",
                    "correlators") and cfg.ensemble.count < 2:
        raise ConfigError("ensemble.count", "statistics need at least 2 trajectories")
    if cfg.kind == "predict":
        if cfg.regime is None:
            raise ConfigError("regime", "predict runs need a regime")
        try:
            if Regime(cfg.regime) is Regime.MIXED:
                raise ValueError
        except ValueError:
            names = [r.value for r in Regime if r is not Regime.MIXED]
            raise ConfigError("regime", f"expected one of {names}, got {cfg.regime!r}") from None


def load_config(path) -> ExperimentConfig:
    return ExperimentConfig.from_json(Path(path).read_text())


def apply_overrides(cfg: ExperimentConfig, overrides) -> ExperimentConfig:
    """Apply ``dotted.key=value`` strings; values are parsed as JSON when possible."""
    data = cfg.to_dict()
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError("--override", f"expected key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                node[part] = {}
            node = node[part]
        node[parts[-1]] = value
    return _from_dict(data)


# -- presets ------------------------------------------------------------------

Q0 = 0.8 * math.pi
_LATE = (10.0, 1000.0)


def _position(count=1000, seed=0):
    return EnsembleSpec.position_state(Q=Q0, count=count, seed=seed)


def _presets() -> dict:
    chaotic = dict(k=20.0, epsilon=0.003)
    regular = dict(k=0.3, epsilon=0.005)
    return {
        "fig1a": ExperimentConfig(
            "variance-vs-time", "fig1a", **chaotic, ensemble=_position(), T=1000,
            fits=(FitSpec("slope", "loglog", _LATE),)),
        "fig1b": ExperimentConfig(
            "variance-vs-time", "fig1b", **regular, ensemble=_position(), T=1000,
            fits=(FitSpec("slope", "loglog", _LATE),)),
        "fig2a": ExperimentConfig(
            "pair-variance-vs-separation", "fig2a", **chaotic, ensemble=_position(), t=7,
            grid=GridSpec(1e-12, math.pi, 131, "log"),
            fits=(FitSpec("small_separation", "loglog", (1e-12, 1e-9)),
                  FitSpec("plateau", "loglog", (0.1, math.pi)))),
        "fig2b": ExperimentConfig(
            "pair-variance-vs-separation", "fig2b", **regular, ensemble=_position(), t=7,
            grid=GridSpec(1e-12, math.pi, 131, "log"),
            fits=(FitSpec("small_separation", "loglog", (1e-12, 1e-3)),
                  FitSpec("plateau", "loglog", (0.3, math.pi / 2)))),
        "fig3a": ExperimentConfig(
            "pair-variance-vs-time", "fig3a", **chaotic, ensemble=_position(), T=1000,
            p_minus=1e-9,
            fits=(FitSpec("early_rate", "exponential", (2.0, 8.0)),
                  FitSpec("late_slope", "loglog", (100.0, 1000.0)))),
        "fig3b": ExperimentConfig(
            "pair-variance-vs-time", "fig3b", **regular, ensemble=_position(), T=1000,
            p_minus=1e-9, smoothing="window",
            fits=(FitSpec("early_slope", "loglog", (5.0, 50.0)),
                  FitSpec("late_slope", "loglog", (200.0, 1000.0)))),
        "fgr-compare": ExperimentConfig(
            "compare", "fgr-compare", **chaotic, ensemble=_position(), T=200, n=1000,
            compare=CompareSpec((1.0, 50.0), 1.0)),
        "gaussian-compare": ExperimentConfig(
            "compare", "gaussian-compare", **regular, ensemble=_position(), T=200, n=100,
            compare=CompareSpec((1.0, 50.0), 2.0)),
        "cubic-exponential-search": ExperimentConfig(
            "dr-fidelity", "cubic-exponential-search", **regular, ensemble=_position(), T=100,
            n=100, fits=(FitSpec("decay_exponent", "loglog", (2.0, 30.0), "neglog"),)),
    }


PRESETS = tuple(_presets())


def preset(name: str) -> ExperimentConfig:
    table = _presets()
    if name not in table:
        raise ConfigError("--preset", f"unknown preset {name!r}; expected one of {PRESETS}")
    return table[name]
