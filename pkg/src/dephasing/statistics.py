"""Action statistics: single-orbit variance, pair second moments,
potential/force correlators and their integrals, and slope fits.

Every ensemble reduction goes through :mod:`dephasing._parallel`, so the
numbers are bitwise independent of the worker count.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import _parallel
from .ensembles import EnsembleSpec, PairSpec, sample, sample_pairs
from .maps import (
    MapParams,
    action_series,
    iter_action,
    linearized_separation,
    perturbation_potential,
    potential_along_orbit,
    potential_gradient,
    step_arrays,
    unstable_directions,
    wrap,
)

log = logging.getLogger(__name__)


@dataclass
class VarianceSeries:
    times: np.ndarray
    variance: np.ndarray
    count: int
    smoothing: str = "none"
    stderr: np.ndarray | None = None
    mean: np.ndarray | None = None
    excess_kurtosis: np.ndarray | None = None
    raw: np.ndarray | None = field(default=None, repr=False)

    def xy(self):
        return self.times, self.variance

    def smoothed(self) -> "VarianceSeries":
        if self.smoothing != "none":
            return self
        se = None if self.stderr is None else window_average(self.stderr)
        return VarianceSeries(
            self.times, window_average(self.variance), self.count, "window",
            se, self.mean, self.excess_kurtosis, raw=self.variance,
        )


@dataclass
class SeparationScan:
    """Pair second moment on a grid of momentum separations.

    ``moment[i, j]`` belongs to ``p_minus[i]`` and ``times[j]``.
    ``excess_kurtosis`` is <d^4> / <d^2>^2 - 3 about zero, a check on the
    Gaussian closure (nan where the moment vanishes).
    """

    p_minus: np.ndarray
    times: np.ndarray
    moment: np.ndarray
    stderr: np.ndarray
    count: int
    excess_kurtosis: np.ndarray | None = None

    def at(self, t: int) -> "SeparationScan":
        j = int(np.flatnonzero(self.times == t)[0])
        kurt = None if self.excess_kurtosis is None else self.excess_kurtosis[:, j:j + 1]
        return SeparationScan(self.p_minus, self.times[j:j + 1], self.moment[:, j:j + 1],
                              self.stderr[:, j:j + 1], self.count, kurt)

    def xy(self):
        if self.moment.shape[1] != 1:
            raise ValueError("scan holds several times; select one with .at(t)")
        return self.p_minus, self.moment[:, 0]


@dataclass
class CorrelatorSeries:
    lag: np.ndarray
    value: np.ndarray
    kind: str
    stderr: np.ndarray | None = None
    count: int = 0

    def __len__(self):
        return len(self.value)


@dataclass(frozen=True)
class CorrelatorIntegral:
    value: float
    converged: bool
    cutoff: int
    mode: str

    def __float__(self):
        return self.value


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    fit_window: tuple[float, float]
    residual: float
    r_squared: float = float("nan")
    kind: str = "loglog"
    n_points: int = 0

    def log_predict(self, x):
        x = np.asarray(x, dtype=float)
        u = np.log(x) if self.kind == "loglog" else x
        return self.intercept + self.slope * u

    def predict(self, x):
        return np.exp(self.log_predict(x))


# -- smoothing -------------------------------------------------------------


def window_average(y) -> np.ndarray:
    """Mean of ``y`` over integer times in (t/2, t]; entry 0 is kept."""
    y = np.asarray(y, dtype=float)
    csum = np.concatenate([[0.0], np.cumsum(y)])
    t = np.arange(len(y))
    lo = t // 2 + 1
    out = y.copy()
    nz = t >= 1
    out[nz] = (csum[t[nz] + 1] - csum[lo[nz]]) / (t[nz] - lo[nz] + 1)
    return out


# -- single-orbit variance -------------------------------------------------


def _merge_moments(a, b):
    # pairwise update of count, mean and central sums of powers 2..4
    na, ma, m2a, m3a, m4a = a
    nb, mb, m2b, m3b, m4b = b
    n = na + nb
    d = mb - ma
    m2 = m2a + m2b + d * d * (na * nb / n)
    m3 = (m3a + m3b + d ** 3 * (na * nb * (na - nb) / n ** 2)
          + 3.0 * d * (na * m2b - nb * m2a) / n)
    m4 = (m4a + m4b + d ** 4 * (na * nb * (na * na - na * nb + nb * nb) / n ** 3)
          + 6.0 * d * d * (na * na * m2b + nb * nb * m2a) / n ** 2
          + 4.0 * d * (na * m3b - nb * m3a) / n)
    return n, ma + d * (nb / n), m2, m3, m4


def variance_delta_action(spec: EnsembleSpec, params: MapParams, T: int,
                          workers: int = 1) -> VarianceSeries:
    """Unbiased ensemble variance of dS(x', t) for t = 0..T.

    ``stderr`` is the large-sample standard error of the variance estimate,
    which uses the fourth central moment and so stays honest for heavy tails.
    """
    if spec.count < 2:
        raise ValueError("variance needs an ensemble of at least 2 trajectories")

    # moments of dS - dS_0 (first member): shift-invariant, and members that
    # coincide with it contribute exact zeros instead of rounding residue
    x0 = sample(spec, 0, 1)
    shift = action_series(x0[:, 0], x0[:, 1], params, T)[0]

    def chunk(a, b):
        x = sample(spec, a, b)
        ds = action_series(x[:, 0], x[:, 1], params, T) - shift
        mean = ds.mean(axis=0)
        c = ds - mean
        c2 = c * c
        return b - a, mean, c2.sum(0), (c2 * c).sum(0), (c2 * c2).sum(0)

    n, mean, m2, m3, m4 = _parallel.map_reduce(chunk, spec.count, _merge_moments, workers)
    mean = mean + shift
    var = m2 / (n - 1)
    var[0] = 0.0
    mu2, mu4 = m2 / n, m4 / n
    se = np.sqrt(np.maximum(mu4 - mu2 * mu2 * (n - 3) / (n - 1), 0.0) / n)
    with np.errstate(invalid="ignore", divide="ignore"):
        kurt = np.where(mu2 > 0, mu4 / np.where(mu2 > 0, mu2 * mu2, 1.0) - 3.0, np.nan)
    return VarianceSeries(np.arange(T + 1), var, n, stderr=se, mean=mean, excess_kurtosis=kurt)


# -- pair statistics -------------------------------------------------------


def _power_sums(d, axis=0):
    d2 = d * d
    return (d.sum(axis=axis), d2.sum(axis=axis), (d2 * d).sum(axis=axis), (d2 * d2).sum(axis=axis))


def _moments_from_sums(n, s1, s2, s3, s4):
    m2 = s2 / n
    var_d2 = np.maximum(s4 / n - m2 * m2, 0.0) * (n / max(n - 1, 1))
    se = np.sqrt(var_d2 / n)
    mu = s1 / n
    c2 = m2 - mu * mu
    c4 = s4 / n - 4 * mu * s3 / n + 6 * mu * mu * m2 - 3 * mu ** 4
    with np.errstate(invalid="ignore", divide="ignore"):
        kurt = np.where(c2 > 0, c4 / np.where(c2 > 0, c2 * c2, 1.0) - 3.0, np.nan)
    return m2, se, mu, kurt


def pair_variance_vs_time(spec: PairSpec, params: MapParams, T: int, smoothing: str = "none",
                          workers: int = 1) -> VarianceSeries:
    """Raw second moment <(dS' - dS'')^2> against time at fixed separation.

    With ``smoothing="window"`` the returned ``variance`` is the (t/2, t]
    running mean; the unsmoothed values are kept in ``raw``.
    """
    if spec.base.count < 2:
        raise ValueError("pair statistics need at least 2 pairs")
    if smoothing not in ("none", "window"):
        raise ValueError(f"unknown smoothing {smoothing!r}")

    def chunk(a, b):
        x1, x2 = sample_pairs(spec, a, b)
        d = action_series(x1[:, 0], x1[:, 1], params, T) - action_series(x2[:, 0], x2[:, 1], params, T)
        return (b - a,) + _power_sums(d)

    n, *sums = _parallel.map_reduce(chunk, spec.base.count, _parallel.add_tuples, workers)
    m2, se, mu, kurt = _moments_from_sums(n, *sums)
    series = VarianceSeries(np.arange(T + 1), m2, n, stderr=se, mean=mu, excess_kurtosis=kurt)
    return series.smoothed() if smoothing == "window" else series


def pair_moment_surface(base: EnsembleSpec, params: MapParams, T: int, p_minus_grid,
                        workers: int = 1) -> SeparationScan:
    """Pair second moment for every separation in the grid and every t <= T.

    All grid points reuse the same primed ensemble (common random numbers).
    """
    grid = np.asarray(p_minus_grid, dtype=float).ravel()
    if np.any(~(grid >= 0)):
        raise ValueError("p_minus grid values must be >= 0")
    if base.count < 2:
        raise ValueError("pair statistics need at least 2 pairs")
    G = grid.size

    def chunk(a, b):
        x = sample(base, a, b)
        q2 = np.broadcast_to(x[:, 0], (G, b - a))
        p2 = wrap(x[None, :, 1] - grid[:, None])
        s2 = np.zeros((G, T + 1))
        s4 = np.zeros((G, T + 1))
        gen1 = iter_action(x[:, 0], x[:, 1], params, T)
        gen2 = iter_action(q2, p2, params, T)
        for t, (a1, a2) in enumerate(zip(gen1, gen2)):
            d2 = (a2 - a1[None, :]) ** 2
            s2[:, t] = d2.sum(axis=1)
            s4[:, t] = (d2 * d2).sum(axis=1)
        return b - a, s2, s4

    n, s2, s4 = _parallel.map_reduce(chunk, base.count, _parallel.add_tuples, workers)
    m2 = s2 / n
    se = np.sqrt(np.maximum(s4 / n - m2 * m2, 0.0) / max(n - 1, 1))
    with np.errstate(invalid="ignore", divide="ignore"):
        kurt = np.where(m2 > 0, (s4 / n) / np.where(m2 > 0, m2 * m2, 1.0) - 3.0, np.nan)
    return SeparationScan(grid, np.arange(T + 1), m2, se, n, kurt)


def pair_variance_vs_separation(base: EnsembleSpec, params: MapParams, t: int, p_minus_grid,
                                workers: int = 1) -> SeparationScan:
    return pair_moment_surface(base, params, t, p_minus_grid, workers).at(t)


# -- correlators -----------------------------------------------------------


def _correlator(observable, kind, spec, params, T_max, n_origins, workers):
    if T_max < 0:
        raise ValueError("T_max must be >= 0")
    n_origins = max(1, T_max if n_origins is None else int(n_origins))
    L = T_max + n_origins

    def chunk(a, b):
        x = sample(spec, a, b)
        if observable is perturbation_potential:
            v = potential_along_orbit(x[:, 0], x[:, 1], params, L)
        else:
            v = _observable_along_orbit(observable, x, params, L)
        c = np.empty((b - a, T_max + 1))
        head = v[:, :n_origins]
        for lag in range(T_max + 1):
            c[:, lag] = np.mean(head * v[:, lag:lag + n_origins], axis=1)
        return b - a, c.sum(axis=0), (c * c).sum(axis=0)

    n, s1, s2 = _parallel.map_reduce(chunk, spec.count, _parallel.add_tuples, workers)
    mean = s1 / n
    se = np.sqrt(np.maximum(s2 / n - mean * mean, 0.0) / max(n - 1, 1))
    return CorrelatorSeries(np.arange(T_max + 1), mean, kind, se, n)


def _observable_along_orbit(fn, x, params, L):
    params = params.unperturbed()
    q, p = x[:, 0].copy(), x[:, 1].copy()
    out = np.empty((q.shape[0], L))
    for n in range(L):
        out[:, n] = fn(q)
        q, p = step_arrays(q, p, params)
    return out


def potential_correlator(spec: EnsembleSpec, params: MapParams, T_max: int,
                         n_origins: int | None = None, workers: int = 1) -> CorrelatorSeries:
    """C_V(lag) = <V(q_{t0 + lag}) V(q_{t0})>, averaged over origins t0 and the ensemble.

    ``n_origins`` defaults to ``T_max``.  Orbits are always unperturbed.
    """
    return _correlator(perturbation_potential, "potential", spec, params, T_max, n_origins, workers)


def force_correlator(spec: EnsembleSpec, params: MapParams, T_max: int,
                     n_origins: int | None = None, workers: int = 1) -> CorrelatorSeries:
    return _correlator(potential_gradient, "force", spec, params, T_max, n_origins, workers)


PLATEAU_RUN = 3


def integrate_correlator(series: CorrelatorSeries, mode: str = "sum-to-plateau") -> CorrelatorIntegral:
    """Time integral (``sum-to-plateau``) or Cesaro mean (``cesaro``) of a correlator.

    The lag-0 term carries half weight.  ``sum-to-plateau`` stops at the
    first lag that starts a run of ``PLATEAU_RUN`` values inside the noise
    floor (twice the rms standard error over the second half of the series)
    and flags the result as unconverged when the discarded tail still sums
    to more than twice its own error.
    ``cesaro`` returns the mean of the running time average over the second
    half of the lags.
    """
    c = np.asarray(series.value, dtype=float)
    if c.size < 4:
        raise ValueError("correlator series needs at least 4 lags")
    se = np.zeros_like(c) if series.stderr is None else np.asarray(series.stderr, dtype=float)
    half = c.size // 2
    noise = 2.0 * np.sqrt(np.mean(se[half:] ** 2))

    if mode == "cesaro":
        cum = np.cumsum(c) - 0.5 * c[0] - 0.5 * c
        running = cum[1:] / np.arange(1, c.size)
        tail = running[half - 1:]
        value = float(np.mean(tail))
        drift = abs(tail[-1] - tail[0])
        converged = bool(drift <= noise + 0.1 * abs(value))
        return CorrelatorIntegral(value, converged, c.size - 1, mode)

    if mode != "sum-to-plateau":
        raise ValueError(f"unknown integration mode {mode!r}")
    partial = 0.5 * c[0] + np.concatenate([[0.0], np.cumsum(c[1:])])
    quiet = np.abs(c) <= noise
    cutoff = None
    for lag in range(1, c.size):
        if quiet[lag:lag + PLATEAU_RUN].all():
            cutoff = lag
            break
    if cutoff is None:
        log.warning("correlator integral did not reach the noise floor by lag %d", c.size - 1)
        return CorrelatorIntegral(float(partial[-1]), False, c.size - 1, mode)
    rest = c[cutoff:]
    rest_err = np.sqrt(np.sum(se[cutoff:] ** 2))
    converged = bool(abs(rest.sum()) <= 2.0 * rest_err + 1e-300)
    if not converged:
        log.warning("correlator tail beyond lag %d still drifts", cutoff)
    return CorrelatorIntegral(float(partial[cutoff - 1]), converged, cutoff, mode)


# -- fits ------------------------------------------------------------------


def _as_xy(series, y=None):
    if y is not None:
        return np.asarray(series, dtype=float), np.asarray(y, dtype=float)
    if hasattr(series, "xy"):
        x, y = series.xy()
    else:
        x, y = series
    return np.asarray(x, dtype=float), np.asarray(y, dtype=float)


def _linear_fit(u, v, window, kind):
    A = np.column_stack([u, np.ones_like(u)])
    (slope, intercept), *_ = np.linalg.lstsq(A, v, rcond=None)
    resid = v - (slope * u + intercept)
    rms = float(np.sqrt(np.mean(resid ** 2)))
    ss_tot = float(np.sum((v - v.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return SlopeFit(float(slope), float(intercept), window, rms, r2, kind, int(u.size))


def _windowed(x, y, window):
    lo, hi = (-np.inf, np.inf) if window is None else window
    idx = np.flatnonzero((x >= lo) & (x <= hi))
    if idx.size < 2:
        raise ValueError(f"fit window {window} holds fewer than 2 points")
    bad = idx[~(y[idx] > 0)]
    if bad.size:
        i = int(bad[0])
        raise ValueError(f"nonpositive value {y[i]!r} at index {i} (x={x[i]!r}) inside fit window")
    return idx, (float(x[idx[0]]), float(x[idx[-1]]))


def fit_loglog_slope(series, window=None, y=None) -> SlopeFit:
    """Least-squares line through (log x, log y) over ``lo <= x <= hi``.

    ``series`` is anything with ``.xy()``, an ``(x, y)`` pair, or ``x`` with
    ``y`` passed by keyword.
    """
    x, yv = _as_xy(series, y)
    idx, win = _windowed(x, yv, window)
    if np.any(x[idx] <= 0):
        raise ValueError("log-log fit needs positive abscissas")
    return _linear_fit(np.log(x[idx]), np.log(yv[idx]), win, "loglog")


def fit_exponential_rate(series, window=None, y=None) -> SlopeFit:
    """Least-squares line through (x, log y); ``slope`` is the growth rate."""
    x, yv = _as_xy(series, y)
    idx, win = _windowed(x, yv, window)
    return _linear_fit(x[idx], np.log(yv[idx]), win, "exponential")


def crossover(early: SlopeFit, late: SlopeFit) -> float | None:
    """Abscissa where two fitted branches intersect, searched between their windows."""
    lo = early.fit_window[0]
    hi = late.fit_window[1]

    def g(x):
        return float(early.log_predict(x) - late.log_predict(x))

    grid = np.geomspace(max(lo, 1e-300), hi, 512) if lo > 0 else np.linspace(lo, hi, 512)
    vals = np.array([g(x) for x in grid])
    sign = np.flatnonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)
    if sign.size == 0:
        return None
    i = int(sign[0])
    return float(brentq(g, grid[i], grid[i + 1]))


# -- unstable-direction prefactor -------------------------------------------


def estimate_alpha(points, params: MapParams, lam: float, t_max: int = 8,
                   direction_steps: int = 30) -> float:
    """Prefactor in |dq(t)| ~ alpha |x_u| exp(lam t) for a unit momentum offset.

    ``x_u`` is the projection of the offset onto each orbit's most unstable
    initial direction.  Returned value is the geometric median over the
    ensemble and over t = 1..t_max.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    unperturbed = params.unperturbed()
    logdq = linearized_separation(pts[:, 0], pts[:, 1], unperturbed, t_max)
    v = unstable_directions(pts[:, 0], pts[:, 1], unperturbed, direction_steps)
    with np.errstate(divide="ignore"):
        log_xu = np.log(np.abs(v[:, 1]))
    t = np.arange(1, t_max + 1)
    log_alpha = logdq[:, 1:] - lam * t[None, :] - log_xu[:, None]
    finite = log_alpha[np.isfinite(log_alpha)]
    per_t = np.median(np.where(np.isfinite(log_alpha), log_alpha, np.nan), axis=0)
    if finite.size == 0:
        raise ValueError("no finite separations to estimate alpha from")
    return float(np.exp(np.nanmedian(per_t)))
