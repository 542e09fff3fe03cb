"""Fidelity in the dephasing representation.

Three routes to M(t):

* :func:`dr_overlap` averages the phasor exp(i dS / hbar) over an ensemble
  and squares the modulus of the mean;
* :func:`predict_fidelity` evaluates the closed forms of each decay regime
  from a set of :class:`RegimeParams`;
* :func:`fidelity_from_pair_variance` integrates exp(-<(dS' - dS'')^2> / 2hbar^2)
  over the momentum separation, which is the Gaussian closure of the
  pair-averaged overlap.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid

from . import _parallel
from .ensembles import EnsembleSpec, sample
from .maps import TWO_PI, MapParams, action_series, lyapunov_exponent
from .statistics import (
    SeparationScan,
    SlopeFit,
    estimate_alpha,
    force_correlator,
    integrate_correlator,
    potential_correlator,
)

log = logging.getLogger(__name__)


class Regime(str, enum.Enum):
    FERMI_GOLDEN_RULE = "Fermi-Golden-Rule"
    GAUSSIAN = "Gaussian"
    LYAPUNOV = "Lyapunov"
    ALGEBRAIC = "Algebraic"
    SUPEREXPONENTIAL = "Superexponential"
    CUBIC_EXPONENTIAL = "Cubic-exponential"
    MIXED = "mixed/unclassified"

    def __str__(self):
        return self.value


# (dynamics, branch) -> regime
REGIME_TABLE = {
    ("chaotic", "uncorrelated"): Regime.FERMI_GOLDEN_RULE,
    ("quasi-integrable", "uncorrelated"): Regime.GAUSSIAN,
    ("chaotic", "correlated-large-t"): Regime.LYAPUNOV,
    ("quasi-integrable", "correlated-large-t"): Regime.ALGEBRAIC,
    ("chaotic", "correlated-small-t"): Regime.SUPEREXPONENTIAL,
    ("quasi-integrable", "correlated-small-t"): Regime.CUBIC_EXPONENTIAL,
}

REQUIRED = {
    Regime.FERMI_GOLDEN_RULE: ("K",),
    Regime.GAUSSIAN: ("C_V_inf",),
    Regime.LYAPUNOV: ("alpha", "lambda_", "D"),
    Regime.ALGEBRAIC: ("D",),
    Regime.SUPEREXPONENTIAL: ("beta", "lambda_"),
    Regime.CUBIC_EXPONENTIAL: ("gamma",),
}


@dataclass
class RegimeParams:
    """Constants feeding the closed-form decay laws.

    Volumes default to the 2-torus per degree of freedom:
    ``Omega = (2pi)^(2d)``, ``Omega_p = (2pi)^d``, ``Omega_u = 2pi``.
    """

    hbar: float
    epsilon: float
    K: float | None = None
    C_V_inf: float | None = None
    D: float | None = None
    lambda_: float | None = None
    alpha: float | None = None
    beta: float | None = None
    gamma: float | None = None
    m: float = 1.0
    d: int = 1
    Omega: float | None = None
    Omega_p: float | None = None
    Omega_u: float = TWO_PI

    def __post_init__(self):
        if self.Omega is None:
            self.Omega = TWO_PI ** (2 * self.d)
        if self.Omega_p is None:
            self.Omega_p = TWO_PI ** self.d
        if not self.hbar > 0:
            raise ValueError("hbar must be > 0")
        if self.d < 1:
            raise ValueError("d must be >= 1")
        for name in ("Omega", "Omega_p", "Omega_u", "m"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")


@dataclass
class FidelityCurve:
    times: np.ndarray
    M: np.ndarray
    method: str
    regime: Regime | None = None
    stderr: np.ndarray | None = None
    overlap: np.ndarray | None = field(default=None, repr=False)
    clamped: np.ndarray | None = field(default=None, repr=False)
    excess_kurtosis: np.ndarray | None = field(default=None, repr=False)

    @property
    def flagged(self) -> bool:
        return self.clamped is not None and bool(np.any(self.clamped))

    def xy(self):
        return self.times, self.M


# -- direct Monte Carlo -----------------------------------------------------


def dr_overlap(spec: EnsembleSpec, params: MapParams, hbar: float, T: int,
               workers: int = 1) -> FidelityCurve:
    """Ensemble mean of exp(i dS / hbar); ``M = |mean|^2``.

    ``stderr`` is the delta-method standard error of M.
    """
    if not hbar > 0:
        raise ValueError("hbar must be > 0")

    def chunk(a, b):
        x = sample(spec, a, b)
        phase = action_series(x[:, 0], x[:, 1], params, T) / hbar
        c, s = np.cos(phase), np.sin(phase)
        return (b - a, c.sum(0), s.sum(0), (c * c).sum(0), (s * s).sum(0), (c * s).sum(0))

    n, sc, ss, scc, sss, scs = _parallel.map_reduce(chunk, spec.count, _parallel.add_tuples, workers)
    cbar, sbar = sc / n, ss / n
    M = cbar * cbar + sbar * sbar
    M = np.minimum(M, 1.0)
    var_c = np.maximum(scc / n - cbar ** 2, 0.0)
    var_s = np.maximum(sss / n - sbar ** 2, 0.0)
    cov = scs / n - cbar * sbar
    var_M = 4.0 * (cbar ** 2 * var_c + sbar ** 2 * var_s + 2 * cbar * sbar * cov) / n
    return FidelityCurve(np.arange(T + 1), M, "dr-monte-carlo",
                         stderr=np.sqrt(np.maximum(var_M, 0.0)), overlap=cbar + 1j * sbar)


# -- closed forms -----------------------------------------------------------


def _require(rp: RegimeParams, regime: Regime):
    for name in REQUIRED[regime]:
        value = getattr(rp, name)
        if value is None or not value > 0:
            raise ValueError(f"regime {regime.value} needs a positive {name!r}, got {value!r}")
    if rp.epsilon == 0 and regime in (Regime.LYAPUNOV, Regime.ALGEBRAIC):
        raise ValueError(f"regime {regime.value} needs a nonzero 'epsilon'")


def predict_fidelity(regime, rp: RegimeParams, times) -> FidelityCurve:
    """Pointwise closed-form M(t) for one regime.

    The Lyapunov and algebraic laws are large-t asymptotics whose prefactor
    exceeds 1 at early times; those points are clamped to 1 and marked in
    ``clamped``.  The short-time laws use ``e^{2 lambda t} - 1`` and ``t^3``
    so that M(0) = 1.
    """
    regime = Regime(regime)
    if regime is Regime.MIXED:
        raise ValueError("no closed form for a mixed/unclassified regime")
    _require(rp, regime)
    t = np.asarray(times, dtype=float)
    eps2, hb2 = rp.epsilon ** 2, rp.hbar ** 2

    with np.errstate(divide="ignore", over="ignore"):
        if regime is Regime.FERMI_GOLDEN_RULE:
            M = np.exp(-2.0 * rp.K * eps2 * t / hb2)
        elif regime is Regime.GAUSSIAN:
            M = np.exp(-rp.C_V_inf * eps2 * t ** 2 / hb2)
        elif regime is Regime.LYAPUNOV:
            pref = rp.hbar / (rp.alpha * rp.Omega_u * abs(rp.epsilon)) * np.sqrt(TWO_PI * rp.lambda_ / rp.D)
            M = pref * np.exp(-rp.lambda_ * t)
        elif regime is Regime.ALGEBRAIC:
            base = 3.0 * np.pi * hb2 * rp.m ** 2 / (rp.D * eps2)
            M = base ** (rp.d / 2.0) / rp.Omega_p * t ** (-1.5 * rp.d)
        elif regime is Regime.SUPEREXPONENTIAL:
            M = np.exp(-rp.beta * eps2 * np.expm1(2.0 * rp.lambda_ * t))
        else:
            M = np.exp(-rp.gamma * eps2 * t ** 3)

    clamped = M > 1.0
    if np.any(clamped):
        log.info("%s prediction clamped at %d early points", regime.value, int(clamped.sum()))
    M = np.where(clamped, 1.0, M)
    return FidelityCurve(t, M, f"table-ii({regime.value})", regime=regime, clamped=clamped)


# -- Gaussian closure over pair separations ---------------------------------

INTEGRAND_FLOOR = 1e-6
MAX_NODE_JUMP = 0.1
MAX_GAP_ERROR = 1e-4
KURTOSIS_WARN = 20.0


def fidelity_from_pair_variance(scan: SeparationScan, hbar: float,
                                Omega_p: float = TWO_PI) -> FidelityCurve:
    """Integrate exp(-m(p_-, t) / 2hbar^2) over the momentum separation.

    The grid must reach pi (or 2pi); separation 0 with zero moment is added
    if absent.  Over [0, pi] the integrand is doubled using the p_- -> -p_-
    symmetry.  Raises ``ValueError`` when two neighbouring nodes differ by
    more than 0.1 while either exceeds 1e-6 and the gap is wide enough for
    that jump to shift M by 1e-4 or more.
    """
    if not hbar > 0:
        raise ValueError("hbar must be > 0")
    p = np.asarray(scan.p_minus, dtype=float)
    m = np.asarray(scan.moment, dtype=float)
    se = np.asarray(scan.stderr, dtype=float) if scan.stderr is not None else np.zeros_like(m)
    order = np.argsort(p, kind="stable")
    p, m, se = p[order], m[order], se[order]
    if p[0] > 0:
        p = np.concatenate([[0.0], p])
        m = np.vstack([np.zeros((1, m.shape[1])), m])
        se = np.vstack([np.zeros((1, se.shape[1])), se])

    tol = 1e-9
    if p[-1] >= TWO_PI - tol:
        period = TWO_PI
    elif p[-1] >= np.pi - tol:
        period = np.pi
    else:
        raise ValueError(f"separation grid stops at {p[-1]:.6g}; it must reach pi")
    keep = p <= period + tol
    p, m, se = p[keep], m[keep], se[keep]

    norm = (TWO_PI / period) / Omega_p
    integrand = np.exp(-m / (2.0 * hbar ** 2))
    big = np.maximum(integrand[:-1], integrand[1:]) > INTEGRAND_FLOOR
    step = np.abs(np.diff(integrand, axis=0))
    # a jump only matters if the gap is wide enough to move M
    wide = norm * np.diff(p)[:, None] * step >= MAX_GAP_ERROR
    bad = np.argwhere(big & (step >= MAX_NODE_JUMP) & wide)
    if bad.size:
        i, j = bad[0]
        raise ValueError(
            f"separation grid too coarse between p_-={p[i]:.6g} and {p[i + 1]:.6g} "
            f"at t={scan.times[j]}: integrand jumps {integrand[i, j]:.3g} -> {integrand[i + 1, j]:.3g}"
        )

    M = norm * trapezoid(integrand, p, axis=0)
    dM = norm * trapezoid(integrand * se / (2.0 * hbar ** 2), p, axis=0)
    kurt = _weighted_kurtosis(scan, order, p.size, integrand)
    if kurt is not None and np.nanmax(np.abs(kurt), initial=0.0) > KURTOSIS_WARN:
        log.warning("pair action differences are far from Gaussian (weighted excess kurtosis up to %.3g); "
                    "the quadrature may not match the direct average", np.nanmax(np.abs(kurt)))
    return FidelityCurve(np.asarray(scan.times), np.clip(M, 0.0, 1.0), "eq3-quadrature", stderr=dM,
                         excess_kurtosis=kurt)


def _weighted_kurtosis(scan, order, size, integrand):
    # integrand-weighted mean over the nodes that carry the integral
    if scan.excess_kurtosis is None:
        return None
    k = np.asarray(scan.excess_kurtosis, dtype=float)[order]
    if k.shape[0] < size:
        k = np.vstack([np.full((size - k.shape[0], k.shape[1]), np.nan), k])
    k = k[:size]
    w = np.where(np.isfinite(k), integrand, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.sum(w * np.nan_to_num(k), axis=0) / np.sum(w, axis=0)


# -- regime classification --------------------------------------------------

SLOPE_TOLERANCE = 0.3
RESIDUAL_LIMIT = 0.5


def _dynamics_from_power(slope: float, chaotic: float, regular: float) -> str | None:
    if abs(slope - chaotic) <= SLOPE_TOLERANCE:
        return "chaotic"
    if abs(slope - regular) <= SLOPE_TOLERANCE:
        return "quasi-integrable"
    return None


def classify_regime(fits: dict, scale: str = "small-t") -> Regime:
    """Map fitted growth laws to a decay regime.

    ``fits`` may hold

    * ``"variance"``: log-log fit of the single-orbit variance (slope 1 means
      chaotic, 2 quasi-integrable; uncorrelated branch),
    * ``"pair"``: fit of the correlated pair second moment, either
      ``kind="exponential"`` (chaotic) or log-log with slope 3
      (quasi-integrable).

    When a pair fit is present the correlated branch is reported, at the
    time ``scale`` ``"small-t"`` or ``"large-t"``.  Anything that fits no
    hypothesis within tolerance is ``Regime.MIXED``.
    """
    if scale not in ("small-t", "large-t"):
        raise ValueError(f"unknown scale {scale!r}")
    pair: SlopeFit | None = fits.get("pair")
    var: SlopeFit | None = fits.get("variance")

    if pair is not None:
        if pair.residual > RESIDUAL_LIMIT:
            return Regime.MIXED
        if pair.kind == "exponential":
            dynamics = "chaotic" if pair.slope > 0 else None
        else:
            dynamics = "quasi-integrable" if abs(pair.slope - 3.0) <= SLOPE_TOLERANCE else None
        if dynamics is None:
            return Regime.MIXED
        return REGIME_TABLE[(dynamics, f"correlated-{scale}")]

    if var is not None:
        if var.residual > RESIDUAL_LIMIT or var.kind != "loglog":
            return Regime.MIXED
        dynamics = _dynamics_from_power(var.slope, 1.0, 2.0)
        if dynamics is None:
            return Regime.MIXED
        return REGIME_TABLE[(dynamics, "uncorrelated")]
    raise ValueError("classify_regime needs a 'variance' or 'pair' fit")


def fit_short_time_constant(curve: FidelityCurve, regime, rp: RegimeParams, window=None) -> float:
    """Least-squares beta (superexponential) or gamma (cubic-exponential)
    from -ln M = c eps^2 g(t)."""
    regime = Regime(regime)
    t = np.asarray(curve.times, dtype=float)
    M = np.asarray(curve.M, dtype=float)
    lo, hi = (1, t[-1]) if window is None else window
    sel = (t >= lo) & (t <= hi) & (M > 0) & (M < 1)
    if not np.any(sel):
        raise ValueError("no decaying points inside the window")
    y = -np.log(M[sel])
    if regime is Regime.SUPEREXPONENTIAL:
        if rp.lambda_ is None:
            raise ValueError("regime Superexponential needs 'lambda_'")
        g = np.expm1(2.0 * rp.lambda_ * t[sel])
    elif regime is Regime.CUBIC_EXPONENTIAL:
        g = t[sel] ** 3
    else:
        raise ValueError("only the short-time regimes carry a fitted constant")
    g = g * rp.epsilon ** 2
    return float(np.dot(g, y) / np.dot(g, g))


# -- parameter estimation ----------------------------------------------------


def estimate_regime_params(spec: EnsembleSpec, params: MapParams, hbar: float, T_max: int = 50,
                           lyapunov_steps: int = 200, workers: int = 1):
    """Measure K, C_V^inf, D, lambda and alpha for the given map.

    Returns ``(RegimeParams, diagnostics)``; ``diagnostics`` maps each
    integral's name to its :class:`~dephasing.statistics.CorrelatorIntegral`.
    Unconverged integrals are still reported, with ``converged=False``.
    """
    cv = potential_correlator(spec, params, T_max, workers=workers)
    cf = force_correlator(spec, params, T_max, workers=workers)
    K = integrate_correlator(cv, "sum-to-plateau")
    C_inf = integrate_correlator(cv, "cesaro")
    D = integrate_correlator(cf, "sum-to-plateau")
    pts = sample(spec, 0, min(spec.count, 1000))
    lam = lyapunov_exponent(pts, params.unperturbed(), lyapunov_steps)
    alpha = None
    if lam > 0.05:
        alpha = estimate_alpha(pts, params, lam)
    rp = RegimeParams(hbar=hbar, epsilon=params.epsilon, K=K.value, C_V_inf=C_inf.value,
                      D=D.value, lambda_=lam, alpha=alpha)
    return rp, {"K": K, "C_V_inf": C_inf, "D": D}
