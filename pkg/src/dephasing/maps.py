"""Perturbed standard map on the 2-torus.

    p' = p + k sin q + eps sin 2q   (mod 2pi)
    q' = q + p'                      (mod 2pi)

The eps term is the momentum kick of the perturbation potential
V(q) = cos(2q) / 2, since -eps dV/dq = eps sin 2q.  The action difference
accumulated along an *unperturbed* orbit is

    dS(x0, t) = -eps * sum_{n < t} V(q_n)

Everything here works on plain floats or on numpy arrays of any shape, so
an ensemble is just a pair of arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

TWO_PI = 2.0 * np.pi


class PhasePoint(NamedTuple):
    q: float
    p: float


@dataclass(frozen=True)
class MapParams:
    """Kick strength ``k`` and perturbation strength ``epsilon``.

    ``with_perturbation`` selects which Hamiltonian drives the orbit; the
    action-difference routines ignore it and always follow the unperturbed
    orbit.
    """

    k: float
    epsilon: float = 0.0
    with_perturbation: bool = False

    def __post_init__(self):
        if not np.isfinite(self.k) or self.k < 0:
            raise ValueError(f"k must be a finite non-negative number, got {self.k!r}")
        if not np.isfinite(self.epsilon):
            raise ValueError(f"epsilon must be finite, got {self.epsilon!r}")

    def unperturbed(self) -> "MapParams":
        return replace(self, with_perturbation=False)

    def perturbed(self) -> "MapParams":
        return replace(self, with_perturbation=True)


def wrap(x):
    """Reduce angles to [0, 2pi).

    ``np.mod`` can return exactly 2pi for tiny negative inputs; those are
    folded back to 0.
    """
    r = np.mod(x, TWO_PI)
    if np.ndim(r) == 0:
        return 0.0 if r >= TWO_PI else float(r)
    r[r >= TWO_PI] = 0.0
    return r


def perturbation_potential(q):
    return 0.5 * np.cos(2.0 * q)


def potential_gradient(q):
    """dV/dq, the force is its negative."""
    return -np.sin(2.0 * q)


def _kick(q, params: MapParams):
    f = params.k * np.sin(q)
    if params.with_perturbation and params.epsilon != 0.0:
        f = f - params.epsilon * potential_gradient(q)
    return f


def step_arrays(q, p, params: MapParams):
    p_new = wrap(p + _kick(q, params))
    q_new = wrap(q + p_new)
    return q_new, p_new


def step_map(x: PhasePoint, params: MapParams) -> PhasePoint:
    q, p = step_arrays(x[0], x[1], params)
    return PhasePoint(q, p)


def inverse_step(x: PhasePoint, params: MapParams) -> PhasePoint:
    q_prev = wrap(x[0] - x[1])
    p_prev = wrap(x[1] - _kick(q_prev, params))
    return PhasePoint(q_prev, p_prev)


def trajectory(x0: PhasePoint, params: MapParams, T: int) -> np.ndarray:
    """Visited points, shape ``(T + 1, 2)``."""
    out = np.empty((T + 1, 2))
    q, p = float(x0[0]), float(x0[1])
    out[0] = q, p
    for n in range(T):
        q, p = step_arrays(q, p, params)
        out[n + 1] = q, p
    return out


def potential_along_orbit(q0, p0, params: MapParams, T: int) -> np.ndarray:
    """V(q_n) for n = 0..T-1 on the unperturbed orbit; shape ``q0.shape + (T,)``."""
    params = params.unperturbed()
    q = np.array(q0, dtype=float, copy=True)
    p = np.array(p0, dtype=float, copy=True)
    out = np.empty(q.shape + (T,))
    for n in range(T):
        out[..., n] = perturbation_potential(q)
        q, p = step_arrays(q, p, params)
    return out


def action_series(q0, p0, params: MapParams, T: int) -> np.ndarray:
    """Cumulative action difference for every initial point.

    Returns an array of shape ``q0.shape + (T + 1,)`` whose last axis is
    time; entry 0 is exactly zero.  The sum is formed first and scaled by
    ``-epsilon`` last, so the result is linear in epsilon to rounding.
    """
    if T < 0:
        raise ValueError("T must be >= 0")
    v = potential_along_orbit(q0, p0, params, T)
    out = np.zeros(v.shape[:-1] + (T + 1,))
    np.cumsum(v, axis=-1, out=out[..., 1:])
    out[..., 1:] *= -params.epsilon
    return out


def iter_action(q0, p0, params: MapParams, T: int):
    """Yield dS(., t) for t = 0..T without storing the history."""
    params = params.unperturbed()
    q = np.array(q0, dtype=float, copy=True)
    p = np.array(p0, dtype=float, copy=True)
    acc = np.zeros_like(q)
    yield acc.copy()
    for _ in range(T):
        acc = acc + perturbation_potential(q)
        q, p = step_arrays(q, p, params)
        yield -params.epsilon * acc


@dataclass(frozen=True)
class ActionSeries:
    initial: PhasePoint
    delta_s: np.ndarray


def propagate_with_action(x0: PhasePoint, params: MapParams, T: int) -> ActionSeries:
    x0 = PhasePoint(float(x0[0]), float(x0[1]))
    ds = action_series(np.array(x0.q), np.array(x0.p), params, T)
    return ActionSeries(initial=x0, delta_s=ds)


# -- tangent dynamics -------------------------------------------------------


def jacobian(q, params: MapParams) -> np.ndarray:
    """One-step Jacobian d(q', p')/d(q, p) at pre-kick position ``q``."""
    a = params.k * np.cos(q)
    if params.with_perturbation and params.epsilon != 0.0:
        a = a + 2.0 * params.epsilon * np.cos(2.0 * q)
    a = np.asarray(a, dtype=float)
    J = np.empty(a.shape + (2, 2))
    J[..., 0, 0] = 1.0 + a
    J[..., 0, 1] = 1.0
    J[..., 1, 0] = a
    J[..., 1, 1] = 1.0
    return J


@dataclass(frozen=True)
class TangentFrame:
    """Accumulated Jacobian kept as ``rotation @ diag(exp(log_diag)) @ [[1, shear], [0, 1]]``.

    The log-diagonal form never overflows and gives the determinant without
    the cancellation that ``ad - bc`` suffers once the frame is stretched.
    """

    rotation: np.ndarray
    log_diag: np.ndarray
    shear: float

    @property
    def matrix(self) -> np.ndarray:
        d1, d2 = np.exp(self.log_diag)
        upper = np.array([[d1, d1 * self.shear], [0.0, d2]])
        return self.rotation @ upper

    @property
    def determinant(self) -> float:
        return float(np.linalg.det(self.rotation) * np.exp(self.log_diag.sum()))

    def _scaled_upper(self) -> np.ndarray:
        return np.array([[1.0, self.shear], [0.0, np.exp(self.log_diag[1] - self.log_diag[0])]])

    @property
    def log_norm(self) -> float:
        """Log of the largest singular value."""
        s = np.linalg.svd(self._scaled_upper(), compute_uv=False)
        return float(self.log_diag[0] + np.log(s[0]))

    @property
    def unstable_direction(self) -> np.ndarray:
        """Unit initial-space vector stretched the most by this frame."""
        _, _, vt = np.linalg.svd(self._scaled_upper())
        v = vt[0]
        return v if v[0] >= 0 else -v


def _qr_update(rot, log_diag, shear, J):
    """Advance batched frames by one Jacobian ``J``; all arrays batched on axis 0."""
    A = J @ rot
    a0, a1 = A[..., :, 0], A[..., :, 1]
    r11 = np.hypot(a0[..., 0], a0[..., 1])
    c, s = a0[..., 0] / r11, a0[..., 1] / r11
    new_rot = np.empty_like(rot)
    new_rot[..., 0, 0], new_rot[..., 1, 0] = c, s
    new_rot[..., 0, 1], new_rot[..., 1, 1] = -s, c
    r12 = c * a1[..., 0] + s * a1[..., 1]
    r22 = -s * a1[..., 0] + c * a1[..., 1]
    new_log = log_diag + np.stack([np.log(r11), np.log(np.abs(r22))], axis=-1)
    ratio = np.exp(log_diag[..., 1] - log_diag[..., 0])
    new_shear = (r12 / r11) * ratio + shear
    return new_rot, new_log, new_shear


def propagate_tangent(x0: PhasePoint, params: MapParams, T: int) -> list[TangentFrame]:
    """Frames after 1..T steps (element ``t - 1`` is the Jacobian of t steps)."""
    if T < 1:
        raise ValueError("T must be >= 1")
    q, p = float(x0[0]), float(x0[1])
    rot, log_diag, shear = np.eye(2), np.zeros(2), 0.0
    frames = []
    for _ in range(T):
        rot, log_diag, shear = _qr_update(rot, log_diag, shear, jacobian(q, params))
        frames.append(TangentFrame(rot.copy(), log_diag.copy(), float(shear)))
        q, p = step_arrays(q, p, params)
    return frames


def tangent_log_growth(q0, p0, params: MapParams, T: int) -> np.ndarray:
    """Log of the leading QR diagonal after ``t`` steps, shape ``(N, T + 1)``.

    ``log_growth[:, T] / T`` is the finite-time Lyapunov exponent of each orbit.
    """
    q = np.atleast_1d(np.asarray(q0, dtype=float)).copy()
    p = np.atleast_1d(np.asarray(p0, dtype=float)).copy()
    n = q.shape[0]
    rot = np.broadcast_to(np.eye(2), (n, 2, 2)).copy()
    log_diag = np.zeros((n, 2))
    shear = np.zeros(n)
    out = np.zeros((n, T + 1))
    for t in range(T):
        rot, log_diag, shear = _qr_update(rot, log_diag, shear, jacobian(q, params))
        out[:, t + 1] = log_diag[:, 0]
        q, p = step_arrays(q, p, params)
    return out


def tangent_final(q0, p0, params: MapParams, T: int):
    """Batched frame after ``T`` steps as ``(rotation, log_diag, shear)`` arrays."""
    q = np.atleast_1d(np.asarray(q0, dtype=float)).copy()
    p = np.atleast_1d(np.asarray(p0, dtype=float)).copy()
    n = q.shape[0]
    rot = np.broadcast_to(np.eye(2), (n, 2, 2)).copy()
    log_diag = np.zeros((n, 2))
    shear = np.zeros(n)
    for _ in range(T):
        rot, log_diag, shear = _qr_update(rot, log_diag, shear, jacobian(q, params))
        q, p = step_arrays(q, p, params)
    return rot, log_diag, shear


def unstable_directions(q0, p0, params: MapParams, T: int = 30) -> np.ndarray:
    """Most-stretched initial direction of each orbit over ``T`` steps, shape ``(N, 2)``."""
    _, log_diag, shear = tangent_final(q0, p0, params, T)
    n = shear.shape[0]
    upper = np.zeros((n, 2, 2))
    upper[:, 0, 0] = 1.0
    upper[:, 0, 1] = shear
    upper[:, 1, 1] = np.exp(log_diag[:, 1] - log_diag[:, 0])
    _, _, vt = np.linalg.svd(upper)
    v = vt[:, 0, :]
    return v * np.where(v[:, :1] >= 0, 1.0, -1.0)


def lyapunov_exponent(points, params: MapParams, T: int = 1000) -> float:
    """Ensemble mean of finite-time Lyapunov exponents over ``T`` steps."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    growth = tangent_log_growth(points[:, 0], points[:, 1], params, T)
    return float(np.mean(growth[:, T]) / T)


def linearized_separation(q0, p0, params: MapParams, T: int, direction=(0.0, 1.0)) -> np.ndarray:
    """Position component of ``J_t @ direction`` for t = 0..T, shape ``(N, T + 1)``.

    Returned as log|dq_t| to survive chaotic growth; entries where the
    component vanishes are -inf.
    """
    q = np.atleast_1d(np.asarray(q0, dtype=float)).copy()
    p = np.atleast_1d(np.asarray(p0, dtype=float)).copy()
    v = np.broadcast_to(np.asarray(direction, dtype=float), (q.shape[0], 2)).copy()
    log_scale = np.zeros(q.shape[0])
    out = np.empty((q.shape[0], T + 1))
    with np.errstate(divide="ignore"):
        out[:, 0] = np.log(np.abs(v[:, 0])) + log_scale
        for t in range(T):
            v = np.einsum("nij,nj->ni", jacobian(q, params), v)
            norm = np.hypot(v[:, 0], v[:, 1])
            v /= norm[:, None]
            log_scale += np.log(norm)
            out[:, t + 1] = np.log(np.abs(v[:, 0])) + log_scale
            q, p = step_arrays(q, p, params)
    return out
