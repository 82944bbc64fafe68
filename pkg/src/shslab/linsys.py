"""Numerical services on the assembled models: spectra, equilibria, exact
zero-order-hold discretization, and discrete-time response simulation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NumericalError
from .ssbuild import ScenarioFamily, StateSpaceModel


@dataclass(frozen=True, eq=False)
class DiscreteStateSpace:
    """Exact ZOH discretization of a StateSpaceModel at sample period ts."""

    Ad: np.ndarray
    Bd1: np.ndarray
    Bd2: np.ndarray
    C: np.ndarray
    D2: np.ndarray
    ts: float

    def __post_init__(self):
        for fname in ("Ad", "Bd1", "Bd2", "C", "D2"):
            arr = np.array(getattr(self, fname), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, fname, arr)

    @property
    def n(self) -> int:
        return self.Ad.shape[0]

    @property
    def p(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True, eq=False)
class ResponseTrace:
    """Uniformly sampled outputs plus the scalar sum of output components."""

    times: np.ndarray
    outputs: np.ndarray            # (steps+1, p)
    aggregate: np.ndarray          # (steps+1,)
    states: np.ndarray | None = None

    @property
    def final_state(self) -> np.ndarray:
        if self.states is None:
            raise NumericalError("trace was simulated without state recording")
        return self.states[-1]


def eig_sorted(A: np.ndarray) -> np.ndarray:
    """Eigenvalues sorted by (real part, imaginary part) ascending."""
    try:
        vals = scipy.linalg.eigvals(np.asarray(A, dtype=float))
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise NumericalError(f"eigenvalue solver failed: {exc}") from exc
    order = np.lexsort((vals.imag, vals.real))
    return vals[order]


def eigenvalues(model: StateSpaceModel) -> np.ndarray:
    if not np.all(np.isfinite(model.A)):
        raise NumericalError("state matrix has non-finite entries")
    return eig_sorted(model.A)


def is_hurwitz(model: StateSpaceModel, margin: float = 0.0) -> bool:
    return bool(np.max(eigenvalues(model).real) < -margin)


def assert_family_hurwitz(family: ScenarioFamily) -> None:
    """Raise with a per-scenario diagnostic if any member is not stable."""
    bad = []
    for sc in family:
        mx = float(np.max(eigenvalues(sc).real))
        if mx >= 0.0:
            bad.append(f"{sc.name}: max Re(lambda) = {mx:.6g}")
    if bad:
        raise NumericalError("family is not Hurwitz: " + "; ".join(bad))


def equilibrium(model: StateSpaceModel, u1_star: np.ndarray,
                u2_star: np.ndarray | None = None) -> np.ndarray:
    """Deviation-model equilibrium x* = -A^-1 (B1 u1* + B2 u2*)."""
    u1_star = np.asarray(u1_star, dtype=float)
    rhs = model.B1 @ u1_star
    if u2_star is not None and model.B2.shape[1]:
        rhs = rhs + model.B2 @ np.asarray(u2_star, dtype=float)
    try:
        x_star = np.linalg.solve(model.A, -rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("singular state matrix; no unique equilibrium") from exc
    resid = np.linalg.norm(model.A @ x_star + rhs)
    if resid > 1e-9 * max(np.linalg.norm(x_star), 1e-30) and np.linalg.norm(x_star) > 0:
        raise NumericalError(f"equilibrium residual too large: {resid:.3e}")
    return x_star


def discretize_zoh(model: StateSpaceModel, ts: float) -> DiscreteStateSpace:
    """Exact discretization via the augmented matrix exponential
    exp([[A, B], [0, 0]] ts) -> [[Ad, Bd], [0, I]]."""
    if not (np.isfinite(ts) and ts > 0):
        raise NumericalError(f"sample period must be positive and finite, got {ts}")
    n = model.n
    B = np.hstack([model.B1, model.B2])
    m = B.shape[1]
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = model.A
    aug[:n, n:] = B
    E = scipy.linalg.expm(aug * ts)
    Ad = E[:n, :n]
    Bd = E[:n, n:]
    return DiscreteStateSpace(Ad=Ad, Bd1=Bd[:, :3], Bd2=Bd[:, 3:],
                              C=model.C, D2=model.D2, ts=ts)


def simulate(dmodel: DiscreteStateSpace, x0: np.ndarray,
             u1: np.ndarray | None, u2: np.ndarray | None, steps: int,
             t0: float = 0.0, record_states: bool = False) -> ResponseTrace:
    """Propagate x_{k+1} = Ad x_k + Bd1 u1_k + Bd2 u2_k for k = 0..steps-1 and
    record y_k = C x_k + D2 u2_k at k = 0..steps.

    Input arrays need at least `steps` rows; a missing row `steps` (used only
    for the final sample's feedthrough) is treated as zero.
    """
    n, p = dmodel.n, dmodel.p
    q = dmodel.Bd2.shape[1]
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if x.shape != (n,):
        raise NumericalError(f"x0 must have length {n}, got {x.shape}")

    def prep(u, cols, name):
        if u is None:
            return np.zeros((steps + 1, cols))
        u = np.asarray(u, dtype=float)
        if u.ndim != 2 or u.shape[1] != cols:
            raise NumericalError(f"{name} must be (steps, {cols}), got {u.shape}")
        if u.shape[0] < steps:
            raise NumericalError(f"{name} has {u.shape[0]} rows, need >= {steps}")
        if u.shape[0] == steps:
            u = np.vstack([u, np.zeros(cols)])
        return u

    U1 = prep(u1, 3, "u1")
    U2 = prep(u2, q, "u2")

    # forcing terms for all steps at once; the recursion itself is sequential
    F = dmodel.Bd1 @ U1[:steps].T
    if q:
        F = F + dmodel.Bd2 @ U2[:steps].T

    ys = np.empty((steps + 1, p))
    xs = np.empty((steps + 1, n)) if record_states else None
    Ad = dmodel.Ad
    C = dmodel.C
    D2 = dmodel.D2
    for k in range(steps + 1):
        y = C @ x
        if q:
            y = y + D2 @ U2[k]
        ys[k] = y
        if xs is not None:
            xs[k] = x
        if k < steps:
            x = Ad @ x + F[:, k]

    times = t0 + dmodel.ts * np.arange(steps + 1)
    return ResponseTrace(times=times, outputs=ys, aggregate=ys.sum(axis=1), states=xs)


def step_response(dmodel: DiscreteStateSpace, channel: int, steps: int,
                  magnitude: float = 1.0) -> ResponseTrace:
    """Zero-initial response to a step of `magnitude` on one u1 channel,
    active over [0, steps*ts)."""
    u1 = np.zeros((steps + 1, 3))
    u1[:steps, channel] = magnitude
    return simulate(dmodel, None, u1, None, steps)
