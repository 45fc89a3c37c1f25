"""Steady-state Kalman predictor: Riccati fixed point, gain, innovations,
and the closed-loop memory matrices used as diagnostic ground truth.

The state-error covariance is iterated to its fixed point

    P <- A P A' + Q - A P C' (C P C' + R)^{-1} C P A'

which converges exponentially for detectable (A, C). The steady gain is
L = A P C' (C P C' + R)^{-1} and the innovation covariance is
Rbar = C P C' + R. The predictor x[k+1] = A x[k] + L (y[k] - C x[k])
starts from the zero state.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DetectabilityError, NumericalError, ParameterError
from .sysmodel import SystemModel, Trajectory, ensure_valid, spectral_radius

DARE_TOL = 1e-12
DARE_MAX_ITER = 100_000


@dataclass(frozen=True)
class SteadyFilter:
    """Steady Riccati solution P, gain L, innovation covariance Rbar."""

    P: np.ndarray
    L: np.ndarray
    Rbar: np.ndarray
    iterations: int
    residual: float

    def closed_loop(self, model: SystemModel) -> np.ndarray:
        return model.A - self.L @ model.C


@dataclass(frozen=True)
class FilterOutput:
    """Predictor output: yhat[k] = C xhat[k], innovations e[k] = y[k] - yhat[k]."""

    predictions: np.ndarray  # (N+1, m)
    innovations: np.ndarray  # (N+1, m)
    states: np.ndarray       # (N+1, n), the predictor states xhat[k]


@dataclass(frozen=True)
class MarkovParams:
    """Closed-loop memory blocks [C(A-LC)^{p-1} L, ..., C L], oldest lag first.

    blocks[i] applies to the observation delayed by p - i steps, so
    blocks[i] = C (A-LC)^{p-1-i} L.
    """

    p: int
    blocks: np.ndarray  # (p, m, m)

    @property
    def block_norms(self) -> np.ndarray:
        return np.array([np.linalg.norm(b, ord=2) for b in self.blocks])

    def flat(self) -> np.ndarray:
        """The m x (m p) row-block matrix in regressor order."""
        return np.hstack(list(self.blocks))

    def fit_decay_constant(self, rho_closed: float) -> float:
        """Smallest constant M with ||block_t||_2 <= M rho^t across the
        computed blocks.

        Fitted as the max of norm / rho^t over all lags: non-normal
        closed loops have norm sequences that oscillate around the
        geometric rate, so anchoring the envelope on any single block
        underestimates it.
        """
        norms = self.block_norms
        powers = np.arange(self.p - 1, -1, -1, dtype=float)
        ratios = norms / np.maximum(rho_closed**powers, np.finfo(float).tiny)
        return float(np.max(ratios))


def _spd_solve(M: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Solve M X = B for symmetric positive definite M."""
    try:
        cf = scipy.linalg.cho_factor(0.5 * (M + M.T), lower=True)
        return scipy.linalg.cho_solve(cf, B)
    except scipy.linalg.LinAlgError as exc:
        raise NumericalError(f"SPD factorization failed: {exc}") from exc


def riccati_step(model: SystemModel, P_k: np.ndarray) -> np.ndarray:
    """One covariance update; the result is re-symmetrized to suppress
    floating-point asymmetry drift."""
    A, C, Q, R = model.A, model.C, model.Q, model.R
    PCt = P_k @ C.T
    S = C @ PCt + R
    APCt = A @ PCt
    # A P C' S^{-1} C P A'  ==  APCt @ solve(S, APCt')
    P_next = A @ P_k @ A.T + Q - APCt @ _spd_solve(S, APCt.T)
    return 0.5 * (P_next + P_next.T)


def solve_dare(
    model: SystemModel,
    tol: float = DARE_TOL,
    max_iter: int = DARE_MAX_ITER,
) -> SteadyFilter:
    """Fixed-point iteration of the covariance recursion from P0 = Q.

    Stops when the Frobenius norm of the update falls below `tol`.
    Non-convergence within `max_iter` raises DetectabilityError, the
    operational check of the detectability assumption. The returned
    filter satisfies rho(A - L C) < 1.
    """
    ensure_valid(model)
    P = model.Q.copy()
    for it in range(1, max_iter + 1):
        P_next = riccati_step(model, P)
        delta = float(np.linalg.norm(P_next - P, ord="fro"))
        P = P_next
        if delta < tol:
            break
    else:
        raise DetectabilityError(
            "Riccati iteration did not converge within "
            f"{max_iter} iterations (last update {delta:.3e}); "
            "detectability-violation suspected"
        )
    PCt = P @ model.C.T
    Rbar = model.C @ PCt + model.R
    Rbar = 0.5 * (Rbar + Rbar.T)
    # L = A P C' Rbar^{-1} via an SPD solve on Rbar.
    L = _spd_solve(Rbar, (model.A @ PCt).T).T
    rho_closed = spectral_radius(model.A - L @ model.C)
    if rho_closed >= 1.0:
        raise DetectabilityError(
            f"closed-loop spectral radius {rho_closed:.6f} >= 1; "
            "detectability-violation suspected"
        )
    residual = float(np.linalg.norm(P - riccati_step(model, P), ord="fro"))
    return SteadyFilter(P=P, L=L, Rbar=Rbar, iterations=it, residual=residual)


def run_steady_predictor(
    filt: SteadyFilter, model: SystemModel, traj: Trajectory
) -> FilterOutput:
    """Run the steady-gain predictor over a trajectory from xhat[0] = 0."""
    A, C, L = model.A, model.C, filt.L
    y = traj.observations
    N = traj.horizon
    n, m = model.n, model.m
    states = np.zeros((N + 1, n))
    predictions = np.zeros((N + 1, m))
    innovations = np.zeros((N + 1, m))
    xhat = np.zeros(n)
    for k in range(N + 1):
        states[k] = xhat
        yhat = C @ xhat
        predictions[k] = yhat
        e = y[k] - yhat
        innovations[k] = e
        xhat = A @ xhat + L @ e
    for arr in (states, predictions, innovations):
        arr.setflags(write=False)
    return FilterOutput(predictions=predictions, innovations=innovations, states=states)


def markov_params(model: SystemModel, filt: SteadyFilter, p: int) -> MarkovParams:
    """Memory blocks of the closed-loop predictor for a past horizon p,
    built by repeated multiplication with A - L C."""
    if p < 1:
        raise ParameterError(f"past horizon must be >= 1, got {p}")
    A_closed = filt.closed_loop(model)
    C = model.C
    cur = filt.L
    reversed_blocks = []
    for _ in range(p):
        reversed_blocks.append(C @ cur)
        cur = A_closed @ cur
    blocks = np.stack(reversed_blocks[::-1])
    blocks.setflags(write=False)
    return MarkovParams(p=p, blocks=blocks)
