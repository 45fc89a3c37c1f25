"""Partially observed linear Gaussian systems: definition, validation,
simulation, and spectral structure.

The system is

    x[k+1] = A x[k] + w[k],   w[k] ~ N(0, Q)
    y[k]   = C x[k] + v[k],   v[k] ~ N(0, R)

with Q, R positive definite and a non-explosive A (spectral radius at
most one). Marginally stable dynamics are allowed, so states may grow
polynomially.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ModelStructureError, NumericalError, ParameterError

SYMMETRY_TOL = 1e-10
SPECTRAL_RADIUS_TOL = 1e-9
UNIT_EIGENVALUE_TOL = 1e-6


def _as_matrix(x, name: str) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(x, dtype=float))
    if arr.ndim != 2:
        raise ModelStructureError(f"{name} must be a 2-D matrix, got ndim={arr.ndim}")
    return arr


@dataclass(frozen=True)
class SystemModel:
    """Ground-truth matrices (A, C, Q, R) of the stochastic system."""

    A: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        C = _as_matrix(self.C, "C")
        Q = _as_matrix(self.Q, "Q")
        R = _as_matrix(self.R, "R")
        n = A.shape[0]
        if A.shape != (n, n):
            raise ModelStructureError(f"A must be square, got {A.shape}")
        if C.shape[1] != n:
            raise ModelStructureError(
                f"C must have {n} columns to match A, got {C.shape}"
            )
        m = C.shape[0]
        if Q.shape != (n, n):
            raise ModelStructureError(f"Q must be {n}x{n}, got {Q.shape}")
        if R.shape != (m, m):
            raise ModelStructureError(f"R must be {m}x{m}, got {R.shape}")
        for name, arr in (("A", A), ("C", C), ("Q", Q), ("R", R)):
            if not np.all(np.isfinite(arr)):
                raise ModelStructureError(f"{name} contains non-finite entries")
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True)
class Trajectory:
    """One simulated realization: states x[0..N] and observations y[0..N].

    Re-simulating with the same (model, N, seed, x0) reproduces the
    arrays bit-for-bit within one build.
    """

    seed: int
    states: np.ndarray        # (N+1, n)
    observations: np.ndarray  # (N+1, m)

    def __post_init__(self):
        if len(self.states) != len(self.observations):
            raise ModelStructureError(
                "states and observations must have equal length"
            )

    @property
    def horizon(self) -> int:
        return len(self.states) - 1


@dataclass(frozen=True)
class SpectralInfo:
    """Spectral quantities that govern memory length and noise scale.

    kappa is the order of the largest Jordan block of A at eigenvalue
    one; models with no unit eigenvalue report kappa = 1 so downstream
    formulas use the weakest requirement.
    """

    rho_A: float
    rho_closed: float
    kappa: int
    sigma_R: float      # smallest eigenvalue of R
    sigma_Rbar: float   # largest eigenvalue of the innovation covariance


@dataclass(frozen=True)
class ValidationReport:
    """Pass/fail entries, one per model invariant."""

    checks: tuple[tuple[str, bool, str], ...]

    @property
    def ok(self) -> bool:
        return all(passed for _, passed, _ in self.checks)

    @property
    def failures(self) -> list[str]:
        return [detail for _, passed, detail in self.checks if not passed]


def _symmetry_defect(M: np.ndarray) -> float:
    scale = max(1.0, float(np.max(np.abs(M))))
    return float(np.max(np.abs(M - M.T))) / scale


def _min_eigenvalue(M: np.ndarray) -> float:
    sym = 0.5 * (M + M.T)
    try:
        return float(np.linalg.eigvalsh(sym)[0])
    except np.linalg.LinAlgError as exc:  # pragma: no cover
        raise NumericalError(f"eigenvalue computation failed: {exc}") from exc


def spectral_radius(M: np.ndarray) -> float:
    try:
        return float(np.max(np.abs(np.linalg.eigvals(M))))
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigenvalue computation failed: {exc}") from exc


def validate_model(model: SystemModel) -> ValidationReport:
    """Check covariance symmetry/positivity and the non-explosive radius.

    Dimensional consistency is structural and enforced at construction;
    here each spectral invariant becomes one report entry. Detectability
    is checked operationally by the Riccati solver, not here.
    """
    checks = []
    for name, M in (("Q", model.Q), ("R", model.R)):
        defect = _symmetry_defect(M)
        checks.append(
            (
                f"{name}_symmetric",
                defect <= SYMMETRY_TOL,
                f"{name} not symmetric (relative defect {defect:.3e})",
            )
        )
        lam_min = _min_eigenvalue(M)
        checks.append(
            (
                f"{name}_positive_definite",
                lam_min > 0.0,
                f"{name} not positive definite (min eigenvalue {lam_min:.3e})",
            )
        )
    rho = spectral_radius(model.A)
    checks.append(
        (
            "A_nonexplosive",
            rho <= 1.0 + SPECTRAL_RADIUS_TOL,
            f"A is explosive (spectral radius {rho:.12f} > 1)",
        )
    )
    return ValidationReport(checks=tuple(checks))


def ensure_valid(model: SystemModel) -> None:
    report = validate_model(model)
    if not report.ok:
        raise ModelStructureError("; ".join(report.failures))


def simulate(
    model: SystemModel,
    horizon: int,
    seed: int,
    x0: np.ndarray | None = None,
) -> Trajectory:
    """Simulate the system for `horizon` steps from a seeded noise stream.

    The generator is numpy's default PCG64 seeded with `seed`; all
    process-noise draws are taken before all measurement-noise draws, so
    the realization is a pure function of (model, horizon, seed, x0).
    x0 defaults to the zero vector, matching the predictor's zero
    initial state.
    """
    ensure_valid(model)
    if horizon < 1:
        raise ParameterError(f"horizon must be >= 1, got {horizon}")
    n, m = model.n, model.m
    if x0 is None:
        x = np.zeros(n)
    else:
        x = np.asarray(x0, dtype=float).reshape(n)
    rng = np.random.default_rng(seed)
    chol_q = np.linalg.cholesky(model.Q)
    chol_r = np.linalg.cholesky(model.R)
    w = rng.standard_normal((horizon, n)) @ chol_q.T
    v = rng.standard_normal((horizon + 1, m)) @ chol_r.T

    states = np.empty((horizon + 1, n))
    states[0] = x
    A = model.A
    for k in range(horizon):
        states[k + 1] = A @ states[k] + w[k]
    observations = states @ model.C.T + v
    states.setflags(write=False)
    observations.setflags(write=False)
    return Trajectory(seed=int(seed), states=states, observations=observations)


def jordan_order_at_unit_eigenvalue(A: np.ndarray) -> int:
    """Order of the largest Jordan block of A at eigenvalue one.

    Determined from the stabilization index of rank((A - I)^j); returns
    1 when no eigenvalue lies within UNIT_EIGENVALUE_TOL of one.
    """
    n = A.shape[0]
    eigs = np.linalg.eigvals(A)
    if not np.any(np.abs(eigs - 1.0) < UNIT_EIGENVALUE_TOL):
        return 1
    B = A - np.eye(n)
    prev_rank = n
    power = np.eye(n)
    for j in range(1, n + 1):
        power = power @ B
        rank = int(np.linalg.matrix_rank(power))
        if rank == prev_rank:
            return j - 1
        prev_rank = rank
    return n


def spectral_info(model: SystemModel, filt) -> SpectralInfo:
    """Spectral radii, Jordan order at eigenvalue one, and noise scales.

    `filt` is a SteadyFilter; its gain defines the closed-loop matrix
    A - L C whose radius controls the decay of the regression blocks.
    """
    A_closed = model.A - filt.L @ model.C
    return SpectralInfo(
        rho_A=spectral_radius(model.A),
        rho_closed=spectral_radius(A_closed),
        kappa=jordan_order_at_unit_eigenvalue(model.A),
        sigma_R=_min_eigenvalue(model.R),
        sigma_Rbar=float(np.linalg.eigvalsh(0.5 * (filt.Rbar + filt.Rbar.T))[-1]),
    )
