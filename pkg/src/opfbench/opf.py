"""Online prediction with forgetting: balanced recursive least squares
over a doubling epoch schedule.

The predictor regresses each observation on its past p observations.
Because the true regression blocks decay geometrically, the window is
re-balanced before fitting: the observation lagged by j steps is scaled
by gamma^{j-1}, so with gamma near the closed-loop spectral radius all
coefficient blocks live on a comparable scale. Fitting the scaled
window with a plain ridge penalty is algebraically identical to fitting
the raw window under the anisotropic penalty lambda * D^{-2}, which is
the inductive bias that prevents overfitting of the small blocks.

The horizon is split into epochs that double in length; within an epoch
the past horizon p = ceil(beta * ln T) is frozen and the estimate is
updated by rank-one recursions. At each epoch start the state is
rebuilt over the recorded history with the same rank-one update law;
one large closed-form solve is numerically fragile on long horizons and
exists only as an opt-in mode for demonstrating exactly that.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg

from .errors import NumericalError, ParameterError, UsageError

DEFAULT_REFACTOR_PERIOD = 512
INVERSE_CONSISTENCY_TOL = 1e-6


def past_horizon(beta: float, T: int) -> int:
    """p = ceil(beta * ln T), clamped to [1, T-1] so the first regression
    sample exists within recorded history. Natural logarithm throughout."""
    p = math.ceil(beta * math.log(T))
    return max(1, min(p, T - 1))


@dataclass(frozen=True)
class OpfParams:
    """Algorithm inputs.

    beta scales the past horizon p = ceil(beta * ln T); lam is the ridge
    weight; gamma in (0, 1] is the forgetting factor (1 disables
    forgetting); T_init is the warm-up length (indices 0..T_init are
    consumed before the first prediction); N_E is the number of epochs.
    """

    beta: float
    lam: float
    gamma: float
    T_init: int
    N_E: int
    refactor_period: int = DEFAULT_REFACTOR_PERIOD

    def __post_init__(self):
        if self.beta <= 0:
            raise ParameterError(f"beta must be > 0, got {self.beta}")
        if self.lam <= 0:
            raise ParameterError(f"lambda must be > 0, got {self.lam}")
        if not 0.0 < self.gamma <= 1.0:
            raise ParameterError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.T_init < 1:
            raise ParameterError(f"T_init must be >= 1, got {self.T_init}")
        if self.N_E < 1:
            raise ParameterError(f"N_E must be >= 1, got {self.N_E}")
        if self.refactor_period < 1:
            raise ParameterError(
                f"refactor_period must be >= 1, got {self.refactor_period}"
            )
        p1 = math.ceil(self.beta * math.log(self.T_init + 1))
        if p1 > self.T_init:
            raise ParameterError(
                f"first epoch infeasible: p1 = ceil(beta ln(T_init+1)) = {p1} "
                f"exceeds T_init = {self.T_init}"
            )


@dataclass(frozen=True)
class Epoch:
    index: int    # 1-based epoch number l
    start: int    # first prediction step T_l
    end: int      # last prediction step 2 T_l - 2 (inclusive)
    horizon: int  # past horizon p_l

    @property
    def steps(self) -> int:
        return self.end - self.start + 1


@dataclass(frozen=True)
class EpochSchedule:
    """Contiguous doubling epochs: T_l = 2^{l-1} T_init + 1, so epoch l
    covers prediction steps T_l .. 2 T_l - 2 and T_{l+1} = 2 T_l - 1."""

    epochs: tuple[Epoch, ...]

    @property
    def final_step(self) -> int:
        return self.epochs[-1].end

    @property
    def first_step(self) -> int:
        return self.epochs[0].start

    @property
    def required_stream_length(self) -> int:
        """Observations y[0..final_step] drive a full run."""
        return self.final_step + 1

    def epoch_ends(self) -> list[int]:
        return [e.end for e in self.epochs]


def epoch_schedule(params: OpfParams) -> EpochSchedule:
    epochs = []
    for l in range(1, params.N_E + 1):
        T_l = (2 ** (l - 1)) * params.T_init + 1
        epochs.append(
            Epoch(
                index=l,
                start=T_l,
                end=2 * T_l - 2,
                horizon=past_horizon(params.beta, T_l),
            )
        )
    return EpochSchedule(epochs=tuple(epochs))


@dataclass(frozen=True)
class ScalingMatrix:
    """Diagonal re-balancing weights (gamma^{p-1}, ..., gamma, 1), each
    repeated m times; stored as a vector, never densified."""

    p: int
    gamma: float
    m: int
    diag: np.ndarray  # (m p,)


@dataclass(frozen=True)
class RegressorWindow:
    """One stacked past window and its re-balanced form.

    z stacks [y[k-p]; ...; y[k-1]] with the oldest observation first, so
    the scaling weight gamma^{p-1} lands on the most delayed block.
    """

    z: np.ndarray
    ztilde: np.ndarray


def scaling_matrix(p: int, gamma: float, m: int) -> ScalingMatrix:
    if p < 1:
        raise ParameterError(f"past horizon must be >= 1, got {p}")
    if m < 1:
        raise ParameterError(f"output dimension must be >= 1, got {m}")
    if not 0.0 < gamma <= 1.0:
        raise ParameterError(f"gamma must be in (0, 1], got {gamma}")
    diag = np.repeat(gamma ** np.arange(p - 1, -1, -1, dtype=float), m)
    diag.setflags(write=False)
    return ScalingMatrix(p=p, gamma=float(gamma), m=m, diag=diag)


def compute_beta(spec) -> float:
    """Past-horizon coefficient (2 kappa + 1) / ln(1 / rho_closed).

    Research-mode helper: uses ground-truth spectral information. Fast
    mixing (rho_closed near 0) needs only short horizons.
    """
    rho = spec.rho_closed
    if rho >= 1.0:
        raise ParameterError(
            f"closed-loop radius must be < 1, got {rho}"
        )
    if rho <= 0.0:
        return 0.0
    return (2 * spec.kappa + 1) / math.log(1.0 / rho)


@dataclass
class RlsState:
    """Recursive least-squares state over scaled windows.

    Vtilde is lam * I plus the sum of outer products of scaled windows;
    Vtilde_inv is maintained by rank-one updates and re-factorized every
    refactor_period steps, at which point the drifted inverse must still
    satisfy the consistency check.
    """

    Gtilde: np.ndarray      # (m, m p) coefficient estimate
    Vtilde: np.ndarray      # (m p, m p) Gram matrix
    Vtilde_inv: np.ndarray  # (m p, m p) maintained inverse
    lam: float
    steps_since_refactor: int = 0
    refactor_period: int = DEFAULT_REFACTOR_PERIOD
    samples: int = 0

    @property
    def dim(self) -> int:
        return self.Vtilde.shape[0]


def init_state(
    m: int, p: int, lam: float, refactor_period: int = DEFAULT_REFACTOR_PERIOD
) -> RlsState:
    d = m * p
    return RlsState(
        Gtilde=np.zeros((m, d)),
        Vtilde=lam * np.eye(d),
        Vtilde_inv=(1.0 / lam) * np.eye(d),
        lam=lam,
        refactor_period=refactor_period,
    )


def inverse_consistency(V: np.ndarray, V_inv: np.ndarray) -> float:
    """Scaled residual ||V V_inv - I||_F / (||V||_F ||V_inv||_F).

    The product norm in the denominator makes the metric meaningful for
    ill-conditioned Gram matrices, where even a freshly factorized
    inverse cannot drive the raw residual below eps * cond(V).
    """
    d = V.shape[0]
    resid = np.linalg.norm(V @ V_inv - np.eye(d), ord="fro")
    scale = np.linalg.norm(V, ord="fro") * np.linalg.norm(V_inv, ord="fro")
    return float(resid / max(scale, np.finfo(float).tiny))


def _refactor_inverse(state: RlsState) -> None:
    metric = inverse_consistency(state.Vtilde, state.Vtilde_inv)
    if not metric <= INVERSE_CONSISTENCY_TOL:
        raise NumericalError(
            "maintained Gram inverse drifted beyond tolerance at refactor: "
            f"consistency {metric:.3e} > {INVERSE_CONSISTENCY_TOL:.1e}; "
            f"state: dim={state.dim}, samples={state.samples}, "
            f"|V|_F={np.linalg.norm(state.Vtilde):.3e}, "
            f"|G|_F={np.linalg.norm(state.Gtilde):.3e}"
        )
    try:
        cf = scipy.linalg.cho_factor(
            0.5 * (state.Vtilde + state.Vtilde.T), lower=True
        )
        fresh = scipy.linalg.cho_solve(cf, np.eye(state.dim))
    except scipy.linalg.LinAlgError as exc:
        raise NumericalError(f"Gram re-factorization failed: {exc}") from exc
    state.Vtilde_inv = 0.5 * (fresh + fresh.T)
    state.steps_since_refactor = 0


def rls_update(state: RlsState, y_k: np.ndarray, ztilde: np.ndarray) -> RlsState:
    """Absorb one sample (y_k, scaled window ztilde) into the state.

    The Gram matrix gains the outer product of the window; its inverse is
    updated by the rank-one inverse identity; the coefficient moves by the
    prediction residual weighted through the updated inverse.
    """
    y_k = np.asarray(y_k, dtype=float).ravel()
    z = np.asarray(ztilde, dtype=float).ravel()
    if z.shape[0] != state.dim or y_k.shape[0] != state.Gtilde.shape[0]:
        raise ParameterError(
            f"sample dims ({y_k.shape[0]}, {z.shape[0]}) do not match state "
            f"({state.Gtilde.shape[0]}, {state.dim})"
        )
    resid = y_k - state.Gtilde @ z
    Vz = state.Vtilde_inv @ z
    denom = 1.0 + float(z @ Vz)
    state.Vtilde += np.outer(z, z)
    state.Vtilde_inv -= np.outer(Vz, Vz) / denom
    # (V + z z')^{-1} z == V^{-1} z / (1 + z' V^{-1} z)
    w = Vz / denom
    state.Gtilde += np.outer(resid, w)
    state.samples += 1
    state.steps_since_refactor += 1
    if state.steps_since_refactor >= state.refactor_period:
        _refactor_inverse(state)
    return state


def predict(state: RlsState, ztilde: np.ndarray) -> np.ndarray:
    """Linear prediction from the scaled window: Gtilde @ ztilde."""
    return state.Gtilde @ np.asarray(ztilde, dtype=float).ravel()


def window(observations: np.ndarray, k: int, p: int) -> np.ndarray:
    """Stacked past window [y[k-p]; ...; y[k-1]], oldest first."""
    if k < p:
        raise ParameterError(f"window at step {k} needs {p} past observations")
    return observations[k - p : k].ravel()


def regressor_window(
    observations: np.ndarray, k: int, D: ScalingMatrix
) -> RegressorWindow:
    """Window at step k paired with its re-balanced form D z."""
    z = window(observations, k, D.p)
    return RegressorWindow(z=z, ztilde=D.diag * z)


def batch_fit(
    observations: np.ndarray,
    p: int,
    D: ScalingMatrix,
    lam: float,
    refactor_period: int = DEFAULT_REFACTOR_PERIOD,
) -> RlsState:
    """Fit the state over all samples t = p .. k of a recorded history
    y[0..k] by sequential rank-one updates.

    Equals the closed-form ridge solution up to update-path rounding; the
    sequential construction is what keeps long-horizon epoch starts
    numerically stable. With fewer than p + 1 observations the state is
    the fresh prior (zero coefficients, lam * I Gram).
    """
    obs = np.atleast_2d(np.asarray(observations, dtype=float))
    m = obs.shape[1]
    if D.p != p or D.m != m:
        raise ParameterError(
            f"scaling matrix built for (p={D.p}, m={D.m}) does not match "
            f"fit request (p={p}, m={m})"
        )
    state = init_state(m, p, lam, refactor_period)
    for t in range(p, obs.shape[0]):
        rls_update(state, obs[t], regressor_window(obs, t, D).ztilde)
    return state


def _direct_fit(
    observations: np.ndarray,
    p: int,
    D: ScalingMatrix,
    lam: float,
    refactor_period: int,
) -> RlsState:
    """Closed-form fit via one dense inverse of the accumulated Gram.

    Deliberately the naive construction: on long marginally stable
    records the inverse error is amplified by the cross-term magnitude
    and produces visible prediction spikes at epoch starts. Kept as an
    opt-in mode for that comparison; the default path is batch_fit.
    """
    obs = np.atleast_2d(np.asarray(observations, dtype=float))
    m = obs.shape[1]
    d = m * p
    V = lam * np.eye(d)
    S = np.zeros((m, d))
    for t in range(p, obs.shape[0]):
        ztilde = D.diag * window(obs, t, p)
        V += np.outer(ztilde, ztilde)
        S += np.outer(obs[t], ztilde)
    V_inv = np.linalg.inv(V)
    state = init_state(m, p, lam, refactor_period)
    state.Vtilde = V
    state.Vtilde_inv = V_inv
    state.Gtilde = S @ V_inv
    state.samples = max(obs.shape[0] - p, 0)
    return state


def ridge_solution(
    observations: np.ndarray, p: int, D: ScalingMatrix, lam: float
) -> np.ndarray:
    """Generalized-ridge coefficients on raw windows: the minimizer of
    sum ||y_t - G Z_t||^2 + lam ||G D^{-1}||_F^2, computed by one dense
    solve of (lam D^{-2} + sum Z Z') G' = sum Z y'. Test oracle only; the
    online path never forms this system.
    """
    obs = np.atleast_2d(np.asarray(observations, dtype=float))
    m = obs.shape[1]
    d = m * p
    if obs.shape[0] < p + 1:
        raise ParameterError("ridge solution needs at least one sample (k >= p)")
    Vbar = np.diag(lam / D.diag**2)
    S = np.zeros((m, d))
    for t in range(p, obs.shape[0]):
        z = window(obs, t, p)
        Vbar += np.outer(z, z)
        S += np.outer(obs[t], z)
    return np.linalg.solve(Vbar.T, S.T).T


@dataclass(frozen=True)
class OpfRun:
    """Predictions over all scheduled steps plus per-step schedule state.

    predictions[i] is the prediction for step ks[i]; epoch_index and
    horizons record which epoch and past horizon produced it;
    coeff_norms holds the Frobenius norm of the coefficient estimate
    after absorbing step ks[i].
    """

    ks: np.ndarray
    predictions: np.ndarray
    epoch_index: np.ndarray
    horizons: np.ndarray
    coeff_norms: np.ndarray
    schedule: EpochSchedule
    params: OpfParams
    epoch_init: str = "iterative"


class PredictionSession:
    """Streaming driver enforcing the predict/observe alternation.

    Warm-up consumes observations for steps 0 .. T_init through
    observe(); from step T_init + 1 on, each step is one predict() call
    returning the prediction followed by one observe() call with the
    realized observation. Violating the alternation raises UsageError.
    """

    def __init__(self, params: OpfParams, epoch_init: str = "iterative"):
        if epoch_init not in ("iterative", "direct"):
            raise ParameterError(
                f"epoch_init must be 'iterative' or 'direct', got {epoch_init!r}"
            )
        self.params = params
        self.schedule = epoch_schedule(params)
        self.epoch_init = epoch_init
        self._buf: np.ndarray | None = None  # grows geometrically
        self._m: int | None = None
        self._k = 0                   # next step to be resolved
        self._pending_ztilde = None   # set between predict() and observe()
        self._epoch_pos = -1
        self._epoch: Epoch | None = None
        self._state: RlsState | None = None
        self._D: ScalingMatrix | None = None

    @property
    def step(self) -> int:
        return self._k

    @property
    def state(self) -> RlsState | None:
        return self._state

    @property
    def current_epoch(self) -> Epoch | None:
        return self._epoch

    @property
    def history(self) -> np.ndarray:
        if self._buf is None:
            return np.empty((0, 0))
        return self._buf[: self._k]

    def _append(self, y: np.ndarray) -> None:
        if self._buf is None:
            cap = max(self.schedule.required_stream_length, 16)
            self._buf = np.empty((cap, self._m))
        elif self._k >= self._buf.shape[0]:
            grown = np.empty((2 * self._buf.shape[0], self._m))
            grown[: self._k] = self._buf[: self._k]
            self._buf = grown
        self._buf[self._k] = y

    def _enter_epoch(self, epoch: Epoch) -> None:
        obs = self._buf[: self._k]
        self._D = scaling_matrix(epoch.horizon, self.params.gamma, self._m)
        fit = batch_fit if self.epoch_init == "iterative" else _direct_fit
        self._state = fit(
            obs,
            epoch.horizon,
            self._D,
            self.params.lam,
            refactor_period=self.params.refactor_period,
        )
        self._epoch = epoch

    def predict(self) -> np.ndarray:
        if self._pending_ztilde is not None:
            raise UsageError("predict() called twice; observe() expected")
        k = self._k
        if k <= self.params.T_init:
            raise UsageError(
                f"step {k} is inside the warm-up; observe() expected"
            )
        if k > self.schedule.final_step:
            raise UsageError(
                f"schedule exhausted at step {self.schedule.final_step}"
            )
        if self._epoch is None or k > self._epoch.end:
            self._epoch_pos += 1
            self._enter_epoch(self.schedule.epochs[self._epoch_pos])
        win = regressor_window(self._buf[:k], k, self._D)
        self._pending_ztilde = win.ztilde
        return predict(self._state, win.ztilde)

    def observe(self, y: np.ndarray) -> None:
        y = np.asarray(y, dtype=float).ravel()
        if self._m is None:
            self._m = y.shape[0]
        elif y.shape[0] != self._m:
            raise UsageError(
                f"observation dim {y.shape[0]} does not match stream dim {self._m}"
            )
        if self._pending_ztilde is not None:
            rls_update(self._state, y, self._pending_ztilde)
            self._pending_ztilde = None
        elif self._k > self.params.T_init:
            raise UsageError(
                f"observe() at step {self._k} without a preceding predict()"
            )
        self._append(y)
        self._k += 1


def run_opf(
    observations: np.ndarray,
    params: OpfParams,
    epoch_init: str = "iterative",
) -> OpfRun:
    """Run the full online loop over a recorded observation stream.

    Model-free: consumes only the observations and the parameters. The
    stream must cover y[0 .. 2 T_{N_E} - 2].
    """
    obs = np.atleast_2d(np.asarray(observations, dtype=float))
    schedule = epoch_schedule(params)
    if obs.shape[0] < schedule.required_stream_length:
        raise ParameterError(
            f"stream too short: need {schedule.required_stream_length} "
            f"observations, got {obs.shape[0]}"
        )
    session = PredictionSession(params, epoch_init=epoch_init)
    for k in range(params.T_init + 1):
        session.observe(obs[k])
    n_steps = schedule.final_step - schedule.first_step + 1
    ks = np.arange(schedule.first_step, schedule.final_step + 1)
    predictions = np.empty((n_steps, obs.shape[1]))
    epoch_index = np.empty(n_steps, dtype=int)
    horizons = np.empty(n_steps, dtype=int)
    coeff_norms = np.empty(n_steps)
    for i, k in enumerate(ks):
        predictions[i] = session.predict()
        session.observe(obs[k])
        epoch = session.current_epoch
        epoch_index[i] = epoch.index
        horizons[i] = epoch.horizon
        coeff_norms[i] = np.linalg.norm(session.state.Gtilde)
    return OpfRun(
        ks=ks,
        predictions=predictions,
        epoch_index=epoch_index,
        horizons=horizons,
        coeff_norms=coeff_norms,
        schedule=schedule,
        params=params,
        epoch_init=epoch_init,
    )


def run_uniform_forgetting(
    observations: np.ndarray, params: OpfParams, alpha: float
) -> OpfRun:
    """Baseline that down-weights sample t by alpha^{k-t} in the
    least-squares objective, with unscaled windows (D = I).

    The weighted Gram W and cross term S are decayed recursively
    (W <- alpha W + Z Z', S <- alpha S + y Z'); the ridge term lam * I is
    not decayed, so the solved system is lam I + W at every step. The
    epoch structure matches the forgetting-balanced run. alpha = 1 is
    exactly the gamma = 1 run and is delegated to that code path so the
    two produce identical output.
    """
    if not 0.0 < alpha <= 1.0:
        raise ParameterError(f"alpha must be in (0, 1], got {alpha}")
    if alpha == 1.0:
        run = run_opf(observations, replace(params, gamma=1.0))
        return replace(run, params=params)
    obs = np.atleast_2d(np.asarray(observations, dtype=float))
    schedule = epoch_schedule(params)
    if obs.shape[0] < schedule.required_stream_length:
        raise ParameterError(
            f"stream too short: need {schedule.required_stream_length} "
            f"observations, got {obs.shape[0]}"
        )
    m = obs.shape[1]
    lam = params.lam
    ks = np.arange(schedule.first_step, schedule.final_step + 1)
    n_steps = ks.shape[0]
    predictions = np.empty((n_steps, m))
    epoch_index = np.empty(n_steps, dtype=int)
    horizons = np.empty(n_steps, dtype=int)
    coeff_norms = np.empty(n_steps)
    i = 0
    for epoch in schedule.epochs:
        p = epoch.horizon
        d = m * p
        W = np.zeros((d, d))
        S = np.zeros((m, d))
        for t in range(p, epoch.start):
            z = window(obs, t, p)
            W *= alpha
            W += np.outer(z, z)
            S *= alpha
            S += np.outer(obs[t], z)
        for k in range(epoch.start, epoch.end + 1):
            try:
                cf = scipy.linalg.cho_factor(lam * np.eye(d) + W, lower=True)
            except scipy.linalg.LinAlgError as exc:
                raise NumericalError(
                    f"uniform-forgetting Gram factorization failed: {exc}"
                ) from exc
            G = scipy.linalg.cho_solve(cf, S.T).T
            z = window(obs, k, p)
            predictions[i] = G @ z
            W *= alpha
            W += np.outer(z, z)
            S *= alpha
            S += np.outer(obs[k], z)
            epoch_index[i] = epoch.index
            horizons[i] = p
            coeff_norms[i] = np.linalg.norm(G)
            i += 1
    return OpfRun(
        ks=ks,
        predictions=predictions,
        epoch_index=epoch_index,
        horizons=horizons,
        coeff_norms=coeff_norms,
        schedule=schedule,
        params=params,
        epoch_init="iterative",
    )
