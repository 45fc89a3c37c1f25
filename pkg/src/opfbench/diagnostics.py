"""Regret accounting and model-known error diagnostics.

Regret is the cumulative squared prediction loss of the online predictor
minus that of the steady-state Kalman predictor. Each record also splits
the regret into the accumulated gap between the two predictors and a
martingale cross term with the innovations; the split is an algebraic
identity and is asserted on every run.

The decomposition utilities reconstruct, per epoch, the three factors
that bound the gap (regularization, regression, bias) together with the
per-step accumulation increments, all computed against the raw-window
Gram matrix Vbar = lam * D^{-2} + sum Z Z'. These diagnostics consume
ground-truth filter quantities and never feed back into the model-free
predictor.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NumericalError, ParameterError
from .kalman import FilterOutput, MarkovParams, SteadyFilter, markov_params
from .opf import Epoch, EpochSchedule, ScalingMatrix, scaling_matrix
from .sysmodel import SystemModel

REGRET_IDENTITY_TOL = 1e-8
WHITENESS_LAGS = (1, 2, 3, 4, 5)


# ---------------------------------------------------------------------------
# regret record

@dataclass(frozen=True)
class RegretRecord:
    """Per-step losses and cumulative regret diagnostics.

    cum_regret[i] = sum of (online - kalman) losses through ks[i];
    cum_gap accumulates ||yhat - ytilde||^2 and cum_martingale
    accumulates e'(yhat - ytilde), so cum_regret equals
    cum_gap + 2 cum_martingale up to rounding.
    """

    ks: np.ndarray
    online_loss: np.ndarray
    kalman_loss: np.ndarray
    cum_regret: np.ndarray
    cum_gap: np.ndarray
    cum_martingale: np.ndarray

    @property
    def final_regret(self) -> float:
        return float(self.cum_regret[-1])

    def identity_defect(self) -> float:
        """Largest relative violation of the regret split identity."""
        lhs = self.cum_regret
        rhs = self.cum_gap + 2.0 * self.cum_martingale
        scale = max(
            1.0,
            float(np.max(np.cumsum(self.online_loss))),
            float(np.max(np.cumsum(self.kalman_loss))),
        )
        return float(np.max(np.abs(lhs - rhs))) / scale

    def assert_identity(self, tol: float = REGRET_IDENTITY_TOL) -> None:
        defect = self.identity_defect()
        if not defect <= tol:
            raise NumericalError(
                f"regret split identity violated: defect {defect:.3e} > {tol:.1e}"
            )


def regret_series(
    y: np.ndarray,
    y_online: np.ndarray,
    y_kalman: np.ndarray,
    ks: np.ndarray | None = None,
) -> RegretRecord:
    """Build the regret record from aligned series over the prediction steps.

    All three arrays must cover the same steps, starting at the first
    online prediction.
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    y_online = np.atleast_2d(np.asarray(y_online, dtype=float))
    y_kalman = np.atleast_2d(np.asarray(y_kalman, dtype=float))
    if not (y.shape == y_online.shape == y_kalman.shape):
        raise ParameterError(
            f"length mismatch: y {y.shape}, online {y_online.shape}, "
            f"kalman {y_kalman.shape}"
        )
    if ks is None:
        ks = np.arange(1, y.shape[0] + 1)
    online_loss = np.sum((y - y_online) ** 2, axis=1)
    kalman_loss = np.sum((y - y_kalman) ** 2, axis=1)
    gap = y_kalman - y_online
    innov = y - y_kalman
    cum_regret = np.cumsum(online_loss - kalman_loss)
    cum_gap = np.cumsum(np.sum(gap**2, axis=1))
    cum_martingale = np.cumsum(np.sum(innov * gap, axis=1))
    return RegretRecord(
        ks=np.asarray(ks),
        online_loss=online_loss,
        kalman_loss=kalman_loss,
        cum_regret=cum_regret,
        cum_gap=cum_gap,
        cum_martingale=cum_martingale,
    )


def regret_order_ratio(
    record: RegretRecord, orders: list[int], ks: list[int] | None = None
) -> dict[int, np.ndarray]:
    """Regret divided by ln^i(k) at the requested steps (default: all)."""
    if ks is None:
        sel = np.arange(len(record.ks))
    else:
        sel = np.searchsorted(record.ks, np.asarray(ks))
    k_vals = record.ks[sel].astype(float)
    if np.any(k_vals <= math.e):
        raise ParameterError("order ratios need steps k > e so logs are positive")
    logs = np.log(k_vals)
    out = {}
    for i in orders:
        out[i] = record.cum_regret[sel] / logs**i
    return out


# ---------------------------------------------------------------------------
# windows and persistent excitation

def regressor_windows(observations: np.ndarray, p: int) -> np.ndarray:
    """All stacked windows: row j is [y[j]; ...; y[j+p-1]], the regressor
    used at step k = j + p (oldest observation first)."""
    obs = np.atleast_2d(np.asarray(observations, dtype=float))
    if obs.shape[0] < p:
        raise ParameterError(
            f"need at least {p} observations for windows, got {obs.shape[0]}"
        )
    sw = np.lib.stride_tricks.sliding_window_view(obs, (p, obs.shape[1]))
    return sw.reshape(sw.shape[0], -1)


def persistent_excitation_check(
    observations: np.ndarray,
    p: int,
    sigma_R: float,
    ks: list[int],
) -> np.ndarray:
    """Margin of the excitation bound at each requested step.

    Returns lambda_min(sum_{l=p..k} Z_l Z_l') / (sigma_R k / 4); values
    at or above one mean the linear-growth bound on the Gram matrix
    holds empirically at that step.
    """
    if sigma_R <= 0:
        raise ParameterError(f"sigma_R must be > 0, got {sigma_R}")
    W = regressor_windows(observations, p)
    ratios = np.empty(len(ks))
    for i, k in enumerate(ks):
        cols = W[: k - p + 1]
        if cols.shape[0] < 1:
            raise ParameterError(f"step {k} has no windows for p = {p}")
        gram = cols.T @ cols
        lam_min = float(np.linalg.eigvalsh(0.5 * (gram + gram.T))[0])
        ratios[i] = lam_min / (sigma_R * k / 4.0)
    return ratios


# ---------------------------------------------------------------------------
# whiteness

@dataclass(frozen=True)
class WhitenessReport:
    lags: tuple[int, ...]
    ratios: np.ndarray   # ||Chat_tau||_F / ||Chat_0||_F
    threshold: float     # 4 / sqrt(samples), a ~4-sigma heuristic
    samples: int

    @property
    def passed(self) -> bool:
        return bool(np.all(self.ratios < self.threshold))


def whiteness_check(
    innovations: np.ndarray, lags: tuple[int, ...] = WHITENESS_LAGS
) -> WhitenessReport:
    """Lag autocovariances of a zero-mean series, normalized by lag zero.

    No mean subtraction: the series is zero-mean under the hypothesis,
    and a constant series then reports ratio one at every lag (maximal
    failure) instead of a degenerate 0/0.
    """
    e = np.atleast_2d(np.asarray(innovations, dtype=float))
    K = e.shape[0]
    if K <= max(lags):
        raise ParameterError(f"need more than {max(lags)} samples, got {K}")
    c0 = (e.T @ e) / K
    n0 = float(np.linalg.norm(c0, ord="fro"))
    ratios = np.empty(len(lags))
    for i, tau in enumerate(lags):
        c_tau = (e[:-tau].T @ e[tau:]) / (K - tau)
        ratios[i] = np.linalg.norm(c_tau, ord="fro") / max(n0, np.finfo(float).tiny)
    return WhitenessReport(
        lags=tuple(lags), ratios=ratios, threshold=4.0 / math.sqrt(K), samples=K
    )


# ---------------------------------------------------------------------------
# truncation bias

def truncation_bias(
    model: SystemModel,
    filt: SteadyFilter,
    filter_output: FilterOutput,
    p: int,
) -> np.ndarray:
    """Residual left after truncating the predictor to p lags:
    b[k] = C (A - L C)^p xhat[k - p], returned for k = p .. N (row j is
    step k = p + j)."""
    A_closed = filt.closed_loop(model)
    Bmat = model.C @ np.linalg.matrix_power(A_closed, p)
    xhat = filter_output.states
    return xhat[: xhat.shape[0] - p] @ Bmat.T


# ---------------------------------------------------------------------------
# error decomposition

@dataclass(frozen=True)
class DecompositionInputs:
    """Stacked per-epoch series: columns l = p .. k of biases, innovations
    and raw windows, the final Gram Vbar = lam D^{-2} + Zbar Zbar', and
    the cross term S = sum y Z'."""

    B: np.ndarray       # (m, S)
    E: np.ndarray       # (m, S)
    Zbar: np.ndarray    # (m p, S)
    Vbar: np.ndarray    # (m p, m p)
    S_cross: np.ndarray  # (m, m p)

    def __post_init__(self):
        if not (self.B.shape[1] == self.E.shape[1] == self.Zbar.shape[1]):
            raise ParameterError(
                "column counts of B, E, Zbar must agree, got "
                f"{self.B.shape[1]}, {self.E.shape[1]}, {self.Zbar.shape[1]}"
            )


@dataclass(frozen=True)
class DecompositionReport:
    """Factor values at the final step of one epoch plus the per-step
    accumulation increments across its prediction steps.

    accum_prior[i] uses the Gram accumulated through the previous step
    (the form that multiplies the factor bound); accum_post[i] includes
    the current window and satisfies accum_post = prior / (1 + prior),
    hence lies in [0, 1].
    """

    reg_factor: float
    regress_factor: float
    bias_factor: float
    accum_prior: np.ndarray
    accum_post: np.ndarray
    logdet_Vtilde: float
    trace_term: float

    @property
    def accum_sum(self) -> float:
        return float(np.sum(self.accum_prior))


def _spd_factor(M: np.ndarray):
    try:
        return scipy.linalg.cho_factor(
            0.5 * (M + M.T), lower=True, check_finite=False
        )
    except scipy.linalg.LinAlgError as exc:
        raise NumericalError(f"SPD factorization failed: {exc}") from exc


def _spd_solve(cf, B: np.ndarray) -> np.ndarray:
    return scipy.linalg.cho_solve(cf, B, check_finite=False)


def _max_eig_quadratic(X: np.ndarray, cf) -> float:
    """||X Vbar^{-1/2}||_2^2 = lambda_max(X Vbar^{-1} X') via solves."""
    W = X @ _spd_solve(cf, X.T)
    return float(max(np.linalg.eigvalsh(0.5 * (W + W.T))[-1], 0.0))


def error_decomposition(
    inputs: DecompositionInputs,
    G_p: MarkovParams | np.ndarray,
    D: ScalingMatrix,
    lam: float,
    accum_from: int = 0,
) -> DecompositionReport:
    """Factor report for one epoch.

    Returns the regularization factor ||lam G D^{-2} Vbar^{-1/2}||_2^2,
    the regression factor ||E Zbar' Vbar^{-1/2}||_2^2, the bias factor
    ||B Zbar' Vbar^{-1/2}||_2^2, and the accumulation increments for the
    columns from `accum_from` on (the first prediction step). All
    Vbar^{-1/2} norms are computed through factorization solves.
    """
    G_flat = G_p.flat() if isinstance(G_p, MarkovParams) else np.asarray(G_p)
    d2 = D.diag**2
    cf = _spd_factor(inputs.Vbar)
    reg_factor = _max_eig_quadratic(lam * G_flat / d2, cf)
    regress_factor = _max_eig_quadratic(inputs.E @ inputs.Zbar.T, cf)
    bias_factor = _max_eig_quadratic(inputs.B @ inputs.Zbar.T, cf)

    logdet_Vbar = 2.0 * float(np.sum(np.log(np.diag(cf[0]))))
    logdet_Vtilde = logdet_Vbar + 2.0 * float(np.sum(np.log(D.diag)))
    trace_term = float(np.sum(inputs.Zbar * _spd_solve(cf, inputs.Zbar)))

    S = inputs.Zbar.shape[1]
    V = np.diag(lam / d2)
    # replay the first accum_from columns without recording increments
    head = inputs.Zbar[:, :accum_from]
    if head.shape[1]:
        V = V + head @ head.T
    prior = np.empty(S - accum_from)
    for i, j in enumerate(range(accum_from, S)):
        z = inputs.Zbar[:, j]
        cf_step = _spd_factor(V)
        prior[i] = float(z @ _spd_solve(cf_step, z))
        V += np.outer(z, z)
    post = prior / (1.0 + prior)
    return DecompositionReport(
        reg_factor=reg_factor,
        regress_factor=regress_factor,
        bias_factor=bias_factor,
        accum_prior=prior,
        accum_post=post,
        logdet_Vtilde=logdet_Vtilde,
        trace_term=trace_term,
    )


@dataclass(frozen=True)
class GapTerms:
    """Per-step reconstruction of the predictor gap from its three parts:
    ytilde - yhat = bias_term + regression_term - regularization_term."""

    ks: np.ndarray
    bias_term: np.ndarray
    regression_term: np.ndarray
    regularization_term: np.ndarray

    def reconstructed_gap(self) -> np.ndarray:
        return self.bias_term + self.regression_term - self.regularization_term


@dataclass(frozen=True)
class EpochDecomposition:
    epoch: Epoch
    report: DecompositionReport
    mean_bias_norm: float
    mean_cancel_norm: float


@dataclass(frozen=True)
class DecompositionSeries:
    """Per-epoch reports with accumulation sums concatenated across the
    changing past horizons."""

    epochs: tuple[EpochDecomposition, ...]
    gap_terms: GapTerms | None = None

    def accum_sums_at_epoch_ends(self) -> np.ndarray:
        return np.cumsum([e.report.accum_sum for e in self.epochs])


def decomposition_series(
    model: SystemModel,
    filt: SteadyFilter,
    filter_output: FilterOutput,
    observations: np.ndarray,
    schedule: EpochSchedule,
    gamma: float,
    lam: float,
    collect_gap_terms: bool = False,
) -> DecompositionSeries:
    """Walk the epochs of a run and compute the full factor diagnostics.

    For each epoch: absorbs the pre-epoch samples, then walks the
    prediction steps maintaining the cross terms E Zbar', B Zbar' and the
    window Gram, recording accumulation increments and the cancelled
    bias series. One factorization per prediction step.
    """
    obs = np.atleast_2d(np.asarray(observations, dtype=float))
    m = obs.shape[1]
    e_all = filter_output.innovations
    epochs = []
    all_gap_ks: list[int] = []
    gap_bias: list[np.ndarray] = []
    gap_regress: list[np.ndarray] = []
    gap_reg: list[np.ndarray] = []
    for epoch in schedule.epochs:
        p = epoch.horizon
        D = scaling_matrix(p, gamma, m)
        d2 = D.diag**2
        G_flat = markov_params(model, filt, p).flat()
        bias_seq = truncation_bias(model, filt, filter_output, p)  # row j: k=p+j
        Wins = regressor_windows(obs[: epoch.end], p)  # row j: window for k=p+j
        S_cols = epoch.end - p + 1  # samples l = p .. epoch.end
        Zbar = Wins[:S_cols].T
        E = e_all[p : epoch.end + 1].T
        B = bias_seq[:S_cols].T

        V = np.diag(lam / d2)
        SE = np.zeros((m, p * m))
        SB = np.zeros((m, p * m))
        pred_start = epoch.start - p  # first prediction column index
        for j in range(pred_start):
            z = Zbar[:, j]
            V += np.outer(z, z)
            SE += np.outer(E[:, j], z)
            SB += np.outer(B[:, j], z)
        prior = np.empty(epoch.steps)
        cancel_norms = np.empty(epoch.steps)
        bias_norms = np.empty(epoch.steps)
        for i, j in enumerate(range(pred_start, S_cols)):
            z = Zbar[:, j]
            cf_step = _spd_factor(V)
            u = _spd_solve(cf_step, z)
            prior[i] = float(z @ u)
            b_k = B[:, j]
            cancelled = SB @ u - b_k
            bias_norms[i] = np.linalg.norm(b_k)
            cancel_norms[i] = np.linalg.norm(cancelled)
            if collect_gap_terms:
                all_gap_ks.append(p + j)
                gap_bias.append(cancelled)
                gap_regress.append(SE @ u)
                gap_reg.append(lam * (G_flat / d2) @ u)
            V += np.outer(z, z)
            SE += np.outer(E[:, j], z)
            SB += np.outer(B[:, j], z)

        cf = _spd_factor(V)
        reg_factor = _max_eig_quadratic(lam * G_flat / d2, cf)
        regress_factor = _max_eig_quadratic(SE, cf)
        bias_factor = _max_eig_quadratic(SB, cf)
        logdet_Vtilde = 2.0 * float(np.sum(np.log(np.diag(cf[0])))) + 2.0 * float(
            np.sum(np.log(D.diag))
        )
        trace_term = float(np.sum(Zbar * _spd_solve(cf, Zbar)))
        report = DecompositionReport(
            reg_factor=reg_factor,
            regress_factor=regress_factor,
            bias_factor=bias_factor,
            accum_prior=prior,
            accum_post=prior / (1.0 + prior),
            logdet_Vtilde=logdet_Vtilde,
            trace_term=trace_term,
        )
        epochs.append(
            EpochDecomposition(
                epoch=epoch,
                report=report,
                mean_bias_norm=float(np.mean(bias_norms)),
                mean_cancel_norm=float(np.mean(cancel_norms)),
            )
        )
    gap_terms = None
    if collect_gap_terms:
        gap_terms = GapTerms(
            ks=np.asarray(all_gap_ks),
            bias_term=np.asarray(gap_bias),
            regression_term=np.asarray(gap_regress),
            regularization_term=np.asarray(gap_reg),
        )
    return DecompositionSeries(epochs=tuple(epochs), gap_terms=gap_terms)


# ---------------------------------------------------------------------------
# spike detection for epoch-boundary stability comparisons

def loss_spike_ratios(
    ks: np.ndarray,
    losses: np.ndarray,
    boundaries: list[int],
    window: int = 50,
    probe: int = 5,
) -> np.ndarray:
    """Ratio of the worst loss just after each boundary to the trailing
    median before it.

    For each boundary step b with at least `window` preceding steps, the
    ratio is max(loss[b .. b+probe-1]) / median(loss[b-window .. b-1]).
    Boundaries without enough history are skipped.
    """
    ks = np.asarray(ks)
    losses = np.asarray(losses)
    ratios = []
    for b in boundaries:
        idx = np.searchsorted(ks, b)
        if idx < window or idx >= len(losses):
            continue
        trailing = float(np.median(losses[idx - window : idx]))
        peak = float(np.max(losses[idx : idx + probe]))
        ratios.append(peak / max(trailing, np.finfo(float).tiny))
    return np.asarray(ratios)
