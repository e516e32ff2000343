"""NR-NSAF weight update.

The filter keeps the P most recent weight vectors and, at every decimated
iteration k, combines them with geometric weights before a normalised
subband update:

    wbar(k)   = sum_p beta_p w(k-p)
    zeta_i(k) = d_{i,D}(k) - u_i(k)^T wbar(k)
    w(k+1)    = wbar(k) + mu * sum_i zeta_i(k) u_i(k) / (||u_i(k)||^2 + eps)

P = 1 gives NSAF, alpha = 1 gives INSAF (equal reuse weights).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .filterbank import FilterBank, subband_desired, subband_regressors
from .signals import NOISE, INPUT, InputModel, InputStream, RngStream

log = logging.getLogger(__name__)


class AlgoConfigError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


def beta_weights(alpha: float, p_depth: int) -> np.ndarray:
    """beta_p = alpha^p / sum_q alpha^q for p = 0..P-1."""
    if not 0.0 < alpha <= 1.0:
        raise AlgoConfigError(f"alpha must lie in (0, 1], got {alpha}")
    if p_depth < 1:
        raise AlgoConfigError(f"reuse depth P must be >= 1, got {p_depth}")
    powers = alpha ** np.arange(p_depth, dtype=float)
    return powers / powers.sum()


@dataclass(frozen=True)
class AlgoConfig:
    filter_len: int = 16
    n_subbands: int = 8
    reuse_depth: int = 3
    alpha: float = 1.0
    step_size: float = 0.5
    regularizer: float = 1e-3
    # Explicit reuse weights; overrides the geometric ones when given.
    reuse_weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.filter_len < 1 or self.n_subbands < 1:
            raise AlgoConfigError("filter_len and n_subbands must be >= 1")
        if self.reuse_depth < 1:
            raise AlgoConfigError(f"reuse depth P must be >= 1, got {self.reuse_depth}")
        if not 0.0 < self.alpha <= 1.0:
            raise AlgoConfigError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.step_size < 0.0:
            raise AlgoConfigError(f"step size must be nonnegative, got {self.step_size}")
        if self.regularizer < 0.0:
            raise AlgoConfigError(f"regularizer must be nonnegative, got {self.regularizer}")
        if self.reuse_weights is not None and len(self.reuse_weights) != self.reuse_depth:
            raise AlgoConfigError("reuse_weights must have reuse_depth entries")

    @property
    def beta(self) -> np.ndarray:
        if self.reuse_weights is not None:
            return np.asarray(self.reuse_weights, dtype=float)
        return beta_weights(self.alpha, self.reuse_depth)

    def with_(self, **kw) -> "AlgoConfig":
        return replace(self, **kw)


@dataclass(frozen=True)
class AdaptiveState:
    weight_history: np.ndarray  # (P, M); row 0 is w(k)
    input_window: np.ndarray  # (M + L - 1,), newest first
    desired_window: np.ndarray  # (L,), newest first
    iteration: int = 0

    @classmethod
    def zeros(cls, cfg: AlgoConfig, fb: FilterBank) -> "AdaptiveState":
        L = fb.filter_len
        return cls(
            np.zeros((cfg.reuse_depth, cfg.filter_len)),
            np.zeros(cfg.filter_len + L - 1),
            np.zeros(L),
        )

    @property
    def weights(self) -> np.ndarray:
        return self.weight_history[0]


@dataclass(frozen=True)
class StepOutput:
    subband_errors: np.ndarray  # zeta_{i,D}(k)
    decimated_errors: np.ndarray  # e_{i,D}(k)
    new_weights: np.ndarray
    skipped_subbands: int = 0


def _update(hist, U, dD, beta, mu, eps):
    """Shared update kernel.  hist (T, P, M), U (T, M, N), dD (T, N)."""
    wbar = beta[0] * hist[:, 0]
    for p in range(1, beta.size):
        wbar = wbar + beta[p] * hist[:, p]
    zeta = dD - (U * wbar[:, :, None]).sum(axis=1)
    denom = (U * U).sum(axis=1) + eps
    ok = denom > 0.0
    # A zero-norm regressor with eps = 0 has no direction to update along.
    coef = np.divide(zeta, denom, out=np.zeros_like(zeta), where=ok)
    w_new = wbar + mu * (U * coef[:, None, :]).sum(axis=2)
    return w_new, zeta, int(np.count_nonzero(~ok))


def step(state: AdaptiveState, cfg: AlgoConfig, fb: FilterBank,
         new_fullband_inputs, new_desired) -> tuple[AdaptiveState, StepOutput]:
    """Consume N new fullband input/desired samples (oldest first) and update."""
    N = fb.n_subbands
    x_new = np.asarray(new_fullband_inputs, dtype=float)
    d_new = np.asarray(new_desired, dtype=float)
    if x_new.shape != (N,) or d_new.shape != (N,):
        raise ValueError(f"each step needs exactly N={N} input and desired samples")
    if cfg.n_subbands != N:
        raise ValueError(f"config has N={cfg.n_subbands} but filter bank has N={N}")
    if state.weight_history.shape != (cfg.reuse_depth, cfg.filter_len):
        raise ValueError("state history does not match config (P, M)")

    x_win = np.concatenate([x_new[::-1], state.input_window])[: state.input_window.size]
    d_win = np.concatenate([d_new[::-1], state.desired_window])[: state.desired_window.size]
    U = subband_regressors(fb, x_win)
    dD = subband_desired(fb, d_win)
    hist = state.weight_history
    w_new, zeta, skipped = _update(hist[None], U[None], dD[None], cfg.beta,
                                   cfg.step_size, cfg.regularizer)
    w_new = w_new[0]
    if not np.all(np.isfinite(w_new)):
        raise NumericError(f"non-finite weight update at k={state.iteration}")
    e = dD - U.T @ hist[0]
    new_hist = np.concatenate([w_new[None], hist[:-1]], axis=0)
    return (
        AdaptiveState(new_hist, x_win, d_win, state.iteration + 1),
        StepOutput(zeta[0], e, w_new, skipped),
    )


@dataclass
class TrialSet:
    """Per-trial outputs of an ensemble run, rows ordered by trial id."""

    trial_ids: np.ndarray
    sq_deviation: np.ndarray  # (T, n_iters), ||w_o - w(k)||^2 for k = 0..n_iters-1
    final_weights: np.ndarray  # (T, M), w(n_iters)
    weights: np.ndarray | None = None  # (T, n_iters, M) when recorded
    skipped_subbands: int = 0
    diverged: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def msd(self) -> np.ndarray:
        return self.sq_deviation.mean(axis=0)

    def mean_weights(self) -> np.ndarray:
        if self.weights is None:
            raise ValueError("weights were not recorded")
        return self.weights.mean(axis=0)


def simulate(cfg: AlgoConfig, fb: FilterBank, w_o, input_model: InputModel,
             sigma_eta: float, rng: RngStream, n_iters: int,
             trial_ids: Sequence[int] = (0,), *, record_weights: bool = False,
             warm_start: bool = False, chunk: int = 64) -> TrialSet:
    """Run independent trials of system identification in lock step.

    Trial ``t`` draws its input from stream ``(rng.seed, t)`` and its noise
    from a separate purpose of that stream, so any subset or ordering of
    trial ids reproduces the same per-trial results.  Rows of the output
    follow the sorted trial ids.
    """
    w_o = np.asarray(w_o, dtype=float)
    M, N, L = cfg.filter_len, fb.n_subbands, fb.filter_len
    if w_o.shape != (M,):
        raise ValueError(f"w_o has {w_o.size} taps, filter has M={M}")
    if cfg.n_subbands != N:
        raise ValueError(f"config has N={cfg.n_subbands} but filter bank has N={N}")
    ids = np.sort(np.asarray(trial_ids, dtype=int))
    T, P = ids.size, cfg.reuse_depth
    beta = cfg.beta
    mu, eps = cfg.step_size, cfg.regularizer

    inputs = [InputStream(input_model, rng.child(int(t)).generator(INPUT)) for t in ids]
    noises = [rng.child(int(t)).generator(NOISE) for t in ids]

    # Newest-first window products become chronological ones with reversed taps.
    h_rev = np.ascontiguousarray(fb.h_matrix[::-1])
    wo_rev = w_o[::-1].copy()
    x_hist = np.zeros((T, M + L - 2))
    d_hist = np.zeros((T, L - 1))
    if warm_start:
        # Fill the delay lines with signal so the first regressors are stationary.
        n_pre = M + 2 * L
        x_pre = np.stack([s.draw(n_pre) for s in inputs])
        eta_pre = sigma_eta * np.stack([g.standard_normal(n_pre) for g in noises])
        d_pre = sliding_window_view(x_pre, M, axis=1) @ wo_rev + eta_pre[:, M - 1:]
        x_hist = x_pre[:, n_pre - x_hist.shape[1]:]
        d_hist = d_pre[:, d_pre.shape[1] - d_hist.shape[1]:]

    hist = np.zeros((T, P, M))
    sq_dev = np.empty((T, n_iters))
    weights = np.empty((T, n_iters, M)) if record_weights else None
    skipped = 0
    diverged = np.zeros(T, dtype=bool)

    k = 0
    while k < n_iters:
        c = min(chunk, n_iters - k)
        n_new = c * N
        x_new = np.stack([s.draw(n_new) for s in inputs])
        eta = sigma_eta * np.stack([g.standard_normal(n_new) for g in noises])
        x_ext = np.concatenate([x_hist, x_new], axis=1)
        q0 = x_hist.shape[1]
        d_new = sliding_window_view(x_ext[:, q0 - M + 1:], M, axis=1) @ wo_rev + eta
        d_ext = np.concatenate([d_hist, d_new], axis=1)
        s_d = sliding_window_view(d_ext, L, axis=1) @ h_rev  # (T, n_new, N)
        s_u = sliding_window_view(x_ext, L, axis=1) @ h_rev  # (T, M-1+n_new, N)

        for j in range(c):
            s = j * N + N - 1
            r = s + M - 1
            U = s_u[:, r - M + 1: r + 1][:, ::-1]  # (T, M, N)
            err = w_o - hist[:, 0]
            sq_dev[:, k] = (err * err).sum(axis=1)
            if weights is not None:
                weights[:, k] = hist[:, 0]
            w_new, _, sk = _update(hist, U, s_d[:, s], beta, mu, eps)
            skipped += sk
            bad = ~np.all(np.isfinite(w_new), axis=1)
            if bad.any():
                diverged |= bad
                w_new[bad] = np.nan
            hist[:, 1:] = hist[:, :-1]
            hist[:, 0] = w_new
            k += 1

        x_hist = x_ext[:, x_ext.shape[1] - x_hist.shape[1]:]
        d_hist = d_ext[:, d_ext.shape[1] - d_hist.shape[1]:]

    if skipped:
        log.warning("%d subband updates skipped on zero-norm regressors", skipped)
    return TrialSet(ids, sq_dev, hist[:, 0].copy(), weights, skipped, diverged)


def run_trial(cfg: AlgoConfig, fb: FilterBank, w_o, input_model: InputModel,
              sigma_eta: float, rng: RngStream, n_iters: int) -> TrialSet:
    """Single trial with id ``rng.stream_id``; weight trajectory recorded."""
    return simulate(cfg, fb, w_o, input_model, sigma_eta, RngStream(rng.seed),
                    n_iters, trial_ids=(rng.stream_id,), record_weights=True)
