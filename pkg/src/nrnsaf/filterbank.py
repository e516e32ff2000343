"""Cosine-modulated analysis filter banks and the subband matrix relations.

The subband regressor matrix is ``U_D(k) = U(k) H`` where column ``l`` of
``U(k)`` is the length-M input vector delayed by ``l`` samples, and the
decimated desired vector is ``d_D(k) = H^T d(k)``.  Windows are always
passed newest sample first.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize
import scipy.signal
from numpy.lib.stride_tricks import sliding_window_view

log = logging.getLogger(__name__)

STOPBAND_DB = 60.0
RIPPLE_GRID = 512


class FilterBankConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FilterBank:
    n_subbands: int
    filter_len: int
    prototype: np.ndarray
    cutoff: float
    filters: np.ndarray = field(repr=False)  # (N, L), row i is h_i

    @property
    def h_matrix(self) -> np.ndarray:
        """L x N matrix whose i-th column is h_i."""
        return self.filters.T

    def fingerprint(self) -> str:
        return hashlib.sha256(self.filters.tobytes()).hexdigest()[:16]

    def power_complementarity_residual(self, n_grid: int = RIPPLE_GRID) -> float:
        """max over [0, pi) of |sum_i |H_i(w)|^2 - 1|."""
        return _ripple(self.filters, n_grid)


def _ripple(filters: np.ndarray, n_grid: int = RIPPLE_GRID) -> float:
    spectrum = np.fft.fft(filters, 2 * n_grid, axis=1)[:, :n_grid]
    return float(np.abs((np.abs(spectrum) ** 2).sum(axis=0) - 1.0).max())


def kaiser_prototype(filter_len: int, cutoff: float, stopband_db: float = STOPBAND_DB) -> np.ndarray:
    """Linear-phase Kaiser-windowed sinc lowpass with cutoff in rad/sample."""
    beta = scipy.signal.kaiser_beta(stopband_db)
    n = np.arange(filter_len) - (filter_len - 1) / 2
    return cutoff / np.pi * np.sinc(cutoff * n / np.pi) * np.kaiser(filter_len, beta)


def modulate(prototype: np.ndarray, n_subbands: int) -> np.ndarray:
    """h_i(l) = 2 p(l) cos((pi/N)(i + 1/2)(l - (L-1)/2) + (-1)^i pi/4), normalised."""
    L = prototype.size
    i = np.arange(n_subbands)[:, None]
    l = np.arange(L)[None, :]
    phase = np.pi / n_subbands * (i + 0.5) * (l - (L - 1) / 2) + (-1.0) ** i * np.pi / 4
    h = 2.0 * prototype * np.cos(phase)
    return h / np.sqrt(np.sum(h**2))


def design_cmfb(n_subbands: int, filter_len: int) -> FilterBank:
    """Design an N-band cosine-modulated analysis bank with length-L filters.

    The prototype is a Kaiser-windowed sinc (~60 dB stopband).  Its cutoff
    is tuned around pi/(2N) to minimise the power-complementarity ripple;
    the search is a bounded scalar minimisation and fully deterministic.
    The bank is scaled so that sum_i ||h_i||^2 = 1.
    """
    if n_subbands < 1 or filter_len < 1:
        raise FilterBankConfigError("n_subbands and filter_len must be positive")
    if filter_len % (2 * n_subbands):
        raise FilterBankConfigError(
            f"filter_len={filter_len} must be a multiple of 2*n_subbands={2 * n_subbands}"
        )
    nominal = np.pi / (2 * n_subbands)

    def ripple_at(cutoff: float) -> float:
        return _ripple(modulate(kaiser_prototype(filter_len, cutoff), n_subbands))

    if n_subbands == 1:
        cutoff = np.pi
    else:
        res = scipy.optimize.minimize_scalar(
            ripple_at, bounds=(0.5 * nominal, 2.0 * nominal), method="bounded",
            options={"xatol": 1e-10},
        )
        cutoff = float(res.x)

    proto = kaiser_prototype(filter_len, cutoff)
    # Symmetric by construction; remove rounding asymmetry.
    proto = 0.5 * (proto + proto[::-1])
    filters = modulate(proto, n_subbands)
    proto.setflags(write=False)
    filters.setflags(write=False)
    fb = FilterBank(n_subbands, filter_len, proto, cutoff, filters)
    log.info(
        "designed %d-band CMFB, L=%d, cutoff=%.4f*pi/(2N), ripple=%.3g",
        n_subbands, filter_len, cutoff / nominal, fb.power_complementarity_residual(),
    )
    return fb


def from_filters(filters) -> FilterBank:
    """Wrap explicit analysis filters (rows) without normalising them."""
    filters = np.array(filters, dtype=float, ndmin=2)
    filters.setflags(write=False)
    n, L = filters.shape
    return FilterBank(n, L, filters[0].copy(), float("nan"), filters)


def regressor_length(fb: FilterBank, m: int) -> int:
    return m + fb.filter_len - 1


def subband_regressors(fb: FilterBank, fullband_window) -> np.ndarray:
    """U_D(k) = U(k) H from the newest-first window of M+L-1 input samples.

    Returns the M x N matrix whose column i is u_i(k).  Leading axes of
    ``fullband_window`` are treated as a batch.
    """
    window = np.asarray(fullband_window, dtype=float)
    L = fb.filter_len
    m = window.shape[-1] - L + 1
    if m < 1:
        raise ValueError(f"window length {window.shape[-1]} is shorter than L={L}")
    # U[..., j, l] = window[..., j + l]
    u = sliding_window_view(window, L, axis=-1)
    return u @ fb.h_matrix


def subband_desired(fb: FilterBank, desired_window) -> np.ndarray:
    """d_D(k) = H^T d(k) from the newest-first window of L desired samples."""
    window = np.asarray(desired_window, dtype=float)
    if window.shape[-1] != fb.filter_len:
        raise ValueError(f"desired window must have length L={fb.filter_len}")
    return window @ fb.h_matrix


def analysis(fb: FilterBank, x: np.ndarray) -> np.ndarray:
    """Streaming analysis filtering with zero initial state; shape (..., N, n)."""
    x = np.asarray(x, dtype=float)
    return np.stack(
        [scipy.signal.lfilter(h, [1.0], x, axis=-1) for h in fb.filters], axis=-2
    )


def to_csv_rows(fb: FilterBank):
    for i, h in enumerate(fb.filters):
        for l, value in enumerate(h):
            yield i, l, float(value)
