import numpy as np
import pytest
import scipy.signal
from hypothesis import given, settings
from hypothesis import strategies as st

from nrnsaf import filterbank as fbm
from nrnsaf.filterbank import design_cmfb, from_filters, subband_desired, subband_regressors


@pytest.mark.parametrize("n, L", [(8, 64), (4, 32), (2, 8), (1, 2), (8, 128)])
def test_design_invariants(n, L):
    fb = design_cmfb(n, L)
    assert fb.filters.shape == (n, L)
    assert fb.h_matrix.shape == (L, n)
    np.testing.assert_array_equal(fb.prototype, fb.prototype[::-1])
    assert abs((fb.filters**2).sum() - 1.0) <= 1e-10


def test_design_matches_modulation_formula(bank8):
    n, L, p = bank8.n_subbands, bank8.filter_len, bank8.prototype
    l = np.arange(L)
    raw = np.stack([
        2 * p * np.cos(np.pi / n * (i + 0.5) * (l - (L - 1) / 2) + (-1) ** i * np.pi / 4)
        for i in range(n)
    ])
    scale = bank8.filters[0, L // 2] / raw[0, L // 2]
    np.testing.assert_allclose(bank8.filters, scale * raw, rtol=0, atol=1e-15)


def test_design_is_deterministic():
    assert design_cmfb(8, 64).fingerprint() == design_cmfb(8, 64).fingerprint()
    np.testing.assert_array_equal(design_cmfb(4, 32).filters, design_cmfb(4, 32).filters)


@pytest.mark.parametrize("n, L", [(8, 63), (8, 72), (4, 0), (0, 8)])
def test_design_rejects_bad_lengths(n, L):
    with pytest.raises(fbm.FilterBankConfigError):
        design_cmfb(n, L)


def test_single_band_is_a_delta():
    fb = design_cmfb(1, 2)
    np.testing.assert_allclose(fb.filters, [[1.0, 0.0]], atol=1e-15)


@pytest.mark.parametrize("n, L", [(8, 64), (4, 32)])
def test_power_complementarity_diagnostic(n, L):
    assert design_cmfb(n, L).power_complementarity_residual() <= 0.1


def test_near_paraunitary_norms(bank8):
    norms = (bank8.filters**2).sum(axis=1)
    assert np.max(np.abs(norms - 1 / 8)) <= 0.01


def test_regressors_passthrough():
    fb = design_cmfb(1, 2)
    window = np.arange(6.0)[::-1]  # M = 5, newest first
    U = subband_regressors(fb, window)
    np.testing.assert_allclose(U[:, 0], window[:5], atol=1e-15)
    np.testing.assert_allclose(subband_desired(fb, [3.0, 7.0]), [3.0], atol=1e-15)


def test_zero_windows(bank8):
    assert not subband_regressors(bank8, np.zeros(16 + 63)).any()
    assert not subband_desired(bank8, np.zeros(64)).any()


def test_window_length_errors(bank8):
    with pytest.raises(ValueError):
        subband_regressors(bank8, np.zeros(10))
    with pytest.raises(ValueError):
        subband_desired(bank8, np.zeros(63))


def _oracle_columns(fb, x, t, m):
    """u_i at time t from direct convolution of the full stream."""
    out = np.empty((m, fb.n_subbands))
    for i, h in enumerate(fb.filters):
        s = np.convolve(x, h)[: x.size]
        out[:, i] = s[t - np.arange(m)]
    return out


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([(8, 64), (4, 32), (2, 16)]), st.integers(1, 20))
def test_regressors_match_convolution(seed, bank, m):
    fb = design_cmfb(*bank)
    x = np.random.default_rng(seed).standard_normal(300)
    t = 299
    window = x[t - (m + fb.filter_len - 1) + 1: t + 1][::-1]
    U = subband_regressors(fb, window)
    np.testing.assert_allclose(U, _oracle_columns(fb, x, t, m), rtol=0, atol=1e-12)
    d = subband_desired(fb, x[t - fb.filter_len + 1: t + 1][::-1])
    ref = [np.convolve(x, h)[t] for h in fb.filters]
    np.testing.assert_allclose(d, ref, rtol=0, atol=1e-12)


def test_matrix_form_equals_streaming_decimation(bank8, rng):
    # 10^4-sample run: streaming analysis then N-fold decimation against the
    # matrix relations evaluated on sliding windows
    fb, m = bank8, 16
    N, L = fb.n_subbands, fb.filter_len
    x = rng.standard_normal(10_000)
    d = rng.standard_normal(10_000)
    sx = fbm.analysis(fb, x)
    sd = fbm.analysis(fb, d)
    xp = np.concatenate([np.zeros(m + L), x])
    dp = np.concatenate([np.zeros(L), d])
    worst = 0.0
    for k in range(10_000 // N):
        t = k * N + N - 1
        U = subband_regressors(fb, xp[t + m + L - (m + L - 1) + 1: t + m + L + 1][::-1])
        dD = subband_desired(fb, dp[t + 1: t + L + 1][::-1])
        lags = t - np.arange(m)
        ref_u = np.where(lags[:, None] >= 0, sx[:, np.maximum(lags, 0)].T, 0.0)
        worst = max(worst, np.abs(U - ref_u).max(), np.abs(dD - sd[:, t]).max())
    assert worst <= 1e-10


def test_from_filters_and_csv():
    fb = from_filters([[1.0, 0.5], [0.0, 2.0]])
    assert fb.n_subbands == 2 and fb.filter_len == 2
    assert list(fbm.to_csv_rows(fb))[1] == (0, 1, 0.5)
    with pytest.raises(ValueError):
        fb.filters[0, 0] = 3.0


def test_lfilter_is_convolution(bank4, rng):
    x = rng.standard_normal(200)
    np.testing.assert_allclose(fbm.analysis(bank4, x)[2], scipy.signal.convolve(x, bank4.filters[2])[:200],
                               atol=1e-12)
