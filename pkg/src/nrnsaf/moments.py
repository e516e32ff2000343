"""Monte-Carlo estimates of the regressor statistics used by the theory.

For each decimated instant k the subband regressors U_D(k) give

    Lam(k) = eps I_N + diag(U_D^T U_D)
    A(k)   = U_D Lam^-1 U_D^T
    K(k)   = U_D Lam^-1 H^T H Lam^-1 U_D^T        (noise kernel)

and the estimator averages A, kron(A, A) and K over a long run of one
continuous input stream.  K is normalised by the noise variance, so
E{b b^T} = sigma_eta^2 * rb.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Literal

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .filterbank import FilterBank
from .signals import MOMENTS, InputModel, InputStream, RngStream

log = logging.getLogger(__name__)

NoiseTerm = Literal["full", "diagonal"]
DEFAULT_SAMPLES = 10_000


@dataclass(frozen=True)
class MomentSet:
    ea: np.ndarray  # (M, M)   E{A}
    eaa: np.ndarray  # (M^2, M^2)   E{A kron A}
    rb: np.ndarray  # (M, M)   E{b b^T} / sigma_eta^2
    sample_count: int
    m: int
    n_subbands: int
    eps: float
    noise_term: str = "full"
    skipped: int = 0
    key: str = ""

    def embedded_ea(self, p_depth: int) -> np.ndarray:
        """E{A} placed in the top-left block of an MP x MP zero matrix."""
        out = np.zeros((self.m * p_depth, self.m * p_depth))
        out[: self.m, : self.m] = self.ea
        return out


def moment_key(fb: FilterBank, input_model: InputModel, eps: float, m: int,
               samples: int, seed: int, noise_term: NoiseTerm = "full") -> str:
    payload = json.dumps(
        {"fb": fb.fingerprint(), "input": asdict(input_model), "eps": eps, "m": m,
         "samples": samples, "seed": seed, "noise_term": noise_term},
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:20]


def _symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def _kron_sum(a: np.ndarray) -> np.ndarray:
    """sum_s kron(a_s, a_s) for a stack a of shape (S, M, M)."""
    S, M, _ = a.shape
    flat = a.reshape(S, M * M)  # index (i, j) -> i*M + j
    g = flat.T @ flat  # [(i,j), (k,l)] = sum a_ij a_kl
    return g.reshape(M, M, M, M).transpose(0, 2, 1, 3).reshape(M * M, M * M)


def estimate_moments(fb: FilterBank, input_model: InputModel, eps: float, m: int,
                     samples: int = DEFAULT_SAMPLES, rng: RngStream | None = None,
                     *, noise_term: NoiseTerm = "full", chunk: int = 1000) -> MomentSet:
    """Ensemble-average A, kron(A, A) and the noise kernel over ``samples`` instants.

    Instants are consecutive decimated times of one input stream after a
    burn-in of M + L samples; chunks are reduced in a fixed order.
    """
    if samples < 100:
        raise ValueError("need at least 100 samples")
    if noise_term not in ("full", "diagonal"):
        raise ValueError(f"unknown noise term variant {noise_term!r}")
    rng = rng or RngStream(0)
    N, L = fb.n_subbands, fb.filter_len
    H = fb.h_matrix
    h_rev = np.ascontiguousarray(H[::-1])
    hth = H.T @ H
    h_norms = np.diag(hth).copy()
    stream = InputStream(input_model, rng.generator(MOMENTS))
    burn = m + L

    history = stream.draw(burn)
    ea = np.zeros((m, m))
    eaa = np.zeros((m * m, m * m))
    rb = np.zeros((m, m))
    used = skipped = 0
    done = 0
    while done < samples:
        c = min(chunk, samples - done)
        x_ext = np.concatenate([history, stream.draw(c * N)])
        # subband signal at every position with a full filter window
        s_u = sliding_window_view(x_ext, L) @ h_rev  # (len - L + 1, N)
        # newest sample of instant j sits at x_ext index burn + j*N + N - 1
        newest = burn + np.arange(c) * N + N - 1 - (L - 1)
        idx = newest[:, None] - np.arange(m)[None, :]
        U = s_u[idx]  # (c, M, N)
        lam = (U * U).sum(axis=1) + eps  # (c, N)
        good = np.all(lam > 0.0, axis=1)
        skipped += int(np.count_nonzero(~good))
        U, lam = U[good], lam[good]
        V = U / lam[:, None, :]  # U_D Lam^-1
        A = V @ U.transpose(0, 2, 1)
        A = 0.5 * (A + A.transpose(0, 2, 1))
        ea += A.sum(axis=0)
        eaa += _kron_sum(A)
        if noise_term == "full":
            rb += np.einsum("sin,nk,sjk->ij", V, hth, V)
        else:
            rb += np.einsum("sin,n,sjn->ij", V, h_norms, V)
        used += U.shape[0]
        done += c
        history = x_ext[-burn:]

    if skipped:
        log.warning("skipped %d instants with a zero normaliser", skipped)
    ms = MomentSet(
        ea=_symmetrize(ea / used),
        eaa=_symmetrize(eaa / used),
        rb=_symmetrize(rb / used),
        sample_count=used,
        m=m,
        n_subbands=N,
        eps=eps,
        noise_term=noise_term,
        skipped=skipped,
        key=moment_key(fb, input_model, eps, m, samples, rng.seed, noise_term),
    )
    return ms


def noise_cov(ms: MomentSet, sigma_eta_sq: float) -> np.ndarray:
    """E{b(k) b^T(k)} for white noise of variance ``sigma_eta_sq``."""
    if sigma_eta_sq < 0:
        raise ValueError(f"noise variance must be nonnegative, got {sigma_eta_sq}")
    return sigma_eta_sq * ms.rb


def save(ms: MomentSet, path: str | Path) -> None:
    """Dump to an ``.npz`` archive (arrays plus a JSON metadata string)."""
    meta = {k: getattr(ms, k) for k in
            ("sample_count", "m", "n_subbands", "eps", "noise_term", "skipped", "key")}
    np.savez(path, ea=ms.ea, eaa=ms.eaa, rb=ms.rb, meta=json.dumps(meta))


def load(path: str | Path) -> MomentSet:
    with np.load(path) as z:
        meta = json.loads(str(z["meta"]))
        return MomentSet(ea=z["ea"], eaa=z["eaa"], rb=z["rb"], **meta)


class MomentCache:
    """Directory of ``<key>.npz`` files; the key hashes every estimator input."""

    def __init__(self, root: str | Path | None):
        self.root = Path(root) if root is not None else None

    def get(self, fb: FilterBank, input_model: InputModel, eps: float, m: int,
            samples: int, seed: int, noise_term: NoiseTerm = "full") -> MomentSet:
        key = moment_key(fb, input_model, eps, m, samples, seed, noise_term)
        if self.root is not None:
            path = self.root / f"{key}.npz"
            if path.exists():
                log.info("moment cache hit %s", key)
                return load(path)
        ms = estimate_moments(fb, input_model, eps, m, samples, RngStream(seed),
                              noise_term=noise_term)
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)
            save(ms, self.root / f"{key}.npz")
        return ms
