"""Mean and mean-square models of the NR-NSAF recursion.

The stacked weight error W(k) = [w~(k); ...; w~(k-P+1)] obeys

    W(k+1) = (I - mu Acal(k)) C W(k) - mu B(k)

where Acal embeds A(k) in the top-left M x M block and C is the companion
matrix of the reuse weights.  Under the independence assumption this gives
a linear recursion for E{W} (driven by Xi = (I - mu E{Acal}) C) and for
vec(E{W W^T}) (driven by the M^2P^2 x M^2P^2 matrix F).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import linalg
from .adaptive import AlgoConfig
from .filterbank import FilterBank
from .moments import MomentSet

log = logging.getLogger(__name__)

SPECTRAL_ITERS = 2000


class InstabilityError(ArithmeticError):
    pass


class DegenerateInputError(ValueError):
    pass


def companion(beta: np.ndarray, m: int) -> np.ndarray:
    """C: first block row [beta_0 I, ..., beta_{P-1} I], shifted identity below."""
    P = beta.size
    c = np.zeros((m * P, m * P))
    c[:m] = np.kron(beta[None, :], np.eye(m))
    c[m:, : m * (P - 1)] = np.eye(m * (P - 1))
    return c


def embed_top_left(block: np.ndarray, size: int) -> np.ndarray:
    out = np.zeros((size, size))
    out[: block.shape[0], : block.shape[1]] = block
    return out


def embed_kron(eaa: np.ndarray, m: int, p_depth: int) -> np.ndarray:
    """E{Acal kron Acal} from E{A kron A}; only Acal's top-left block is nonzero."""
    mp = m * p_depth
    big = np.zeros((mp, mp, mp, mp))
    big[:m, :m, :m, :m] = eaa.reshape(m, m, m, m)
    return big.reshape(mp * mp, mp * mp)


def _check(ms: MomentSet, cfg: AlgoConfig):
    if ms.m != cfg.filter_len:
        raise ValueError(f"moments are for M={ms.m}, config has M={cfg.filter_len}")
    if ms.n_subbands != cfg.n_subbands:
        raise ValueError(f"moments are for N={ms.n_subbands}, config has N={cfg.n_subbands}")
    if ms.eps != cfg.regularizer:
        log.warning("moments estimated with eps=%g, config has eps=%g", ms.eps, cfg.regularizer)


# --------------------------------------------------------------------------
# mean behaviour


@dataclass
class MeanModel:
    xi: np.ndarray
    c: np.ndarray
    m: int
    p_depth: int

    @classmethod
    def build(cls, ms: MomentSet, cfg: AlgoConfig) -> "MeanModel":
        _check(ms, cfg)
        M, P = cfg.filter_len, cfg.reuse_depth
        c = companion(cfg.beta, M)
        xi = (np.eye(M * P) - cfg.step_size * ms.embedded_ea(P)) @ c
        return cls(xi, c, M, P)

    def spectral_radius(self) -> float:
        return linalg.spectral_radius_estimate(self.xi, iters=SPECTRAL_ITERS)


def mean_trajectory(ms: MomentSet, cfg: AlgoConfig, w_o, n_iters: int) -> np.ndarray:
    """E{w(k)} for k = 0..n_iters-1 starting from an all-zero weight history."""
    w_o = np.asarray(w_o, dtype=float)
    model = MeanModel.build(ms, cfg)
    state = np.tile(w_o, cfg.reuse_depth)
    out = np.empty((n_iters, w_o.size))
    for k in range(n_iters):
        out[k] = w_o - state[: w_o.size]
        state = model.xi @ state
    return out


def mean_error_trajectory(ms: MomentSet, cfg: AlgoConfig, w_o, n_iters: int) -> np.ndarray:
    """Full stacked E{W(k)} for k = 0..n_iters-1, shape (n_iters, MP)."""
    model = MeanModel.build(ms, cfg)
    state = np.tile(np.asarray(w_o, dtype=float), cfg.reuse_depth)
    out = np.empty((n_iters, state.size))
    for k in range(n_iters):
        out[k] = state
        state = model.xi @ state
    return out


# --------------------------------------------------------------------------
# stability


@dataclass
class StabilityReport:
    mu_max_mean: float
    rho_xi: float = float("nan")
    rho_f: float = float("nan")
    mean_square_window_ok: bool = False

    def to_dict(self) -> dict:
        return {"mu_max_mean": self.mu_max_mean, "rho_xi": self.rho_xi, "rho_f": self.rho_f}


def stability_bound(ms: MomentSet) -> float:
    """Mean-stability step-size bound 2 / lambda_max(E{A})."""
    lam, _ = linalg.max_eig_sym(ms.ea)
    if lam <= 0.0:
        raise DegenerateInputError(f"lambda_max(E{{A}}) = {lam} is not positive")
    return 2.0 / lam


# --------------------------------------------------------------------------
# mean-square behaviour


@dataclass
class MsdModel:
    """Linear model vec(Phi(k+1)) = F vec(Phi(k)) + noise_vec.

    F is never needed densely for the transient: :meth:`apply` evaluates
    F vec(Phi) through the block structure, which is exact.  ``f`` builds
    the dense matrix on demand for the steady-state solve.
    """

    ea: np.ndarray
    eaa: np.ndarray
    noise_block: np.ndarray  # E{b b^T}
    c: np.ndarray
    mu: float
    m: int
    p_depth: int
    w_o: np.ndarray | None = None
    phi: np.ndarray | None = field(default=None, repr=False)

    @property
    def mp(self) -> int:
        return self.m * self.p_depth

    @cached_property
    def ea_big(self) -> np.ndarray:
        return embed_top_left(self.ea, self.mp)

    @cached_property
    def noise_vec(self) -> np.ndarray:
        return self.mu**2 * linalg.vec(embed_top_left(self.noise_block, self.mp))

    @cached_property
    def f(self) -> np.ndarray:
        """Dense F, built column by column from :meth:`apply_matrix`."""
        mp = self.mp
        out = np.empty((mp * mp, mp * mp))
        e = np.zeros((mp, mp))
        for col in range(mp * mp):
            j, i = divmod(col, mp)  # column-major vec index
            e[i, j] = 1.0
            out[:, col] = linalg.vec(self.apply_matrix(e))
            e[i, j] = 0.0
        return out

    def f_dense_formula(self) -> np.ndarray:
        """F from the Kronecker expression; only practical for small M P."""
        mp, mu = self.mp, self.mu
        eye = np.eye(mp)
        inner = (
            np.eye(mp * mp)
            - mu * np.kron(eye, self.ea_big)
            - mu * np.kron(self.ea_big, eye)
            + mu**2 * embed_kron(self.eaa, self.m, self.p_depth)
        )
        return inner @ np.kron(self.c, self.c)

    def apply_matrix(self, phi: np.ndarray) -> np.ndarray:
        """Noise-free map Phi -> unvec(F vec(Phi)) evaluated blockwise."""
        m, mu = self.m, self.mu
        psi = self.c @ phi @ self.c.T
        out = psi.copy()
        out[:m] -= mu * (self.ea @ psi[:m])
        out[:, :m] -= mu * (psi[:, :m] @ self.ea)
        out[:m, :m] += mu**2 * linalg.unvec(self.eaa @ linalg.vec(psi[:m, :m]))
        return out

    def apply(self, v: np.ndarray) -> np.ndarray:
        """F @ v without forming F."""
        return linalg.vec(self.apply_matrix(linalg.unvec(v, (self.mp, self.mp))))

    def initial_phi(self, w_o) -> np.ndarray:
        w_o = np.asarray(w_o, dtype=float)
        return np.kron(np.ones((self.p_depth, self.p_depth)), np.outer(w_o, w_o))


def build_f(ms: MomentSet, cfg: AlgoConfig, sigma_eta_sq: float = 0.0, w_o=None) -> MsdModel:
    _check(ms, cfg)
    M, P = cfg.filter_len, cfg.reuse_depth
    model = MsdModel(
        ea=ms.ea, eaa=ms.eaa, noise_block=sigma_eta_sq * ms.rb,
        c=companion(cfg.beta, M), mu=cfg.step_size, m=M, p_depth=P,
    )
    if w_o is not None:
        model.w_o = np.asarray(w_o, dtype=float)
        model.phi = model.initial_phi(w_o)
    return model


@dataclass
class MsdSeries:
    msd: np.ndarray
    diverged: bool = False
    phi: np.ndarray | None = None

    @property
    def msd_db(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return 10.0 * np.log10(self.msd)


def msd_transient(model: MsdModel, n_iters: int, *, check_every: int = 100,
                  overflow: float = 1e150) -> MsdSeries:
    """MSD(k) = Tr of the first M x M block of E{Phi(k)}, k = 0..n_iters-1."""
    if model.phi is None:
        raise ValueError("model has no initial Phi; build it with w_o")
    m = model.m
    noise = linalg.unvec(model.noise_vec, (model.mp, model.mp))
    phi = model.phi.copy()
    out = np.empty(n_iters)
    for k in range(n_iters):
        out[k] = np.trace(phi[:m, :m])
        if not np.isfinite(out[k]) or abs(out[k]) > overflow:
            log.warning("MSD recursion diverged at k=%d", k)
            return MsdSeries(out[: k + 1], diverged=True)
        phi = model.apply_matrix(phi) + noise
        phi = 0.5 * (phi + phi.T)
        if check_every and k % check_every == 0:
            _assert_psd(phi, k)
    return MsdSeries(out, phi=phi)


def _assert_psd(phi: np.ndarray, k: int, tol: float = 1e-8) -> None:
    lam_min = np.linalg.eigvalsh(phi)[0]
    scale = max(np.trace(phi), 1e-300)
    if lam_min < -tol * scale:
        raise AssertionError(f"E{{Phi}} lost positive semidefiniteness at k={k}: {lam_min:g}")


def steady_state_phi(model: MsdModel) -> np.ndarray:
    rho = mean_square_rho(model)
    if not rho < 1.0:
        raise InstabilityError(f"rho(F) = {rho:.6g} >= 1; no steady state")
    n = model.mp**2
    try:
        x = linalg.solve(np.eye(n) - model.f, model.noise_vec)
    except linalg.SingularMatrixError as exc:
        raise InstabilityError(f"I - F is singular: {exc}") from exc
    phi = linalg.unvec(x, (model.mp, model.mp))
    return 0.5 * (phi + phi.T)


def msd_steady_state(model: MsdModel) -> float:
    """MSD(inf) = vec(I_MP)^T (I - F)^-1 mu^2 vec(E{B B^T}) / P, one linear solve."""
    phi = steady_state_phi(model)
    return float(np.trace(phi) / model.p_depth)


def mean_square_rho(model: MsdModel) -> float:
    return linalg.spectral_radius_estimate(model.apply, model.mp**2, iters=SPECTRAL_ITERS)


def mean_square_stability(model: MsdModel) -> StabilityReport:
    rho = mean_square_rho(model)
    return StabilityReport(mu_max_mean=float("nan"), rho_f=rho, mean_square_window_ok=rho < 1.0)


def stability_report(ms: MomentSet, cfg: AlgoConfig) -> StabilityReport:
    bound = stability_bound(ms)
    rho_xi = MeanModel.build(ms, cfg).spectral_radius()
    rho_f = mean_square_rho(build_f(ms, cfg))
    return StabilityReport(bound, rho_xi, rho_f, rho_f < 1.0)


def subband_noise_variances(fb: FilterBank, sigma_eta_sq: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-subband noise variances ||h_i||^2 sigma^2, and the paraunitary sigma^2/N."""
    if sigma_eta_sq < 0:
        raise ValueError("noise variance must be nonnegative")
    norms = (fb.filters**2).sum(axis=1)
    return norms * sigma_eta_sq, np.full(fb.n_subbands, sigma_eta_sq / fb.n_subbands)
