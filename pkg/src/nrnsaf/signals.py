"""Seeded stochastic inputs: AR(1) coloured input, system noise, unknown system."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np
import scipy.signal

SourceKind = Literal["gaussian", "uniform", "sign"]

# Unknown system used for the mean-behaviour experiment.
FIG2_WO = np.array(
    [0.51, -0.04, 0.02, 0.09, 0.22, 0.20, 0.13, -0.48,
     -0.39, 0.32, -0.11, -0.30, 0.25, -0.24, 0.6, -0.01]
)

CALIBRATION_SAMPLES = 100_000

# RNG purposes; one stream per (trial, purpose).
INPUT, NOISE, SYSTEM, CALIBRATION, MOMENTS = range(5)


@dataclass(frozen=True)
class RngStream:
    """Deterministic random stream identified by ``(seed, stream_id)``."""

    seed: int
    stream_id: int = 0

    def generator(self, purpose: int = 0) -> np.random.Generator:
        ss = np.random.SeedSequence([self.seed & 0xFFFFFFFFFFFFFFFF, self.stream_id, purpose])
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, stream_id: int) -> "RngStream":
        return RngStream(self.seed, stream_id)


@dataclass(frozen=True)
class InputModel:
    """AR(1) process ``x(t) = pole * x(t-1) + v(t)`` driven by a white source.

    ``source`` is unit-variance Gaussian, uniform on [-1, 1] (variance 1/3,
    deliberately not renormalised), or a random sign (+-1) used by the
    scalar test cases.
    """

    source: SourceKind = "gaussian"
    pole: float = 0.9

    def __post_init__(self):
        if self.source not in ("gaussian", "uniform", "sign"):
            raise ValueError(f"unknown source kind {self.source!r}")
        if not abs(self.pole) < 1.0:
            raise ValueError(f"AR pole must satisfy |pole| < 1, got {self.pole}")


def white_source(kind: SourceKind, gen: np.random.Generator, size) -> np.ndarray:
    if kind == "gaussian":
        return gen.standard_normal(size)
    if kind == "uniform":
        return gen.uniform(-1.0, 1.0, size)
    if kind == "sign":
        return np.where(gen.random(size) < 0.5, -1.0, 1.0)
    raise ValueError(f"unknown source kind {kind!r}")


class InputStream:
    """Chunked AR(1) generator that carries its filter state between draws."""

    def __init__(self, model: InputModel, gen: np.random.Generator):
        self.model = model
        self.gen = gen
        self._last = 0.0

    def draw(self, n: int) -> np.ndarray:
        v = white_source(self.model.source, self.gen, n)
        if self.model.pole == 0.0:
            return v
        x, zf = scipy.signal.lfilter(
            [1.0], [1.0, -self.model.pole], v, zi=[self.model.pole * self._last]
        )
        self._last = float(x[-1])
        return x


def gen_input(model: InputModel, rng: RngStream, n: int) -> np.ndarray:
    """n samples of the AR(1) input with x(-1) = 0."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return InputStream(model, rng.generator(INPUT)).draw(n)


def noise_variance_for_snr(fb_input_power: float, snr_db: float) -> float:
    if not fb_input_power > 0:
        raise ValueError(f"signal power must be positive, got {fb_input_power}")
    return fb_input_power / 10.0 ** (snr_db / 10.0)


def clean_output_power(model: InputModel, w_o, rng: RngStream,
                       n: int = CALIBRATION_SAMPLES) -> float:
    """Power of u^T(n) w_o measured over a calibration run of n samples."""
    w_o = np.asarray(w_o, dtype=float)
    x = InputStream(model, rng.generator(CALIBRATION)).draw(n + w_o.size - 1)
    y = np.convolve(x, w_o, mode="valid")
    return float(np.mean(y**2))


@dataclass(frozen=True)
class UnknownSystem:
    coefficients: np.ndarray

    @property
    def m(self) -> int:
        return self.coefficients.size


def gen_unknown_system(m: int, rng: RngStream | None = None,
                       values: Sequence[float] | None = None) -> UnknownSystem:
    """Random unit-norm system (uniform(-0.5, 0.5) entries) or explicit values."""
    if m < 1:
        raise ValueError("m must be >= 1")
    if values is not None:
        w = np.array(values, dtype=float)
        if w.shape != (m,):
            raise ValueError(f"explicit system has {w.size} taps, expected {m}")
    else:
        if rng is None:
            raise ValueError("a random system needs an RngStream")
        w = rng.generator(SYSTEM).random(m) - 0.5
        w /= np.linalg.norm(w)
    w.setflags(write=False)
    return UnknownSystem(w)
