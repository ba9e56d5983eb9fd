"""Generative model of source and target responses.

Responses are categorical over a shared, normalized response space of size
``m``.  Source logits are Gaussian around ``mu`` with isotropic noise; target
logits come from a two-component mixture: a flattened, noisier copy of the
source (the variance component, ``kappa=1``) or an unrelated biased profile
(``kappa=0``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

SAMPLING_METHODS = ("categorical", "gumbel")


def softmax(v, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax along ``axis``."""
    x = np.asarray(v, dtype=np.float64)
    if x.size == 0:
        raise ValueError("softmax of an empty vector")
    if not np.all(np.isfinite(x)):
        raise ValueError("softmax input must be finite")
    e = np.exp(x - np.max(x, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def normal_cdf(x: float) -> float:
    """Standard normal CDF.

    Uses ``erfc`` on the reflected argument so the lower tail keeps full
    relative precision instead of cancelling against 1.
    """
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def _top_two(mu: np.ndarray) -> tuple[float, float]:
    s = np.sort(mu)
    return float(s[-1]), float(s[-2])


@dataclass(frozen=True)
class LogitProfile:
    """Gaussian logit distribution ``N(mu, sigma^2 I)`` over ``m`` responses."""

    mu: tuple[float, ...]
    sigma: float = 0.0

    def __post_init__(self):
        mu = tuple(float(x) for x in np.asarray(self.mu, dtype=np.float64).ravel())
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", float(self.sigma))
        if len(mu) < 2:
            raise ValueError(f"response space needs m >= 2, got {len(mu)}")
        if not all(math.isfinite(x) for x in mu):
            raise ValueError("logit means must be finite")
        if not (math.isfinite(self.sigma) and self.sigma >= 0):
            raise ValueError(f"sigma must be finite and >= 0, got {self.sigma}")

    @property
    def m(self) -> int:
        return len(self.mu)

    @property
    def mu_array(self) -> np.ndarray:
        return np.asarray(self.mu, dtype=np.float64)

    @property
    def mu0(self) -> float:
        return _top_two(self.mu_array)[0]

    @property
    def mu1(self) -> float:
        return _top_two(self.mu_array)[1]

    @property
    def mode(self) -> int:
        return int(np.argmax(self.mu_array))

    @property
    def top_gap(self) -> float:
        a, b = _top_two(self.mu_array)
        return a - b

    @classmethod
    def with_top_gap(cls, m: int, gap: float, sigma: float, mode: int = 0) -> "LogitProfile":
        """Profile with one leading logit ``gap`` above ``m - 1`` equal ones."""
        mu = np.zeros(m)
        mu[mode] = gap
        return cls(tuple(mu), sigma)


@dataclass(frozen=True)
class TargetMixture:
    """Target logit mixture layered over a source profile.

    With probability ``pi`` the target uses ``N(mu_s / tau, eta * sigma_s^2 I)``;
    otherwise ``N(bias_mu, bias_sigma^2 I)``.
    """

    source: LogitProfile
    pi: float = 1.0
    tau: float = 1.0
    eta: float = 1.0
    bias_mu: tuple[float, ...] | None = None
    bias_sigma: float = 0.0

    def __post_init__(self):
        bias = self.source.mu if self.bias_mu is None else self.bias_mu
        bias = tuple(float(x) for x in np.asarray(bias, dtype=np.float64).ravel())
        object.__setattr__(self, "bias_mu", bias)
        if len(bias) != self.source.m:
            raise ValueError(f"bias_mu has {len(bias)} entries, source has m={self.source.m}")
        if not 0.0 <= self.pi <= 1.0:
            raise ValueError(f"pi must lie in [0, 1], got {self.pi}")
        if self.tau < 1.0:
            raise ValueError(f"tau must be >= 1, got {self.tau}")
        if self.eta < 1.0:
            raise ValueError(f"eta must be >= 1, got {self.eta}")
        # validates bias_mu / bias_sigma
        self.bias_profile

    @classmethod
    def knowledge_barrier(
        cls,
        source: LogitProfile,
        bias_mu: Sequence[float],
        bias_sigma: float,
        pi: float = 0.0,
        tau: float = 1.0,
        eta: float = 1.0,
    ) -> "TargetMixture":
        """Mixture whose bias component disagrees with the source mode."""
        if int(np.argmax(bias_mu)) == source.mode:
            raise ValueError("biased component must not share the source mode")
        return cls(source, pi=pi, tau=tau, eta=eta, bias_mu=tuple(bias_mu), bias_sigma=bias_sigma)

    @property
    def variance_profile(self) -> LogitProfile:
        """The ``kappa=1`` component as a plain profile."""
        return LogitProfile(
            tuple(self.source.mu_array / self.tau), math.sqrt(self.eta) * self.source.sigma
        )

    @property
    def bias_profile(self) -> LogitProfile:
        return LogitProfile(self.bias_mu, self.bias_sigma)

    def with_pi(self, pi: float) -> "TargetMixture":
        return TargetMixture(self.source, pi, self.tau, self.eta, self.bias_mu, self.bias_sigma)


@dataclass(frozen=True)
class ResponseDraw:
    category: int
    kappa: bool | None = None
    logits: tuple[float, ...] | None = None


def _gumbel(rng: np.random.Generator, shape) -> np.ndarray:
    u = rng.random(shape)
    tiny = np.finfo(np.float64).tiny
    u = np.clip(u, tiny, 1.0 - np.finfo(np.float64).epsneg)
    return -np.log(-np.log(u))


def sample_logits(profile: LogitProfile, rng: np.random.Generator, size: int) -> np.ndarray:
    """Draw ``size`` logit vectors, shape ``(size, m)``."""
    z = np.broadcast_to(profile.mu_array, (size, profile.m))
    if profile.sigma > 0:
        z = z + profile.sigma * rng.standard_normal((size, profile.m))
    return np.array(z, dtype=np.float64)


def categories_from_logits(
    z: np.ndarray, rng: np.random.Generator, method: str = "categorical"
) -> np.ndarray:
    """Sample one category per row of logits ``z``."""
    if method == "categorical":
        cum = np.cumsum(softmax(z, axis=-1), axis=-1)
        u = rng.random((z.shape[0], 1))
        return np.minimum((u >= cum).sum(axis=-1), z.shape[-1] - 1)
    if method == "gumbel":
        return np.argmax(z + _gumbel(rng, z.shape), axis=-1)
    raise ValueError(f"unknown sampling method {method!r}; expected one of {SAMPLING_METHODS}")


def sample_categories(
    profile: LogitProfile, rng: np.random.Generator, size: int, method: str = "categorical"
) -> np.ndarray:
    """Vectorized source sampling: ``size`` categories from ``profile``."""
    return categories_from_logits(sample_logits(profile, rng, size), rng, method)


def sample_target_categories(
    mixture: TargetMixture,
    rng: np.random.Generator,
    size: int,
    method: str = "categorical",
    kappa: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized target sampling.

    ``kappa`` may be passed in to pin the mixture component per draw (e.g. one
    component per question); otherwise it is drawn from Bernoulli(pi).
    Returns ``(categories, kappa)``.
    """
    if kappa is None:
        kappa = rng.random(size) < mixture.pi
    kappa = np.asarray(kappa, dtype=bool)
    z = np.empty((size, mixture.source.m))
    n1 = int(kappa.sum())
    z[kappa] = sample_logits(mixture.variance_profile, rng, n1)
    z[~kappa] = sample_logits(mixture.bias_profile, rng, size - n1)
    return categories_from_logits(z, rng, method), kappa


def sample_source(
    profile: LogitProfile,
    rng: np.random.Generator,
    method: str = "categorical",
    diagnostics: bool = False,
) -> ResponseDraw:
    z = sample_logits(profile, rng, 1)
    cat = int(categories_from_logits(z, rng, method)[0])
    return ResponseDraw(cat, None, tuple(z[0]) if diagnostics else None)


def sample_target(
    mixture: TargetMixture,
    rng: np.random.Generator,
    method: str = "categorical",
    diagnostics: bool = False,
) -> ResponseDraw:
    kappa = bool(rng.random() < mixture.pi)
    profile = mixture.variance_profile if kappa else mixture.bias_profile
    z = sample_logits(profile, rng, 1)
    cat = int(categories_from_logits(z, rng, method)[0])
    return ResponseDraw(cat, kappa, tuple(z[0]) if diagnostics else None)


def substream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for a task identified by integer ``keys``.

    The stream depends only on ``(seed, keys)``, never on scheduling order.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=keys)))
