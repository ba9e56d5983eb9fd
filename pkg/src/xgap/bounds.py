"""Closed-form agreement and mode-probability bounds.

Each bound replaces the Gumbel noise of the Gumbel-max construction by a
Gaussian surrogate.  The surrogate variance differs per derivation: 2 for the
biased-agreement bound and the mode bound, 1 for the unbiased-agreement
bounds.  Every function accepts ``surrogate_var`` to override its default.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import LogitProfile, normal_cdf

PROP1_SURROGATE_VAR = 2.0
PROP2_SURROGATE_VAR = 1.0
PROP3_SURROGATE_VAR = 2.0

BOUND_KINDS = ("prop1_upper", "prop2_upper", "prop2_lower", "prop3_source_lower", "prop3_target_lower")


@dataclass(frozen=True)
class BoundReport:
    params: dict
    bound_kind: str
    value: float
    clamped: bool = False

    def __post_init__(self):
        if self.bound_kind not in BOUND_KINDS:
            raise ValueError(f"unknown bound kind {self.bound_kind!r}")
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"bound value {self.value} outside [0, 1]")

    def row(self) -> dict:
        """Flat CSV row: params first, then kind, value and clamp flag."""
        return {**self.params, "bound_kind": self.bound_kind, "value": self.value,
                "clamped": int(self.clamped)}


@dataclass(frozen=True)
class Prop2Upper:
    value: float
    raw: float
    clamped: bool = field(default=False)


def _check_tau_eta(tau: float, eta: float) -> None:
    if tau < 1.0 or eta < 1.0:
        raise ValueError(f"tau and eta must be >= 1, got tau={tau}, eta={eta}")


def prop1_upper(
    source: LogitProfile,
    bias_mu,
    bias_sigma: float,
    surrogate_var: float | None = None,
) -> float:
    """Upper bound on source-target agreement when the target is biased."""
    bias = LogitProfile(bias_mu, bias_sigma)
    if bias.m != source.m:
        raise ValueError("bias_mu and source.mu differ in length")
    if bias.mode == source.mode:
        raise ValueError("prop1 bound assumes distinct source and bias modes")
    c = PROP1_SURROGATE_VAR if surrogate_var is None else surrogate_var
    p1 = normal_cdf(source.top_gap / math.sqrt(2 * (source.sigma**2 + c)))
    p2 = normal_cdf(bias.top_gap / math.sqrt(2 * (bias.sigma**2 + c)))
    return p1 * (1 - p2) + p2 * (1 - p1)


def _prop2_factors(gap: float, source: LogitProfile, tau: float, eta: float, c: float):
    s = source.sigma**2
    a = normal_cdf(gap / math.sqrt(2 * (s + c)))
    b = normal_cdf(gap / (tau * math.sqrt(2 * (eta * s + c))))
    return a, b


def prop2_upper_detail(
    source: LogitProfile, tau: float, eta: float, surrogate_var: float | None = None
) -> Prop2Upper:
    """Unbiased-agreement upper bound, keeping the raw value and clamp flag."""
    _check_tau_eta(tau, eta)
    c = PROP2_SURROGATE_VAR if surrogate_var is None else surrogate_var
    gap = source.mu0 - float(np.min(source.mu_array))
    a, b = _prop2_factors(gap, source, tau, eta, c)
    raw = source.m * a ** (source.m - 1) * b ** (source.m - 1)
    return Prop2Upper(min(raw, 1.0), raw, raw > 1.0)


def prop2_upper(
    source: LogitProfile, tau: float, eta: float, surrogate_var: float | None = None
) -> float:
    return prop2_upper_detail(source, tau, eta, surrogate_var).value


def prop2_lower(
    source: LogitProfile, tau: float, eta: float, surrogate_var: float | None = None
) -> float:
    """Unbiased-agreement lower bound from the modal term alone."""
    _check_tau_eta(tau, eta)
    c = PROP2_SURROGATE_VAR if surrogate_var is None else surrogate_var
    a, b = _prop2_factors(source.top_gap, source, tau, eta, c)
    return a ** (source.m - 1) * b ** (source.m - 1)


def prop3_mode_lower(
    source: LogitProfile, tau: float, eta: float, surrogate_var: float | None = None
) -> tuple[float, float]:
    """Lower bounds on the modal probability of source and (kappa=1) target."""
    _check_tau_eta(tau, eta)
    c = PROP3_SURROGATE_VAR if surrogate_var is None else surrogate_var
    s = source.sigma**2
    gap = source.top_gap
    src = normal_cdf(gap / math.sqrt(2 * (s + c))) ** (source.m - 1)
    tgt = normal_cdf(gap / (tau * math.sqrt(2 * (eta * s + c)))) ** (source.m - 1)
    return src, tgt


def bound_reports(
    source: LogitProfile,
    tau: float,
    eta: float,
    bias_mu=None,
    bias_sigma: float | None = None,
    surrogate_var: float | None = None,
    extra_params: dict | None = None,
) -> list[BoundReport]:
    """Every applicable bound for one parameter point."""
    params = {
        "m": source.m,
        "mu0": source.mu0,
        "mu1": source.mu1,
        "sigma_s": source.sigma,
        "mode": source.mode,
        "tau": tau,
        "eta": eta,
        "bias_mu0": None,
        "bias_mu1": None,
        "bias_sigma": None,
        "bias_mode": None,
        **(extra_params or {}),
    }
    reports = []
    if bias_mu is not None:
        bias = LogitProfile(bias_mu, bias_sigma or 0.0)
        params.update(bias_mu0=bias.mu0, bias_mu1=bias.mu1, bias_sigma=bias.sigma, bias_mode=bias.mode)
        if bias.mode != source.mode:
            reports.append(BoundReport(dict(params), "prop1_upper",
                                       prop1_upper(source, bias_mu, bias.sigma, surrogate_var)))
    up = prop2_upper_detail(source, tau, eta, surrogate_var)
    reports.append(BoundReport(dict(params), "prop2_upper", up.value, up.clamped))
    reports.append(BoundReport(dict(params), "prop2_lower", prop2_lower(source, tau, eta, surrogate_var)))
    s_lb, t_lb = prop3_mode_lower(source, tau, eta, surrogate_var)
    reports.append(BoundReport(dict(params), "prop3_source_lower", s_lb))
    reports.append(BoundReport(dict(params), "prop3_target_lower", t_lb))
    return reports

