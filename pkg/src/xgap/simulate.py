"""Monte Carlo experiments over the source/target response model.

Every random quantity is drawn from a substream keyed by
``(seed, *config.stream, experiment, ensemble size, block)``.  Trials are cut
into blocks whose layout depends only on the trial count, so results are
identical whatever the thread count or completion order.
"""
from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import spearmanr

from . import metrics
from .model import (
    LogitProfile,
    TargetMixture,
    categories_from_logits,
    sample_categories,
    sample_target_categories,
    substream,
)

TIE_BREAKS = ("random", "smallest")
CURVE_METRICS = ("mode-agreement", "chi-squared", "l2-centroid", "mae")
MIN_TRIALS = 100
BLOCK_SIZE = 10_000
MIN_BLOCKS = 10

# experiment tags folded into the substream key
_AGREE, _DIVERGE, _MODE, _PI, _CONF, _MECH = range(6)


def thread_count(requested: int | None = None) -> int:
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get("XGAP_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def parallel_map(fn: Callable, items: Sequence, threads: int | None = None) -> list:
    """Order-preserving map; runs on a thread pool when more than one thread."""
    n = thread_count(threads)
    if n == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def block_sizes(trials: int) -> list[int]:
    n_blocks = max(MIN_BLOCKS, math.ceil(trials / BLOCK_SIZE))
    n_blocks = min(n_blocks, trials)
    return [len(b) for b in np.array_split(np.arange(trials), n_blocks)]


@dataclass(frozen=True)
class SimConfig:
    profile: LogitProfile
    mixture: TargetMixture
    n_max: int = 10
    trials: int = 100_000
    seed: int = 0
    diagnostics: bool = False
    method: str = "categorical"
    jitter: float = 0.05
    stream: tuple[int, ...] = ()
    threads: int | None = None
    tie_break: str = "random"

    def __post_init__(self):
        if self.tie_break not in TIE_BREAKS:
            raise ValueError(f"tie_break must be one of {TIE_BREAKS}, got {self.tie_break!r}")
        if self.n_max < 1:
            raise ValueError(f"n_max must be >= 1, got {self.n_max}")
        if self.trials < MIN_TRIALS:
            raise ValueError(f"trials must be >= {MIN_TRIALS}, got {self.trials}")
        if self.mixture.source != self.profile:
            raise ValueError("mixture.source must be the config profile")
        if self.jitter < 0:
            raise ValueError("jitter must be >= 0")

    @classmethod
    def from_mixture(cls, mixture: TargetMixture, **kw) -> "SimConfig":
        return cls(mixture.source, mixture, **kw)

    @property
    def m(self) -> int:
        return self.profile.m

    def rng(self, *keys: int) -> np.random.Generator:
        return substream(self.seed, *self.stream, *keys)

    def vote(self, cats: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return metrics.majority_vote_rows(cats, self.m, rng if self.tie_break == "random" else None)


@dataclass(frozen=True)
class AgreementEstimate:
    point: float
    stderr: float
    trials: int
    ensemble_size: int


@dataclass(frozen=True)
class AgreementCurve:
    points: tuple[AgreementEstimate, ...]
    metric: str = "mode-agreement"

    def __post_init__(self):
        if self.metric not in CURVE_METRICS:
            raise ValueError(f"unknown curve metric {self.metric!r}")
        sizes = [p.ensemble_size for p in self.points]
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ValueError("ensemble sizes must be strictly increasing")

    @property
    def sizes(self) -> np.ndarray:
        return np.array([p.ensemble_size for p in self.points])

    @property
    def values(self) -> np.ndarray:
        return np.array([p.point for p in self.points])

    @property
    def stderrs(self) -> np.ndarray:
        return np.array([p.stderr for p in self.points])


def _ensembled_block(config: SimConfig, n: int, rng: np.random.Generator, size: int):
    """Majority-voted source and target categories for ``size`` trials.

    The mixture component is drawn once per trial and shared by that trial's
    ``n`` target responses.
    """
    src = sample_categories(config.profile, rng, size * n, config.method).reshape(size, n)
    kappa = rng.random(size) < config.mixture.pi
    tgt, _ = sample_target_categories(
        config.mixture, rng, size * n, config.method, kappa=np.repeat(kappa, n)
    )
    tgt = tgt.reshape(size, n)
    return src, tgt, kappa


def estimate_agreement(config: SimConfig, n: int) -> AgreementEstimate:
    """Probability that majority votes over ``n`` source and ``n`` target draws agree."""
    if not 1 <= n <= config.n_max:
        raise ValueError(f"ensemble size must lie in [1, {config.n_max}], got {n}")
    sizes = block_sizes(config.trials)

    def run(b):
        rng = config.rng(_AGREE, n, b)
        src, tgt, _ = _ensembled_block(config, n, rng, sizes[b])
        return int(np.sum(config.vote(src, rng) == config.vote(tgt, rng)))

    hits = sum(parallel_map(run, range(len(sizes)), config.threads))
    p = hits / config.trials
    return AgreementEstimate(p, math.sqrt(p * (1 - p) / config.trials), config.trials, n)


def _embed(cats: np.ndarray, m: int, jitter: float, rng: np.random.Generator) -> np.ndarray:
    """Synthetic embeddings: one-hot category indicator plus Gaussian jitter."""
    e = np.eye(m)[cats]
    if jitter > 0:
        e = e + jitter * rng.standard_normal(e.shape)
    return e


def _divergence(config: SimConfig, n: int, metric: str) -> AgreementEstimate:
    sizes = block_sizes(config.trials)
    m = config.m

    def run(b):
        rng = config.rng(_DIVERGE, CURVE_METRICS.index(metric), n, b)
        src, tgt, _ = _ensembled_block(config, n, rng, sizes[b])
        if metric == "mae":
            return np.abs(src.mean(axis=1) - tgt.mean(axis=1))
        vs, vt = config.vote(src, rng), config.vote(tgt, rng)
        if metric == "chi-squared":
            return np.bincount(vs, minlength=m), np.bincount(vt, minlength=m)
        es, et = _embed(vs, m, config.jitter, rng), _embed(vt, m, config.jitter, rng)
        return es.sum(axis=0), et.sum(axis=0), len(vs)

    parts = parallel_map(run, range(len(sizes)), config.threads)
    if metric == "mae":
        d = np.concatenate(parts)
        return AgreementEstimate(float(d.mean()), float(d.std(ddof=1) / math.sqrt(d.size)),
                                 config.trials, n)
    if metric == "chi-squared":
        cs, ct = np.sum([p[0] for p in parts], axis=0), np.sum([p[1] for p in parts], axis=0)
        point = metrics.chi_squared_distance(cs / cs.sum(), ct / ct.sum())
        per_block = [metrics.chi_squared_distance(a / a.sum(), b / b.sum()) for a, b in parts]
    else:
        total = sum(p[2] for p in parts)
        ss, st = np.sum([p[0] for p in parts], axis=0), np.sum([p[1] for p in parts], axis=0)
        point = float(np.linalg.norm(ss / total - st / total))
        per_block = [float(np.linalg.norm(a / k - b / k)) for a, b, k in parts]
    stderr = float(np.std(per_block, ddof=1) / math.sqrt(len(per_block)))
    return AgreementEstimate(point, stderr, config.trials, n)


def sweep_ensemble(
    config: SimConfig, metric: str = "mode-agreement", sizes: Sequence[int] | None = None
) -> AgreementCurve:
    """Agreement or divergence as a function of ensemble size (default ``1..n_max``).

    Divergence metrics compare the distributions of majority-voted responses;
    ``l2-centroid`` embeds each voted response and compares centroids, and
    ``mae`` treats category indices as numeric answers averaged per trial.
    """
    if metric not in CURVE_METRICS:
        raise ValueError(f"unknown curve metric {metric!r}; expected one of {CURVE_METRICS}")
    sizes = list(range(1, config.n_max + 1)) if sizes is None else list(sizes)
    if any(not 1 <= n <= config.n_max for n in sizes):
        raise ValueError(f"ensemble sizes must lie in [1, {config.n_max}]")
    if metric == "mode-agreement":
        pts = [estimate_agreement(config, n) for n in sizes]
    else:
        pts = [_divergence(config, n, metric) for n in sizes]
    return AgreementCurve(tuple(pts), metric)


def mean_curve(curves: Sequence[AgreementCurve]) -> AgreementCurve:
    """Pointwise average of curves over independent questions."""
    if not curves:
        raise ValueError("no curves to average")
    k = len(curves)
    vals = np.mean([c.values for c in curves], axis=0)
    errs = np.sqrt(np.sum([c.stderrs**2 for c in curves], axis=0)) / k
    first = curves[0]
    pts = tuple(
        AgreementEstimate(float(v), float(e), sum(c.points[i].trials for c in curves), p.ensemble_size)
        for i, (v, e, p) in enumerate(zip(vals, errs, first.points))
    )
    return AgreementCurve(pts, first.metric)


@dataclass(frozen=True)
class ModeEstimate:
    category: int
    probability: float
    stderr: float
    trials: int


def estimate_mode_probability(
    dist: LogitProfile | TargetMixture,
    trials: int,
    seed: int,
    method: str = "categorical",
    stream: tuple[int, ...] = (),
    threads: int | None = None,
) -> ModeEstimate:
    """Empirical modal category and its relative frequency."""
    if trials < MIN_TRIALS:
        raise ValueError(f"trials must be >= {MIN_TRIALS}, got {trials}")
    sizes = block_sizes(trials)
    m = dist.m if isinstance(dist, LogitProfile) else dist.source.m

    def run(b):
        rng = substream(seed, *stream, _MODE, b)
        if isinstance(dist, LogitProfile):
            cats = sample_categories(dist, rng, sizes[b], method)
        else:
            cats, _ = sample_target_categories(dist, rng, sizes[b], method)
        return np.bincount(cats, minlength=m)

    counts = np.sum(parallel_map(run, range(len(sizes)), threads), axis=0)
    k = int(np.argmax(counts))
    p = counts[k] / trials
    return ModeEstimate(k, float(p), math.sqrt(p * (1 - p) / trials), trials)


def swap_mode(mu: np.ndarray, target: int) -> np.ndarray:
    """Copy of ``mu`` with its largest entry moved to index ``target``."""
    out = np.array(mu, dtype=np.float64)
    k = int(np.argmax(out))
    out[[k, target]] = out[[target, k]]
    return out


@dataclass(frozen=True)
class QuestionPrior:
    """Distribution over per-question mixtures.

    Each question gets a source profile whose leading logit sits ``gap`` above
    the others, ``gap ~ U(gap_range)``.  The biased component is the same
    profile with its mode moved to a different, uniformly chosen category, so
    a confident source is matched by an equally confident wrong answer.
    """

    m: int = 4
    gap_range: tuple[float, float] = (0.0, 4.0)
    sigma: float = 1.0
    tau: float = 2.0
    eta: float = 2.0
    bias_sigma: float | None = None

    def __post_init__(self):
        if self.m < 2:
            raise ValueError("m must be >= 2")
        lo, hi = self.gap_range
        if not 0 <= lo <= hi:
            raise ValueError(f"invalid gap range {self.gap_range}")

    def __call__(self, rng: np.random.Generator) -> TargetMixture:
        gap = rng.uniform(*self.gap_range)
        source = LogitProfile.with_top_gap(self.m, gap, self.sigma)
        other = 1 + int(rng.integers(self.m - 1))
        bias_sigma = self.sigma if self.bias_sigma is None else self.bias_sigma
        return TargetMixture(source, 1.0, self.tau, self.eta,
                             tuple(swap_mode(source.mu_array, other)), bias_sigma)

    @classmethod
    def from_config(cls, config: SimConfig, gap_range=(0.0, 4.0)) -> "QuestionPrior":
        return cls(config.m, tuple(gap_range), config.profile.sigma, config.mixture.tau,
                   config.mixture.eta, config.mixture.bias_sigma)


def _question_draws(mixtures: Sequence[TargetMixture], kappa: np.ndarray, draws: int,
                    rng: np.random.Generator, method: str):
    """``draws`` source and target categories per question, shape ``(Q, draws)``.

    Questions may have different logit means; noise levels are taken per row.
    """
    q = len(mixtures)
    m = mixtures[0].source.m
    mu_s = np.array([x.source.mu for x in mixtures])
    sd_s = np.array([x.source.sigma for x in mixtures])
    var = [x.variance_profile for x in mixtures]
    bias = [x.bias_profile for x in mixtures]
    mu_t = np.where(kappa[:, None], [v.mu for v in var], [b.mu for b in bias])
    sd_t = np.where(kappa, [v.sigma for v in var], [b.sigma for b in bias])
    zs = mu_s[:, None, :] + sd_s[:, None, None] * rng.standard_normal((q, draws, m))
    zt = mu_t[:, None, :] + sd_t[:, None, None] * rng.standard_normal((q, draws, m))
    src = categories_from_logits(zs.reshape(-1, m), rng, method).reshape(q, draws)
    tgt = categories_from_logits(zt.reshape(-1, m), rng, method).reshape(q, draws)
    return src, tgt


# Ensembling only separates the components when ten votes can resolve the
# mode on both sides; strongly flattened targets bias both estimators low.
PI_RECOVERY_PRIOR = QuestionPrior(m=4, gap_range=(2.0, 5.0), sigma=1.0, tau=1.5, eta=1.5)


@dataclass
class PiRecovery:
    true_pi: float
    pi_categorical: float
    pi_continuous: float
    n_questions: int
    kappa_rate: float
    warnings: list[str] = field(default_factory=list)


def pi_recovery_experiment(
    true_pi: float,
    n_questions: int = 500,
    per_question_draws: int = 200,
    generator: Callable[[np.random.Generator], TargetMixture] | None = None,
    seed: int = 0,
    ensemble_size: int = 10,
    jitter: float = 0.05,
    rule: str = "reconciled",
    method: str = "categorical",
    tie_break: str = "random",
) -> PiRecovery:
    """Estimate the mixing coefficient from synthetic questions with known kappa.

    Per question the mixture component is fixed by Bernoulli(true_pi).  Both
    sides draw ``per_question_draws`` responses at ensemble size 1 and as many
    majority-voted ensembles of ``ensemble_size``.  The categorical estimator
    scores the voted distributions; the continuous estimator compares, at the
    two ensemble sizes, the L2 distance between source and target centroids of
    the embedded responses.
    """
    if not 0 <= true_pi <= 1:
        raise ValueError(f"true_pi must lie in [0, 1], got {true_pi}")
    if n_questions < 50:
        raise ValueError(f"n_questions must be >= 50, got {n_questions}")
    if per_question_draws < 1:
        raise ValueError("per_question_draws must be >= 1")
    generator = generator or PI_RECOVERY_PRIOR
    gen_rng = substream(seed, _PI, 0)
    mixtures = [generator(gen_rng) for _ in range(n_questions)]
    kappa = substream(seed, _PI, 1).random(n_questions) < true_pi
    m = mixtures[0].source.m
    notes = []
    if len({(x.source, x.bias_mu, x.bias_sigma) for x in mixtures}) == 1:
        notes.append("generator produced identical profiles for every question")
        if mixtures[0].source.sigma == 0:
            notes.append("generator profiles have zero logit variance")

    rng = substream(seed, _PI, 2)
    r = per_question_draws
    s1, t1 = _question_draws(mixtures, kappa, r, rng, method)
    sn, tn = _question_draws(mixtures, kappa, r * ensemble_size, rng, method)
    tie_rng = rng if tie_break == "random" else None
    vs = metrics.majority_vote_rows(sn.reshape(-1, ensemble_size), m, tie_rng).reshape(n_questions, r)
    vt = metrics.majority_vote_rows(tn.reshape(-1, ensemble_size), m, tie_rng).reshape(n_questions, r)

    pairs, dists = [], []
    for i in range(n_questions):
        pairs.append((metrics.CategoryDistribution.from_samples(vs[i], m),
                      metrics.CategoryDistribution.from_samples(vt[i], m)))
        d1 = metrics.l2_centroid_distance(_embed(s1[i], m, jitter, rng), _embed(t1[i], m, jitter, rng))
        dn = metrics.l2_centroid_distance(_embed(vs[i], m, jitter, rng), _embed(vt[i], m, jitter, rng))
        dists.append((d1, dn))
    for n in notes:
        warnings.warn(n, RuntimeWarning, stacklevel=2)
    return PiRecovery(true_pi, metrics.pi_categorical(pairs, rule), metrics.pi_continuous(dists),
                      n_questions, float(kappa.mean()), notes)


@dataclass(frozen=True)
class ConfidenceBin:
    lo: float
    hi: float
    mean_agreement: float | None
    count: int

    @property
    def center(self) -> float:
        return 0.5 * (self.lo + self.hi)


def bin_confidence(conf: np.ndarray, agree: np.ndarray, n_bins: int) -> list[ConfidenceBin]:
    """Equal-width bins on [0, 1]; the last bin is closed on the right."""
    if n_bins < 3:
        raise ValueError(f"n_bins must be >= 3, got {n_bins}")
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    idx = np.clip(np.searchsorted(edges, conf, side="right") - 1, 0, n_bins - 1)
    out = []
    for b in range(n_bins):
        sel = idx == b
        cnt = int(sel.sum())
        out.append(ConfidenceBin(float(edges[b]), float(edges[b + 1]),
                                 float(agree[sel].mean()) if cnt else None, cnt))
    return out


def confidence_agreement_curve(
    config: SimConfig,
    n_bins: int = 5,
    gap_range: tuple[float, float] = (0.0, 4.0),
    draws: int = 10,
    n_questions: int | None = None,
    generator: Callable[[np.random.Generator], TargetMixture] | None = None,
) -> list[ConfidenceBin]:
    """Source confidence vs. source-target mode agreement over many questions.

    Questions come from ``generator`` (default: a ``QuestionPrior`` built from
    the config's m, sigma, tau, eta and ``gap_range``).  Each question draws
    ``draws`` responses per side; confidence is the relative frequency of the
    source mode, and agreement is whether the two modes coincide.
    """
    n_questions = n_questions or config.trials
    generator = generator or QuestionPrior.from_config(config, gap_range)
    gen_rng = config.rng(_CONF, 0)
    mixtures = [generator(gen_rng) for _ in range(n_questions)]
    kappa = config.rng(_CONF, 1).random(n_questions) < config.mixture.pi
    rng = config.rng(_CONF, 2)
    src, tgt = _question_draws(mixtures, kappa, draws, rng, config.method)
    conf = metrics.category_counts(src, config.m).max(axis=1) / draws
    agree = (config.vote(src, rng) == config.vote(tgt, rng)).astype(float)
    return bin_confidence(conf, agree, n_bins)


def bin_trend(bins: Sequence[ConfidenceBin]) -> float:
    """Spearman correlation of bin centers against bin means over non-empty bins."""
    full = [b for b in bins if b.count > 0]
    if len(full) < 2:
        return float("nan")
    return float(spearmanr([b.center for b in full], [b.mean_agreement for b in full])[0])


@dataclass(frozen=True)
class MechanismReport:
    source_var: float
    target_var: float
    predicted_source_var: float
    predicted_target_var: float


def mechanism_variance_demo(
    semantic,
    lang_a,
    lang_b,
    sigma: float,
    trials: int = 1_000_000,
    seed: int = 0,
    weight_mean=None,
) -> MechanismReport:
    """Response variance of a linear readout over language-composed representations.

    Representations are ``semantic + lang``; weights are ``N(weight_mean,
    sigma^2 I)`` with the mean orthogonal to ``lang_a - lang_b``.  When no
    mean is given, ``semantic`` projected off the language difference is used.
    The prediction ``sigma^2 (|r_s|^2 + |lang_a - lang_b|^2)`` for the target
    is exact only when ``r_s`` is itself orthogonal to the language difference.
    """
    r = np.asarray(semantic, dtype=np.float64)
    la, lb = np.asarray(lang_a, dtype=np.float64), np.asarray(lang_b, dtype=np.float64)
    if not r.shape == la.shape == lb.shape or r.ndim != 1:
        raise ValueError("semantic and language vectors must share one dimension")
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    d = la - lb
    if weight_mean is None:
        dd = d @ d
        w_mu = r - (r @ d) / dd * d if dd > 0 else r.copy()
    else:
        w_mu = np.asarray(weight_mean, dtype=np.float64)
    if abs(w_mu @ d) > 1e-9:
        raise ValueError(f"weight mean not orthogonal to the language difference ({w_mu @ d:.3g})")
    r_s, r_t = r + la, r + lb

    ys, yt = [], []
    for b, size in enumerate(block_sizes(trials)):
        rng = substream(seed, _MECH, b)
        w = w_mu + sigma * rng.standard_normal((size, r.size))
        ys.append(w @ r_s)
        yt.append(w @ r_t)
    ys, yt = np.concatenate(ys), np.concatenate(yt)
    s2 = sigma**2
    return MechanismReport(float(ys.var(ddof=1)), float(yt.var(ddof=1)),
                           s2 * float(r_s @ r_s), s2 * float(r_s @ r_s) + s2 * float(d @ d))

