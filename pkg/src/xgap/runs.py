"""Experiment drivers behind the CLI.

Each driver takes a resolved spec (a preset or ``--grid`` file) and returns a
dict of named tables; a table is a list of flat row dicts whose values are
str, int, float or None.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from . import bounds, metrics
from .ingest import QuestionGroup, ResponseRecord, extract_year, group_records, normalize_response
from .model import LogitProfile, TargetMixture, substream
from .simulate import (
    CURVE_METRICS,
    MIN_TRIALS,
    QuestionPrior,
    SimConfig,
    bin_confidence,
    confidence_agreement_curve,
    estimate_mode_probability,
    mean_curve,
    pi_recovery_experiment,
    sweep_ensemble,
)

KINDS = ("grid", "questions", "confidence")
_SOURCE_SIDE, _TARGET_SIDE, _PRIOR = 101, 102, 103


class ConfigError(ValueError):
    """Invalid run configuration (CLI exit code 2)."""


def preset_names() -> list[str]:
    files = resources.files("xgap") / "presets"
    return sorted(p.name[:-5] for p in files.iterdir() if p.name.endswith(".json"))


def load_preset(name: str) -> dict:
    path = resources.files("xgap") / "presets" / f"{name}.json"
    if not path.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    spec = json.loads(path.read_text(encoding="utf-8"))
    spec["preset"] = name
    return spec


def load_grid(path) -> dict:
    try:
        spec = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"grid file {path} is not valid JSON: {e}") from None
    if not isinstance(spec, dict):
        raise ConfigError("grid file must hold a JSON object")
    spec["grid_file"] = str(path)
    return spec


def _list(v) -> list:
    return list(v) if isinstance(v, (list, tuple)) else [v]


def resolve_spec(spec: dict, trials: int | None = None) -> dict:
    """Validate a spec and fill defaults; ``trials`` overrides the spec's budget."""
    spec = dict(spec)
    kind = spec.setdefault("kind", "grid")
    if kind not in KINDS:
        raise ConfigError(f"unknown kind {kind!r}; expected one of {KINDS}")
    if trials is not None:
        spec["trials"] = trials
    spec.setdefault("trials", 100_000)
    if not isinstance(spec["trials"], int) or spec["trials"] < MIN_TRIALS:
        raise ConfigError(f"trials must be an integer >= {MIN_TRIALS}, got {spec['trials']!r}")
    spec.setdefault("metric", "mode-agreement")
    if spec["metric"] not in CURVE_METRICS:
        raise ConfigError(f"unknown metric {spec['metric']!r}; expected one of {CURVE_METRICS}")
    spec.setdefault("n_max", 10)
    if kind == "grid":
        for k in ("m", "gap", "sigma"):
            if k not in spec:
                raise ConfigError(f"grid spec needs {k!r}")
        spec.setdefault("tau_eta", [1])
        spec.setdefault("pi", 1.0)
        spec.setdefault("modes", False)
    else:
        for k in ("m", "gap_range", "sigma"):
            if k not in spec:
                raise ConfigError(f"{kind} spec needs {k!r}")
        spec.setdefault("tau_eta", [1])
        spec.setdefault("pi", 1.0)
    try:
        cells(spec) if kind == "grid" else prior_cells(spec)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None
    return spec


@dataclass(frozen=True)
class GridCell:
    index: int
    m: int
    gap: float
    sigma: float
    tau: float
    eta: float
    pi: float
    bias_mode: int | None = None

    @property
    def profile(self) -> LogitProfile:
        return LogitProfile.with_top_gap(self.m, self.gap, self.sigma)

    @property
    def mixture(self) -> TargetMixture:
        src = self.profile
        if self.bias_mode is None:
            return TargetMixture(src, self.pi, self.tau, self.eta)
        bias = LogitProfile.with_top_gap(self.m, self.gap, self.sigma, mode=self.bias_mode)
        return TargetMixture.knowledge_barrier(src, bias.mu, self.sigma, self.pi, self.tau, self.eta)

    def params(self) -> dict:
        return {"cell": self.index, "m": self.m, "gap": self.gap, "sigma": self.sigma,
                "tau": self.tau, "eta": self.eta, "pi": self.pi}


def cells(spec: dict) -> list[GridCell]:
    out = []
    bias_mode = spec.get("bias_mode")
    combos = itertools.product(_list(spec["m"]), _list(spec["gap"]), _list(spec["sigma"]),
                               _list(spec["tau_eta"]), _list(spec["pi"]))
    for i, (m, gap, sigma, te, pi) in enumerate(combos):
        cell = GridCell(i, int(m), float(gap), float(sigma), float(te), float(te), float(pi),
                        None if bias_mode is None else int(bias_mode))
        cell.mixture  # validates
        out.append(cell)
    return out


def prior_cells(spec: dict) -> list[tuple[dict, QuestionPrior, float]]:
    out = []
    combos = itertools.product(_list(spec["sigma"]), _list(spec["tau_eta"]), _list(spec["pi"]))
    for i, (sigma, te, pi) in enumerate(combos):
        prior = QuestionPrior(int(spec["m"]), tuple(float(x) for x in spec["gap_range"]),
                              float(sigma), float(te), float(te))
        params = {"cell": i, "m": prior.m, "sigma": prior.sigma, "tau": prior.tau,
                  "eta": prior.eta, "pi": float(pi)}
        out.append((params, prior, float(pi)))
    return out


def _bounds_at(cell: GridCell, surrogate_var):
    src = cell.profile
    if cell.pi == 1.0:
        return (bounds.prop2_lower(src, cell.tau, cell.eta, surrogate_var),
                bounds.prop2_upper(src, cell.tau, cell.eta, surrogate_var))
    if cell.pi == 0.0 and cell.bias_mode is not None:
        mix = cell.mixture
        return None, bounds.prop1_upper(src, mix.bias_mu, mix.bias_sigma, surrogate_var)
    return None, None


def run_grid(spec: dict, seed: int, surrogate_var: float | None = None,
             threads: int | None = None) -> dict[str, list[dict]]:
    curves, modes = [], []
    sizes = spec.get("ensemble_sizes")
    for cell in cells(spec):
        cfg = SimConfig(cell.profile, cell.mixture, n_max=spec["n_max"], trials=spec["trials"],
                        seed=seed, stream=(cell.index,), threads=threads)
        curve = sweep_ensemble(cfg, spec["metric"], sizes)
        lo, hi = _bounds_at(cell, surrogate_var) if spec["metric"] == "mode-agreement" else (None, None)
        for p in curve.points:
            at1 = p.ensemble_size == 1
            curves.append({**cell.params(), "metric": curve.metric, "n": p.ensemble_size,
                           "point": p.point, "stderr": p.stderr, "trials": p.trials,
                           "lower_bound": lo if at1 else None, "upper_bound": hi if at1 else None})
        if spec.get("modes"):
            s_lb, t_lb = bounds.prop3_mode_lower(cell.profile, cell.tau, cell.eta, surrogate_var)
            for side, dist, key, lb in (("source", cell.profile, _SOURCE_SIDE, s_lb),
                                        ("target", cell.mixture, _TARGET_SIDE, t_lb)):
                est = estimate_mode_probability(dist, spec["trials"], seed,
                                                stream=(cell.index, key), threads=threads)
                modes.append({**cell.params(), "side": side, "mode": est.category,
                              "probability": est.probability, "stderr": est.stderr,
                              "trials": est.trials,
                              "lower_bound": lb if side == "source" or cell.pi == 1.0 else None})
    tables = {"curves": curves}
    if spec.get("modes"):
        tables["modes"] = modes
    return tables


def run_questions(spec: dict, seed: int, threads: int | None = None) -> dict[str, list[dict]]:
    """Per-cell curves averaged over synthetic questions drawn from a prior."""
    rows = []
    for params, prior, pi in prior_cells(spec):
        gen = substream(seed, params["cell"], _PRIOR)
        curves = []
        for q in range(int(spec["n_questions"])):
            mix = prior(gen).with_pi(pi)
            cfg = SimConfig.from_mixture(mix, n_max=spec["n_max"], trials=spec["trials"],
                                         seed=seed, stream=(params["cell"], q), threads=threads)
            curves.append(sweep_ensemble(cfg, spec["metric"], spec.get("ensemble_sizes")))
        avg = mean_curve(curves)
        for p in avg.points:
            rows.append({**params, "metric": avg.metric, "n": p.ensemble_size, "point": p.point,
                         "stderr": p.stderr, "n_questions": len(curves)})
    return {"curves": rows}


def run_confidence(spec: dict, seed: int, threads: int | None = None) -> dict[str, list[dict]]:
    rows = []
    for params, prior, pi in prior_cells(spec):
        src = LogitProfile.with_top_gap(prior.m, prior.gap_range[1], prior.sigma)
        mix = TargetMixture(src, pi, prior.tau, prior.eta, bias_sigma=prior.sigma)
        cfg = SimConfig(src, mix, trials=spec["trials"], seed=seed, stream=(params["cell"],),
                        threads=threads)
        bins = confidence_agreement_curve(cfg, int(spec.get("n_bins", 5)), prior.gap_range,
                                          int(spec.get("draws", 10)), generator=prior)
        for b in bins:
            rows.append({**params, "bin_lo": b.lo, "bin_hi": b.hi, "center": b.center,
                         "mean_agreement": b.mean_agreement, "count": b.count})
    return {"confidence": rows}


def run_simulate(spec: dict, seed: int, surrogate_var: float | None = None,
                 threads: int | None = None) -> dict[str, list[dict]]:
    kind = spec["kind"]
    if kind == "grid":
        return run_grid(spec, seed, surrogate_var, threads)
    if kind == "questions":
        return run_questions(spec, seed, threads)
    return run_confidence(spec, seed, threads)


def run_bounds(spec: dict, surrogate_var: float | None = None) -> dict[str, list[dict]]:
    if spec["kind"] != "grid":
        raise ConfigError("bounds need a grid spec")
    rows = []
    for cell in cells(spec):
        mix = cell.mixture
        reports = bounds.bound_reports(
            cell.profile, cell.tau, cell.eta,
            bias_mu=mix.bias_mu if cell.bias_mode is not None else None,
            bias_sigma=mix.bias_sigma if cell.bias_mode is not None else None,
            surrogate_var=surrogate_var, extra_params={"cell": cell.index, "gap": cell.gap})
        rows.extend(r.row() for r in reports)
    return {"bounds": rows}


def run_pi_recovery(true_pis: Sequence[float], n_questions: int, draws: int, seed: int,
                    rule: str = "reconciled") -> dict[str, list[dict]]:
    if not true_pis:
        raise ConfigError("at least one true pi is required")
    rows = []
    for i, pi in enumerate(true_pis):
        if not 0 <= pi <= 1:
            raise ConfigError(f"true pi must lie in [0, 1], got {pi}")
        r = pi_recovery_experiment(pi, n_questions, draws, seed=seed + i, rule=rule)
        rows.append({"true_pi": pi, "pi_hat_categorical": r.pi_categorical,
                     "pi_hat_continuous": r.pi_continuous,
                     "abs_error_categorical": abs(r.pi_categorical - pi),
                     "abs_error_continuous": abs(r.pi_continuous - pi),
                     "n_questions": r.n_questions, "warnings": "; ".join(r.warnings) or None})
    return {"pi_recovery": rows}


# --- log analysis -----------------------------------------------------------

NO_TARGET = "no target data"


def _first_labeled(records: Sequence[ResponseRecord]) -> bool | None:
    for r in sorted(records, key=lambda r: r.ensemble_index):
        if r.correct is not None:
            return r.correct
    return None


def _answers(records, policy) -> list[str]:
    return [str(r.category) if r.category is not None else normalize_response(r.raw_text, policy)
            for r in sorted(records, key=lambda r: r.ensemble_index)]


def _numeric(records, extract: bool) -> list[int]:
    out = []
    for r in sorted(records, key=lambda r: r.ensemble_index):
        v = r.answer_numeric
        if v is None and extract:
            v = extract_year(r.raw_text)
        if v is not None:
            out.append(v)
    return out


def _distribution(answers: list[str], support: list[str]) -> np.ndarray:
    idx = {a: i for i, a in enumerate(support)}
    counts = np.bincount([idx[a] for a in answers], minlength=len(support))
    return counts / counts.sum()


def _summary(metric, value=None, ci=(None, None), n=0, note=None) -> dict:
    return {"metric": metric, "value": value, "ci_lo": ci[0], "ci_hi": ci[1], "n": n, "note": note}


def _first_k(records, k):
    return [r for r in records if r.ensemble_index < k]


def run_analyze(
    records: Sequence[ResponseRecord],
    policy=None,
    rule: str = "reconciled",
    extract_years: bool = False,
    n_bins: int = 5,
    ensemble_max: int = 10,
    seed: int = 0,
) -> dict[str, list[dict]]:
    """Every log-level metric: transfer score, both pi estimators, divergence
    curves over ensemble size, confidence bins, MAE and the oracle distance.

    Target responses of a question are pooled over languages, except for the
    transfer score and the confidence bins which work per target language.
    """
    groups = group_records(records)
    with_target = [g for g in groups if g.target_records and g.source_records]
    summary, curves, conf_rows = [], [], []

    # transfer score over (question, target language)
    rows = []
    for g in groups:
        s = _first_labeled(g.source_records)
        if s is not None:
            rows.append((g.question_id, g.source_language, "source", s))
        for lang, recs in g.target_records.items():
            t = _first_labeled(recs)
            if t is not None:
                rows.append((g.question_id, lang, "target", t))
    table = metrics.CorrectnessTable.from_rows(rows)
    if table.target:
        summary.append(_summary("transfer_score", metrics.transfer_score(table), n=len(table.target)))
    else:
        summary.append(_summary("transfer_score", note=NO_TARGET if not with_target else "no labels"))

    if not with_target:
        for name in ("pi_categorical", "pi_continuous", "mode_agreement", "mae"):
            summary.append(_summary(name, note=NO_TARGET))
    else:
        _analyze_pairs(with_target, policy, rule, extract_years, ensemble_max, summary, curves)
        conf, agree = [], []
        for g in with_target:
            src = _answers(g.source_records, policy)
            for lang in sorted(g.target_records):
                tgt = _answers(g.target_records[lang], policy)
                conf.append(metrics.confidence(src))
                agree.append(float(metrics.mode_match(src, tgt, normalizer=lambda x: x)))
        summary.append(_summary("mode_agreement", float(np.mean(agree)), n=len(agree)))
        for b in bin_confidence(np.array(conf), np.array(agree), n_bins):
            conf_rows.append({"bin_lo": b.lo, "bin_hi": b.hi, "center": b.center,
                              "mean_agreement": b.mean_agreement, "count": b.count})

    correct_emb = {}
    for g in groups:
        embs = [r.embedding for r in g.source_records + g.all_target()
                if r.correct and r.embedding is not None]
        if embs:
            correct_emb[g.question_id] = embs
    oracle = metrics.oracle_distance(correct_emb, seed=seed)
    if oracle is None:
        summary.append(_summary("oracle_distance", note="no question with two correct embeddings"))
    else:
        summary.append(_summary("oracle_distance", oracle.value, oracle.ci, oracle.n_questions))
    return {"summary": summary, "curves": curves, "confidence": conf_rows}


def _analyze_pairs(groups: Sequence[QuestionGroup], policy, rule, extract_years, ensemble_max,
                   summary, curves):
    pairs, dist_pairs, mae_pairs = [], [], []
    chi = {}
    l2 = {}
    mae_k = {}
    for g in groups:
        tgt_recs = g.all_target()
        src_ans, tgt_ans = _answers(g.source_records, policy), _answers(tgt_recs, policy)
        support = sorted(set(src_ans) | set(tgt_ans))
        p, q = _distribution(src_ans, support), _distribution(tgt_ans, support)
        pairs.append((p, q))

        k_hi = min(ensemble_max, 1 + max(r.ensemble_index for r in g.source_records),
                   1 + max(r.ensemble_index for r in tgt_recs))
        for k in range(1, k_hi + 1):
            s_k, t_k = _first_k(g.source_records, k), _first_k(tgt_recs, k)
            chi.setdefault(k, []).append(metrics.chi_squared_distance(
                _distribution(_answers(s_k, policy), support),
                _distribution(_answers(t_k, policy), support)))
            se = [r.embedding for r in s_k if r.embedding is not None]
            te = [r.embedding for r in t_k if r.embedding is not None]
            if se and te:
                l2.setdefault(k, []).append(metrics.l2_centroid_distance(se, te))
            sn, tn = _numeric(s_k, extract_years), _numeric(t_k, extract_years)
            if sn and tn:
                mae_k.setdefault(k, []).append(abs(np.mean(sn) - np.mean(tn)))
        se1 = [r.embedding for r in _first_k(g.source_records, 1) if r.embedding is not None]
        te1 = [r.embedding for r in _first_k(tgt_recs, 1) if r.embedding is not None]
        seK = [r.embedding for r in _first_k(g.source_records, k_hi) if r.embedding is not None]
        teK = [r.embedding for r in _first_k(tgt_recs, k_hi) if r.embedding is not None]
        if k_hi > 1 and se1 and te1 and seK and teK:
            dist_pairs.append((metrics.l2_centroid_distance(se1, te1),
                               metrics.l2_centroid_distance(seK, teK)))
        sn, tn = _numeric(g.source_records, extract_years), _numeric(tgt_recs, extract_years)
        if sn and tn:
            mae_pairs.append((float(np.mean(sn)), float(np.mean(tn))))

    summary.append(_summary("pi_categorical", metrics.pi_categorical(pairs, rule), n=len(pairs),
                            note=f"rule={rule}"))
    if dist_pairs:
        summary.append(_summary("pi_continuous", metrics.pi_continuous(dist_pairs), n=len(dist_pairs)))
    else:
        summary.append(_summary("pi_continuous", note="no embeddings at two ensemble sizes"))
    if mae_pairs:
        summary.append(_summary("mae", metrics.mae(mae_pairs), n=len(mae_pairs)))
    else:
        summary.append(_summary("mae", note="no numeric answers"))
    for name, table in (("chi-squared", chi), ("l2-centroid", l2), ("mae", mae_k)):
        for k in sorted(table):
            vals = table[k]
            curves.append({"metric": name, "n": k, "value": float(np.mean(vals)),
                           "stderr": float(np.std(vals, ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else None,
                           "n_questions": len(vals)})
