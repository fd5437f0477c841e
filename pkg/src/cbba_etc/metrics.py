"""Per-trial counters and the statistical comparison pipeline.

Post-hoc comparisons against the control use Bonferroni-corrected Welch
t-tests in place of Dunnett's procedure (more conservative).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import stats as sps

METRIC_FIELDS = ("rescued", "expired", "failed_rescues", "messages_sent", "negotiations")
TRIGGER_KINDS = ("init", "dbid", "conflict", "fallback")


@dataclass
class TrialMetrics:
    rescued: int = 0
    expired: int = 0
    failed_rescues: int = 0
    messages_sent: int = 0
    negotiations: int = 0
    trigger_histogram: dict[str, int] = field(default_factory=lambda: {k: 0 for k in TRIGGER_KINDS})
    robots_alive_at_end: int = 0
    trial_index: int = 0
    rng_seed: int = 0
    victims_spawned: int = 0

    def as_row(self) -> dict[str, int]:
        row = {name: int(getattr(self, name)) for name in METRIC_FIELDS}
        for k in TRIGGER_KINDS:
            row[f"trig_{k}"] = int(self.trigger_histogram.get(k, 0))
        row["robots_alive_at_end"] = int(self.robots_alive_at_end)
        return row


@dataclass
class MetricSummary:
    n: int
    mean: float
    sd: float
    ci95: float
    total: int


def summarize(samples: Sequence[float]) -> MetricSummary:
    """Mean, sample SD and t-based 95% CI half-width; totals are exact integer sums."""
    arr = np.asarray(samples, dtype=float)
    n = arr.size
    total = int(sum(int(x) for x in samples)) if all(float(x).is_integer() for x in samples) else 0
    if n == 0:
        return MetricSummary(0, math.nan, math.nan, math.nan, 0)
    mean = float(arr.mean())
    if n < 2:
        return MetricSummary(n, mean, math.nan, math.nan, total)
    sd = float(arr.std(ddof=1))
    half = float(sps.t.ppf(0.975, n - 1) * sd / math.sqrt(n))
    return MetricSummary(n, mean, sd, half, total)


@dataclass
class GroupSummary:
    strategy: str
    metrics: dict[str, MetricSummary]


def group_summaries(rows: Sequence[Mapping], metrics: Sequence[str] = METRIC_FIELDS) -> dict[str, GroupSummary]:
    by: dict[str, list[Mapping]] = {}
    for r in rows:
        by.setdefault(r["strategy"], []).append(r)
    return {
        s: GroupSummary(s, {m: summarize([float(r[m]) for r in rs]) for m in metrics})
        for s, rs in by.items()
    }


def _check_groups(groups) -> list[np.ndarray]:
    if len(groups) < 2:
        raise ValueError("need at least two groups")
    out = [np.asarray(g, dtype=float) for g in groups]
    for g in out:
        if g.size < 2:
            raise ValueError("every group needs at least two samples")
    return out


def anova_oneway(groups: Sequence[Sequence[float]]) -> tuple[float, float]:
    """Classical one-way ANOVA. Returns (F, p)."""
    gs = _check_groups(groups)
    allv = np.concatenate(gs)
    grand = allv.mean()
    k, n = len(gs), allv.size
    ss_between = sum(g.size * (g.mean() - grand) ** 2 for g in gs)
    ss_within = sum(((g - g.mean()) ** 2).sum() for g in gs)
    df_b, df_w = k - 1, n - k
    if ss_within == 0.0:
        if ss_between == 0.0:
            return 0.0, 1.0
        return math.inf, 0.0
    f = (ss_between / df_b) / (ss_within / df_w)
    return float(f), float(sps.f.sf(f, df_b, df_w))


def pooled_t(a: Sequence[float], b: Sequence[float]) -> float:
    """Student's two-sample t with pooled variance (used to cross-check ANOVA)."""
    a, b = _check_groups([a, b])
    na, nb = a.size, b.size
    sp2 = ((na - 1) * a.var(ddof=1) + (nb - 1) * b.var(ddof=1)) / (na + nb - 2)
    return float((a.mean() - b.mean()) / math.sqrt(sp2 * (1.0 / na + 1.0 / nb)))


def cohens_d(a: Sequence[float], b: Sequence[float]) -> float:
    a, b = _check_groups([a, b])
    na, nb = a.size, b.size
    diff = a.mean() - b.mean()
    sp = math.sqrt(((na - 1) * a.var(ddof=1) + (nb - 1) * b.var(ddof=1)) / (na + nb - 2))
    if sp == 0.0:
        if diff == 0.0:
            return 0.0
        return math.copysign(math.inf, diff)
    return float(diff / sp)


def welch_p(a: Sequence[float], b: Sequence[float]) -> float:
    a, b = _check_groups([a, b])
    if a.var(ddof=1) == 0.0 and b.var(ddof=1) == 0.0:
        return 1.0 if a.mean() == b.mean() else 0.0
    with warnings.catch_warnings():
        # near-identical samples trigger a precision warning; the p-value is still usable
        warnings.simplefilter("ignore", RuntimeWarning)
        return float(sps.ttest_ind(a, b, equal_var=False).pvalue)


def bonferroni(pvals: Sequence[float]) -> list[float]:
    m = len(pvals)
    return [min(1.0, p * m) for p in pvals]


def posthoc_vs_control(control: Sequence[float], others: Mapping[str, Sequence[float]]
                       ) -> dict[str, tuple[float, float]]:
    """name -> (Bonferroni-adjusted Welch p, Cohen's d of other vs control)."""
    names = list(others)
    raw = [welch_p(others[n], control) for n in names]
    adj = bonferroni(raw)
    return {n: (adj[i], cohens_d(others[n], control)) for i, n in enumerate(names)}


def compare(rows: Sequence[Mapping], control: str = "cbba-etc",
            metrics: Sequence[str] = METRIC_FIELDS) -> list[dict]:
    """One record per (metric, strategy): means, ANOVA and post-hoc vs the control."""
    by: dict[str, list[Mapping]] = {}
    for r in rows:
        by.setdefault(r["strategy"], []).append(r)
    if control not in by:
        raise ValueError(f"control strategy {control!r} not present in input")
    out = []
    for m in metrics:
        samples = {s: [float(r[m]) for r in rs] for s, rs in by.items()}
        f, p = anova_oneway(list(samples.values()))
        others = {s: v for s, v in samples.items() if s != control}
        ph = posthoc_vs_control(samples[control], others)
        for s, v in samples.items():
            sm = summarize(v)
            p_adj, d = ph.get(s, (math.nan, math.nan))
            out.append({"metric": m, "strategy": s, "n": sm.n, "mean": sm.mean, "sd": sm.sd,
                        "ci95": sm.ci95, "anova_F": f, "anova_p": p, "p_adj_vs_control": p_adj,
                        "d_vs_control": d})
    return out
