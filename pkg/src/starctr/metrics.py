"""Ranking and calibration metrics: AUC, per-user weighted AUC, PCOC."""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from typing import Iterable, NamedTuple

import numpy as np

from .errors import DataError, MetricError, UndefinedAucError


class Prediction(NamedTuple):
    user: int
    p: int
    yhat: float
    y: int


def auc(scores, labels) -> float:
    """Rank-based (Mann-Whitney) AUC; tied scores contribute midranks.

    Raises UndefinedAucError when the group has a single class.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    n = scores.size
    npos = int(labels.sum())
    nneg = n - npos
    if npos == 0 or nneg == 0:
        raise UndefinedAucError(
            f"single-class group ({npos} positives of {n})"
        )
    order = np.argsort(scores, kind="stable")
    s = scores[order]
    change = np.nonzero(np.diff(s))[0]
    starts = np.concatenate(([0], change + 1))
    ends = np.concatenate((change + 1, [n]))
    mid = (starts + ends + 1) / 2.0
    ranks = np.empty(n)
    ranks[order] = np.repeat(mid, ends - starts)
    pos_rank_sum = ranks[labels == 1].sum()
    return (pos_rank_sum - npos * (npos + 1) / 2.0) / (npos * nneg)


def auc_or_none(scores, labels) -> float | None:
    try:
        return auc(scores, labels)
    except UndefinedAucError:
        return None


def weighted_auc(predictions: Iterable[Prediction]) -> float:
    """Impression-weighted average of per-user AUCs.

    Users whose impressions are single-class have no AUC and are excluded
    from both sums.
    """
    value, used, _ = weighted_auc_detail(predictions)
    if used == 0:
        raise MetricError("no user has a defined AUC")
    return value


def weighted_auc_detail(predictions: Iterable[Prediction]
                        ) -> tuple[float, int, int]:
    """(weighted AUC, users counted, users excluded)."""
    by_user: dict[int, list[Prediction]] = {}
    for pred in predictions:
        by_user.setdefault(pred.user, []).append(pred)
    num = 0.0
    den = 0.0
    used = 0
    excluded = 0
    for user in sorted(by_user):
        group = by_user[user]
        value = auc_or_none([g.yhat for g in group], [g.y for g in group])
        if value is None:
            excluded += 1
            continue
        weight = len(group)
        num += weight * value
        den += weight
        used += 1
    return (num / den if den else float("nan")), used, excluded


def pcoc(yhat, y) -> float:
    """Predicted CTR over observed CTR; 1.0 means calibrated on average.

    Computed as mean(yhat / mean(y)): normalizing before averaging keeps the
    constant-predictor-at-empirical-CTR case exactly 1.0 for any group size.
    """
    yhat = np.asarray(yhat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    clicks = y.sum()
    if clicks == 0:
        raise MetricError("PCOC undefined: zero clicks")
    return float((yhat / y.mean()).mean())


def pcoc_or_none(yhat, y) -> float | None:
    try:
        return pcoc(yhat, y)
    except MetricError:
        return None


@dataclass
class MetricReport:
    overall_auc: float | None
    weighted_auc: float | None
    weighted_auc_users: int
    weighted_auc_excluded: int
    per_domain_auc: dict[int, float | None]
    per_domain_weighted_auc: dict[int, float | None]
    per_domain_pcoc: dict[int, float | None]
    per_domain_count: dict[int, int]
    pcoc_std: float | None
    n_examples: int

    def to_dict(self) -> dict:
        d = asdict(self)
        # JSON object keys must be strings; keep domain maps sorted.
        for key in ("per_domain_auc", "per_domain_weighted_auc",
                    "per_domain_pcoc", "per_domain_count"):
            d[key] = {str(k): d[key][k] for k in sorted(d[key])}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def to_kv_text(self) -> str:
        lines = [
            f"n_examples={self.n_examples}",
            f"overall_auc={_fmt(self.overall_auc)}",
            f"weighted_auc={_fmt(self.weighted_auc)}",
            f"weighted_auc_users={self.weighted_auc_users}",
            f"weighted_auc_excluded={self.weighted_auc_excluded}",
            f"pcoc_std={_fmt(self.pcoc_std)}",
        ]
        for p in sorted(self.per_domain_auc):
            lines.append(f"domain.{p}.count={self.per_domain_count[p]}")
            lines.append(f"domain.{p}.auc={_fmt(self.per_domain_auc[p])}")
            lines.append(
                f"domain.{p}.weighted_auc="
                f"{_fmt(self.per_domain_weighted_auc[p])}")
            lines.append(f"domain.{p}.pcoc={_fmt(self.per_domain_pcoc[p])}")
        return "\n".join(lines) + "\n"


def _fmt(value) -> str:
    return "undefined" if value is None else repr(float(value))


def build_report(predictions: list[Prediction]) -> MetricReport:
    if not predictions:
        raise DataError("no predictions to report on")
    yhat = np.array([p.yhat for p in predictions])
    y = np.array([p.y for p in predictions])
    if not ((yhat > 0.0) & (yhat < 1.0)).all():
        bad = yhat[(yhat <= 0.0) | (yhat >= 1.0)][0]
        raise DataError(f"prediction {bad!r} outside (0, 1)")
    domains = np.array([p.p for p in predictions])
    overall = auc_or_none(yhat, y)
    wauc, used, excluded = weighted_auc_detail(predictions)
    per_auc: dict[int, float | None] = {}
    per_wauc: dict[int, float | None] = {}
    per_pcoc: dict[int, float | None] = {}
    per_count: dict[int, int] = {}
    for p in sorted(set(int(d) for d in domains)):
        mask = domains == p
        per_count[p] = int(mask.sum())
        per_auc[p] = auc_or_none(yhat[mask], y[mask])
        # Per-user AUC within the domain: (user, domain) grouping.
        in_domain = [pred for pred in predictions if pred.p == p]
        value, used_p, _ = weighted_auc_detail(in_domain)
        per_wauc[p] = value if used_p else None
        per_pcoc[p] = pcoc_or_none(yhat[mask], y[mask])
    defined = [v for v in per_pcoc.values() if v is not None]
    pcoc_std = float(np.std(defined)) if defined else None
    return MetricReport(
        overall_auc=overall,
        weighted_auc=None if used == 0 else wauc,
        weighted_auc_users=used,
        weighted_auc_excluded=excluded,
        per_domain_auc=per_auc,
        per_domain_weighted_auc=per_wauc,
        per_domain_pcoc=per_pcoc,
        per_domain_count=per_count,
        pcoc_std=pcoc_std,
        n_examples=len(predictions),
    )


def pcoc_scatter_svg(per_domain_pcoc: dict[int, float | None],
                     title: str = "per-domain PCOC") -> str:
    """Standalone SVG scatter of per-domain PCOC around the 1.0 line."""
    width, height = 420, 260
    margin = 40
    points = [(p, v) for p, v in sorted(per_domain_pcoc.items())
              if v is not None]
    values = [v for _, v in points] or [1.0]
    vmax = max(2.0, max(values) * 1.15)
    plot_w = width - 2 * margin
    plot_h = height - 2 * margin

    def sx(i):
        return margin + plot_w * (i + 0.5) / max(1, len(points))

    def sy(v):
        return height - margin - plot_h * min(v, vmax) / vmax

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" '
        f'font-size="13">{title}</text>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{sy(1.0):.2f}" x2="{width - margin}" '
        f'y2="{sy(1.0):.2f}" stroke="gray" stroke-dasharray="4 3"/>',
        f'<text x="{margin - 6}" y="{sy(1.0) + 4:.2f}" text-anchor="end" '
        f'font-size="10">1.0</text>',
    ]
    for i, (p, v) in enumerate(points):
        parts.append(
            f'<circle cx="{sx(i):.2f}" cy="{sy(v):.2f}" r="6" fill="none" '
            f'stroke="steelblue" stroke-width="1.5"/>'
        )
        parts.append(
            f'<text x="{sx(i):.2f}" y="{height - margin + 14}" '
            f'text-anchor="middle" font-size="10">{p}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
