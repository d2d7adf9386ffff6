"""Analysis reports and their text, CSV and JSON renderings."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from .inference import DownturnDecision, JointInference

__all__ = ["ReportRow", "Report", "render", "from_inference", "FORMATS"]

FORMATS = ("text", "csv", "json")
SIG_DIGITS = 10

CSV_COLUMNS = [
    "label",
    "estimate",
    "std_error",
    "statistic",
    "p_raw",
    "p_adjusted",
    "lower",
    "upper",
    "effect",
    "effect_lower",
    "effect_upper",
]


def _num(x) -> float | None:
    """Round to 10 significant digits; non-finite values become ``None``."""
    if x is None:
        return None
    x = float(x)
    if not math.isfinite(x):
        return None
    return float(f"{x:.{SIG_DIGITS}g}")


@dataclass
class ReportRow:
    label: str
    estimate: float | None
    std_error: float | None
    statistic: float | None
    p_raw: float | None
    p_adjusted: float | None
    lower: float | None = None
    upper: float | None = None
    effect: float | None = None
    effect_lower: float | None = None
    effect_upper: float | None = None


@dataclass
class Report:
    metadata: dict[str, Any]
    rows: list[ReportRow] = field(default_factory=list)
    decisions: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "metadata": self.metadata,
            "rows": [asdict(r) for r in self.rows],
            "decisions": self.decisions,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Report":
        data = json.loads(text)
        rows = [ReportRow(**r) for r in data.get("rows", [])]
        return cls(data["metadata"], rows, data.get("decisions", {}))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in self.rows:
            d = asdict(r)
            writer.writerow(["" if d[c] is None else (f"{d[c]:.{SIG_DIGITS}g}" if c != "label" else d[c]) for c in CSV_COLUMNS])
        return buf.getvalue()

    def to_text(self) -> str:
        md = self.metadata
        ratio = md.get("effect_scale", "difference") != "difference"
        effect_name = {"odds_ratio": "Odds ratio", "rate_ratio": "Rate ratio"}.get(md.get("effect_scale"), "Estimate")
        alt = md.get("alternative", "greater")
        bound_name = {"greater": "Lower bound", "less": "Upper bound"}.get(alt, "Bounds")
        lines = []
        title = md.get("title", "Trend test")
        lines.append(title)
        info = [f"alternative: {alt}", f"alpha: {md.get('alpha')}"]
        if md.get("df") is not None:
            info.append(f"df: {md['df']:g}")
        else:
            info.append("df: inf")
        if md.get("critical_value") is not None:
            info.append(f"critical value: {md['critical_value']:.4f}")
        info.append(f"seed: {md.get('seed')}, mvt tol: {md.get('mvt_tol')}")
        lines.append(", ".join(info))
        lines.append("")
        width = max([len("Model")] + [len(r.label) for r in self.rows])
        header = f"{'Model':<{width}}  {'Test statistic':>14}  {'p-value':>8}  {effect_name:>10}  {bound_name:>18}"
        lines.append(header)
        lines.append("-" * len(header))
        for r in self.rows:
            est = r.effect if ratio else r.estimate
            lo = r.effect_lower if ratio else r.lower
            hi = r.effect_upper if ratio else r.upper
            if alt == "greater":
                bound = _fmt_g(lo)
            elif alt == "less":
                bound = _fmt_g(hi)
            else:
                bound = f"[{_fmt_g(lo)}, {_fmt_g(hi)}]"
            lines.append(
                f"{r.label:<{width}}  {_fmt(r.statistic, 3):>14}  {_fmt_p(r.p_adjusted):>8}  "
                f"{_fmt_g(est):>10}  {bound:>18}"
            )
        guard = self.decisions.get("downturn_guard")
        if guard:
            lines.append("")
            verdict = "yes" if guard["monotone_trend"] else "no"
            extra = " (downturn flagged)" if guard["downturn_flagged"] else ""
            lines.append(
                f"Downturn guard: trend p = {_fmt_p(guard['trend_p'])}, "
                f"{guard['high_vs_control_label']} p = {_fmt_p(guard['high_vs_control_p'])}; "
                f"monotone trend claimed: {verdict}{extra}"
            )
        return "\n".join(lines) + "\n"

    def render(self, fmt: str = "text") -> str:
        if fmt == "text":
            return self.to_text()
        if fmt == "csv":
            return self.to_csv()
        if fmt == "json":
            return self.to_json()
        raise ValueError(f"unknown format {fmt!r}; choose from {FORMATS}")


def _fmt(x, digits: int) -> str:
    return "" if x is None else f"{x:.{digits}f}"


def _fmt_g(x) -> str:
    return "" if x is None else f"{x:.4g}"


def _fmt_p(p) -> str:
    if p is None:
        return ""
    return "<0.0001" if p < 1e-4 else f"{p:.4f}"


def render(report: Report, fmt: str = "text", out: str | Path | None = None) -> bytes:
    """Render a report; write it to ``out`` when given.  Returns the encoded bytes."""
    data = report.render(fmt).encode("utf-8")
    if out is not None:
        Path(out).write_bytes(data)
    return data


def _guard_dict(decision: DownturnDecision | None) -> dict[str, Any]:
    if decision is None:
        return {}
    d = asdict(decision)
    for key in ("trend_p", "high_vs_control_t", "high_vs_control_p", "alpha"):
        d[key] = _num(d[key])
    return {"downturn_guard": d}


def from_inference(
    result: JointInference,
    metadata: dict[str, Any],
    decision: DownturnDecision | None = None,
) -> Report:
    """Build a report from a finished joint inference."""
    eff, eff_lo, eff_hi = result.effects()
    ratio = result.effect_scale != "difference"
    rows = []
    for j, label in enumerate(result.labels):
        lo = None if result.lower is None else result.lower[j]
        hi = None if result.upper is None else result.upper[j]
        rows.append(
            ReportRow(
                label=label,
                estimate=_num(result.estimates[j]),
                std_error=_num(result.std_errors[j]),
                statistic=_num(result.t_stats[j]),
                p_raw=_num(result.raw_p[j]),
                p_adjusted=_num(result.adjusted_p[j]),
                lower=_num(lo),
                upper=_num(hi),
                effect=_num(eff[j]) if ratio else None,
                effect_lower=_num(eff_lo[j]) if ratio and eff_lo is not None else None,
                effect_upper=_num(eff_hi[j]) if ratio and eff_hi is not None else None,
            )
        )
    md = dict(metadata)
    md.update(
        alternative=result.alternative,
        alpha=result.alpha,
        df=None if math.isinf(result.df) else _num(result.df),
        critical_value=_num(result.critical_value),
        effect_scale=result.effect_scale,
        seed=int(result.seed),
        mvt_tol=float(result.mvt_tol),
        max_statistic=[result.labels[i] for i in result.max_index],
    )
    return Report(md, rows, _guard_dict(decision))

