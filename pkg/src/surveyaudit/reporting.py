"""Markdown and machine-readable rendering of the report bundle tables.

Table cells round to 2 decimals, half away from zero, and model cells
carry the baseline-relative ratio in parentheses.
"""

from __future__ import annotations

from typing import Mapping, Optional, Sequence

from .metrics import EqualityVerdict, MetricReport, relative_ratio, round_half_away


def fmt2(value: Optional[float]) -> str:
    if value is None:
        return "-"
    return f"{round_half_away(value, 2):.2f}"


def cell_with_ratio(value: float, baseline: Optional[float]) -> str:
    if baseline is None or baseline <= 0:
        return fmt2(value)
    return f"{fmt2(value)} ({fmt2(relative_ratio(value, baseline))})"


def metric_table_markdown(
    case_ids: Sequence[str],
    baseline: Mapping[str, MetricReport],
    models: Mapping[str, Mapping[str, MetricReport]],
) -> str:
    """One row per backend plus the in-sample forest row; Acc and JSS
    columns per case, ratios in parentheses."""
    header = ["Model"]
    for cid in case_ids:
        header += [f"{cid} Acc", f"{cid} JSS"]
    lines = [
        "| " + " | ".join(header) + " |",
        "|" + "---|" * len(header),
    ]

    row = ["*In-sample Random Forest*"]
    for cid in case_ids:
        rep = baseline.get(cid)
        row += [fmt2(rep.accuracy) if rep else "-", fmt2(rep.jss) if rep else "-"]
    lines.append("| " + " | ".join(row) + " |")

    for backend_name, per_case in models.items():
        row = [backend_name]
        for cid in case_ids:
            rep = per_case.get(cid)
            base = baseline.get(cid)
            if rep is None:
                row += ["-", "-"]
            else:
                row += [
                    cell_with_ratio(rep.accuracy, base.accuracy if base else None),
                    cell_with_ratio(rep.jss, base.jss if base else None),
                ]
        lines.append("| " + " | ".join(row) + " |")
    return "\n".join(lines)


def ablation_table_markdown(
    case_ids: Sequence[str],
    rows: Sequence[tuple[str, Mapping[str, tuple[float, float]]]],
) -> str:
    """rows: (mask label, {case_id: (acc, jss)}); per-column minima bold."""
    header = ["Features"]
    for cid in case_ids:
        header += [f"{cid} Acc", f"{cid} JSS"]
    lines = [
        "| " + " | ".join(header) + " |",
        "|" + "---|" * len(header),
    ]

    minima: dict[tuple[str, int], float] = {}
    for cid in case_ids:
        for k in (0, 1):
            vals = [cells[cid][k] for _, cells in rows if cid in cells]
            if vals:
                minima[(cid, k)] = min(round_half_away(v, 2) for v in vals)

    for label, cells in rows:
        row = [label]
        for cid in case_ids:
            if cid not in cells:
                row += ["-", "-"]
                continue
            for k in (0, 1):
                text = fmt2(cells[cid][k])
                if round_half_away(cells[cid][k], 2) == minima.get((cid, k)):
                    text = f"**{text}**"
                row.append(text)
        lines.append("| " + " | ".join(row) + " |")
    return "\n".join(lines)


def equality_matrix_markdown(
    attribute: str, verdict: EqualityVerdict, per_group_acc: Mapping
) -> str:
    lines = [
        f"### Accuracy equality: {attribute}",
        "",
        "| Group | Accuracy | n |",
        "|---|---|---|",
    ]
    for group, acc in per_group_acc.items():
        name = " x ".join(group) if isinstance(group, tuple) else str(group)
        size = verdict.group_sizes.get(group, "-")
        lines.append(f"| {name} | {fmt2(acc)} | {size} |")
    lines.append("")
    status = "satisfied" if verdict.satisfied else "violated"
    lines.append(
        f"Max pairwise gap {verdict.max_gap:.4f} vs tolerance "
        f"{verdict.tolerance:.4f}: **{status}**"
    )
    return "\n".join(lines)


def sensitivity_markdown(
    rows: Sequence[tuple[str, str, float, float, float]]
) -> str:
    """rows: (backend, variant, harmonic mean, min, max) across cases."""
    lines = [
        "| Backend | Variant | Harmonic mean | Min | Max |",
        "|---|---|---|---|---|",
    ]
    for backend, variant, hm, lo, hi in rows:
        lines.append(
            f"| {backend} | {variant} | {fmt2(hm)} | {fmt2(lo)} | {fmt2(hi)} |"
        )
    return "\n".join(lines)
