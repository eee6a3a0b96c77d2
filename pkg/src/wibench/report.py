"""Text and CSV renderings of the analysis results."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .analysis import (
    FACTOR_LABELS,
    FACTORS,
    AlignedTable,
    CorrelationMatrix,
    ThrottleEpisode,
    TrialSummary,
)
from .errors import LabelMismatch
from .model import format_fixed

PLOT_COLUMNS = ("seq", "t_ms", "speed_bps", "cpu_load", "cpu_temp", "ext_temp", "voltage", "current")


def _cell(value: float | None) -> str:
    return "n/a" if value is None else format_fixed(value, 2)


def render_matrix(a: CorrelationMatrix, b: CorrelationMatrix | None = None) -> str:
    """Lower-triangular table, two decimals; ``a/b`` per cell when ``b`` is given."""
    if b is not None and b.labels != a.labels:
        raise LabelMismatch(f"{a.labels} vs {b.labels}")
    names = [FACTOR_LABELS.get(l, l) for l in a.labels]
    k = len(names)
    cells = [["" for _ in range(k)] for _ in range(k)]
    for i in range(k):
        for j in range(i + 1):
            text = _cell(a.r[i][j])
            if b is not None:
                text += "/" + _cell(b.r[i][j])
            cells[i][j] = text
    first = max(len(n) for n in names)
    widths = [max(len(names[j]), *(len(cells[i][j]) for i in range(k))) for j in range(k)]
    lines = [" " * first + "".join("  " + names[j].ljust(widths[j]) for j in range(k))]
    for i in range(k):
        row = names[i].ljust(first) + "".join("  " + cells[i][j].ljust(widths[j]) for j in range(i + 1))
        lines.append(row.rstrip())
    return "\n".join(line.rstrip() for line in lines) + "\n"


def plot_csv(tables: Sequence[AlignedTable]) -> str:
    """Per-factor time series, one row per aligned sample, for external plotting."""
    out = ["run_id," + ",".join(PLOT_COLUMNS)]
    for t in tables:
        interval = t.interval_ms or 0
        for r in t.rows:
            out.append(
                ",".join(
                    [
                        t.run_id,
                        str(r.seq),
                        str(r.seq * interval),
                        str(int(r.speed)),
                        format_fixed(r.cpu_load, 1),
                        format_fixed(r.cpu_temp, 1),
                        format_fixed(r.ext_temp, 1),
                        format_fixed(r.voltage, 3),
                        format_fixed(r.current, 3),
                    ]
                )
            )
    return "\n".join(out) + "\n"


@dataclass
class ReportDocument:
    matrix_text: str
    plot_csv: str
    pair_mode: CorrelationMatrix | None = None


def _episodes_text(run_id: str, episodes: list[ThrottleEpisode]) -> list[str]:
    if not episodes:
        return [f"  {run_id}: none"]
    return [
        f"  {run_id}: seq {e.start_seq}-{e.end_seq}, peak {format_fixed(e.peak_temp, 1)} C, "
        f"load drop {format_fixed(e.load_drop, 1)} pp"
        for e in episodes
    ]


def analysis_report(tables: Sequence[AlignedTable], summary: TrialSummary, mode: str = "pooled") -> str:
    """The ``analyze`` output: alignment bookkeeping, matrix, factor statistics, episodes."""
    lines = ["wibench correlation report", ""]
    for t in tables:
        h = t.server_header
        where = ", ".join(x for x in (h.device_label, h.distance_label) if x) if h else ""
        lines.append(
            f"run {t.run_id}{' (' + where + ')' if where else ''}: "
            f"{t.n} aligned rows, {t.dropped} dropped"
        )
    matrix = summary.pooled if mode == "pooled" else summary.mean_matrix
    total_rows = sum(t.n for t in tables)
    lines += ["", f"Pearson correlation, {mode} over {summary.trials} trial(s), {total_rows} rows", ""]
    lines.append(render_matrix(matrix).rstrip("\n"))
    if mode == "mean":
        lines += ["", "defined-cell counts (lower triangle):"]
        for i, f in enumerate(FACTORS):
            lines.append(f"  {FACTOR_LABELS[f]:<9}" + " ".join(f"{summary.counts[i][j]:>3}" for j in range(i + 1)))
    lines += ["", f"{'factor':<10}{'mean':>12}{'min':>12}{'max':>12}"]
    for f in FACTORS:
        s = summary.factors[f]
        places = 0 if f == "speed" else (3 if f in ("voltage", "current") else 1)
        lines.append(
            f"{FACTOR_LABELS[f]:<10}"
            + "".join(f"{format_fixed(v, places):>12}" for v in (s.mean, s.min, s.max))
        )
    lines += ["", "throttle episodes:"]
    for t, eps in zip(tables, summary.episodes):
        lines += _episodes_text(t.run_id, eps)
    return "\n".join(lines) + "\n"
