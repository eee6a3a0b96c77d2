"""Join journals, correlate the six factors, find throttle episodes, aggregate trials."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

from .errors import (
    EmptyInput,
    ExcessiveDrop,
    IntervalMismatch,
    JournalFormatError,
    RunIdMismatch,
    ZeroVariance,
)
from .model import Journal, RunHeader

# Fixed factor order used by every output.
FACTORS = ("speed", "cpu_load", "cpu_temp", "ext_temp", "voltage", "current")
FACTOR_LABELS = {
    "speed": "Speed",
    "cpu_load": "CPU load",
    "cpu_temp": "CPU temp",
    "ext_temp": "Ext temp",
    "voltage": "Voltage",
    "current": "Current",
}

MAX_DROP_RATIO = 0.2
R_TOLERANCE = 1e-12


class AlignedRow(NamedTuple):
    seq: int
    speed: float
    cpu_load: float
    cpu_temp: float
    ext_temp: float
    voltage: float
    current: float


@dataclass
class AlignedTable:
    rows: list[AlignedRow]
    server_header: RunHeader | None = None
    client_header: RunHeader | None = None
    dropped: int = 0

    @property
    def n(self) -> int:
        return len(self.rows)

    @property
    def run_id(self) -> str:
        return self.server_header.run_id if self.server_header else "?"

    @property
    def interval_ms(self) -> int | None:
        return self.server_header.interval_ms if self.server_header else None

    def column(self, name: str) -> list[float]:
        return [getattr(r, name) for r in self.rows]


def align(server_j: Journal, client_j: Journal, max_drop_ratio: float = MAX_DROP_RATIO) -> AlignedTable:
    """Inner-join a server and a client journal on ``seq``."""
    if server_j.role != "server" or client_j.role != "client":
        raise JournalFormatError("align() takes a server journal and a client journal")
    sh, ch = server_j.header, client_j.header
    if sh.interval_ms != ch.interval_ms:
        raise IntervalMismatch(f"server samples every {sh.interval_ms} ms, client every {ch.interval_ms} ms")
    if sh.run_id != ch.run_id:
        raise RunIdMismatch(f"server run {sh.run_id!r} vs client run {ch.run_id!r}")
    by_seq = {r.seq: r for r in client_j.rows}
    rows = []
    for s in server_j.rows:
        c = by_seq.get(s.seq)
        if c is not None:
            rows.append(AlignedRow(s.seq, float(c.speed_bps), s.cpu_load, s.cpu_temp, s.ext_temp, s.voltage, s.current))
    rows.sort(key=lambda r: r.seq)
    dropped = len(server_j.rows) + len(client_j.rows) - 2 * len(rows)
    longest = max(len(server_j.rows), len(client_j.rows))
    if longest and dropped / longest > max_drop_ratio:
        raise ExcessiveDrop(f"{dropped} of {longest} rows have no partner (limit {max_drop_ratio:.0%})")
    return AlignedTable(rows, sh, ch, dropped)


def pool(tables: Sequence[AlignedTable]) -> AlignedTable:
    """Concatenate the rows of several tables (pooled correlation)."""
    if not tables:
        raise EmptyInput("no tables to pool")
    rows = [r for t in tables for r in t.rows]
    return AlignedTable(rows, tables[0].server_header, tables[0].client_header, sum(t.dropped for t in tables))


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson's r by the two-pass (centred) formulation.

    Algebraically identical to
    ``(nΣxy − ΣxΣy) / sqrt((nΣx² − (Σx)²)(nΣy² − (Σy)²))`` but free of the
    cancellation that formula suffers on large, offset data.
    """
    n = len(x)
    if n != len(y):
        raise ValueError(f"series lengths differ: {n} vs {len(y)}")
    if n < 2:
        raise ValueError("need at least two points")
    if min(x) == max(x) or min(y) == max(y):
        raise ZeroVariance("constant series")
    mx = math.fsum(x) / n
    my = math.fsum(y) / n
    dx = [v - mx for v in x]
    dy = [v - my for v in y]
    # r is scale free; normalising keeps the sums away from under- and overflow
    kx = max(abs(v) for v in dx)
    ky = max(abs(v) for v in dy)
    if kx == 0.0 or ky == 0.0:
        raise ZeroVariance("constant series")
    dx = [v / kx for v in dx]
    dy = [v / ky for v in dy]
    sxy = math.fsum(a * b for a, b in zip(dx, dy))
    sxx = math.fsum(a * a for a in dx)
    syy = math.fsum(b * b for b in dy)
    if sxx == 0.0 or syy == 0.0:
        raise ZeroVariance("constant series")
    r = sxy / math.sqrt(sxx * syy)
    if not math.isfinite(r) or abs(r) > 1.0 + R_TOLERANCE:
        raise ArithmeticError(f"correlation {r!r} outside [-1, 1]")
    return max(-1.0, min(1.0, r))


@dataclass(frozen=True)
class CorrelationMatrix:
    labels: tuple[str, ...]
    # None marks an undefined cell (a zero-variance factor)
    r: tuple[tuple[float | None, ...], ...]

    def get(self, a: str, b: str) -> float | None:
        return self.r[self.labels.index(a)][self.labels.index(b)]

    def is_symmetric(self) -> bool:
        k = len(self.labels)
        return all(self.r[i][j] == self.r[j][i] for i in range(k) for j in range(k))


def correlation_matrix(t: AlignedTable, factors: Sequence[str] = FACTORS) -> CorrelationMatrix:
    if t.n < 2:
        raise EmptyInput(f"need at least two aligned rows, have {t.n}")
    cols = [t.column(f) for f in factors]
    k = len(factors)
    r: list[list[float | None]] = [[None] * k for _ in range(k)]
    for i in range(k):
        r[i][i] = 1.0
        for j in range(i + 1, k):
            try:
                r[i][j] = r[j][i] = pearson(cols[i], cols[j])
            except ZeroVariance:
                pass
    return CorrelationMatrix(tuple(factors), tuple(tuple(row) for row in r))


@dataclass(frozen=True)
class ThrottleEpisode:
    start_seq: int
    end_seq: int
    peak_temp: float
    load_drop: float


def detect_throttle(t: AlignedTable, temp_floor: float = 75.0, drop_pp: float = 15.0) -> list[ThrottleEpisode]:
    """Find stretches where a hot CPU suddenly sheds load.

    An episode opens at row ``k`` when the temperature at ``k-1`` is at least
    ``temp_floor`` and the load falls by ``drop_pp`` points from ``k-1`` to
    ``k``. It lasts until the load is back within ``drop_pp / 2`` of the value
    it had before the drop; ``end_seq`` is the last row before that recovery.
    """
    rows = t.rows
    episodes = []
    k = 1
    while k < len(rows):
        prev, cur = rows[k - 1], rows[k]
        if prev.cpu_temp >= temp_floor and prev.cpu_load - cur.cpu_load >= drop_pp:
            baseline = prev.cpu_load
            j = k + 1
            while j < len(rows) and rows[j].cpu_load < baseline - drop_pp / 2:
                j += 1
            inside = rows[k:j]
            episodes.append(
                ThrottleEpisode(
                    start_seq=cur.seq,
                    end_seq=inside[-1].seq,
                    peak_temp=max(prev.cpu_temp, *(r.cpu_temp for r in inside)),
                    load_drop=baseline - min(r.cpu_load for r in inside),
                )
            )
            k = j
        k += 1
    return episodes


@dataclass(frozen=True)
class FactorStats:
    mean: float
    min: float
    max: float


@dataclass
class TrialSummary:
    trials: int
    factors: dict[str, FactorStats]
    mean_matrix: CorrelationMatrix
    counts: tuple[tuple[int, ...], ...]
    pooled: CorrelationMatrix | None = None
    episodes: list[list[ThrottleEpisode]] = field(default_factory=list)


def mean_matrix(matrices: Sequence[CorrelationMatrix]) -> tuple[CorrelationMatrix, tuple[tuple[int, ...], ...]]:
    """Average the defined cells; also return how many matrices defined each cell."""
    if not matrices:
        raise EmptyInput("no matrices to average")
    labels = matrices[0].labels
    if any(m.labels != labels for m in matrices):
        raise ValueError("matrices have different factor labels")
    k = len(labels)
    mean: list[list[float | None]] = [[None] * k for _ in range(k)]
    counts = [[0] * k for _ in range(k)]
    for i in range(k):
        for j in range(k):
            vals = [m.r[i][j] for m in matrices if m.r[i][j] is not None]
            counts[i][j] = len(vals)
            if vals:
                mean[i][j] = math.fsum(vals) / len(vals)
    return (
        CorrelationMatrix(labels, tuple(tuple(r) for r in mean)),
        tuple(tuple(c) for c in counts),
    )


def aggregate_trials(tables: Sequence[AlignedTable], factors: Sequence[str] = FACTORS) -> TrialSummary:
    """Per-factor statistics across trials plus mean and pooled correlation matrices.

    ``mean`` is the average of per-trial means (every trial weighs the same);
    ``min``/``max`` are taken over all rows of all trials.
    """
    if not tables:
        raise EmptyInput("no trials to aggregate")
    stats = {}
    for f in factors:
        cols = [t.column(f) for t in tables if t.n]
        if not cols:
            raise EmptyInput("every trial is empty")
        means = [math.fsum(c) / len(c) for c in cols]
        stats[f] = FactorStats(
            mean=math.fsum(means) / len(means),
            min=min(min(c) for c in cols),
            max=max(max(c) for c in cols),
        )
    matrices = [correlation_matrix(t, factors) for t in tables if t.n >= 2]
    if not matrices:
        raise EmptyInput("no trial has two or more aligned rows")
    mean, counts = mean_matrix(matrices)
    pooled = correlation_matrix(pool(tables), factors)
    return TrialSummary(
        trials=len(tables),
        factors=stats,
        mean_matrix=mean,
        counts=counts,
        pooled=pooled,
        episodes=[detect_throttle(t) for t in tables],
    )
