"""Sample types, run headers and the CSV journal format.

A journal file looks like::

    # run_id=sim-42;role=server;interval_ms=50;device=sim;distance=0.5m
    seq,t_ms,cpu_load,cpu_temp,ext_temp,voltage,current
    0,0,25.0,47.2,23.4,5.012,0.340
    ...
    # aborted=<reason>            (only when the run stopped early)

All files are UTF-8 with LF line endings and a period decimal separator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import IO, Iterable, Union

from .errors import FieldCountMismatch, JournalFormatError, NumericParseError

ROLES = ("server", "client")

SERVER_COLUMNS = ("seq", "t_ms", "cpu_load", "cpu_temp", "ext_temp", "voltage", "current")
CLIENT_COLUMNS = ("seq", "t_ms", "bytes_total", "bytes_delta", "speed_bps", "pct_complete")

# decimal places per column; 0 means integer
SERVER_PLACES = {"cpu_load": 1, "cpu_temp": 1, "ext_temp": 1, "voltage": 3, "current": 3}
CLIENT_PLACES = {"pct_complete": 1}

MAX_ABS_CURRENT = 10.0


def _to_decimal(value: float, places: int) -> Decimal:
    step = Decimal(1).scaleb(-places)
    d = Decimal(repr(float(value))).quantize(step, rounding=ROUND_HALF_UP)
    # no "-0.0" in output
    return abs(d) if d == 0 else d


def quantize(value: float, places: int) -> float:
    """Round half away from zero to ``places`` decimals.

    Rounding works on the shortest decimal representation of ``value``, so
    ``quantize(0.125, 2) == 0.13`` even though 0.125 is stored exactly and
    ``quantize(2.675, 2) == 2.68`` although the binary value sits below.
    """
    return float(_to_decimal(value, places))


def format_fixed(value: float, places: int) -> str:
    return str(_to_decimal(value, places))


def _check_finite(name: str, value: float) -> None:
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value!r}")


@dataclass(frozen=True)
class ServerSample:
    seq: int
    t_ms: int
    cpu_load: float
    cpu_temp: float
    ext_temp: float
    voltage: float
    current: float

    def __post_init__(self):
        if self.seq < 0 or self.t_ms < 0:
            raise ValueError("seq and t_ms must be non-negative")
        for name in SERVER_PLACES:
            _check_finite(name, getattr(self, name))
        if not 0.0 <= self.cpu_load <= 100.0:
            raise ValueError(f"cpu_load out of [0, 100]: {self.cpu_load}")
        if self.voltage < 0:
            raise ValueError(f"negative voltage: {self.voltage}")
        if abs(self.current) > MAX_ABS_CURRENT:
            raise ValueError(f"|current| above {MAX_ABS_CURRENT} A: {self.current}")

    def quantized(self) -> ServerSample:
        return replace(self, **{k: quantize(getattr(self, k), p) for k, p in SERVER_PLACES.items()})


@dataclass(frozen=True)
class ClientSample:
    seq: int
    t_ms: int
    bytes_total: int
    bytes_delta: int
    speed_bps: int
    pct_complete: float

    def __post_init__(self):
        if self.seq < 0 or self.t_ms < 0:
            raise ValueError("seq and t_ms must be non-negative")
        if self.bytes_total < 0 or self.bytes_delta < 0 or self.speed_bps < 0:
            raise ValueError("byte counts and speed must be non-negative")
        _check_finite("pct_complete", self.pct_complete)
        if not 0.0 <= self.pct_complete <= 100.0:
            raise ValueError(f"pct_complete out of [0, 100]: {self.pct_complete}")

    def quantized(self) -> ClientSample:
        return replace(self, pct_complete=quantize(self.pct_complete, 1))


Sample = Union[ServerSample, ClientSample]


def columns_for(role: str) -> tuple[str, ...]:
    if role == "server":
        return SERVER_COLUMNS
    if role == "client":
        return CLIENT_COLUMNS
    raise ValueError(f"unknown role {role!r}")


def encode_row(sample: Sample) -> str:
    """Render one sample as an LF-terminated CSV line."""
    if isinstance(sample, ServerSample):
        places = SERVER_PLACES
    elif isinstance(sample, ClientSample):
        places = CLIENT_PLACES
    else:
        raise TypeError(f"not a sample: {sample!r}")
    out = []
    for f in fields(sample):
        value = getattr(sample, f.name)
        if f.name in places:
            out.append(format_fixed(value, places[f.name]))
        else:
            out.append(str(int(value)))
    return ",".join(out) + "\n"


def _parse_int(text: str, column: int) -> int:
    try:
        return int(text)
    except ValueError:
        raise NumericParseError(column, text) from None


def _parse_float(text: str, column: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise NumericParseError(column, text) from None
    if not math.isfinite(value):
        raise NumericParseError(column, text)
    return value


def decode_row(line: str, role: str) -> Sample:
    cols = columns_for(role)
    parts = line.rstrip("\n").split(",")
    if len(parts) != len(cols):
        raise FieldCountMismatch(min(len(parts), len(cols)), len(cols), len(parts))
    places = SERVER_PLACES if role == "server" else CLIENT_PLACES
    values = []
    for i, (name, text) in enumerate(zip(cols, parts)):
        text = text.strip()
        values.append(_parse_float(text, i) if name in places else _parse_int(text, i))
    try:
        if role == "server":
            return ServerSample(*values)
        return ClientSample(*values)
    except ValueError as exc:
        raise JournalFormatError(f"row violates sample invariants: {exc}") from None


# -- header -----------------------------------------------------------------

_LABEL_FORBIDDEN = set(";=\n\r")


@dataclass(frozen=True)
class RunHeader:
    run_id: str
    role: str
    interval_ms: int = 5000
    device_label: str = ""
    distance_label: str = ""
    file_size_bytes: int | None = None
    # wall-clock start (ISO 8601); left out of simulated runs so they stay reproducible
    started: str | None = None

    def __post_init__(self):
        if not self.run_id:
            raise ValueError("run_id must be non-empty")
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}, got {self.role!r}")
        if self.interval_ms <= 0:
            raise ValueError("interval_ms must be positive")
        for name in ("run_id", "device_label", "distance_label", "started"):
            value = getattr(self, name)
            if value is not None and _LABEL_FORBIDDEN & set(value):
                raise ValueError(f"{name} may not contain ';', '=' or newlines")
        if self.file_size_bytes is not None and self.file_size_bytes < 0:
            raise ValueError("file_size_bytes must be non-negative")

    def encode(self) -> str:
        parts = [
            f"run_id={self.run_id}",
            f"role={self.role}",
            f"interval_ms={self.interval_ms}",
            f"device={self.device_label}",
            f"distance={self.distance_label}",
        ]
        if self.file_size_bytes is not None:
            parts.append(f"file_size={self.file_size_bytes}")
        if self.started is not None:
            parts.append(f"start={self.started}")
        return "# " + ";".join(parts) + "\n"

    @classmethod
    def decode(cls, line: str) -> RunHeader:
        line = line.rstrip("\n")
        if not line.startswith("# "):
            raise JournalFormatError("header line must start with '# '")
        kv = {}
        for item in line[2:].split(";"):
            key, sep, value = item.partition("=")
            if not sep:
                raise JournalFormatError(f"malformed header item {item!r}")
            kv[key] = value
        try:
            file_size = kv.get("file_size")
            return cls(
                run_id=kv["run_id"],
                role=kv["role"],
                interval_ms=int(kv["interval_ms"]),
                device_label=kv.get("device", ""),
                distance_label=kv.get("distance", ""),
                file_size_bytes=int(file_size) if file_size is not None else None,
                started=kv.get("start"),
            )
        except KeyError as exc:
            raise JournalFormatError(f"header lacks required key {exc.args[0]}") from None
        except ValueError as exc:
            raise JournalFormatError(f"bad header: {exc}") from None


@dataclass
class Journal:
    header: RunHeader
    rows: list = field(default_factory=list)
    aborted: str | None = None

    @property
    def role(self) -> str:
        return self.header.role

    def validate(self) -> None:
        """Check cross-row invariants (ordering, cumulative counters)."""
        cls = ServerSample if self.role == "server" else ClientSample
        prev = None
        for row in self.rows:
            if not isinstance(row, cls):
                raise JournalFormatError(f"{self.role} journal holds a {type(row).__name__}")
            expected_seq = 0 if prev is None else prev.seq + 1
            if row.seq != expected_seq:
                raise JournalFormatError(f"seq {row.seq} follows {expected_seq - 1}")
            if cls is ClientSample:
                base = 0 if prev is None else prev.bytes_total
                if row.bytes_total < base:
                    raise JournalFormatError(f"bytes_total decreases at seq {row.seq}")
                if row.bytes_delta != row.bytes_total - base:
                    raise JournalFormatError(f"bytes_delta inconsistent at seq {row.seq}")
            prev = row

    def to_text(self) -> str:
        out = [self.header.encode(), ",".join(columns_for(self.role)) + "\n"]
        out.extend(encode_row(r) for r in self.rows)
        if self.aborted is not None:
            out.append(_trailer(self.aborted))
        return "".join(out)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8", newline="\n")


def _trailer(reason: str) -> str:
    return "# aborted=" + " ".join(reason.split()) + "\n"


def parse_journal(text: str) -> Journal:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if len(lines) < 2:
        raise JournalFormatError("journal needs a header line and a column line")
    header = RunHeader.decode(lines[0])
    cols = columns_for(header.role)
    if lines[1].strip() != ",".join(cols):
        raise JournalFormatError(f"unexpected column line {lines[1]!r}")
    journal = Journal(header)
    for line in lines[2:]:
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            if key == "aborted":
                journal.aborted = value
            continue
        if line.strip():
            journal.rows.append(decode_row(line, header.role))
    return journal


def read_journal(path: str | Path) -> Journal:
    return parse_journal(Path(path).read_text(encoding="utf-8"))


class JournalWriter:
    """Append samples to a journal, flushing each row to disk as it arrives.

    ``path=None`` keeps the journal in memory only.
    """

    def __init__(self, header: RunHeader, path: str | Path | None = None):
        self.journal = Journal(header)
        self.path = Path(path) if path is not None else None
        self._fh: IO[str] | None = None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "w", encoding="utf-8", newline="\n")
            self._fh.write(header.encode())
            self._fh.write(",".join(columns_for(header.role)) + "\n")
            self._fh.flush()

    def append(self, sample: Sample) -> str:
        line = encode_row(sample)
        self.journal.rows.append(sample.quantized())
        if self._fh is not None:
            self._fh.write(line)
            self._fh.flush()
        return line

    def extend(self, samples: Iterable[Sample]) -> None:
        for s in samples:
            self.append(s)

    def abort(self, reason: str) -> None:
        self.journal.aborted = " ".join(reason.split())
        if self._fh is not None:
            self._fh.write(_trailer(reason))
            self._fh.flush()

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self) -> JournalWriter:
        return self

    def __exit__(self, *exc) -> None:
        self.close()
