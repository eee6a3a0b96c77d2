"""Server-side telemetry: text parsers for the real devices and the sensor suite.

The real-device backends read a DS18B20 ``w1_slave`` file, the output of
``vcgencmd measure_temp`` and the INA219 shunt/bus registers. Simulated
backends live in :mod:`wibench.thermal`.
"""

from __future__ import annotations

import logging
import re
import subprocess
import threading
from dataclasses import dataclass
from decimal import Decimal
from pathlib import Path
from typing import Callable, Protocol, Sequence

from .errors import (
    CrcError,
    FormatError,
    MissingToken,
    RangeError,
    SensorError,
    SourceUnavailable,
)
from .model import MAX_ABS_CURRENT, ServerSample, quantize

log = logging.getLogger(__name__)

DS18B20_MIN_MILLI = -55_000
DS18B20_MAX_MILLI = 125_000

BUS_LSB_VOLTS = Decimal("0.004")
SHUNT_LSB_VOLTS = Decimal("0.00001")

INA219_REG_SHUNT = 0x01
INA219_REG_BUS = 0x02

DEFAULT_W1_ROOT = Path("/sys/bus/w1/devices")
DEFAULT_CPU_TEMP_CMD = ("vcgencmd", "measure_temp")


class NumericReadingError(FormatError):
    """A sensor produced a token that is not the number it should be."""


_INT_RE = re.compile(r"[+-]?\d+")


def parse_w1_slave(text: str) -> float:
    """Return the temperature in degrees Celsius from a 1-Wire slave file.

    The file has a CRC line ending in ``YES``/``NO`` and a payload line ending
    in ``t=<millidegrees>``. The value is rounded half away from zero to one
    decimal.
    """
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise MissingToken("empty 1-Wire payload")
    if len(lines) >= 2 and lines[0].endswith("NO"):
        raise CrcError("1-Wire CRC check failed")
    head, sep, tail = lines[-1].rpartition("t=")
    if not sep:
        raise MissingToken("no 't=' token in 1-Wire payload")
    token = tail.strip()
    if not _INT_RE.fullmatch(token):
        raise NumericReadingError(f"bad millidegree value {token!r}")
    milli = int(token)
    if not DS18B20_MIN_MILLI <= milli <= DS18B20_MAX_MILLI:
        raise RangeError(f"{milli} m°C outside the DS18B20 range")
    return quantize(float(Decimal(milli) / 1000), 1)


_CPU_TEMP_RE = re.compile(r"temp=([+-]?\d+(?:\.\d+)?)'C\n?")


def parse_cpu_temp(text: str) -> float:
    """Parse ``temp=47.2'C`` as printed by ``vcgencmd measure_temp``."""
    m = _CPU_TEMP_RE.fullmatch(text)
    if m is None:
        raise FormatError(f"unexpected CPU temperature output {text!r}")
    return quantize(float(m.group(1)), 1)


@dataclass(frozen=True)
class Ina219Config:
    shunt_ohms: float = 0.1
    max_expected_amps: float = 0.2
    bus_range_volts: int = 16

    def __post_init__(self):
        if self.shunt_ohms <= 0:
            raise ValueError("shunt_ohms must be positive")
        if self.max_expected_amps <= 0:
            raise ValueError("max_expected_amps must be positive")
        if self.bus_range_volts not in (16, 32):
            raise ValueError("bus_range_volts must be 16 or 32")


def ina219_convert(raw_bus: int, raw_shunt: int, cfg: Ina219Config = Ina219Config()) -> tuple[float, float]:
    """Convert INA219 register values to (volts, amperes).

    ``raw_bus`` is the bus-voltage register already shifted right by 3 (4 mV
    per count); ``raw_shunt`` is the signed shunt-voltage register (10 µV per
    count). Quantization to 3 decimals happens when the sample is journaled.
    """
    if not 0 <= raw_bus <= 0x1FFF:
        raise RangeError(f"bus register {raw_bus} outside 13-bit field")
    if not -0x8000 <= raw_shunt <= 0x7FFF:
        raise RangeError(f"shunt register {raw_shunt} outside signed 16-bit range")
    volts = raw_bus * BUS_LSB_VOLTS
    if volts > cfg.bus_range_volts:
        raise RangeError(f"bus voltage {volts} V above the {cfg.bus_range_volts} V range")
    amps = raw_shunt * SHUNT_LSB_VOLTS / Decimal(repr(cfg.shunt_ohms))
    return float(volts), float(amps)


def to_signed16(word: int) -> int:
    return word - 0x10000 if word & 0x8000 else word


# -- sources ----------------------------------------------------------------

class ScalarSource(Protocol):
    def read(self, tick: int) -> float: ...


class PowerSource(Protocol):
    def read(self, tick: int) -> tuple[float, float]: ...


class RegisterBus(Protocol):
    def read_word(self, register: int) -> int:
        """Return the big-endian 16-bit register value as an unsigned int."""
        ...


def call_with_timeout(fn: Callable, timeout: float):
    """Run ``fn`` in a helper thread and give up after ``timeout`` seconds."""
    result: list = []
    error: list = []

    def target():
        try:
            result.append(fn())
        except BaseException as exc:  # re-raised in the caller
            error.append(exc)

    t = threading.Thread(target=target, daemon=True)
    t.start()
    t.join(timeout)
    if t.is_alive():
        raise SourceUnavailable(f"read timed out after {timeout:.3f} s")
    if error:
        raise error[0]
    return result[0]


class W1FileSource:
    def __init__(self, path: str | Path, timeout: float = 1.0):
        self.path = Path(path)
        self.timeout = timeout

    @classmethod
    def for_device(cls, device_id: str, root: str | Path = DEFAULT_W1_ROOT, timeout: float = 1.0) -> W1FileSource:
        return cls(Path(root) / device_id / "w1_slave", timeout)

    def read(self, tick: int) -> float:
        try:
            text = call_with_timeout(lambda: self.path.read_text(encoding="ascii"), self.timeout)
        except OSError as exc:
            raise SourceUnavailable(f"cannot read {self.path}: {exc.strerror or exc}") from None
        return parse_w1_slave(text)


class CommandTempSource:
    def __init__(self, command: Sequence[str] = DEFAULT_CPU_TEMP_CMD, timeout: float = 1.0):
        self.command = list(command)
        self.timeout = timeout

    def read(self, tick: int) -> float:
        try:
            proc = subprocess.run(
                self.command, capture_output=True, text=True, timeout=self.timeout, check=False
            )
        except FileNotFoundError:
            raise SourceUnavailable(f"command not found: {self.command[0]}") from None
        except subprocess.TimeoutExpired:
            raise SourceUnavailable(f"{self.command[0]} timed out") from None
        if proc.returncode != 0:
            raise SourceUnavailable(f"{self.command[0]} exited with {proc.returncode}")
        return parse_cpu_temp(proc.stdout)


class Ina219Source:
    def __init__(self, bus: RegisterBus, cfg: Ina219Config = Ina219Config(), timeout: float = 1.0):
        self.bus = bus
        self.cfg = cfg
        self.timeout = timeout

    def read(self, tick: int) -> tuple[float, float]:
        def regs():
            return self.bus.read_word(INA219_REG_BUS), self.bus.read_word(INA219_REG_SHUNT)

        try:
            bus_word, shunt_word = call_with_timeout(regs, self.timeout)
        except OSError as exc:
            raise SourceUnavailable(f"I2C read failed: {exc}") from None
        return ina219_convert(bus_word >> 3, to_signed16(shunt_word), self.cfg)


class Smbus2Bus:
    """Register access through the ``smbus2`` package, when it is installed."""

    def __init__(self, busnum: int, address: int = 0x40):
        try:
            from smbus2 import SMBus
        except ImportError:
            raise SourceUnavailable("smbus2 is not installed") from None
        self._bus = SMBus(busnum)
        self.address = address

    def read_word(self, register: int) -> int:
        word = self._bus.read_word_data(self.address, register)
        # SMBus is little-endian on the wire, the INA219 sends MSB first
        return ((word & 0xFF) << 8) | (word >> 8)


class PsutilLoadSource:
    """CPU utilisation averaged since the previous read."""

    def __init__(self):
        try:
            import psutil
        except ImportError:
            raise SourceUnavailable("psutil is not installed") from None
        self._psutil = psutil
        psutil.cpu_percent(None)  # prime the interval baseline

    def read(self, tick: int) -> float:
        return float(self._psutil.cpu_percent(None))


def read_cpu_load(source: ScalarSource, tick: int = 0) -> float:
    try:
        value = float(source.read(tick))
    except SensorError:
        raise
    except Exception as exc:
        raise SourceUnavailable(f"CPU load source failed: {exc}") from None
    if not 0.0 <= value <= 100.0:
        raise RangeError(f"CPU load {value} outside [0, 100]")
    return quantize(value, 1)


# -- suite ------------------------------------------------------------------

SLOTS = ("load", "temp_cpu", "temp_ext", "power")


@dataclass
class SensorSuite:
    temp_ext: ScalarSource
    temp_cpu: ScalarSource
    power: PowerSource
    load: ScalarSource
    # compatibility mode: substitute zeros for failed reads instead of raising
    sentinel_on_error: bool = False

    def __post_init__(self):
        missing = [s for s in SLOTS if getattr(self, s) is None]
        if missing:
            raise ValueError(f"sensor suite lacks {', '.join(missing)}")


def _read_slot(suite: SensorSuite, slot: str, tick: int):
    source = getattr(suite, slot)
    try:
        if slot == "load":
            return read_cpu_load(source, tick)
        return source.read(tick)
    except SensorError as exc:
        err = type(exc)(exc.detail, source=slot)
    except Exception as exc:
        err = SourceUnavailable(str(exc) or type(exc).__name__, source=slot)
    if suite.sentinel_on_error:
        log.warning("%s; substituting sentinel zero", err)
        return (0.0, 0.0) if slot == "power" else 0.0
    raise err


def suite_sample(suite: SensorSuite, seq: int, interval_ms: int) -> ServerSample:
    """Read all four sources once and stamp the result with the logical time."""
    load = _read_slot(suite, "load", seq)
    cpu_temp = _read_slot(suite, "temp_cpu", seq)
    ext_temp = _read_slot(suite, "temp_ext", seq)
    voltage, current = _read_slot(suite, "power", seq)
    if abs(current) > MAX_ABS_CURRENT:
        raise RangeError(f"|current| {current} A above sanity bound", source="power")
    if voltage < 0:
        raise RangeError(f"negative bus voltage {voltage}", source="power")
    return ServerSample(
        seq=seq,
        t_ms=seq * interval_ms,
        cpu_load=load,
        cpu_temp=cpu_temp,
        ext_temp=ext_temp,
        voltage=voltage,
        current=current,
    )
