"""Hardware-free device model: CPU heating, throttling and simulated sensors.

The temperature follows a first-order model driven by the executed CPU load::

    temp' = temp + dt * (alpha * load * rate_factor - beta * (temp - ambient))

Crossing ``t_throttle`` halves (``gamma``) the service rate until the
temperature falls back to ``t_release``. The simulated sensor sources emit the
same text formats and register values as the real hardware and go through
the real parsers.
"""

from __future__ import annotations

import math
import random
import threading
from dataclasses import dataclass, field, replace
from fractions import Fraction

from .sensors import (
    Ina219Config,
    SensorSuite,
    ina219_convert,
    parse_cpu_temp,
    parse_w1_slave,
)
from .errors import SourceUnavailable


@dataclass(frozen=True)
class ThermalParams:
    alpha: float = 0.02  # °C per second per % load
    beta: float = 0.05  # 1/s
    t_throttle: float = 80.0
    t_release: float = 70.0
    gamma: float = 0.5

    def __post_init__(self):
        if self.t_release >= self.t_throttle:
            raise ValueError("t_release must be below t_throttle")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.alpha < 0 or self.beta <= 0:
            raise ValueError("alpha must be >= 0 and beta > 0")


@dataclass(frozen=True)
class SimDeviceState:
    temp_c: float
    ambient_c: float
    load_pct: float = 0.0
    throttled: bool = False
    rate_factor: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.temp_c < self.ambient_c - 5:
            raise ValueError("temperature more than 5 °C below ambient")
        if not 0.0 < self.rate_factor <= 1.0:
            raise ValueError("rate_factor must lie in (0, 1]")
        if self.throttled != (self.rate_factor < 1.0):
            raise ValueError("throttled must match rate_factor < 1")


def sim_step(
    state: SimDeviceState,
    offered_load: float,
    dt: float,
    params: ThermalParams = ThermalParams(),
) -> SimDeviceState:
    """Advance the device by ``dt`` seconds under ``offered_load`` percent."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    executed = offered_load * state.rate_factor
    # explicit Euler is only monotone for beta*dt <= 1; split larger steps
    n = max(1, math.ceil(params.beta * dt))
    h = dt / n
    temp = state.temp_c
    for _ in range(n):
        temp = temp + h * (params.alpha * executed - params.beta * (temp - state.ambient_c))
    throttled, factor = state.throttled, state.rate_factor
    if temp >= params.t_throttle:
        throttled, factor = params.gamma < 1.0, params.gamma
    elif temp <= params.t_release:
        throttled, factor = False, 1.0
    return replace(state, temp_c=temp, load_pct=offered_load, throttled=throttled, rate_factor=factor)


@dataclass(frozen=True)
class SimScenario:
    """Knobs for a simulated server device. All noise is seeded."""

    seed: int = 42
    ambient_c: float = 25.0
    initial_temp_c: float = 45.0
    offered_load: float = 60.0
    load_noise: float = 3.0
    ambient_noise: float = 0.1
    cpu_temp_noise: float = 0.0
    supply_volts: float = 5.10
    droop_ohms: float = 0.2
    idle_amps: float = 0.25
    amps_per_pct: float = 0.004
    power_noise_amps: float = 0.003
    ina219: Ina219Config = field(default_factory=Ina219Config)
    thermal: ThermalParams = field(default_factory=ThermalParams)
    # tick index from which the ambient sensor reports a failure (fault injection)
    fail_ext_at: int | None = None

    def rng(self, stream: str, tick: int) -> random.Random:
        return random.Random(f"{self.seed}/{stream}/{tick}")


class SimDevice:
    """Lazily evolves a :class:`SimDeviceState` per sampling tick.

    ``state(k)`` is a pure function of the scenario and ``k``; states are
    cached so concurrent readers (sensor sources, link model) agree.
    """

    def __init__(self, scenario: SimScenario, interval_ms: int):
        if interval_ms <= 0:
            raise ValueError("interval_ms must be positive")
        self.scenario = scenario
        self.interval_ms = interval_ms
        self.dt = interval_ms / 1000.0
        temp0 = max(scenario.initial_temp_c, scenario.ambient_c - 5)
        hot = temp0 >= scenario.thermal.t_throttle
        factor = scenario.thermal.gamma if hot else 1.0
        self._states = [
            SimDeviceState(
                temp_c=temp0,
                ambient_c=scenario.ambient_c,
                load_pct=self.offered_load(0),
                throttled=factor < 1.0,
                rate_factor=factor,
                rng_seed=scenario.seed,
            )
        ]
        self._lock = threading.Lock()

    def offered_load(self, tick: int) -> float:
        sc = self.scenario
        noise = sc.rng("load", tick).gauss(0.0, sc.load_noise) if sc.load_noise else 0.0
        return min(100.0, max(0.0, sc.offered_load + noise))

    def state(self, tick: int) -> SimDeviceState:
        if tick < 0:
            raise ValueError("tick must be non-negative")
        with self._lock:
            while len(self._states) <= tick:
                k = len(self._states)
                self._states.append(
                    sim_step(self._states[-1], self.offered_load(k), self.dt, self.scenario.thermal)
                )
            return self._states[tick]

    def throttle_transitions(self, upto: int) -> list[int]:
        """Ticks ``k <= upto`` where the device switched into the throttled state."""
        out = []
        for k in range(1, upto + 1):
            if self.state(k).throttled and not self.state(k - 1).throttled:
                out.append(k)
        return out

    def executed_load(self, tick: int) -> float:
        s = self.state(tick)
        return s.load_pct * s.rate_factor

    # readings in hardware formats

    def w1_slave_text(self, tick: int) -> str:
        sc = self.scenario
        temp = sc.ambient_c + sc.rng("ext", tick).gauss(0.0, sc.ambient_noise)
        milli = int(round(temp * 1000))
        return (
            "5f 01 4b 46 7f ff 0c 10 a0 : crc=a0 YES\n"
            f"5f 01 4b 46 7f ff 0c 10 a0 t={milli}\n"
        )

    def cpu_temp_text(self, tick: int) -> str:
        sc = self.scenario
        temp = self.state(tick).temp_c
        if sc.cpu_temp_noise:
            temp += sc.rng("cpu", tick).gauss(0.0, sc.cpu_temp_noise)
        return f"temp={temp:.1f}'C\n"

    def ina219_registers(self, tick: int) -> tuple[int, int]:
        sc = self.scenario
        rng = sc.rng("power", tick)
        amps = sc.idle_amps + sc.amps_per_pct * self.executed_load(tick)
        amps += rng.gauss(0.0, sc.power_noise_amps)
        volts = sc.supply_volts - sc.droop_ohms * amps + rng.gauss(0.0, 0.002)
        raw_bus = max(0, min(0x1FFF, int(round(volts / 0.004))))
        raw_shunt = int(round(amps * sc.ina219.shunt_ohms / 0.00001))
        raw_shunt = max(-0x8000, min(0x7FFF, raw_shunt))
        return raw_bus, raw_shunt


class SimLoadSource:
    def __init__(self, device: SimDevice):
        self.device = device

    def read(self, tick: int) -> float:
        return self.device.executed_load(tick)


class SimCpuTempSource:
    def __init__(self, device: SimDevice):
        self.device = device

    def read(self, tick: int) -> float:
        return parse_cpu_temp(self.device.cpu_temp_text(tick))


class SimW1Source:
    def __init__(self, device: SimDevice):
        self.device = device

    def read(self, tick: int) -> float:
        fail_at = self.device.scenario.fail_ext_at
        if fail_at is not None and tick >= fail_at:
            raise SourceUnavailable("simulated 1-Wire device vanished")
        return parse_w1_slave(self.device.w1_slave_text(tick))


class SimPowerSource:
    def __init__(self, device: SimDevice):
        self.device = device

    def read(self, tick: int) -> tuple[float, float]:
        raw_bus, raw_shunt = self.device.ina219_registers(tick)
        return ina219_convert(raw_bus, raw_shunt, self.device.scenario.ina219)


def sim_suite(device: SimDevice) -> SensorSuite:
    return SensorSuite(
        temp_ext=SimW1Source(device),
        temp_cpu=SimCpuTempSource(device),
        power=SimPowerSource(device),
        load=SimLoadSource(device),
    )


class SimLink:
    """Byte budget of the simulated link, coupled to the device throttle state.

    During the interval ending at tick ``k`` the link moves
    ``rate * interval * rate_factor(k)`` bytes; ``allowance(k)`` is the
    cumulative budget, floored to whole bytes. ``rate=None`` means unlimited.
    """

    def __init__(self, device: SimDevice, rate: int | None):
        self.device = device
        self.rate = rate
        self._cum = [Fraction(0)]
        self._lock = threading.Lock()

    def allowance(self, tick: int) -> float | int:
        if tick < 0:
            return 0
        if self.rate is None:
            return math.inf
        with self._lock:
            while len(self._cum) <= tick:
                k = len(self._cum)
                factor = Fraction(self.device.state(k).rate_factor)
                step = Fraction(self.rate) * Fraction(self.device.interval_ms, 1000) * factor
                self._cum.append(self._cum[-1] + step)
            return math.floor(self._cum[tick])
