"""Hardware-free end-to-end runs: both agents, a transfer server and a simulated device in one process."""

from __future__ import annotations

import logging
import tempfile
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path

from .agents import BlobBackend, FtpBackend, RunConfig, TrialResult, run_client_agent, run_server_agent, run_trials
from .clock import LogicalClock
from .control import ControlListener
from .errors import RunAborted
from .model import Journal
from .thermal import SimDevice, SimLink, SimScenario, sim_suite
from .transfer import BlobServer, StubFtpServer, blob_payload

log = logging.getLogger(__name__)


@dataclass
class SimOptions:
    file_size: int = 655 * 1024
    rate: int | None = 131 * 1024
    interval_ms: int = 50
    realtime: bool = True
    backend: str = "blob"
    run_id: str = "sim"
    trials: int = 1
    device_label: str = "sim"
    distance_label: str = ""
    max_samples: int = 10_000
    # abort the transfer after this many bytes (fault injection)
    abort_at: int | None = None
    out_dir: Path | None = None
    scenario: SimScenario = field(default_factory=SimScenario)

    def base_config(self) -> RunConfig:
        return RunConfig(
            role="client",
            run_id=self.run_id,
            interval_ms=self.interval_ms,
            device_label=self.device_label,
            distance_label=self.distance_label,
            backend=self.backend,
            max_samples=self.max_samples,
            trials=self.trials,
            quiet=True,
            stamp_start=False,
            sensors="sim",
        )

    def journal_paths(self, run_id: str) -> tuple[Path | None, Path | None]:
        if self.out_dir is None:
            return None, None
        return self.out_dir / f"{run_id}-server.csv", self.out_dir / f"{run_id}-client.csv"


@dataclass
class SimRun:
    server: Journal | None
    client: Journal | None
    device: SimDevice
    error: str | None = None


def simulate_run(opts: SimOptions, cfg: RunConfig | None = None, trial: int = 1) -> SimRun:
    """Run one synchronized measurement against the simulated device.

    Trial ``k`` uses scenario seed ``seed + k - 1``.
    """
    cfg = cfg or opts.base_config()
    scenario = replace(opts.scenario, seed=opts.scenario.seed + trial - 1)
    device = SimDevice(scenario, opts.interval_ms)
    link = SimLink(device, opts.rate)
    clock = LogicalClock()
    payload = blob_payload(opts.file_size, scenario.seed)
    server_path, client_path = opts.journal_paths(cfg.run_id)

    listener = ControlListener(port=0, host="127.0.0.1", trigger=cfg.trigger, ack=cfg.ack)
    server_cfg = replace(cfg, role="server", journal_path=str(server_path) if server_path else None)
    client_cfg = replace(
        cfg,
        role="client",
        journal_path=str(client_path) if client_path else None,
        control_host="127.0.0.1",
        control_port=listener.port,
    )

    stop = threading.Event()
    server_out: dict = {}

    def serve():
        try:
            server_out["journal"] = run_server_agent(
                server_cfg, sim_suite(device), listener=listener, clock=clock, stop=stop
            )
        except RunAborted as exc:
            server_out["journal"] = exc.journal
            server_out["error"] = f"server: {exc.reason}"
        except Exception as exc:
            server_out["error"] = f"server: {exc}"

    tmp = None
    if opts.backend == "ftp":
        tmp = tempfile.TemporaryDirectory(prefix="wibench-ftp-")
        (Path(tmp.name) / "payload.bin").write_bytes(payload)
        transfer_server = StubFtpServer(tmp.name, abort_at=opts.abort_at)
        backend = FtpBackend(*transfer_server.address, "payload.bin")
    else:
        transfer_server = BlobServer(payload, abort_at=opts.abort_at)
        backend = BlobBackend(transfer_server.address, opts.file_size)

    server_thread = threading.Thread(target=serve, name="server-agent", daemon=True)
    server_thread.start()
    client_journal = None
    error = None
    try:
        client_journal = run_client_agent(
            client_cfg, backend, clock=clock, allowance=link.allowance, realtime=opts.realtime
        )
    except RunAborted as exc:
        client_journal = exc.journal
        error = f"client: {exc.reason}"
    finally:
        clock.close()
        server_thread.join(timeout=10)
        stop.set()
        server_thread.join(timeout=5)
        listener.close()
        transfer_server.close()
        if tmp is not None:
            tmp.cleanup()
    error = error or server_out.get("error")
    return SimRun(server_out.get("journal"), client_journal, device, error)


def simulate_trials(opts: SimOptions) -> tuple[list[TrialResult], list[SimRun]]:
    runs: list[SimRun] = []

    def trial(cfg_k: RunConfig, k: int):
        run = simulate_run(opts, cfg_k, k)
        runs.append(run)
        if run.error:
            raise RunAborted(run.error, run.client)
        return run.server, run.client

    results = run_trials(opts.base_config(), trial)
    for result, run in zip(results, runs):
        result.server = result.server or run.server
        result.client = result.client or run.client
    return results, runs
