"""Minimal FTP server for offline interop tests.

Understands USER, PASS (anyone may log in), TYPE, PASV, SIZE, RETR and QUIT;
everything else gets ``502``. One control session and one data connection
at a time.
"""

from __future__ import annotations

import logging
import socket
import threading
from pathlib import Path

from ..errors import BindError
from .core import CHUNK

log = logging.getLogger(__name__)


class StubFtpServer:
    def __init__(
        self,
        root: str | Path,
        host: str = "127.0.0.1",
        port: int = 0,
        abort_at: int | None = None,
        size_supported: bool = True,
    ):
        self.root = Path(root).resolve()
        if not self.root.is_dir():
            raise FileNotFoundError(f"FTP root {self.root} is not a directory")
        self.host = host
        self.abort_at = abort_at
        self.size_supported = size_supported
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        try:
            self._sock.bind((host, port))
        except OSError as exc:
            self._sock.close()
            raise BindError(f"cannot bind FTP stub to {host}:{port}: {exc}") from None
        self._sock.listen(4)
        self._sock.settimeout(0.05)
        self.port = self._sock.getsockname()[1]
        self._stop = threading.Event()
        self._conn: socket.socket | None = None
        self._thread = threading.Thread(target=self._serve, name="stub-ftp", daemon=True)
        self._thread.start()

    @property
    def address(self) -> tuple[str, int]:
        return self.host, self.port

    def close(self) -> None:
        self._stop.set()
        try:
            self._sock.close()
        except OSError:
            pass
        conn = self._conn
        if conn is not None:
            try:
                conn.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
        self._thread.join(timeout=5)

    def __enter__(self) -> StubFtpServer:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _serve(self) -> None:
        while not self._stop.is_set():
            try:
                conn, _ = self._sock.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            conn.settimeout(None)
            self._conn = conn
            try:
                with conn:
                    conn.settimeout(30)
                    _Session(self, conn).run()
            except OSError as exc:
                log.debug("control session ended: %s", exc)
            finally:
                self._conn = None

    def resolve(self, name: str) -> Path | None:
        path = (self.root / name.lstrip("/")).resolve()
        if path != self.root and self.root not in path.parents:
            return None
        return path if path.is_file() else None


class _Session:
    def __init__(self, server: StubFtpServer, conn: socket.socket):
        self.server = server
        self.conn = conn
        self.rfile = conn.makefile("rb")
        self.pasv: socket.socket | None = None

    def reply(self, line: str) -> None:
        self.conn.sendall(line.encode("utf-8") + b"\r\n")

    def run(self) -> None:
        self.reply("220 wibench stub FTP ready")
        try:
            while True:
                raw = self.rfile.readline()
                if not raw:
                    return
                line = raw.decode("utf-8", "replace").rstrip("\r\n")
                verb, _, arg = line.partition(" ")
                handler = getattr(self, "do_" + verb.upper(), None)
                if handler is None:
                    self.reply(f"502 {verb} not implemented")
                    continue
                if handler(arg) is False:
                    return
        finally:
            self._close_pasv()

    def do_USER(self, arg: str) -> None:
        self.reply("331 Any password will do")

    def do_PASS(self, arg: str) -> None:
        self.reply("230 Logged in")

    def do_TYPE(self, arg: str) -> None:
        if arg.upper() in ("I", "A", "L 8"):
            self.reply(f"200 Type set to {arg.upper()}")
        else:
            self.reply(f"502 TYPE {arg} not implemented")

    def do_PASV(self, arg: str) -> None:
        self._close_pasv()
        self.pasv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self.pasv.bind((self.server.host, 0))
        self.pasv.listen(1)
        self.pasv.settimeout(10)
        host, port = self.pasv.getsockname()
        h = host.replace(".", ",")
        self.reply(f"227 Entering Passive Mode ({h},{port >> 8},{port & 0xFF})")

    def do_SIZE(self, arg: str) -> None:
        if not self.server.size_supported:
            self.reply("502 SIZE not implemented")
            return
        path = self.server.resolve(arg)
        if path is None:
            self.reply(f"550 {arg}: No such file")
            return
        self.reply(f"213 {path.stat().st_size}")

    def do_RETR(self, arg: str) -> None:
        path = self.server.resolve(arg)
        if path is None:
            self.reply(f"550 {arg}: No such file")
            return
        if self.pasv is None:
            self.reply("425 Use PASV first")
            return
        self.reply(f"150 Opening BINARY mode data connection for {arg}")
        try:
            data, _ = self.pasv.accept()
        except OSError:
            self.reply("425 Can't open data connection")
            return
        finally:
            self._close_pasv()
        limit = self.server.abort_at
        sent = 0
        try:
            with data, open(path, "rb") as fh:
                while limit is None or sent < limit:
                    want = CHUNK if limit is None else min(CHUNK, limit - sent)
                    chunk = fh.read(want)
                    if not chunk:
                        break
                    data.sendall(chunk)
                    sent += len(chunk)
                data.shutdown(socket.SHUT_WR)
        except OSError:
            self.reply("426 Connection closed; transfer aborted")
            return
        if limit is not None and sent < path.stat().st_size:
            self.reply("426 Connection closed; transfer aborted")
        else:
            self.reply("226 Transfer complete")

    def do_QUIT(self, arg: str) -> bool:
        self.reply("221 Goodbye")
        return False

    def _close_pasv(self) -> None:
        if self.pasv is not None:
            self.pasv.close()
            self.pasv = None


def stub_ftp_serve(root: str | Path, port: int = 0, faults: int | None = None, host: str = "127.0.0.1") -> StubFtpServer:
    """Start a stub server in a background thread; ``faults`` is an abort-at-byte offset."""
    return StubFtpServer(root, host=host, port=port, abort_at=faults)
