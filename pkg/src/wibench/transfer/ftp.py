"""FTP client subset: passive mode, binary type, SIZE and RETR."""

from __future__ import annotations

import ftplib
import socket

from ..errors import ConnectError, NoSuchFile, NotSupported, ProtocolError, TransferAborted
from .core import Limiter, TransferSession, pump


def _code(exc: BaseException) -> str:
    return str(exc)[:3]


def ftp_open(
    host: str,
    port: int = 21,
    user: str = "anonymous",
    password: str = "anonymous@",
    timeout: float = 10.0,
) -> TransferSession:
    ftp = ftplib.FTP()
    try:
        ftp.connect(host, port, timeout=timeout)
        ftp.login(user, password)
    except OSError as exc:
        ftp.close()
        raise ConnectError(f"cannot reach FTP server {host}:{port}: {exc}") from None
    except ftplib.Error as exc:
        ftp.close()
        raise ProtocolError(f"login refused: {exc}") from None
    ftp.set_pasv(True)
    return TransferSession(backend="ftp", handle=ftp)


def ftp_close(session: TransferSession) -> None:
    ftp: ftplib.FTP = session.handle
    try:
        ftp.quit()
    except (OSError, ftplib.Error, EOFError):
        ftp.close()


def ftp_size(session: TransferSession, path: str) -> int:
    """Ask for the remote size in binary mode (SIZE depends on TYPE)."""
    ftp: ftplib.FTP = session.handle
    try:
        ftp.voidcmd("TYPE I")
        resp = ftp.sendcmd(f"SIZE {path}")
    except ftplib.error_perm as exc:
        if _code(exc) == "550":
            raise NoSuchFile(path) from None
        if _code(exc) in ("500", "502", "504"):
            raise NotSupported(f"server does not support SIZE: {exc}") from None
        raise ProtocolError(str(exc)) from None
    except ftplib.Error as exc:
        raise ProtocolError(str(exc)) from None
    if not resp.startswith("213"):
        raise ProtocolError(f"unexpected SIZE reply {resp!r}")
    try:
        size = int(resp[3:].strip())
    except ValueError:
        raise ProtocolError(f"unparseable SIZE reply {resp!r}") from None
    session.remote_size = size
    return size


def ftp_retrieve(session: TransferSession, path: str, sink=None, limiter: Limiter | None = None) -> int:
    """Stream ``path`` into ``sink`` and return the byte count.

    The session counter moves after every chunk (at most 64 KiB), so a
    concurrent sampler sees smooth progress. On failure the counter keeps
    the last value and the session is marked failed.
    """
    ftp: ftplib.FTP = session.handle
    if session.remote_size is None:
        ftp_size(session, path)
    total = session.remote_size
    session.status = "transferring"
    try:
        try:
            ftp.voidcmd("TYPE I")
            conn = ftp.transfercmd(f"RETR {path}")
        except ftplib.error_perm as exc:
            if _code(exc) == "550":
                raise NoSuchFile(path) from None
            raise ProtocolError(str(exc)) from None
        except ftplib.Error as exc:
            raise ProtocolError(str(exc)) from None
        except OSError as exc:
            raise TransferAborted(f"data connection failed: {exc}", session.counter.value) from None
        try:
            with conn:
                received = pump(conn, session, total, sink, limiter)
        except TransferAborted:
            _drain_reply(ftp)
            raise
        try:
            ftp.voidresp()
        except (ftplib.error_temp, EOFError, OSError) as exc:
            raise TransferAborted(f"server aborted transfer: {exc}", received) from None
        except ftplib.Error as exc:
            raise ProtocolError(str(exc)) from None
    except BaseException as exc:
        session.fail(exc)
        raise
    session.complete()
    return received


def _drain_reply(ftp: ftplib.FTP) -> None:
    # swallow the 426/451 that follows a broken data connection
    try:
        ftp.sock.settimeout(1.0)
        ftp.getresp()
    except (ftplib.Error, EOFError, OSError, socket.timeout):
        pass
