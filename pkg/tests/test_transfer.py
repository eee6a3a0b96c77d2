from __future__ import annotations

import ftplib
import hashlib
import socket
import threading
import time

import pytest

from wibench.errors import BindError, ConnectError, NoSuchFile, NotSupported, SizeMismatch, TransferAborted
from wibench.transfer import (
    BlobServer,
    ByteCounter,
    HashSink,
    StubFtpServer,
    blob_fetch,
    blob_payload,
    ftp_close,
    ftp_open,
    ftp_retrieve,
    ftp_size,
    progress_snapshot,
    stub_ftp_serve,
)

MIB = 1024 * 1024


def test_ftp_empty_file(ftp_root):
    (ftp_root / "empty").write_bytes(b"")
    with StubFtpServer(ftp_root) as server:
        s = ftp_open(*server.address)
        try:
            assert ftp_size(s, "empty") == 0
            assert ftp_retrieve(s, "empty", HashSink()) == 0
        finally:
            ftp_close(s)
    assert s.status == "complete"


def test_ftp_missing_file(ftp_root):
    with StubFtpServer(ftp_root) as server:
        s = ftp_open(*server.address)
        try:
            with pytest.raises(NoSuchFile):
                ftp_size(s, "nope.bin")
            with pytest.raises(NoSuchFile):
                ftp_size(s, "../../etc/passwd")
        finally:
            ftp_close(s)


def test_ftp_size_not_supported(ftp_root):
    (ftp_root / "f").write_bytes(b"abc")
    with StubFtpServer(ftp_root, size_supported=False) as server:
        s = ftp_open(*server.address)
        try:
            with pytest.raises(NotSupported):
                ftp_size(s, "f")
        finally:
            ftp_close(s)


def test_stub_rejects_unknown_verb(ftp_root):
    with stub_ftp_serve(ftp_root) as server:
        ftp = ftplib.FTP()
        ftp.connect(*server.address, timeout=5)
        ftp.login()
        with pytest.raises(ftplib.error_perm, match="^502"):
            ftp.sendcmd("MKD x")
        ftp.quit()


def test_stub_bind_error():
    holder = socket.socket()
    holder.bind(("127.0.0.1", 0))
    holder.listen(1)
    try:
        with pytest.raises(BindError):
            StubFtpServer(".", port=holder.getsockname()[1])
    finally:
        holder.close()


def test_ftp_connect_error(free_port):
    with pytest.raises(ConnectError):
        ftp_open("127.0.0.1", free_port, timeout=1.0)


@pytest.mark.parametrize("offset", [1, 65536, 300000])
def test_ftp_fault_offset(ftp_root, offset):
    (ftp_root / "f").write_bytes(bytes(MIB))
    with stub_ftp_serve(ftp_root, faults=offset) as server:
        s = ftp_open(*server.address)
        try:
            with pytest.raises(TransferAborted):
                ftp_retrieve(s, "f", HashSink())
        finally:
            ftp_close(s)
    assert s.counter.value == offset


def test_blob_unlimited():
    payload = blob_payload(MIB, seed=1)
    sink = HashSink()
    counter = ByteCounter()
    with BlobServer(payload) as server:
        assert blob_fetch(server.address, MIB, None, counter, sink=sink) == MIB
    assert counter.value == sink.size == MIB
    assert sink.hexdigest() == hashlib.sha256(payload).hexdigest()


def test_blob_payload_is_seeded():
    assert blob_payload(1000, 3) == blob_payload(1000, 3)
    assert blob_payload(1000, 3) != blob_payload(1000, 4)


def test_blob_size_mismatch():
    with BlobServer(b"x" * 10, announce_size=20) as server:
        with pytest.raises(SizeMismatch):
            blob_fetch(server.address, 10)


def test_blob_short_body_aborts():
    with BlobServer(b"x" * 100_000, abort_at=40_000) as server:
        counter = ByteCounter()
        with pytest.raises(TransferAborted):
            blob_fetch(server.address, 100_000, None, counter)
    assert counter.value == 40_000


@pytest.mark.slow
def test_blob_rate_limit_timing():
    size, rate = 655 * 1024, 131 * 1024
    payload = blob_payload(size)
    counter = ByteCounter()
    seen: list[int] = []
    done = threading.Event()

    def sampler():
        while not done.is_set():
            seen.append(progress_snapshot(counter))
            done.wait(0.25)

    with BlobServer(payload) as server:
        t = threading.Thread(target=sampler)
        start = time.monotonic()
        t.start()
        total = blob_fetch(server.address, size, rate, counter)
        elapsed = time.monotonic() - start
        done.set()
        t.join()
    assert total == size
    assert size / rate <= elapsed <= size / rate * 1.1
    # progress is monotone and visible in many distinct steps
    assert seen == sorted(seen)
    assert len(set(seen)) >= int(elapsed / 0.25) - 1


def test_progress_snapshot_bounds():
    c = ByteCounter()
    assert progress_snapshot(c) == 0
    c.add(5)
    assert progress_snapshot(c) == 5
    with pytest.raises(ValueError):
        c.add(-1)
