from .blob import BlobServer, blob_fetch, blob_open, blob_payload, blob_receive
from .core import (
    CHUNK,
    ByteCounter,
    HashSink,
    LockstepBudget,
    TokenBucket,
    TransferSession,
    progress_snapshot,
)
from .ftp import ftp_close, ftp_open, ftp_retrieve, ftp_size
from .stub_ftp import StubFtpServer, stub_ftp_serve

__all__ = [
    "CHUNK",
    "BlobServer",
    "ByteCounter",
    "HashSink",
    "LockstepBudget",
    "StubFtpServer",
    "TokenBucket",
    "TransferSession",
    "blob_fetch",
    "blob_open",
    "blob_payload",
    "blob_receive",
    "ftp_close",
    "ftp_open",
    "ftp_retrieve",
    "ftp_size",
    "progress_snapshot",
    "stub_ftp_serve",
]
