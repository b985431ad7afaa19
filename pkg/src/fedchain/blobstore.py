"""In-process content-addressed blob store (IPFS stand-in)."""
from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass
from pathlib import Path

PREFIX = "cid:"


class BlobNotFound(KeyError):
    pass


class StorageFull(RuntimeError):
    pass


@dataclass(frozen=True, order=True)
class ContentHash:
    digest: bytes

    def __post_init__(self):
        if len(self.digest) != 32:
            raise ValueError(f"digest must be 32 bytes, got {len(self.digest)}")

    @classmethod
    def of(cls, payload: bytes) -> ContentHash:
        return cls(hashlib.sha256(payload).digest())

    @classmethod
    def parse(cls, text: str) -> ContentHash:
        if not text.startswith(PREFIX) or len(text) != len(PREFIX) + 64:
            raise ValueError(f"not a content hash: {text!r}")
        hexpart = text[len(PREFIX):]
        if hexpart != hexpart.lower():
            raise ValueError(f"content hash must be lowercase hex: {text!r}")
        return cls(bytes.fromhex(hexpart))

    def render(self) -> str:
        return PREFIX + self.digest.hex()

    def __str__(self) -> str:
        return self.render()


@dataclass(frozen=True)
class BlobRecord:
    hash: ContentHash
    payload: bytes
    stored_at: int


class BlobStore:
    """Thread-safe map from sha256 digest to payload bytes.

    ``max_bytes`` bounds the total stored payload size; ``None`` means unlimited.
    Blobs are never deleted.
    """

    def __init__(self, max_bytes: int | None = None):
        self.max_bytes = max_bytes
        self._records: dict[ContentHash, BlobRecord] = {}
        self._used = 0
        self._tick = 0
        self._lock = threading.Lock()

    def put(self, payload: bytes) -> ContentHash:
        payload = bytes(payload)
        h = ContentHash.of(payload)
        with self._lock:
            if h in self._records:
                return h
            if self.max_bytes is not None and self._used + len(payload) > self.max_bytes:
                raise StorageFull(
                    f"storing {len(payload)} bytes exceeds budget of {self.max_bytes}"
                )
            self._records[h] = BlobRecord(h, payload, self._tick)
            self._tick += 1
            self._used += len(payload)
        return h

    def get(self, h: ContentHash | str) -> bytes:
        if isinstance(h, str):
            h = ContentHash.parse(h)
        try:
            return self._records[h].payload
        except KeyError:
            raise BlobNotFound(h.render()) from None

    def record(self, h: ContentHash) -> BlobRecord:
        try:
            return self._records[h]
        except KeyError:
            raise BlobNotFound(h.render()) from None

    def __contains__(self, h: ContentHash) -> bool:
        return h in self._records

    def __len__(self) -> int:
        return len(self._records)

    @property
    def used_bytes(self) -> int:
        return self._used

    def hashes(self) -> list[ContentHash]:
        return sorted(self._records)

    def dump(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for h in self.hashes():
            (directory / h.render()).write_bytes(self._records[h].payload)

    @classmethod
    def load(cls, directory: str | Path, max_bytes: int | None = None) -> BlobStore:
        store = cls(max_bytes=max_bytes)
        for path in sorted(Path(directory).iterdir()):
            if not path.name.startswith(PREFIX):
                continue
            h = store.put(path.read_bytes())
            if h.render() != path.name:
                raise ValueError(f"blob file {path.name} does not match its content")
        return store
