"""Named-tensor binary checkpoints.

Layout (all integers little-endian):
    magic            4 bytes,  b"PFLY"
    format_version   u32
    entry_count      u32
    per entry:
        name_len     u16
        name         UTF-8 bytes
        rank         u8
        dims         u32 per axis
        role         u8   (0 theta_frozen, 1 phi, 2 optimizer, 3 data)
        payload      float64 little-endian, row-major

Round trips are bit-exact. Loading checks magic, version and, when a role
is requested, that the file actually carries entries of that role; each
failure mode raises its own exception type. The `data` role (3) extends
the parameter roles so pair and dataset dumps can reuse the same layout.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"PFLY"
FORMAT_VERSION = 1

ROLE_THETA_FROZEN = 0
ROLE_PHI = 1
ROLE_OPTIMIZER = 2
ROLE_DATA = 3

ROLE_NAMES = {
    ROLE_THETA_FROZEN: "theta_frozen",
    ROLE_PHI: "phi",
    ROLE_OPTIMIZER: "optimizer",
    ROLE_DATA: "data",
}


class CheckpointError(RuntimeError):
    pass


class BadMagicError(CheckpointError):
    pass


class BadVersionError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


class RoleMismatchError(CheckpointError):
    pass


@dataclass(frozen=True)
class Entry:
    name: str
    role: int
    array: np.ndarray


def save_checkpoint(path, entries: list[Entry], overwrite: bool = False) -> None:
    """Write entries in order; creation is exclusive unless `overwrite`."""
    path = Path(path)
    chunks = [MAGIC, struct.pack("<I", FORMAT_VERSION), struct.pack("<I", len(entries))]
    for e in entries:
        if e.role not in ROLE_NAMES:
            raise CheckpointError(f"unknown role {e.role} for entry {e.name!r}")
        name_bytes = e.name.encode("utf-8")
        # asarray with order="C" keeps 0-d arrays 0-d (ascontiguousarray does not)
        arr = np.asarray(e.array, dtype=np.float64, order="C")
        chunks.append(struct.pack("<H", len(name_bytes)))
        chunks.append(name_bytes)
        chunks.append(struct.pack("<B", arr.ndim))
        for d in arr.shape:
            chunks.append(struct.pack("<I", d))
        chunks.append(struct.pack("<B", e.role))
        chunks.append(arr.astype("<f8").tobytes())
    mode = "wb" if overwrite else "xb"
    with open(path, mode) as f:
        f.write(b"".join(chunks))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise TruncatedError(
                f"file ends at byte {len(self.blob)}, needed {self.pos + n}"
            )
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return struct.unpack("<B", self.take(1))[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path) -> list[Entry]:
    """Read every entry; raises BadMagic/BadVersion/Truncated on damage."""
    blob = Path(path).read_bytes()
    r = _Reader(blob)
    magic = r.take(4)
    if magic != MAGIC:
        raise BadMagicError(f"expected magic {MAGIC!r}, found {magic!r}")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise BadVersionError(f"format version {version} unsupported (want {FORMAT_VERSION})")
    count = r.u32()
    entries = []
    for _ in range(count):
        name = r.take(r.u16()).decode("utf-8")
        rank = r.u8()
        dims = tuple(r.u32() for _ in range(rank))
        role = r.u8()
        if role not in ROLE_NAMES:
            raise CheckpointError(f"entry {name!r} carries unknown role byte {role}")
        n = int(np.prod(dims, dtype=np.int64)) if dims else 1
        payload = r.take(8 * n)
        arr = np.frombuffer(payload, dtype="<f8").reshape(dims).copy()
        entries.append(Entry(name=name, role=role, array=arr))
    return entries


def load_role(path, role: int) -> dict[str, np.ndarray]:
    """Entries of one role as a name -> array dict.

    A file that contains no entry of the requested role is a role mismatch,
    not an empty result.
    """
    entries = load_checkpoint(path)
    picked = {e.name: e.array for e in entries if e.role == role}
    if not picked:
        present = sorted({ROLE_NAMES[e.role] for e in entries})
        raise RoleMismatchError(
            f"no {ROLE_NAMES[role]!r} entries in {path} (file has: {present})"
        )
    return picked


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
