"""Channel records and the HCIR binary file format.

Layout (little-endian)::

    file   := b"HCIR" u16 version(=1) record*
    record := u16 pci, u32 flags, u64 timestamp_ns, f64 lat, f64 lon,
              u8 fix_quality, u8 pad, u16 n_meas, u16 n_tx, u16 n_rx,
              u32 n_subcarriers,
              n_meas*n_tx*n_rx*n_subcarriers x (f32 I, f32 Q)   # (meas, tx, rx, sc) row-major

``flags`` occupies the reserved word; bit 0 is ``raw_pilots_present``.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InvalidPci, TruncatedRecord, VersionMismatch

MAGIC = b"HCIR"
VERSION = 1
N_MEAS = 12

FIX_NONE = 0
FIX_GPS = 1
FIX_DGPS = 2

_HEAD = struct.Struct("<HIQddBBHHHI")


@dataclass(frozen=True, eq=False)
class ChannelRecord:
    pci: int
    timestamp_ns: int
    lat: float
    lon: float
    gps_fix_quality: int
    h: np.ndarray  # complex64 (n_meas, n_tx, n_rx, n_subcarriers)
    raw_pilots_present: bool = False

    def __post_init__(self):
        if not 0 <= self.pci <= 503:
            raise InvalidPci(f"PCI {self.pci} outside [0, 503]")
        if self.h.ndim != 4:
            raise ValueError("h must be (n_meas, n_tx, n_rx, n_subcarriers)")

    @property
    def n_meas(self):
        return self.h.shape[0]

    @property
    def n_tx(self):
        return self.h.shape[1]

    @property
    def n_rx(self):
        return self.h.shape[2]

    @property
    def n_subcarriers(self):
        return self.h.shape[3]

    def __eq__(self, other):
        if not isinstance(other, ChannelRecord):
            return NotImplemented
        return (
            self.pci == other.pci
            and self.timestamp_ns == other.timestamp_ns
            and self.lat == other.lat
            and self.lon == other.lon
            and self.gps_fix_quality == other.gps_fix_quality
            and self.raw_pilots_present == other.raw_pilots_present
            and self.h.shape == other.h.shape
            and np.array_equal(self.h.view(np.float32), other.h.view(np.float32))
        )


def _encode(rec):
    h = np.ascontiguousarray(rec.h, dtype=np.complex64)
    head = _HEAD.pack(
        rec.pci, int(bool(rec.raw_pilots_present)), rec.timestamp_ns, rec.lat, rec.lon,
        rec.gps_fix_quality, 0, *h.shape)
    return head + h.astype("<c8").tobytes()


def write_records(path, records):
    with open(path, "wb") as f:
        f.write(MAGIC + struct.pack("<H", VERSION))
        for rec in records:
            f.write(_encode(rec))


def read_records(path):
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 6 or data[:4] != MAGIC:
        raise FormatError(f"{path}: not an HCIR file (bad magic)")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != VERSION:
        raise VersionMismatch(version, VERSION)
    out = []
    off = 6
    while off < len(data):
        idx = len(out)
        if off + _HEAD.size > len(data):
            raise TruncatedRecord(idx, "header")
        pci, flags, ts, lat, lon, fix, _pad, nm, nt, nr, nk = _HEAD.unpack_from(data, off)
        off += _HEAD.size
        nbytes = nm * nt * nr * nk * 8
        if off + nbytes > len(data):
            raise TruncatedRecord(idx, "channel data")
        h = np.frombuffer(data, dtype="<c8", count=nm * nt * nr * nk, offset=off)
        h = h.astype(np.complex64).reshape(nm, nt, nr, nk)
        off += nbytes
        out.append(ChannelRecord(pci, ts, lat, lon, fix, h, bool(flags & 1)))
    return out
