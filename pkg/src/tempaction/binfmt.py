"""Little-endian binary helpers shared by the artifact file formats."""

import struct

import numpy as np


class FormatError(ValueError):
    pass


def pack_name(name):
    raw = name.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


class Reader:
    def __init__(self, data, source=""):
        self.data = memoryview(data)
        self.pos = 0
        self.source = source

    def _need(self, n):
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.source}: truncated file")

    def magic(self, expected):
        self._need(len(expected))
        got = bytes(self.data[self.pos : self.pos + len(expected)])
        if got != expected:
            raise FormatError(f"{self.source}: bad magic {got!r}, expected {expected!r}")
        self.pos += len(expected)

    def unpack(self, fmt):
        size = struct.calcsize(fmt)
        self._need(size)
        vals = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return vals

    def name(self):
        (n,) = self.unpack("<I")
        self._need(n)
        raw = bytes(self.data[self.pos : self.pos + n])
        self.pos += n
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{self.source}: bad UTF-8 name") from exc

    def array(self, dtype, count):
        dt = np.dtype(dtype)
        self._need(dt.itemsize * count)
        arr = np.frombuffer(self.data, dtype=dt, count=count, offset=self.pos).copy()
        self.pos += dt.itemsize * count
        return arr

    def expect_end(self):
        if self.pos != len(self.data):
            raise FormatError(f"{self.source}: {len(self.data) - self.pos} trailing bytes")
