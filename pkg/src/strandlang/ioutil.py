"""Small file helpers shared by the binary formats.

Every on-disk artifact is written atomically: the payload goes to a
temporary file in the target directory which is renamed over the final
path only after a successful write. A failed command therefore never
leaves a partial output behind.
"""

import os
import struct
import tempfile


def atomic_write_bytes(path, data: bytes) -> None:
    """Write ``data`` to ``path`` via a temp file + rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


class Reader:
    """Cursor over a bytes buffer with struct-style accessors."""

    def __init__(self, data: bytes, name: str = "<buffer>"):
        self.data = data
        self.pos = 0
        self.name = name

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ValueError(f"{self.name}: unexpected end of file")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def magic(self, expected: bytes) -> None:
        got = self.take(len(expected))
        if got != expected:
            raise ValueError(
                f"{self.name}: bad magic {got!r}, expected {expected!r}"
            )

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def f32(self, count: int = 1):
        vals = struct.unpack(f"<{count}f", self.take(4 * count))
        return vals[0] if count == 1 else vals

    def done(self) -> None:
        if self.pos != len(self.data):
            raise ValueError(f"{self.name}: trailing bytes after payload")


def pack_u32(*vals) -> bytes:
    return struct.pack(f"<{len(vals)}I", *vals)


def pack_f32(values) -> bytes:
    import numpy as np

    arr = np.asarray(values, dtype="<f4")
    return arr.tobytes(order="C")
