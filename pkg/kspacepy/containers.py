"""
Little-endian binary containers shared by the trajectory, parameter,
optimizer-state and frame-sequence files.

Every file starts with 4 magic bytes and a u16 version.
"""
import struct

import numpy as np

from .errors import FormatError, ShapeMismatchError


VERSION = 1


def pack_header(magic, *counts, version=VERSION):
    """ magic + u16 version + one u32 per count """
    return magic + struct.pack('<H', version) + struct.pack('<%dI' % len(counts), *counts)


class Reader:
    """
    Sequential reader over the raw bytes of a container,
    raising FormatError naming the section that ran short.
    """
    def __init__(self, raw, name='file'):
        self.raw = raw
        self.name = name
        self.pos = 0

    def take(self, n, section):
        if self.pos + n > len(self.raw):
            raise FormatError("%s truncated in %s section (need %s bytes, have %s)"
                % (self.name, section, n, len(self.raw) - self.pos), section=section)
        chunk = self.raw[self.pos:self.pos+n]
        self.pos += n
        return chunk

    def magic(self, expected):
        got = self.take(4, 'magic')
        if got != expected:
            raise FormatError("%s has magic %r, expected %r" % (self.name, got, expected),
                section='magic')

    def version(self, expected=VERSION):
        v, = struct.unpack('<H', self.take(2, 'version'))
        if v != expected:
            raise FormatError("%s version %s not supported (expected %s)" % (self.name, v, expected),
                section='version')
        return v

    def u32(self, count, section='header'):
        return struct.unpack('<%dI' % count, self.take(4*count, section))

    def array(self, dtype, count, section='payload'):
        """ Reads exactly `count` items, or raises ShapeMismatchError """
        dtype = np.dtype(dtype)
        need = dtype.itemsize * count
        available = len(self.raw) - self.pos
        if available != need:
            raise ShapeMismatchError("%s payload holds %s bytes but header declares %s"
                % (self.name, available, need), section=section)
        return np.frombuffer(self.take(need, section), dtype=dtype).copy()


def read_file(path):
    with open(path, 'rb') as f:
        return f.read()
