"""Chunked pointwise LAZ codec: arithmetic coder, integer models, and the
item codecs for the classic 20-byte point record and the 8-byte GPS-time
record (item versions 2).

Both directions are implemented so synthetic clouds can be written as real
compressed files and read back bit-exactly. The decoder follows the
reference arithmetic-coder behavior closely enough to read files produced
by mainstream LAZ writers, within the point-format subset this package
supports (formats 0 and 1, pointwise-chunked streams).

Everything here is integer state-machine code; when Cython is present at
build time this module is compiled as an extension for a several-fold
speedup, otherwise it runs as plain Python.
"""

from __future__ import annotations

import struct

from .errors import MalformedFile

AC_MAX_LENGTH = 0xFFFFFFFF
AC_MIN_LENGTH = 0x01000000

_U32 = 0xFFFFFFFF
_U64 = 0xFFFFFFFFFFFFFFFF


def i32(value: int) -> int:
    """Reinterpret the low 32 bits of ``value`` as a signed int."""
    value &= _U32
    return value - 0x100000000 if value >= 0x80000000 else value


def u8_fold(value: int) -> int:
    return value & 0xFF


def _u32_zero_bit_0(value: int) -> int:
    return value & 0xFFFFFFFE


# --- adaptive probability models ---------------------------------------------


class ArithmeticBitModel:
    __slots__ = ("bit_0_count", "bit_count", "bit_0_prob", "update_cycle",
                 "bits_until_update")

    BM_LENGTH_SHIFT = 13
    BM_MAX_COUNT = 1 << BM_LENGTH_SHIFT

    def __init__(self):
        self.init()

    def init(self):
        self.bit_0_count = 1
        self.bit_count = 2
        self.bit_0_prob = 1 << (self.BM_LENGTH_SHIFT - 1)
        self.update_cycle = self.bits_until_update = 4

    def update(self):
        self.bit_count += self.update_cycle
        if self.bit_count >= self.BM_MAX_COUNT:
            self.bit_count = (self.bit_count + 1) >> 1
            self.bit_0_count = (self.bit_0_count + 1) >> 1
            if self.bit_0_count == self.bit_count:
                self.bit_count += 1
        scale = 0x80000000 // self.bit_count
        self.bit_0_prob = (self.bit_0_count * scale) >> (31 - self.BM_LENGTH_SHIFT)
        self.update_cycle = min((5 * self.update_cycle) >> 2, 64)
        self.bits_until_update = self.update_cycle


class ArithmeticModel:
    """Adaptive frequency table over ``num_symbols`` symbols.

    Decoder instances carry an extra lookup table that accelerates the
    symbol search; encoder instances only need the distribution.
    """

    __slots__ = ("num_symbols", "compress", "distribution", "decoder_table",
                 "symbol_count", "total_count", "update_cycle",
                 "symbols_until_update", "last_symbol", "table_shift",
                 "table_size")

    DM_LENGTH_SHIFT = 15
    DM_MAX_COUNT = 1 << DM_LENGTH_SHIFT

    def __init__(self, num_symbols: int, compress: bool):
        if num_symbols < 2 or num_symbols > 2048:
            raise ValueError(f"invalid symbol count {num_symbols}")
        self.num_symbols = num_symbols
        self.compress = compress
        self.last_symbol = num_symbols - 1
        if not compress and num_symbols > 16:
            table_bits = 3
            while num_symbols > (1 << (table_bits + 2)):
                table_bits += 1
            self.table_shift = self.DM_LENGTH_SHIFT - table_bits
            self.table_size = 1 << table_bits
            self.decoder_table = [0] * (self.table_size + 2)
        else:
            self.table_shift = 0
            self.table_size = 0
            self.decoder_table = None
        self.distribution = [0] * num_symbols
        self.symbol_count = [1] * num_symbols
        self.init()

    def init(self):
        self.total_count = 0
        self.update_cycle = self.num_symbols
        self.symbol_count = [1] * self.num_symbols
        self._update()
        self.symbols_until_update = (self.num_symbols + 6) >> 1
        self.update_cycle = self.symbols_until_update

    def _update(self):
        self.total_count += self.update_cycle
        if self.total_count > self.DM_MAX_COUNT:
            self.total_count = 0
            counts = self.symbol_count
            for i in range(self.num_symbols):
                counts[i] = (counts[i] + 1) >> 1
                self.total_count += counts[i]

        scale = 0x80000000 // self.total_count
        shift = 31 - self.DM_LENGTH_SHIFT
        running = 0
        if self.compress or self.table_size == 0:
            for k in range(self.num_symbols):
                self.distribution[k] = (scale * running) >> shift
                running += self.symbol_count[k]
        else:
            filled = 0
            for k in range(self.num_symbols):
                self.distribution[k] = (scale * running) >> shift
                running += self.symbol_count[k]
                w = self.distribution[k] >> self.table_shift
                while filled < w:
                    filled += 1
                    self.decoder_table[filled] = k - 1
            self.decoder_table[0] = 0
            while filled <= self.table_size:
                filled += 1
                self.decoder_table[filled] = self.num_symbols - 1

        self.update_cycle = min((5 * self.update_cycle) >> 2,
                                (self.num_symbols + 6) << 3)
        self.symbols_until_update = self.update_cycle


# --- range coder --------------------------------------------------------------


class ArithmeticDecoder:
    """Decodes symbols from a byte buffer starting at ``pos``.

    Reads past the end of the buffer yield zero bytes: the final
    renormalizations of a chunk legitimately peek beyond the payload.
    """

    __slots__ = ("buf", "pos", "value", "length")

    def __init__(self, buf, pos: int = 0):
        self.buf = buf
        self.pos = pos
        self.value = 0
        self.length = AC_MAX_LENGTH

    def _byte(self) -> int:
        pos = self.pos
        self.pos = pos + 1
        if pos < len(self.buf):
            return self.buf[pos]
        return 0

    def start(self):
        self.length = AC_MAX_LENGTH
        value = 0
        for _ in range(4):
            value = (value << 8) | self._byte()
        self.value = value

    def _renorm(self):
        while self.length < AC_MIN_LENGTH:
            self.value = ((self.value << 8) | self._byte()) & _U32
            self.length = (self.length << 8) & _U32

    def decode_bit(self, m: ArithmeticBitModel) -> int:
        x = m.bit_0_prob * (self.length >> m.BM_LENGTH_SHIFT)
        if self.value < x:
            sym = 0
            self.length = x
            m.bit_0_count += 1
        else:
            sym = 1
            self.value -= x
            self.length -= x
        if self.length < AC_MIN_LENGTH:
            self._renorm()
        m.bits_until_update -= 1
        if m.bits_until_update == 0:
            m.update()
        return sym

    def decode_symbol(self, m: ArithmeticModel) -> int:
        y = self.length
        dist = m.distribution
        if m.decoder_table is not None:
            self.length >>= m.DM_LENGTH_SHIFT
            dv = self.value // self.length
            t = dv >> m.table_shift
            sym = m.decoder_table[t]
            n = m.decoder_table[t + 1] + 1
            while n > sym + 1:
                k = (sym + n) >> 1
                if dist[k] > dv:
                    n = k
                else:
                    sym = k
            x = dist[sym] * self.length
            if sym != m.last_symbol:
                y = dist[sym + 1] * self.length
        else:
            x = sym = 0
            self.length >>= m.DM_LENGTH_SHIFT
            n = m.num_symbols
            k = n >> 1
            while k != sym:
                z = self.length * dist[k]
                if z > self.value:
                    n = k
                    y = z
                else:
                    sym = k
                    x = z
                k = (sym + n) >> 1
        self.value -= x
        self.length = y - x
        if self.length < AC_MIN_LENGTH:
            self._renorm()
        m.symbol_count[sym] += 1
        m.symbols_until_update -= 1
        if m.symbols_until_update == 0:
            m._update()
        return sym

    def read_bits(self, bits: int) -> int:
        if bits > 19:
            lower = self.read_bits(16)
            upper = self.read_bits(bits - 16)
            return (upper << 16) | lower
        self.length >>= bits
        sym = self.value // self.length
        self.value -= sym * self.length
        if self.length < AC_MIN_LENGTH:
            self._renorm()
        return sym

    def read_int(self) -> int:
        return self.read_bits(32)

    def create_symbol_model(self, num_symbols: int) -> ArithmeticModel:
        return ArithmeticModel(num_symbols, compress=False)


class ArithmeticEncoder:
    """Encodes symbols into an in-memory byte buffer."""

    __slots__ = ("out", "base", "length")

    def __init__(self):
        self.out = bytearray()
        self.base = 0
        self.length = AC_MAX_LENGTH

    def start(self):
        self.out = bytearray()
        self.base = 0
        self.length = AC_MAX_LENGTH

    def _propagate_carry(self):
        out = self.out
        i = len(out) - 1
        while i >= 0 and out[i] == 0xFF:
            out[i] = 0
            i -= 1
        if i >= 0:
            out[i] += 1
        # a carry out of the very first byte cannot happen: the coder's
        # invariant keeps base below 2^32 at the first renormalization

    def _renorm(self):
        while self.length < AC_MIN_LENGTH:
            self.out.append((self.base >> 24) & 0xFF)
            self.base = (self.base << 8) & _U32
            self.length = (self.length << 8) & _U32

    def _add_base(self, x: int):
        base = self.base + x
        if base > _U32:
            self.base = base & _U32
            self._propagate_carry()
        else:
            self.base = base

    def encode_bit(self, m: ArithmeticBitModel, sym: int):
        x = m.bit_0_prob * (self.length >> m.BM_LENGTH_SHIFT)
        if sym == 0:
            self.length = x
            m.bit_0_count += 1
        else:
            self._add_base(x)
            self.length -= x
        if self.length < AC_MIN_LENGTH:
            self._renorm()
        m.bits_until_update -= 1
        if m.bits_until_update == 0:
            m.update()

    def encode_symbol(self, m: ArithmeticModel, sym: int):
        dist = m.distribution
        if sym == m.last_symbol:
            x = dist[sym] * (self.length >> m.DM_LENGTH_SHIFT)
            self._add_base(x)
            self.length -= x
        else:
            self.length >>= m.DM_LENGTH_SHIFT
            x = dist[sym] * self.length
            self._add_base(x)
            self.length = dist[sym + 1] * self.length - x
        if self.length < AC_MIN_LENGTH:
            self._renorm()
        m.symbol_count[sym] += 1
        m.symbols_until_update -= 1
        if m.symbols_until_update == 0:
            m._update()

    def write_bits(self, bits: int, sym: int):
        if bits > 19:
            self.write_bits(16, sym & 0xFFFF)
            sym >>= 16
            bits -= 16
        self.length >>= bits
        self._add_base(sym * self.length)
        if self.length < AC_MIN_LENGTH:
            self._renorm()

    def write_int(self, sym: int):
        self.write_bits(32, sym & _U32)

    def done(self) -> bytes:
        another_byte = True
        if self.length > 2 * AC_MIN_LENGTH:
            self._add_base(AC_MIN_LENGTH)
            self.length = AC_MIN_LENGTH >> 1
        else:
            self._add_base(AC_MIN_LENGTH >> 1)
            self.length = AC_MIN_LENGTH >> 9
            another_byte = False
        self._renorm()
        # zero padding keeps the decoder's speculative byte reads in sync
        self.out.append(0)
        self.out.append(0)
        if another_byte:
            self.out.append(0)
        return bytes(self.out)

    def create_symbol_model(self, num_symbols: int) -> ArithmeticModel:
        return ArithmeticModel(num_symbols, compress=True)


# --- integer compressor --------------------------------------------------------


class IntegerCompressor:
    """Compresses prediction correctors: a small symbol for the bit-width
    class ``k`` followed by the corrector's position inside that interval."""

    __slots__ = ("codec", "bits", "contexts", "bits_high", "corr_bits",
                 "corr_range", "corr_min", "corr_max", "m_bits",
                 "m_corrector", "k")

    def __init__(self, codec, bits: int = 16, contexts: int = 1,
                 bits_high: int = 8, value_range: int = 0):
        self.codec = codec
        self.bits = bits
        self.contexts = contexts
        self.bits_high = bits_high

        if value_range != 0:
            self.corr_bits = 0
            self.corr_range = value_range
            while value_range != 0:
                value_range >>= 1
                self.corr_bits += 1
            if self.corr_range == (1 << (self.corr_bits - 1)):
                self.corr_bits -= 1
            self.corr_min = -self.corr_range // 2
            self.corr_max = self.corr_min + self.corr_range - 1
        elif 0 < bits < 32:
            self.corr_bits = bits
            self.corr_range = 1 << bits
            self.corr_min = -self.corr_range // 2
            self.corr_max = self.corr_min + self.corr_range - 1
        else:
            self.corr_bits = 32
            self.corr_range = 0
            self.corr_min = -0x7FFFFFFF
            self.corr_max = 0x7FFFFFFF

        self.m_bits = None
        self.m_corrector = None
        self.k = 0

    def init(self):
        if self.m_bits is None:
            codec = self.codec
            self.m_bits = [codec.create_symbol_model(self.corr_bits + 1)
                           for _ in range(self.contexts)]
            # index k in [1, corr_bits]; k == corr_bits is reachable (a
            # corrector of exactly -2^(bits-1)) so the table is inclusive
            self.m_corrector = [ArithmeticBitModel()]
            for i in range(1, self.corr_bits + 1):
                size = 1 << min(i, self.bits_high)
                self.m_corrector.append(codec.create_symbol_model(size))
        else:
            for m in self.m_bits:
                m.init()
            self.m_corrector[0].init()
            for m in self.m_corrector[1:]:
                m.init()

    # decoding side

    def _read_corrector(self, model) -> int:
        dec = self.codec
        self.k = dec.decode_symbol(model)
        k = self.k
        if k != 0:
            if k < 32:
                if k <= self.bits_high:
                    c = dec.decode_symbol(self.m_corrector[k])
                else:
                    k1 = k - self.bits_high
                    c = dec.decode_symbol(self.m_corrector[k])
                    c1 = dec.read_bits(k1)
                    c = (c << k1) | c1
                if c >= (1 << (k - 1)):
                    c += 1
                else:
                    c -= (1 << k) - 1
            else:
                c = self.corr_min
        else:
            c = dec.decode_bit(self.m_corrector[0])
        return c

    def decompress(self, pred: int, context: int = 0) -> int:
        real = pred + self._read_corrector(self.m_bits[context])
        if self.corr_range == 0:
            return i32(real)
        if real < 0:
            real += self.corr_range
        elif real >= self.corr_range:
            real -= self.corr_range
        return real

    # encoding side

    def _write_corrector(self, c: int, model):
        enc = self.codec
        k = 0
        c1 = -c if c <= 0 else c - 1
        while c1:
            c1 >>= 1
            k += 1
        self.k = k
        enc.encode_symbol(model, k)
        if k:
            if k < 32:
                if c < 0:
                    c += (1 << k) - 1
                else:
                    c -= 1
                if k <= self.bits_high:
                    enc.encode_symbol(self.m_corrector[k], c)
                else:
                    k1 = k - self.bits_high
                    enc.encode_symbol(self.m_corrector[k], c >> k1)
                    enc.write_bits(k1, c & ((1 << k1) - 1))
        else:
            enc.encode_bit(self.m_corrector[0], c)

    def compress(self, pred: int, real: int, context: int = 0):
        corr = i32(real - pred)
        if corr < self.corr_min:
            corr += self.corr_range
        elif corr > self.corr_max:
            corr -= self.corr_range
        self._write_corrector(corr, self.m_bits[context])


# --- streaming median of five -------------------------------------------------


class StreamingMedian5:
    __slots__ = ("values", "high")

    def __init__(self):
        self.values = [0, 0, 0, 0, 0]
        self.high = True

    def add(self, v: int):
        values = self.values
        if self.high:
            if v < values[2]:
                values[4] = values[3]
                values[3] = values[2]
                if v < values[0]:
                    values[2] = values[1]
                    values[1] = values[0]
                    values[0] = v
                elif v < values[1]:
                    values[2] = values[1]
                    values[1] = v
                else:
                    values[2] = v
            else:
                if v < values[3]:
                    values[4] = values[3]
                    values[3] = v
                else:
                    values[4] = v
                self.high = False
        else:
            if values[2] < v:
                values[0] = values[1]
                values[1] = values[2]
                if values[4] < v:
                    values[2] = values[3]
                    values[3] = values[4]
                    values[4] = v
                elif values[3] < v:
                    values[2] = values[3]
                    values[3] = v
                else:
                    values[2] = v
            else:
                if values[1] < v:
                    values[0] = values[1]
                    values[1] = v
                else:
                    values[0] = v
                self.high = True

    def get(self) -> int:
        return self.values[2]


# --- point record -------------------------------------------------------------


NUMBER_RETURN_MAP = (
    (15, 14, 13, 12, 11, 10, 9, 8),
    (14, 0, 1, 3, 6, 10, 10, 9),
    (13, 1, 2, 4, 7, 11, 11, 10),
    (12, 3, 4, 5, 8, 12, 12, 11),
    (11, 6, 7, 8, 9, 13, 13, 12),
    (10, 10, 11, 12, 13, 14, 14, 13),
    (9, 10, 11, 12, 13, 14, 15, 14),
    (8, 9, 10, 11, 12, 13, 14, 15),
)

NUMBER_RETURN_LEVEL = (
    (0, 1, 2, 3, 4, 5, 6, 7),
    (1, 0, 1, 2, 3, 4, 5, 6),
    (2, 1, 0, 1, 2, 3, 4, 5),
    (3, 2, 1, 0, 1, 2, 3, 4),
    (4, 3, 2, 1, 0, 1, 2, 3),
    (5, 4, 3, 2, 1, 0, 1, 2),
    (6, 5, 4, 3, 2, 1, 0, 1),
    (7, 6, 5, 4, 3, 2, 1, 0),
)


class Point10:
    """Decoded fields of the classic 20-byte point record."""

    __slots__ = ("x", "y", "z", "intensity", "return_num", "num_returns",
                 "scan_dir_flag", "edge_flag", "classification",
                 "scan_angle_rank", "user_data", "point_source_id")

    def __init__(self):
        self.x = 0
        self.y = 0
        self.z = 0
        self.intensity = 0
        self.return_num = 0
        self.num_returns = 0
        self.scan_dir_flag = 0
        self.edge_flag = 0
        self.classification = 0
        self.scan_angle_rank = 0
        self.user_data = 0
        self.point_source_id = 0

    @classmethod
    def from_buffer(cls, buf, pos: int) -> "Point10":
        pt = cls()
        pt.x = i32(int.from_bytes(buf[pos:pos + 4], "little"))
        pt.y = i32(int.from_bytes(buf[pos + 4:pos + 8], "little"))
        pt.z = i32(int.from_bytes(buf[pos + 8:pos + 12], "little"))
        pt.intensity = int.from_bytes(buf[pos + 12:pos + 14], "little")
        pt.set_bitfield(buf[pos + 14])
        pt.classification = buf[pos + 15]
        pt.scan_angle_rank = buf[pos + 16]
        pt.user_data = buf[pos + 17]
        pt.point_source_id = int.from_bytes(buf[pos + 18:pos + 20], "little")
        return pt

    def to_bytes(self) -> bytes:
        return b"".join((
            (self.x & _U32).to_bytes(4, "little"),
            (self.y & _U32).to_bytes(4, "little"),
            (self.z & _U32).to_bytes(4, "little"),
            self.intensity.to_bytes(2, "little"),
            bytes((self.bitfield(), self.classification,
                   self.scan_angle_rank & 0xFF, self.user_data)),
            self.point_source_id.to_bytes(2, "little"),
        ))

    def bitfield(self) -> int:
        return (self.return_num | (self.num_returns << 3)
                | (self.scan_dir_flag << 6) | (self.edge_flag << 7))

    def set_bitfield(self, byte: int):
        self.return_num = byte & 0b111
        self.num_returns = (byte >> 3) & 0b111
        self.scan_dir_flag = (byte >> 6) & 1
        self.edge_flag = (byte >> 7) & 1

    def copy(self) -> "Point10":
        pt = Point10()
        for name in self.__slots__:
            setattr(pt, name, getattr(self, name))
        return pt


class Point10Codec:
    """Item codec for the 20-byte point record (item version 2)."""

    def __init__(self, codec, compress: bool):
        self.codec = codec
        self.compress = compress
        self.m_changed_values = codec.create_symbol_model(64)
        self.ic_intensity = IntegerCompressor(codec, 16, 4)
        self.m_scan_angle_rank = [codec.create_symbol_model(256),
                                  codec.create_symbol_model(256)]
        self.ic_point_source_id = IntegerCompressor(codec, 16)
        self.m_bit_byte = [None] * 256
        self.m_classification = [None] * 256
        self.m_user_data = [None] * 256
        self.ic_dx = IntegerCompressor(codec, 32, 2)
        self.ic_dy = IntegerCompressor(codec, 32, 22)
        self.ic_z = IntegerCompressor(codec, 32, 20)
        self.last_x_diff_median5 = [StreamingMedian5() for _ in range(16)]
        self.last_y_diff_median5 = [StreamingMedian5() for _ in range(16)]
        self.last_intensity = [0] * 16
        self.last_height = [0] * 8
        self.last_item = Point10()

    def init(self, item: Point10):
        for i in range(16):
            self.last_x_diff_median5[i] = StreamingMedian5()
            self.last_y_diff_median5[i] = StreamingMedian5()
        self.last_intensity = [0] * 16
        self.last_height = [0] * 8

        self.m_changed_values.init()
        self.ic_intensity.init()
        self.m_scan_angle_rank[0].init()
        self.m_scan_angle_rank[1].init()
        self.ic_point_source_id.init()
        for m in self.m_bit_byte:
            if m is not None:
                m.init()
        for m in self.m_classification:
            if m is not None:
                m.init()
        for m in self.m_user_data:
            if m is not None:
                m.init()
        self.ic_dx.init()
        self.ic_dy.init()
        self.ic_z.init()

        self.last_item = item.copy()
        self.last_item.intensity = 0

    def _model(self, table, index):
        m = table[index]
        if m is None:
            m = self.codec.create_symbol_model(256)
            table[index] = m
        return m

    def read(self) -> Point10:
        dec = self.codec
        last = self.last_item
        changed = dec.decode_symbol(self.m_changed_values)

        if changed & 0b100000:
            model = self._model(self.m_bit_byte, last.bitfield())
            last.set_bitfield(dec.decode_symbol(model))

        r = last.return_num
        n = last.num_returns
        m = NUMBER_RETURN_MAP[n][r]
        level = NUMBER_RETURN_LEVEL[n][r]

        if changed & 0b10000:
            context = m if m < 3 else 3
            last.intensity = self.ic_intensity.decompress(
                self.last_intensity[m], context)
            self.last_intensity[m] = last.intensity
        else:
            last.intensity = self.last_intensity[m]

        if changed & 0b1000:
            model = self._model(self.m_classification, last.classification)
            last.classification = dec.decode_symbol(model)

        if changed & 0b100:
            val = dec.decode_symbol(self.m_scan_angle_rank[last.scan_dir_flag])
            last.scan_angle_rank = u8_fold(val + last.scan_angle_rank)

        if changed & 0b10:
            model = self._model(self.m_user_data, last.user_data)
            last.user_data = dec.decode_symbol(model)

        if changed & 0b1:
            last.point_source_id = self.ic_point_source_id.decompress(
                last.point_source_id)

        median = self.last_x_diff_median5[m].get()
        diff = self.ic_dx.decompress(median, 1 if n == 1 else 0)
        last.x = i32(last.x + diff)
        self.last_x_diff_median5[m].add(diff)

        median = self.last_y_diff_median5[m].get()
        k_bits = self.ic_dx.k
        context = (1 if n == 1 else 0) + (
            _u32_zero_bit_0(k_bits) if k_bits < 20 else 20)
        diff = self.ic_dy.decompress(median, context)
        last.y = i32(last.y + diff)
        self.last_y_diff_median5[m].add(diff)

        k_bits = (self.ic_dx.k + self.ic_dy.k) // 2
        context = (1 if n == 1 else 0) + (
            _u32_zero_bit_0(k_bits) if k_bits < 18 else 18)
        last.z = self.ic_z.decompress(self.last_height[level], context)
        self.last_height[level] = last.z

        return last.copy()

    def write(self, item: Point10):
        enc = self.codec
        last = self.last_item

        r = item.return_num
        n = item.num_returns
        m = NUMBER_RETURN_MAP[n][r]
        level = NUMBER_RETURN_LEVEL[n][r]

        bitfield_changed = last.bitfield() != item.bitfield()
        intensity_changed = self.last_intensity[m] != item.intensity
        classification_changed = last.classification != item.classification
        scan_angle_changed = last.scan_angle_rank != item.scan_angle_rank
        user_data_changed = last.user_data != item.user_data
        psid_changed = last.point_source_id != item.point_source_id

        changed = ((bitfield_changed << 5) | (intensity_changed << 4)
                   | (classification_changed << 3) | (scan_angle_changed << 2)
                   | (user_data_changed << 1) | psid_changed)
        enc.encode_symbol(self.m_changed_values, changed)

        if bitfield_changed:
            model = self._model(self.m_bit_byte, last.bitfield())
            enc.encode_symbol(model, item.bitfield())

        if intensity_changed:
            context = m if m < 3 else 3
            self.ic_intensity.compress(self.last_intensity[m], item.intensity,
                                       context)
            self.last_intensity[m] = item.intensity

        if classification_changed:
            model = self._model(self.m_classification, last.classification)
            enc.encode_symbol(model, item.classification)

        if scan_angle_changed:
            enc.encode_symbol(self.m_scan_angle_rank[item.scan_dir_flag],
                              u8_fold(item.scan_angle_rank - last.scan_angle_rank))

        if user_data_changed:
            model = self._model(self.m_user_data, last.user_data)
            enc.encode_symbol(model, item.user_data)

        if psid_changed:
            self.ic_point_source_id.compress(last.point_source_id,
                                             item.point_source_id)

        median = self.last_x_diff_median5[m].get()
        diff = i32(item.x - last.x)
        self.ic_dx.compress(median, diff, 1 if n == 1 else 0)
        self.last_x_diff_median5[m].add(diff)

        median = self.last_y_diff_median5[m].get()
        k_bits = self.ic_dx.k
        context = (1 if n == 1 else 0) + (
            _u32_zero_bit_0(k_bits) if k_bits < 20 else 20)
        diff = i32(item.y - last.y)
        self.ic_dy.compress(median, diff, context)
        self.last_y_diff_median5[m].add(diff)

        k_bits = (self.ic_dx.k + self.ic_dy.k) // 2
        context = (1 if n == 1 else 0) + (
            _u32_zero_bit_0(k_bits) if k_bits < 18 else 18)
        self.ic_z.compress(self.last_height[level], item.z, context)
        self.last_height[level] = item.z

        self.last_item = item.copy()


# --- GPS time record ------------------------------------------------------------


GPSTIME_MULTI = 500
GPSTIME_MULTI_MINUS = -10
GPSTIME_MULTI_UNCHANGED = GPSTIME_MULTI - GPSTIME_MULTI_MINUS + 1
GPSTIME_MULTI_CODE_FULL = GPSTIME_MULTI - GPSTIME_MULTI_MINUS + 2
GPSTIME_MULTI_TOTAL = GPSTIME_MULTI - GPSTIME_MULTI_MINUS + 6


def _i64(value: int) -> int:
    value &= _U64
    return value - 0x10000000000000000 if value >= 0x8000000000000000 else value


class GpsTime11Codec:
    """Item codec for the 8-byte GPS-time record (item version 2).

    Times are handled as the u64 bit patterns of the IEEE doubles.
    """

    def __init__(self, codec, compress: bool):
        self.codec = codec
        self.compress = compress
        self.m_gpstime_multi = codec.create_symbol_model(GPSTIME_MULTI_TOTAL)
        self.m_gpstime_0diff = codec.create_symbol_model(6)
        self.ic_gpstime = IntegerCompressor(codec, 32, 9)
        self.last = 0
        self.next = 0
        self.last_gpstime_diff = [0, 0, 0, 0]
        self.multi_extreme_counter = [0, 0, 0, 0]
        self.last_gpstime = [0, 0, 0, 0]

    def init(self, time_u64: int):
        self.last = 0
        self.next = 0
        self.last_gpstime_diff = [0, 0, 0, 0]
        self.multi_extreme_counter = [0, 0, 0, 0]
        self.m_gpstime_multi.init()
        self.m_gpstime_0diff.init()
        self.ic_gpstime.init()
        self.last_gpstime = [time_u64 & _U64, 0, 0, 0]

    # decoding side

    def read(self) -> int:
        if self.last_gpstime_diff[self.last] == 0:
            self._read_lastdiff_zero()
        else:
            self._read_lastdiff_nonzero()
        return self.last_gpstime[self.last]

    def _read_lastdiff_zero(self):
        dec = self.codec
        multi = dec.decode_symbol(self.m_gpstime_0diff)
        if multi == 1:  # difference fits in 32 bits
            val = self.ic_gpstime.decompress(0, 0)
            self.last_gpstime_diff[self.last] = val
            self.last_gpstime[self.last] = (self.last_gpstime[self.last] + val) & _U64
            self.multi_extreme_counter[self.last] = 0
        elif multi == 2:  # difference is huge: full 64-bit value
            self.next = (self.next + 1) & 3
            val = self.ic_gpstime.decompress(
                i32(self.last_gpstime[self.last] >> 32), 8)
            self.last_gpstime[self.next] = ((val << 32) | dec.read_int()) & _U64
            self.last = self.next
            self.last_gpstime_diff[self.last] = 0
            self.multi_extreme_counter[self.last] = 0
        elif multi > 2:  # switch to another sequence
            self.last = (self.last + multi - 2) & 3
            self.read()

    def _read_lastdiff_nonzero(self):
        dec = self.codec
        last = self.last
        multi = dec.decode_symbol(self.m_gpstime_multi)

        if multi == 1:
            val = self.ic_gpstime.decompress(self.last_gpstime_diff[last], 1)
            self.last_gpstime[last] = (self.last_gpstime[last] + val) & _U64
            self.multi_extreme_counter[last] = 0
        elif multi < GPSTIME_MULTI_UNCHANGED:
            if multi == 0:
                diff = self.ic_gpstime.decompress(0, 7)
                self.multi_extreme_counter[last] += 1
                if self.multi_extreme_counter[last] > 3:
                    self.last_gpstime_diff[last] = diff
                    self.multi_extreme_counter[last] = 0
            elif multi < GPSTIME_MULTI:
                context = 2 if multi < 10 else 3
                diff = self.ic_gpstime.decompress(
                    i32(multi * self.last_gpstime_diff[last]), context)
            elif multi == GPSTIME_MULTI:
                diff = self.ic_gpstime.decompress(
                    i32(GPSTIME_MULTI * self.last_gpstime_diff[last]), 4)
                self.multi_extreme_counter[last] += 1
                if self.multi_extreme_counter[last] > 3:
                    self.last_gpstime_diff[last] = diff
                    self.multi_extreme_counter[last] = 0
            else:
                multi = GPSTIME_MULTI - multi
                if multi > GPSTIME_MULTI_MINUS:
                    diff = self.ic_gpstime.decompress(
                        i32(multi * self.last_gpstime_diff[last]), 5)
                else:
                    diff = self.ic_gpstime.decompress(
                        i32(GPSTIME_MULTI_MINUS * self.last_gpstime_diff[last]), 6)
                    self.multi_extreme_counter[last] += 1
                    if self.multi_extreme_counter[last] > 3:
                        self.last_gpstime_diff[last] = diff
                        self.multi_extreme_counter[last] = 0
            self.last_gpstime[last] = (self.last_gpstime[last] + diff) & _U64
        elif multi == GPSTIME_MULTI_CODE_FULL:
            self.next = (self.next + 1) & 3
            val = self.ic_gpstime.decompress(
                i32(self.last_gpstime[last] >> 32), 8)
            self.last_gpstime[self.next] = ((val << 32) | dec.read_int()) & _U64
            self.last = self.next
            self.last_gpstime_diff[self.last] = 0
            self.multi_extreme_counter[self.last] = 0
        elif multi > GPSTIME_MULTI_CODE_FULL:
            self.last = (last + multi - GPSTIME_MULTI_CODE_FULL) & 3
            self.read()

    # encoding side

    def write(self, time_u64: int):
        time_u64 &= _U64
        enc = self.codec
        last = self.last

        if self.last_gpstime_diff[last] == 0:
            if time_u64 == self.last_gpstime[last]:
                enc.encode_symbol(self.m_gpstime_0diff, 0)
                return
            diff64 = _i64(time_u64) - _i64(self.last_gpstime[last])
            if -0x80000000 <= diff64 <= 0x7FFFFFFF:
                enc.encode_symbol(self.m_gpstime_0diff, 1)
                self.ic_gpstime.compress(0, diff64, 0)
                self.last_gpstime_diff[last] = diff64
                self.multi_extreme_counter[last] = 0
            else:
                for i in range(1, 4):
                    other = _i64(time_u64) - _i64(self.last_gpstime[(last + i) & 3])
                    if -0x80000000 <= other <= 0x7FFFFFFF:
                        enc.encode_symbol(self.m_gpstime_0diff, i + 2)
                        self.last = (last + i) & 3
                        self.write(time_u64)
                        return
                enc.encode_symbol(self.m_gpstime_0diff, 2)
                self.ic_gpstime.compress(i32(self.last_gpstime[last] >> 32),
                                         i32(time_u64 >> 32), 8)
                enc.write_int(time_u64 & _U32)
                self.next = (self.next + 1) & 3
                self.last = self.next
                self.last_gpstime_diff[self.last] = 0
                self.multi_extreme_counter[self.last] = 0
            self.last_gpstime[self.last] = time_u64
        else:
            if time_u64 == self.last_gpstime[last]:
                enc.encode_symbol(self.m_gpstime_multi, GPSTIME_MULTI_UNCHANGED)
                return
            diff64 = _i64(time_u64) - _i64(self.last_gpstime[last])
            if -0x80000000 <= diff64 <= 0x7FFFFFFF:
                diff = diff64
                multi = _quantize_f32(diff / self.last_gpstime_diff[last])
                if multi == 1:
                    enc.encode_symbol(self.m_gpstime_multi, 1)
                    self.ic_gpstime.compress(self.last_gpstime_diff[last], diff, 1)
                    self.multi_extreme_counter[last] = 0
                elif multi > 0:
                    if multi < GPSTIME_MULTI:
                        enc.encode_symbol(self.m_gpstime_multi, multi)
                        context = 2 if multi < 10 else 3
                        self.ic_gpstime.compress(
                            i32(multi * self.last_gpstime_diff[last]), diff, context)
                    else:
                        enc.encode_symbol(self.m_gpstime_multi, GPSTIME_MULTI)
                        self.ic_gpstime.compress(
                            i32(GPSTIME_MULTI * self.last_gpstime_diff[last]), diff, 4)
                        self.multi_extreme_counter[last] += 1
                        if self.multi_extreme_counter[last] > 3:
                            self.last_gpstime_diff[last] = diff
                            self.multi_extreme_counter[last] = 0
                elif multi < 0:
                    if multi > GPSTIME_MULTI_MINUS:
                        enc.encode_symbol(self.m_gpstime_multi, GPSTIME_MULTI - multi)
                        self.ic_gpstime.compress(
                            i32(multi * self.last_gpstime_diff[last]), diff, 5)
                    else:
                        enc.encode_symbol(self.m_gpstime_multi,
                                          GPSTIME_MULTI - GPSTIME_MULTI_MINUS)
                        self.ic_gpstime.compress(
                            i32(GPSTIME_MULTI_MINUS * self.last_gpstime_diff[last]),
                            diff, 6)
                        self.multi_extreme_counter[last] += 1
                        if self.multi_extreme_counter[last] > 3:
                            self.last_gpstime_diff[last] = diff
                            self.multi_extreme_counter[last] = 0
                else:
                    enc.encode_symbol(self.m_gpstime_multi, 0)
                    self.ic_gpstime.compress(0, diff, 7)
                    self.multi_extreme_counter[last] += 1
                    if self.multi_extreme_counter[last] > 3:
                        self.last_gpstime_diff[last] = diff
                        self.multi_extreme_counter[last] = 0
                self.last_gpstime[last] = time_u64
            else:
                for i in range(1, 4):
                    other = _i64(time_u64) - _i64(self.last_gpstime[(last + i) & 3])
                    if -0x80000000 <= other <= 0x7FFFFFFF:
                        enc.encode_symbol(self.m_gpstime_multi,
                                          GPSTIME_MULTI_CODE_FULL + i)
                        self.last = (last + i) & 3
                        self.write(time_u64)
                        return
                enc.encode_symbol(self.m_gpstime_multi, GPSTIME_MULTI_CODE_FULL)
                self.ic_gpstime.compress(i32(self.last_gpstime[last] >> 32),
                                         i32(time_u64 >> 32), 8)
                enc.write_int(time_u64 & _U32)
                self.next = (self.next + 1) & 3
                self.last = self.next
                self.last_gpstime_diff[self.last] = 0
                self.multi_extreme_counter[self.last] = 0
                self.last_gpstime[self.last] = time_u64


def _quantize_f32(value: float) -> int:
    """Round with halves away from zero after squeezing through float32,
    matching the single-precision ratio quantization of the reference coder."""
    value = struct.unpack("f", struct.pack("f", value))[0]
    return int(value + 0.5) if value >= 0 else int(value - 0.5)


# --- chunked stream framing -----------------------------------------------------


CHUNK_SIZE_DEFAULT = 50000

ITEM_POINT10 = 6
ITEM_GPSTIME11 = 7


def iter_chunk_points(buf: bytes, start: int, point_count: int,
                      chunk_size: int, has_gpstime: bool):
    """Decode a pointwise-chunked stream one chunk at a time.

    Yields (xs, ys, zs, classifications, gps_u64s or None) tuples of parallel
    lists, one tuple per chunk, so peak memory stays bounded by the chunk
    size regardless of file size.
    """
    if start + 8 > len(buf):
        raise MalformedFile("point data offset past end of file")
    table_pos = int.from_bytes(buf[start:start + 8], "little")
    chunks_start = start + 8
    if table_pos <= 0 or table_pos > len(buf):
        raise MalformedFile("chunk table offset out of range")
    chunk_starts = _read_chunk_table(buf, table_pos, chunks_start)

    point_size = 20 + (8 if has_gpstime else 0)
    index = 0
    chunk = 0
    while index < point_count:
        if chunk >= len(chunk_starts):
            raise MalformedFile("chunk table inconsistent with point count")
        pos = chunk_starts[chunk]
        if pos + point_size > len(buf):
            raise MalformedFile("point chunk truncated")
        count = min(chunk_size, point_count - index)
        xs = [0] * count
        ys = [0] * count
        zs = [0] * count
        classes = [0] * count
        gps = [0] * count if has_gpstime else None

        # first point of every chunk is stored raw
        first = Point10.from_buffer(buf, pos)
        pos += 20
        if has_gpstime:
            first_time = int.from_bytes(buf[pos:pos + 8], "little")
            pos += 8
        dec = ArithmeticDecoder(buf, pos)
        point_codec = Point10Codec(dec, compress=False)
        point_codec.init(first)
        if has_gpstime:
            time_codec = GpsTime11Codec(dec, compress=False)
            time_codec.init(first_time)
        dec.start()

        xs[0] = first.x
        ys[0] = first.y
        zs[0] = first.z
        classes[0] = first.classification
        if has_gpstime:
            gps[0] = first_time
        for i in range(1, count):
            pt = point_codec.read()
            xs[i] = pt.x
            ys[i] = pt.y
            zs[i] = pt.z
            classes[i] = pt.classification
            if has_gpstime:
                gps[i] = time_codec.read()
        index += count
        chunk += 1
        yield xs, ys, zs, classes, gps


def _read_chunk_table(buf: bytes, table_pos: int, chunks_start: int) -> list[int]:
    if table_pos + 8 > len(buf):
        raise MalformedFile("chunk table truncated")
    version = int.from_bytes(buf[table_pos:table_pos + 4], "little")
    if version != 0:
        raise MalformedFile(f"unknown chunk table version {version}")
    number_chunks = int.from_bytes(buf[table_pos + 4:table_pos + 8], "little")
    starts = [chunks_start]
    if number_chunks > 1:
        dec = ArithmeticDecoder(buf, table_pos + 8)
        dec.start()
        ic = IntegerCompressor(dec, 32, 2)
        ic.init()
        pred = 0
        for _ in range(number_chunks - 1):
            size = ic.decompress(pred, 1)
            starts.append(starts[-1] + size)
            pred = size
    return starts


def encode_chunked_points(points: list[Point10], gps_u64: list[int] | None,
                          stream_start: int,
                          chunk_size: int = CHUNK_SIZE_DEFAULT) -> bytes:
    """Encode points into a chunked stream (8-byte table pointer included).

    ``stream_start`` is the absolute file offset where the returned bytes
    will be placed; the chunk-table pointer is an absolute position.
    """
    chunks: list[bytes] = []
    for base in range(0, len(points), chunk_size):
        span = points[base:base + chunk_size]
        parts = [span[0].to_bytes()]
        if gps_u64 is not None:
            parts.append((gps_u64[base] & _U64).to_bytes(8, "little"))
        enc = ArithmeticEncoder()
        point_codec = Point10Codec(enc, compress=True)
        point_codec.init(span[0])
        if gps_u64 is not None:
            time_codec = GpsTime11Codec(enc, compress=True)
            time_codec.init(gps_u64[base])
        enc.start()
        for offset in range(1, len(span)):
            point_codec.write(span[offset])
            if gps_u64 is not None:
                time_codec.write(gps_u64[base + offset])
        parts.append(enc.done())
        chunks.append(b"".join(parts))

    chunk_blob = b"".join(chunks)
    table_pos = stream_start + 8 + len(chunk_blob)

    table = bytearray()
    table += (0).to_bytes(4, "little")
    table += len(chunks).to_bytes(4, "little")
    if len(chunks) > 1:
        enc = ArithmeticEncoder()
        enc.start()
        ic = IntegerCompressor(enc, 32, 2)
        ic.init()
        pred = 0
        for chunk in chunks[:-1]:
            ic.compress(pred, len(chunk), 1)
            pred = len(chunk)
        table += enc.done()

    return table_pos.to_bytes(8, "little") + chunk_blob + bytes(table)
