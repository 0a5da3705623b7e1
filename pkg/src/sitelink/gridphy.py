"""Resource grids, OFDM, pilot sequences, QAM mapping and max-log demapping.

Conventions used throughout the package:

* A grid is indexed ``[symbol, subcarrier, port]``. Subcarrier ``k`` of a
  ``K``-wide grid sits at baseband frequency ``(k - K // 2) * scs``, so the
  grid is centred on DC and the DC subcarrier carries data.
* The OFDM transform is unitary: per-symbol energy is preserved, and white
  noise of variance ``s2`` per time sample maps to variance ``s2`` per RE.
* LLRs are ``log P(b=0) / P(b=1)``; positive means bit 0.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import (
    CapacityMismatch,
    GridTooWide,
    InsufficientSamples,
    LengthMismatch,
    NonPositiveNoise,
)

N_SYMBOLS = 14
SC_PER_RB = 12

RE_EMPTY = 0
RE_DATA = 1
RE_PILOT = 2

_NC = 1600


@dataclass(frozen=True)
class ResourceGrid:
    values: np.ndarray  # complex, (n_symbols, n_subcarriers, n_ports)
    re_map: np.ndarray  # int8 labels, same shape as values

    @property
    def n_symbols(self):
        return self.values.shape[0]

    @property
    def n_subcarriers(self):
        return self.values.shape[1]

    @property
    def n_ports(self):
        return self.values.shape[2]

    def replace(self, values):
        return ResourceGrid(values, self.re_map)


@dataclass(frozen=True)
class SlotConfig:
    n_rb: int = 4
    mcs_index: int = 20
    dmrs_symbol_indices: tuple = (2,)
    dmrs_subcarrier_stride: int = 2
    pci_or_scrambling_id: int = 0
    seed: int = 0
    mcs_table: str = "qam256"
    subcarrier_spacing_hz: float = 30e3
    slot_index: int = 0

    def __post_init__(self):
        if not all(0 <= s < N_SYMBOLS for s in self.dmrs_symbol_indices):
            raise ValueError("DMRS symbols must lie in [0, 13]")
        if self.dmrs_subcarrier_stride != 2:
            raise ValueError("only DMRS configuration type 1 (stride 2) is supported")

    @property
    def n_subcarriers(self):
        return SC_PER_RB * self.n_rb


# ---------------------------------------------------------------- sequences

def _lfsr(init, taps, n):
    """Run x(i+31) = xor of x(i+t) for t in taps, vectorised 28 steps at a time."""
    x = np.zeros(n + 31, dtype=np.uint8)
    x[:31] = init
    step = 31 - max(taps)
    for m in range(0, n, step):
        hi = min(m + step, n)
        acc = np.zeros(hi - m, dtype=np.uint8)
        for t in taps:
            acc ^= x[m + t:hi + t]
        x[m + 31:hi + 31] = acc
    return x


@lru_cache(maxsize=8)
def _x1(n):
    init = np.zeros(31, dtype=np.uint8)
    init[0] = 1
    return _lfsr(init, (0, 3), n)


def gold_sequence(c_init, offset, length):
    """Length-31 Gold sequence c(n), n in [offset, offset + length)."""
    if length <= 0:
        return np.zeros(0, dtype=np.uint8)
    c_init = int(c_init)
    n = _NC + offset + length
    # round up so the x1 cache is shared between similar requests
    n_cache = 1 << max(11, (n - 1).bit_length())
    x1 = _x1(n_cache)
    init2 = np.array([(c_init >> i) & 1 for i in range(31)], dtype=np.uint8)
    x2 = _lfsr(init2, (0, 1, 2, 3), n)
    sl = slice(_NC + offset, _NC + offset + length)
    return x1[sl] ^ x2[sl]


def qpsk_sequence(c_init, length, offset=0):
    """Pilot symbols r(m) = ((1 - 2c(2m)) + j(1 - 2c(2m+1))) / sqrt(2)."""
    c = gold_sequence(c_init, 2 * offset, 2 * length).astype(np.float64)
    return ((1 - 2 * c[0::2]) + 1j * (1 - 2 * c[1::2])) / np.sqrt(2)


# ---------------------------------------------------------------- QAM

_QAM_SCALE = {2: np.sqrt(2.0), 4: np.sqrt(10.0), 6: np.sqrt(42.0), 8: np.sqrt(170.0)}


def _check_bps(bits_per_symbol):
    if bits_per_symbol not in _QAM_SCALE:
        raise ValueError(f"bits_per_symbol must be one of 2, 4, 6, 8 (got {bits_per_symbol})")


def _pam(axis_bits):
    """Nested Gray PAM amplitude for bits (b0, b2, b4, ...) of one axis (unnormalised)."""
    sgn = 1 - 2 * axis_bits.astype(np.int64)
    amp = np.ones(sgn.shape[:-1], dtype=np.int64)
    m = sgn.shape[-1]
    # a = s0 * (2^(m-1) - s1 * (2^(m-2) - s2 * (... - s_{m-1})))
    for i in range(m - 1, 0, -1):
        amp = (1 << (m - i)) - sgn[..., i] * amp
    return sgn[..., 0] * amp


@lru_cache(maxsize=None)
def constellation(bits_per_symbol):
    """Unit-energy Gray constellation; entry i is the symbol for label i (MSB first)."""
    _check_bps(bits_per_symbol)
    labels = np.arange(1 << bits_per_symbol)
    bits = (labels[:, None] >> np.arange(bits_per_symbol - 1, -1, -1)) & 1
    pts = _pam(bits[:, 0::2]) + 1j * _pam(bits[:, 1::2])
    pts = pts / _QAM_SCALE[bits_per_symbol]
    pts.setflags(write=False)
    return pts


@lru_cache(maxsize=None)
def _axis_table(bits_per_symbol):
    """PAM levels of one axis and their bit labels, shape (L,) and (L, bps/2)."""
    m = bits_per_symbol // 2
    labels = np.arange(1 << m)
    bits = (labels[:, None] >> np.arange(m - 1, -1, -1)) & 1
    levels = _pam(bits) / _QAM_SCALE[bits_per_symbol]
    return levels.astype(np.float64), bits.astype(bool)


def qam_modulate(bits, bits_per_symbol):
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    _check_bps(bits_per_symbol)
    if bits.size % bits_per_symbol:
        raise LengthMismatch(f"{bits.size} bits is not a multiple of {bits_per_symbol}")
    b = bits.reshape(-1, bits_per_symbol).astype(np.int64)
    labels = b @ (1 << np.arange(bits_per_symbol - 1, -1, -1))
    return constellation(bits_per_symbol)[labels]


def maxlog_llr(z, g, noise_var, bits_per_symbol):
    """Max-log LLRs from matched-filter statistics.

    ``z = sum_r conj(h_r) y_r`` and ``g = sum_r |h_r|^2``. The distance
    ``|y - h s|^2`` equals ``g|s|^2 - 2 Re(conj(s) z)`` up to a constant, which
    splits into independent I and Q terms for square Gray QAM.
    Returns an array of shape ``z.shape + (bits_per_symbol,)``.
    """
    _check_bps(bits_per_symbol)
    z = np.asarray(z)
    g = np.asarray(g, dtype=np.float64)
    noise_var = np.asarray(noise_var, dtype=np.float64)
    if np.any(noise_var <= 0):
        raise NonPositiveNoise("noise variance must be positive")
    levels, lbits = _axis_table(bits_per_symbol)
    m = bits_per_symbol // 2
    out = np.empty(z.shape + (bits_per_symbol,), dtype=np.float64)
    for axis, comp in enumerate((z.real, z.imag)):
        metric = g[..., None] * levels ** 2 - 2.0 * comp[..., None] * levels
        for i in range(m):
            d1 = np.where(lbits[:, i], metric, np.inf).min(-1)
            d0 = np.where(lbits[:, i], np.inf, metric).min(-1)
            out[..., 2 * i + axis] = (d1 - d0) / noise_var
    return out


def llr_demap(y, h_eff, noise_var, bits_per_symbol):
    """Max-log LLRs of one received sample (or an array of them) given its channel."""
    y = np.asarray(y)
    h_eff = np.asarray(h_eff)
    return maxlog_llr(np.conj(h_eff) * y, np.abs(h_eff) ** 2, noise_var, bits_per_symbol)


# ---------------------------------------------------------------- OFDM

def _bins(n_subcarriers, fft_size, dc_null):
    k = np.arange(n_subcarriers) - n_subcarriers // 2
    if dc_null:
        k = np.where(k >= 0, k + 1, k)
    return np.mod(k, fft_size)


def ofdm_modulate(grid, fft_size, cp_lengths, dc_null=False):
    """Unitary OFDM modulation; returns samples of shape (n_ports, n_samples).

    ``dc_null`` skips the DC bin (LTE downlink mapping); by default the grid
    occupies DC.
    """
    values = grid.values if isinstance(grid, ResourceGrid) else np.asarray(grid)
    n_sym, n_sc, n_ports = values.shape
    if n_sc + int(dc_null) > fft_size:
        raise GridTooWide(f"{n_sc} subcarriers do not fit an FFT of size {fft_size}")
    if len(cp_lengths) != n_sym:
        raise ValueError("need one cyclic-prefix length per symbol")
    spec = np.zeros((n_ports, n_sym, fft_size), dtype=np.complex128)
    spec[:, :, _bins(n_sc, fft_size, dc_null)] = values.transpose(2, 0, 1)
    td = np.fft.ifft(spec, axis=-1) * np.sqrt(fft_size)
    parts = []
    for l, cp in enumerate(cp_lengths):
        parts.append(td[:, l, fft_size - cp:])
        parts.append(td[:, l])
    if not parts:
        return np.zeros((n_ports, 0), dtype=np.complex128)
    return np.concatenate(parts, axis=1)


def ofdm_demodulate(samples, fft_size, cp_lengths, n_subcarriers, timing_offset=0,
                    dc_null=False, re_map=None):
    """Inverse of :func:`ofdm_modulate`.

    ``timing_offset`` is the sample index of the first symbol's cyclic prefix.
    ``samples`` may be 1-D (one port) or (n_ports, n_samples).
    """
    x = np.asarray(samples)
    if x.ndim == 1:
        x = x[None, :]
    total = timing_offset + sum(cp + fft_size for cp in cp_lengths)
    if timing_offset < 0 or total > x.shape[1]:
        raise InsufficientSamples(f"need samples [{timing_offset}, {total}), have {x.shape[1]}")
    starts = timing_offset + np.cumsum([0] + [cp + fft_size for cp in cp_lengths[:-1]]) + np.asarray(cp_lengths)
    idx = starts[:, None] + np.arange(fft_size)[None, :]
    blocks = x[:, idx]  # (ports, symbols, fft)
    freq = np.fft.fft(blocks, axis=-1) / np.sqrt(fft_size)
    vals = freq[:, :, _bins(n_subcarriers, fft_size, dc_null)].transpose(1, 2, 0)
    if re_map is None:
        re_map = np.full(vals.shape, RE_DATA, dtype=np.int8)
    return ResourceGrid(vals, re_map)


# ---------------------------------------------------------------- PUSCH slot

def dmrs_c_init(cfg, symbol):
    n_id = cfg.pci_or_scrambling_id
    return ((1 << 17) * (N_SYMBOLS * cfg.slot_index + symbol + 1) * (2 * n_id + 1) + 2 * n_id) % (1 << 31)


@lru_cache(maxsize=256)
def slot_layout(cfg):
    """RE map (n_symbols, n_subcarriers) and pilot values for a slot configuration."""
    k = cfg.n_subcarriers
    re_map = np.full((N_SYMBOLS, k), RE_DATA, dtype=np.int8)
    pilots = np.zeros((N_SYMBOLS, k), dtype=np.complex128)
    stride = cfg.dmrs_subcarrier_stride
    for s in cfg.dmrs_symbol_indices:
        re_map[s, ::stride] = RE_PILOT
        pilots[s, ::stride] = qpsk_sequence(dmrs_c_init(cfg, s), len(range(0, k, stride)))
    re_map.setflags(write=False)
    pilots.setflags(write=False)
    return re_map, pilots


def data_re_indices(cfg):
    """(symbol, subcarrier) index arrays of data REs, symbol-major."""
    re_map, _ = slot_layout(cfg)
    return np.nonzero(re_map == RE_DATA)


def data_re_count(cfg):
    return int(np.count_nonzero(slot_layout(cfg)[0] == RE_DATA))


def build_pusch_slot(cfg, coded_bits, bits_per_symbol=None):
    """Single-layer PUSCH slot with DMRS pilots and QAM data."""
    if bits_per_symbol is None:
        from .fec import mcs_lookup
        bits_per_symbol = mcs_lookup(cfg.mcs_index, cfg.mcs_table).bits_per_symbol
    coded_bits = np.asarray(coded_bits, dtype=np.uint8).ravel()
    n_data = data_re_count(cfg)
    if coded_bits.size != n_data * bits_per_symbol:
        raise CapacityMismatch(n_data * bits_per_symbol, coded_bits.size)
    re_map, pilots = slot_layout(cfg)
    vals = pilots.copy()
    vals[re_map == RE_DATA] = qam_modulate(coded_bits, bits_per_symbol)
    return ResourceGrid(vals[:, :, None], re_map[:, :, None].copy())
