"""Offline passive channel sounding from LTE downlink IQ.

Pipeline: PSS correlation (timing, N_ID_2) -> cyclic-prefix CFO estimate ->
SSS detection (N_ID_1, half-frame) -> per-slot OFDM demodulation -> CRS
least-squares estimates -> MMSE smoothing and interpolation -> records of
``N_MEAS`` consecutive slot snapshots.

Numerology is LTE normal CP sampled at 30.72 MS/s (FFT 2048, 15 kHz). The
DC bin is unused, as in the LTE downlink. One measurement is taken per
slot: ports 0/1 from CRS symbol 0 and ports 2/3 from CRS symbol 1.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.signal import fftconvolve
from scipy.stats import gamma

from . import chansim
from .errors import InvalidPci, NoPilots, NoSyncFound
from .gridphy import RE_DATA, RE_EMPTY, RE_PILOT, ResourceGrid, ofdm_demodulate, ofdm_modulate, qpsk_sequence
from .records import FIX_NONE, N_MEAS, ChannelRecord, read_records, write_records  # noqa: F401

SAMPLE_RATE = 30.72e6
FFT_SIZE = 2048
SCS_HZ = 15e3
SYMBOLS_PER_SLOT = 7
SLOTS_PER_FRAME = 20
CP_SLOT = (160, 144, 144, 144, 144, 144, 144)
SLOT_LEN = sum(CP_SLOT) + SYMBOLS_PER_SLOT * FFT_SIZE  # 15360
FRAME_LEN = SLOTS_PER_FRAME * SLOT_LEN
HALF_FRAME = FRAME_LEN // 2
N_RB_MAX = 110
PSS_ROOTS = (25, 29, 34)
DECIM = 8  # cell search runs at 3.84 MS/s
DEFAULT_DELAY_SPREAD_S = 1e-6
# the sounder's FFT window may sit a few samples after the first path
SOUNDER_GUARD_S = 0.5e-6
FALSE_ALARM_PROB = 1e-4

# FFT-window start of the PSS symbol (slot 0, symbol 6) relative to the frame start
PSS_OFFSET = sum(CP_SLOT[:6]) + 6 * FFT_SIZE + CP_SLOT[6]


@dataclass(frozen=True)
class SyncResult:
    timing_offset: int  # first frame boundary at or after sample 0
    n_id_2: int
    n_id_1: int
    pci: int
    cfo_hz: float
    metric: float


@dataclass(frozen=True)
class ChannelEstimate:
    h: np.ndarray  # (n_subcarriers,)
    quality: float  # pilot SNR estimate, dB


@dataclass(frozen=True)
class SynthCapture:
    iq: np.ndarray
    sample_rate: float
    pci: int
    h_true: np.ndarray  # (n_symbols, n_tx_ports, n_subcarriers) applied channel
    noise_var: float


# ---------------------------------------------------------------- sequences

@lru_cache(maxsize=3)
def pss_sequence(n_id_2):
    u = PSS_ROOTS[n_id_2]
    n = np.arange(62)
    d = np.where(n < 31, np.exp(-1j * np.pi * u * n * (n + 1) / 63),
                 np.exp(-1j * np.pi * u * (n + 1) * (n + 2) / 63))
    return d


def _msequence(taps):
    x = [0, 0, 0, 0, 1]
    for i in range(26):
        x.append(sum(x[i + t] for t in taps) % 2)
    return 1 - 2 * np.array(x)


_S_TILDE = _msequence((0, 2))
_C_TILDE = _msequence((0, 3))
_Z_TILDE = _msequence((0, 1, 2, 4))


@lru_cache(maxsize=None)
def sss_sequence(n_id_1, n_id_2, subframe):
    qp = n_id_1 // 30
    q = (n_id_1 + qp * (qp + 1) // 2) // 30
    mp = n_id_1 + q * (q + 1) // 2
    m0 = mp % 31
    m1 = (m0 + mp // 31 + 1) % 31
    n = np.arange(31)
    s0 = _S_TILDE[(n + m0) % 31]
    s1 = _S_TILDE[(n + m1) % 31]
    c0 = _C_TILDE[(n + n_id_2) % 31]
    c1 = _C_TILDE[(n + n_id_2 + 3) % 31]
    z0 = _Z_TILDE[(n + m0 % 8) % 31]
    z1 = _Z_TILDE[(n + m1 % 8) % 31]
    d = np.empty(62)
    if subframe == 0:
        d[0::2] = s0 * c0
        d[1::2] = s1 * c1 * z0
    else:
        d[0::2] = s1 * c0
        d[1::2] = s0 * c1 * z1
    return d


@lru_cache(maxsize=3)
def _sss_bank(n_id_2):
    """(2, 168, 62) SSS candidates for subframes 0 and 5."""
    return np.array([[sss_sequence(n1, n_id_2, sf) for n1 in range(168)] for sf in (0, 5)])


def sync_subcarriers(n_rb):
    return np.arange(62) - 31 + n_rb * 6


def crs_positions(pci, port, slot, l, n_rb):
    """Subcarriers and pilot values of the CRS of ``port`` on symbol ``l`` of ``slot``."""
    if port in (0, 1):
        if l not in (0, SYMBOLS_PER_SLOT - 3):
            return None
        v = (0 if l == 0 else 3) if port == 0 else (3 if l == 0 else 0)
    else:
        if l != 1:
            return None
        v = 3 * (slot % 2) + (3 if port == 3 else 0)
    v_shift = pci % 6
    m = np.arange(2 * n_rb)
    k = 6 * m + (v + v_shift) % 6
    c_init = (1 << 10) * (7 * (slot + 1) + l + 1) * (2 * pci + 1) + 2 * pci + 1
    r = qpsk_sequence(c_init, 2 * N_RB_MAX)
    return k, r[m + N_RB_MAX - n_rb]


def lte_freqs(n_rb):
    k = np.arange(12 * n_rb) - 6 * n_rb
    return np.where(k >= 0, k + 1, k) * SCS_HZ


def frame_cp_lengths(n_slots):
    return list(CP_SLOT) * n_slots


# ---------------------------------------------------------------- synthesis

def lte_frame_grid(pci, n_rb, n_tx_ports, rng):
    """One radio frame: values (140, 12 n_rb, ports) and per-port RE map."""
    n_sym = SLOTS_PER_FRAME * SYMBOLS_PER_SLOT
    k_tot = 12 * n_rb
    vals = np.zeros((n_sym, k_tot, n_tx_ports), dtype=np.complex128)
    re_map = np.full((n_sym, k_tot, n_tx_ports), RE_DATA, dtype=np.int8)
    sync_k = np.arange(-36, 36) + n_rb * 6  # 62 tones plus 5 reserved either side
    for slot in (0, 10):
        base = slot * SYMBOLS_PER_SLOT
        sf = 0 if slot == 0 else 5
        re_map[base + 5, sync_k, :] = RE_EMPTY
        re_map[base + 6, sync_k, :] = RE_EMPTY
        ks = sync_subcarriers(n_rb)
        vals[base + 6, ks, 0] = pss_sequence(pci % 3)
        vals[base + 5, ks, 0] = sss_sequence(pci // 3, pci % 3, sf)
        re_map[base + 6, ks, 0] = RE_PILOT
        re_map[base + 5, ks, 0] = RE_PILOT
    for slot in range(SLOTS_PER_FRAME):
        for l in range(SYMBOLS_PER_SLOT):
            s = slot * SYMBOLS_PER_SLOT + l
            for port in range(n_tx_ports):
                pos = crs_positions(pci, port, slot, l, n_rb)
                if pos is None:
                    continue
                k, r = pos
                re_map[s, k, :] = RE_EMPTY
                re_map[s, k, port] = RE_PILOT
                vals[s, k, port] = r
    data = re_map == RE_DATA
    n = int(data.sum())
    qpsk = ((1 - 2 * rng.integers(0, 2, n)) + 1j * (1 - 2 * rng.integers(0, 2, n))) / np.sqrt(2)
    vals[data] = qpsk / np.sqrt(n_tx_ports)
    return ResourceGrid(vals, re_map)


def synth_lte_downlink(pci, n_rb=50, n_frames=1, n_tx_ports=4, channel=None, snr_db=30.0,
                       seed=0, cfo_hz=0.0):
    """Synthetic LTE downlink capture at 30.72 MS/s.

    ``channel`` is a ChannelProcess with n_rx = 1 and n_tx = n_tx_ports, applied
    per OFDM symbol in the frequency domain. ``snr_db`` is the per-RE SNR in
    the occupied band.
    """
    if not 0 <= pci <= 503:
        raise InvalidPci(f"PCI {pci} outside [0, 503]")
    if not 6 <= n_rb <= 100 or n_tx_ports not in (1, 2, 4):
        raise ValueError("n_rb must be in 6..100 and n_tx_ports in {1, 2, 4}")
    rng = np.random.default_rng(seed)
    k_tot = 12 * n_rb
    n_sym = SLOTS_PER_FRAME * SYMBOLS_PER_SLOT * n_frames
    if n_frames == 0:
        return SynthCapture(np.zeros(0, dtype=np.complex128), SAMPLE_RATE, pci,
                            np.zeros((0, n_tx_ports, k_tot), dtype=np.complex128), 0.0)
    tx = np.concatenate([lte_frame_grid(pci, n_rb, n_tx_ports, rng).values for _ in range(n_frames)])
    if channel is None:
        h = np.ones((n_sym, n_tx_ports, k_tot), dtype=np.complex128)
    else:
        cp = np.array(frame_cp_lengths(SLOTS_PER_FRAME * n_frames))
        t = (np.cumsum(cp + FFT_SIZE) - FFT_SIZE) / SAMPLE_RATE
        h = chansim.freq_response_at(channel, t, lte_freqs(n_rb))[:, 0]
    y = np.einsum("spk,skp->sk", h, tx)[:, :, None]
    occupied = np.any(tx != 0, axis=2)
    p_sig = float(np.mean(np.abs(y[occupied, 0]) ** 2))
    iq = ofdm_modulate(y, FFT_SIZE, frame_cp_lengths(SLOTS_PER_FRAME * n_frames), dc_null=True)[0]
    noise_var = p_sig / 10 ** (snr_db / 10) if np.isfinite(snr_db) else 0.0
    if noise_var > 0:
        iq = iq + (rng.standard_normal(iq.size) + 1j * rng.standard_normal(iq.size)) * np.sqrt(noise_var / 2)
    if cfo_hz:
        iq = iq * np.exp(2j * np.pi * cfo_hz * np.arange(iq.size) / SAMPLE_RATE)
    return SynthCapture(iq, SAMPLE_RATE, pci, h, noise_var)


# ---------------------------------------------------------------- synchronisation

@lru_cache(maxsize=8)
def _pss_replica(n_id_2, n_rb, fft_size=FFT_SIZE):
    grid = np.zeros((1, 12 * n_rb, 1), dtype=np.complex128)
    grid[0, sync_subcarriers(n_rb), 0] = pss_sequence(n_id_2)
    return ofdm_modulate(grid, fft_size, [0], dc_null=True)[0]


def _pss_replica_low(n_id_2):
    return _pss_replica(n_id_2, 6, FFT_SIZE // DECIM)


def _decimate(iq):
    """Ideal low-pass to the central 1/DECIM of the band, sampled at fs/DECIM."""
    m = iq.size // DECIM
    n = m * DECIM
    spec = np.fft.fft(iq[:n])
    keep = np.r_[0:m - m // 2, n - m // 2:n]
    return np.fft.ifft(spec[keep])


def _refine_peak(iq, coarse, replica, span=DECIM + 8):
    """Full-rate PSS timing within +-span of ``coarse``, summed over half frames."""
    lags = np.arange(coarse - span, coarse + span + 1)
    acc = np.zeros(lags.size)
    for start in range(coarse - span, iq.size, HALF_FRAME):
        seg_end = start + 2 * span + replica.size
        if start < 0 or seg_end > iq.size:
            continue
        acc += np.abs(np.correlate(iq[start:seg_end], replica, mode="valid")) ** 2
    return int(lags[int(np.argmax(acc))] % HALF_FRAME)


def _fold(x, period):
    n = (x.size // period) * period
    out = x[:n].reshape(-1, period).sum(0) if n else np.zeros(period)
    rest = x[n:]
    out[:rest.size] += rest
    return out


def estimate_cfo(iq, frame_start, sample_rate=SAMPLE_RATE):
    """CFO from the correlation of each cyclic prefix with the end of its symbol."""
    acc = 0j
    slot0 = frame_start % SLOT_LEN
    starts = []
    pos = slot0
    while pos + SLOT_LEN <= iq.size:
        off = pos
        for cp in CP_SLOT:
            starts.append((off, cp))
            off += cp + FFT_SIZE
        pos += SLOT_LEN
    for off, cp in starts:
        a = iq[off:off + cp]
        b = iq[off + FFT_SIZE:off + FFT_SIZE + cp]
        acc += np.vdot(a, b)
    return float(np.angle(acc) * sample_rate / (2 * np.pi * FFT_SIZE)) if starts else 0.0


def detection_threshold(n_folds, pfa=FALSE_ALARM_PROB, n_lags=3 * HALF_FRAME // DECIM):
    """Peak-to-mean threshold for a folded PSS metric.

    Without a PSS each folded lag is roughly a mean of ``n_folds`` unit
    exponentials; the threshold keeps the chance that any of the ``n_lags``
    searched lags (3 roots x one half frame at the search rate) crosses it
    below ``pfa``.
    """
    n_folds = max(int(n_folds), 1)
    return float(gamma.isf(pfa / n_lags, n_folds) / n_folds)


def detect_sync(iq, sample_rate=SAMPLE_RATE, n_rb=50, threshold=None):
    """Cell search: PSS timing and N_ID_2, CFO, then SSS for N_ID_1 and frame timing.

    ``threshold`` defaults to :func:`detection_threshold` for the number of
    half frames in the capture.
    """
    iq = np.asarray(iq, dtype=np.complex128)
    if sample_rate != SAMPLE_RATE:
        raise ValueError(f"only {SAMPLE_RATE:g} S/s captures are supported")
    if iq.size < FFT_SIZE + HALF_FRAME:
        raise NoSyncFound(f"capture of {iq.size} samples is shorter than a half frame")
    # coarse search at the decimated rate; the central 62 subcarriers still fit
    y = _decimate(iq)
    half = HALF_FRAME // DECIM
    best = None
    for n2 in range(3):
        rep = _pss_replica_low(n2)
        c = fftconvolve(y, np.conj(rep[::-1]), mode="valid")
        power = np.abs(c) ** 2
        folded = _fold(power, half)
        counts = _fold(np.ones(power.size), half)
        metric = folded / np.maximum(counts, 1)
        peak = int(np.argmax(metric))
        ratio = float(metric[peak] / np.mean(metric))
        if best is None or ratio > best[2]:
            best = (n2, peak, ratio)
    n2, peak, ratio = best
    if threshold is None:
        threshold = detection_threshold((iq.size - FFT_SIZE + 1) // HALF_FRAME)
    if ratio < threshold:
        raise NoSyncFound(f"PSS peak ratio {ratio:.1f} below threshold {threshold}")
    peak = _refine_peak(iq, peak * DECIM, _pss_replica(n2, n_rb))

    # PSS occurrences (FFT-window starts) with a full SSS symbol before them
    sss_back = FFT_SIZE + CP_SLOT[6]
    occ = [p for p in range(peak, iq.size - FFT_SIZE + 1, HALF_FRAME) if p - sss_back >= 0]
    if not occ:
        raise NoSyncFound("no complete PSS/SSS pair in capture")
    frame_guess = occ[0] - PSS_OFFSET
    cfo = estimate_cfo(iq, frame_guess, sample_rate)
    x = iq * np.exp(-2j * np.pi * cfo * np.arange(iq.size) / sample_rate)

    ks = sync_subcarriers(n_rb)
    q = []
    for p in occ:
        blk = np.stack([x[p:p + FFT_SIZE], x[p - sss_back:p - sss_back + FFT_SIZE]])
        g = ofdm_demodulate(blk.reshape(2, -1), FFT_SIZE, [0], 12 * n_rb, dc_null=True)
        y_pss = g.values[0, ks, 0]
        y_sss = g.values[0, ks, 1]
        q.append(np.real(y_sss * np.conj(y_pss) * pss_sequence(n2)))
    q = np.array(q)
    bank = _sss_bank(n2)
    scores = np.zeros((2, 168))
    for j, qj in enumerate(q):
        # hypothesis h: first occurrence is subframe 0 (h=0) or 5 (h=1)
        scores[0] += bank[j % 2] @ qj
        scores[1] += bank[(j + 1) % 2] @ qj
    h, n1 = np.unravel_index(int(np.argmax(scores)), scores.shape)
    pci = int(3 * n1 + n2)
    frame_start = occ[0] - PSS_OFFSET - h * HALF_FRAME
    frame_start += _fine_timing(x, frame_start, pci, n_rb)
    return SyncResult(int(frame_start % FRAME_LEN), n2, int(n1), pci, cfo, ratio)


def _fine_timing(x, frame_start, pci, n_rb):
    """Residual delay (samples) from the port-0 CRS phase slope over all full slots."""
    f_all = lte_freqs(n_rb)
    k_tot = 12 * n_rb
    first = frame_start % SLOT_LEN
    n_slots = (x.size - first) // SLOT_LEN
    if n_slots <= 0:
        return 0
    g = ofdm_demodulate(x, FFT_SIZE, list(CP_SLOT) * n_slots, k_tot, timing_offset=first, dc_null=True)
    slot0 = ((first - frame_start) // SLOT_LEN) % SLOTS_PER_FRAME
    acc = 0j
    for i in range(n_slots):
        slot = (slot0 + i) % SLOTS_PER_FRAME
        for l in (0, SYMBOLS_PER_SLOT - 3):
            k, r = crs_positions(pci, 0, slot, l, n_rb)
            h = g.values[i * SYMBOLS_PER_SLOT + l, k, 0] / r
            uniform = np.isclose(np.diff(f_all[k]), 6 * SCS_HZ)
            acc += np.sum(h[1:][uniform] * np.conj(h[:-1][uniform]))
    if acc == 0:
        return 0
    tau = -np.angle(acc) / (2 * np.pi * 6 * SCS_HZ)
    return int(round(tau * SAMPLE_RATE))


# ---------------------------------------------------------------- estimation

def _exp_correlation(df, delay_spread_s, guard_s=0.0):
    # exponential power-delay profile starting at -guard_s
    return np.exp(2j * np.pi * df * guard_s) / (1.0 + 2j * np.pi * df * delay_spread_s)


def mmse_smooth(h_ls, freqs_hz, noise_var, delay_spread_s=DEFAULT_DELAY_SPREAD_S, guard_s=0.0):
    """MMSE smoothing of pilot LS estimates under an exponential delay-profile prior.

    ``guard_s`` lets the prior start before delay zero, for estimates whose
    timing reference lands after the first path.
    """
    if noise_var == 0:
        return np.asarray(h_ls, dtype=np.complex128).copy()
    if not np.isfinite(noise_var):
        return np.zeros_like(h_ls, dtype=np.complex128)
    r = _smoothing_matrix(tuple(np.round(freqs_hz, 6)), float(noise_var), float(delay_spread_s),
                          float(guard_s))
    return r @ h_ls


@lru_cache(maxsize=128)
def _smoothing_matrix(freqs, noise_var, delay_spread_s, guard_s=0.0):
    f = np.array(freqs)
    rpp = _exp_correlation(f[:, None] - f[None, :], delay_spread_s, guard_s)
    return rpp @ np.linalg.inv(rpp + noise_var * np.eye(f.size))


def interpolate_pilots(h_p, pilot_freqs, freqs):
    """Linear interpolation in frequency; constant beyond the outermost pilots."""
    return np.interp(freqs, pilot_freqs, h_p.real) + 1j * np.interp(freqs, pilot_freqs, h_p.imag)


def estimate_channel(grid, pci, port, noise_var_est, symbol=0, delay_spread_s=DEFAULT_DELAY_SPREAD_S,
                     guard_s=SOUNDER_GUARD_S):
    """CRS channel estimate for ``port`` on frame-aligned symbol ``symbol`` of ``grid``."""
    n_rb = grid.n_subcarriers // 12
    slot, l = divmod(symbol, SYMBOLS_PER_SLOT)
    pos = crs_positions(pci, port, slot % SLOTS_PER_FRAME, l, n_rb)
    if pos is None:
        raise NoPilots(f"symbol {symbol} carries no CRS for port {port}")
    k, r = pos
    y = grid.values[symbol, k, 0]
    h_ls = y / r
    f_all = lte_freqs(n_rb)
    h_p = mmse_smooth(h_ls, f_all[k], noise_var_est, delay_spread_s, guard_s)
    h = interpolate_pilots(h_p, f_all[k], f_all)
    p = float(np.mean(np.abs(h_ls) ** 2))
    if noise_var_est > 0 and np.isfinite(noise_var_est):
        quality = 10 * np.log10(max(p - noise_var_est, 1e-12) / noise_var_est)
    else:
        quality = float("inf") if noise_var_est == 0 else float("-inf")
    return ChannelEstimate(h, float(quality))


def estimate_noise(iq, frame_start, n_rb, max_symbols=56):
    """Noise variance from FFT bins outside the occupied band."""
    occupied = 6 * n_rb + 8
    bins = np.r_[occupied:FFT_SIZE - occupied]
    acc, n = 0.0, 0
    pos = frame_start % SLOT_LEN
    while pos + SLOT_LEN <= iq.size and n < max_symbols:
        off = pos
        for cp in CP_SLOT:
            off += cp
            spec = np.fft.fft(iq[off:off + FFT_SIZE]) / np.sqrt(FFT_SIZE)
            acc += np.mean(np.abs(spec[bins]) ** 2)
            n += 1
            off += FFT_SIZE
        pos += SLOT_LEN
    return acc / n if n else 0.0


# ---------------------------------------------------------------- sounding

@dataclass(frozen=True)
class GpsFix:
    timestamp_ns: int
    lat: float
    lon: float
    fix_quality: int


def read_gps(path):
    """GPS text stream: one ``timestamp_ns lat lon fix`` row per line, '#' comments."""
    fixes = []
    with open(path) as f:
        for line in f:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            t, lat, lon, fix = line.replace(",", " ").split()
            fixes.append(GpsFix(int(t), float(lat), float(lon), int(fix)))
    return sorted(fixes, key=lambda g: g.timestamp_ns)


def _nearest_fix(fixes, t_ns):
    if not fixes:
        return None
    times = np.array([g.timestamp_ns for g in fixes])
    i = int(np.searchsorted(times, t_ns))
    cand = [j for j in (i - 1, i) if 0 <= j < len(fixes)]
    return fixes[min(cand, key=lambda j: abs(times[j] - t_ns))]


def sound(iq, sample_rate=SAMPLE_RATE, gps_source=None, n_rb=50, n_tx_ports=4,
          start_time_ns=0, delay_spread_s=DEFAULT_DELAY_SPREAD_S, sync=None):
    """Channel records from an LTE capture; one record per ``N_MEAS`` consecutive slots."""
    iq = np.asarray(iq, dtype=np.complex128)
    if sync is None:
        sync = detect_sync(iq, sample_rate, n_rb)
    x = iq * np.exp(-2j * np.pi * sync.cfo_hz * np.arange(iq.size) / sample_rate)
    noise_var = estimate_noise(x, sync.timing_offset, n_rb)
    first = sync.timing_offset % SLOT_LEN
    slot_no = ((first - sync.timing_offset) // SLOT_LEN) % SLOTS_PER_FRAME
    k_tot = 12 * n_rb
    snaps = []
    slot_starts = []
    pos = first
    while pos + SLOT_LEN <= x.size:
        g = ofdm_demodulate(x, FFT_SIZE, list(CP_SLOT[:2]), k_tot, timing_offset=pos, dc_null=True)
        sym0 = slot_no * SYMBOLS_PER_SLOT
        full = ResourceGrid(np.zeros((SLOTS_PER_FRAME * SYMBOLS_PER_SLOT, k_tot, 1), dtype=np.complex128),
                            np.zeros((SLOTS_PER_FRAME * SYMBOLS_PER_SLOT, k_tot, 1), dtype=np.int8))
        full.values[sym0:sym0 + 2] = g.values
        h = np.zeros((n_tx_ports, 1, k_tot), dtype=np.complex64)
        for port in range(n_tx_ports):
            l = 0 if port < 2 else 1
            h[port, 0] = estimate_channel(full, sync.pci, port, noise_var, sym0 + l, delay_spread_s).h
        snaps.append(h)
        slot_starts.append(pos)
        pos += SLOT_LEN
        slot_no = (slot_no + 1) % SLOTS_PER_FRAME

    fixes = read_gps(gps_source) if isinstance(gps_source, str) else (gps_source or [])
    records = []
    for i in range(len(snaps) // N_MEAS):
        start = slot_starts[i * N_MEAS]
        t_ns = int(start_time_ns + round(start / sample_rate * 1e9))
        fix = _nearest_fix(fixes, t_ns)
        lat, lon, q = (fix.lat, fix.lon, fix.fix_quality) if fix else (0.0, 0.0, FIX_NONE)
        h = np.stack(snaps[i * N_MEAS:(i + 1) * N_MEAS])
        records.append(ChannelRecord(sync.pci, t_ns, lat, lon, q, h))
    return records


# ---------------------------------------------------------------- IQ files

def write_iq(path, iq, sample_rate=SAMPLE_RATE, center_freq_hz=751e6, **extra):
    """Raw interleaved float32 I/Q plus a ``<path>.hdr`` key = value sidecar."""
    np.asarray(iq, dtype=np.complex64).astype("<c8").tofile(path)
    with open(str(path) + ".hdr", "w") as f:
        f.write(f"sample_rate_hz = {sample_rate:.0f}\n")
        f.write(f"center_freq_hz = {center_freq_hz:.0f}\n")
        for k, v in extra.items():
            f.write(f"{k} = {v}\n")


def read_iq(path):
    """Returns (iq, header dict)."""
    hdr = {}
    with open(str(path) + ".hdr") as f:
        for line in f:
            line = line.split("#", 1)[0].strip()
            if line:
                k, v = (s.strip() for s in line.split("=", 1))
                hdr[k] = v
    for key in ("sample_rate_hz", "center_freq_hz"):
        if key not in hdr:
            raise ValueError(f"{path}.hdr is missing {key}")
    iq = np.fromfile(path, dtype="<c8").astype(np.complex128)
    return iq, hdr
