"""Channel realisations: TDL fading, AWGN, and replay of measured records.

TDL taps fade independently per (rx, tx) pair using a sum of sinusoids with
random arrival angles and phases (Jakes spectrum), so the tap
autocorrelation is ``J0(2 pi f_D tau)`` on average over realisations. The
channel is evaluated once per OFDM symbol (block fading per symbol).

SNR convention: ``SNR = P_sig / noise_var`` where ``P_sig`` is the average
power of the data REs per receive antenna. With the default ``"measured"``
convention ``P_sig`` is taken from the grid being noised; ``"nominal"``
assumes ``P_sig = 1``.
"""

import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

import numpy as np

from .errors import DimensionMismatch, EmptyRecord, IndexOutOfRange, UnknownProfile
from .gridphy import RE_DATA, ResourceGrid
from .records import N_MEAS, ChannelRecord, FIX_GPS

N_SINUSOIDS = 32
LTE_SCS_HZ = 15e3


@dataclass(frozen=True)
class TdlProfile:
    name: str
    taps: tuple  # ((normalized_delay, power_db), ...) sorted by delay
    delay_spread_ns: float = 100.0
    max_doppler_hz: float = 0.0

    @property
    def delays_s(self):
        return np.array([t[0] for t in self.taps]) * self.delay_spread_ns * 1e-9

    @property
    def powers(self):
        p = 10 ** (np.array([t[1] for t in self.taps]) / 10)
        return p / p.sum()

    def rms_delay_spread_s(self):
        p, d = self.powers, self.delays_s
        mean = np.sum(p * d)
        return float(np.sqrt(np.sum(p * d ** 2) - mean ** 2))


@lru_cache(maxsize=1)
def tdl_tables():
    """Tap tables from the shipped data file, in table order: {name: [(delay, power_db)]}."""
    text = resources.files("sitelink").joinpath("data").joinpath("tdl_profiles.txt").read_text()
    tables = {}
    cur = None
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("profile"):
            cur = line.split()[1]
            tables[cur] = []
        else:
            d, p = line.split()
            tables[cur].append((float(d), float(p)))
    return tables


def tdl_profile(name, delay_spread_ns=100.0, max_doppler_hz=0.0, taps=None):
    if taps is None:
        try:
            taps = tdl_tables()[name]
        except KeyError:
            raise UnknownProfile(f"unknown TDL profile {name!r}") from None
    taps = tuple(sorted((float(d), float(p)) for d, p in taps))
    return TdlProfile(name, taps, float(delay_spread_ns), float(max_doppler_hz))


@dataclass(frozen=True)
class ChannelProcess:
    profile: TdlProfile
    n_tx: int
    n_rx: int
    seed: int
    alpha: np.ndarray = field(repr=False)  # arrival angles (n_rx, n_tx, n_taps, n_sin)
    phase: np.ndarray = field(repr=False)

    def tap_gains(self, t):
        """Complex tap gains at times ``t`` (scalar or array): (..., n_rx, n_tx, n_taps)."""
        t = np.asarray(t, dtype=np.float64)
        fd = self.profile.max_doppler_hz
        n_sin = self.alpha.shape[-1]
        arg = 2 * np.pi * fd * np.cos(self.alpha) * t[..., None, None, None, None] + self.phase
        amp = np.sqrt(self.profile.powers / n_sin)[:, None]
        return (amp * np.exp(1j * arg)).sum(-1)


def make_tdl(profile_name, delay_spread_ns, max_doppler_hz, n_tx, n_rx, seed,
             taps=None, n_sinusoids=N_SINUSOIDS):
    if max_doppler_hz < 0:
        raise ValueError("Doppler must be non-negative")
    if taps is None and not 10 <= delay_spread_ns <= 600:
        warnings.warn(f"delay spread {delay_spread_ns} ns is outside the 10-600 ns training range",
                      stacklevel=2)
    prof = tdl_profile(profile_name, delay_spread_ns, max_doppler_hz, taps)
    rng = np.random.default_rng(seed)
    shape = (n_rx, n_tx, len(prof.taps), n_sinusoids)
    alpha = rng.uniform(-np.pi, np.pi, shape)
    phase = rng.uniform(-np.pi, np.pi, shape)
    return ChannelProcess(prof, n_tx, n_rx, seed, alpha, phase)


@dataclass(frozen=True)
class FreqResponse:
    h: np.ndarray  # (n_rx, n_tx, n_subcarriers)
    t: float = 0.0


def subcarrier_freqs(n_subcarriers, spacing_hz):
    return (np.arange(n_subcarriers) - n_subcarriers // 2) * spacing_hz


def freq_response_at(proc, times, freqs_hz):
    """H(f, t) = sum_k g_k(t) exp(-j 2 pi f tau_k): (len(times), n_rx, n_tx, len(freqs))."""
    g = proc.tap_gains(np.atleast_1d(times))
    steer = np.exp(-2j * np.pi * proc.profile.delays_s[:, None] * np.asarray(freqs_hz)[None, :])
    return g @ steer


def freq_response(proc, times, spacing_hz, n_subcarriers):
    """H for each time in ``times``: (len(times), n_rx, n_tx, n_subcarriers)."""
    return freq_response_at(proc, times, subcarrier_freqs(n_subcarriers, spacing_hz))


def sample_freq_response(proc, t, subcarrier_spacing_hz, n_subcarriers):
    if t < 0:
        raise ValueError("t must be non-negative")
    return FreqResponse(freq_response(proc, [t], subcarrier_spacing_hz, n_subcarriers)[0], float(t))


def symbol_times(t0, n_symbols, spacing_hz):
    """Start times of consecutive normal-CP OFDM symbols."""
    return t0 + np.arange(n_symbols) * (1.0 / spacing_hz) * (1 + 144 / 2048)


def apply_channel(grid, h):
    """y[s, k, rx] = sum_tx H[s, rx, tx, k] x[s, k, tx]; no noise.

    ``h`` is an array (n_symbols, n_rx, n_tx, K), a single (n_rx, n_tx, K)
    response used for every symbol, or a sequence of FreqResponse.
    """
    if isinstance(h, FreqResponse):
        h = h.h
    elif isinstance(h, (list, tuple)):
        h = np.stack([r.h for r in h])
    h = np.asarray(h)
    if h.ndim == 3:
        h = np.broadcast_to(h, (grid.n_symbols,) + h.shape)
    if h.shape[0] != grid.n_symbols or h.shape[2] != grid.n_ports or h.shape[3] != grid.n_subcarriers:
        raise DimensionMismatch(
            f"channel {h.shape} does not match grid {grid.values.shape}")
    y = np.einsum("srtk,skt->skr", h, grid.values)
    n_rx = h.shape[1]
    re_map = np.repeat(grid.re_map[:, :, :1], n_rx, axis=2)
    return ResourceGrid(y, re_map)


def signal_power(grid):
    data = grid.re_map == RE_DATA
    if not data.any():
        return float(np.mean(np.abs(grid.values) ** 2))
    return float(np.mean(np.abs(grid.values[data]) ** 2))


def awgn_variance(grid, snr_db, signal_power_convention="measured"):
    if np.isinf(snr_db) and snr_db > 0:
        return 0.0
    if signal_power_convention == "measured":
        p = signal_power(grid)
    elif signal_power_convention == "nominal":
        p = 1.0
    else:
        raise ValueError(f"unknown signal power convention {signal_power_convention!r}")
    return p / 10 ** (snr_db / 10)


def add_awgn(grid, snr_db, signal_power_convention="measured", seed=None, noise_var=None):
    """Complex Gaussian noise at ``snr_db``; ``snr_db = inf`` returns the grid unchanged."""
    if noise_var is None:
        noise_var = awgn_variance(grid, snr_db, signal_power_convention)
    if noise_var == 0:
        return grid
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    shape = grid.values.shape
    n = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * np.sqrt(noise_var / 2)
    return ResourceGrid(grid.values + n, grid.re_map)


# ---------------------------------------------------------------- record replay

def resample_positions(n_src, n_tgt, src_spacing_hz=None, tgt_spacing_hz=None, offset_hz=0.0):
    """Fractional source-subcarrier index for each target subcarrier.

    Without spacings the target is stretched over the source band end to end;
    with both spacings subcarriers are matched by physical frequency.
    """
    if tgt_spacing_hz is None or src_spacing_hz is None:
        if n_tgt == 1:
            return np.array([(n_src - 1) / 2])
        return np.arange(n_tgt) * (n_src - 1) / (n_tgt - 1)
    f = subcarrier_freqs(n_tgt, tgt_spacing_hz) + offset_hz
    return f / src_spacing_hz + n_src // 2


def _interp(h, pos):
    """Linear interpolation along the last axis at fractional positions (edges clamped)."""
    n = h.shape[-1]
    pos = np.clip(pos, 0, n - 1)
    lo = np.minimum(np.floor(pos).astype(np.int64), n - 2) if n > 1 else np.zeros(pos.shape, np.int64)
    frac = pos - lo
    if n == 1:
        return np.repeat(h, pos.size, axis=-1)
    return h[..., lo] * (1 - frac) + h[..., lo + 1] * frac


def record_gain(rec):
    return float(np.mean(np.abs(rec.h.astype(np.complex128)) ** 2))


def replay_record(rec, meas_index, target_n_subcarriers, source_spacing_hz=None,
                  target_spacing_hz=None, offset_hz=0.0):
    """Downlink record measurement as an uplink response (n_rx = rec.n_tx, n_tx = rec.n_rx).

    The record is normalised so its mean |H|^2 over all measurements is 1.
    """
    if rec.h.size == 0:
        raise EmptyRecord("record holds no channel values")
    if not 0 <= meas_index < rec.n_meas:
        raise IndexOutOfRange(f"measurement {meas_index} not in [0, {rec.n_meas})")
    gain = record_gain(rec)
    if gain == 0:
        raise EmptyRecord("record has zero gain")
    # stored as (tx, rx, K), which is already the uplink (rx, tx) orientation
    h = rec.h[meas_index].astype(np.complex128) / np.sqrt(gain)
    if target_n_subcarriers != rec.n_subcarriers or target_spacing_hz is not None:
        pos = resample_positions(rec.n_subcarriers, target_n_subcarriers,
                                 source_spacing_hz, target_spacing_hz, offset_hz)
        h = _interp(h, pos)
    return FreqResponse(h, rec.timestamp_ns * 1e-9)


# ---------------------------------------------------------------- channel sources

@dataclass(frozen=True)
class FlatSource:
    """Unit-gain frequency-flat channel on every receive antenna."""
    n_rx: int = 1

    def describe(self):
        return f"flat(n_rx={self.n_rx})"

    def draw(self, rng, n_symbols, n_subcarriers, spacing_hz):
        return np.ones((n_symbols, self.n_rx, 1, n_subcarriers), dtype=np.complex128)


@dataclass(frozen=True)
class TdlSource:
    """Fresh TDL realisation per block with parameters drawn uniformly from the ranges."""
    profiles: tuple = ("TDL-B",)
    delay_spread_ns: tuple = (300.0, 300.0)
    doppler_hz: tuple = (100.0, 100.0)
    n_rx: int = 4

    def describe(self):
        return (f"tdl(profiles={'/'.join(self.profiles)}, ds_ns={self.delay_spread_ns[0]:g}-"
                f"{self.delay_spread_ns[1]:g}, doppler_hz={self.doppler_hz[0]:g}-{self.doppler_hz[1]:g},"
                f" n_rx={self.n_rx})")

    def draw(self, rng, n_symbols, n_subcarriers, spacing_hz):
        name = self.profiles[int(rng.integers(len(self.profiles)))]
        ds = rng.uniform(*self.delay_spread_ns)
        fd = rng.uniform(*self.doppler_hz)
        seed = int(rng.integers(2 ** 63))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            proc = make_tdl(name, ds, fd, 1, self.n_rx, seed)
        t0 = rng.uniform(0, 1.0)
        return freq_response(proc, symbol_times(t0, n_symbols, spacing_hz), spacing_hz, n_subcarriers)


@dataclass(frozen=True, eq=False)
class RecordSource:
    """Replayed measured channels: (record, measurement) drawn uniformly per block.

    With ``physical=True`` target subcarriers are matched to the record by
    physical frequency around a random offset inside the measured band.
    """
    records: tuple
    source_spacing_hz: float = LTE_SCS_HZ
    physical: bool = True
    label: str = "records"

    def describe(self):
        return f"records({self.label}, n={len(self.records)})"

    @property
    def n_rx(self):
        return self.records[0].n_tx

    def draw(self, rng, n_symbols, n_subcarriers, spacing_hz):
        rec = self.records[int(rng.integers(len(self.records)))]
        m = int(rng.integers(rec.n_meas))
        if self.physical:
            span_src = rec.n_subcarriers * self.source_spacing_hz
            span_tgt = n_subcarriers * spacing_hz
            room = max(0.0, (span_src - span_tgt) / 2 - self.source_spacing_hz)
            off = rng.uniform(-room, room)
            fr = replay_record(rec, m, n_subcarriers, self.source_spacing_hz, spacing_hz, off)
        else:
            fr = replay_record(rec, m, n_subcarriers)
        return np.broadcast_to(fr.h, (n_symbols,) + fr.h.shape).copy()


# ---------------------------------------------------------------- synthetic site

SITE_TAPS_NS = ((0.0, 0.0), (60.0, -3.0), (150.0, -6.0), (1600.0, -0.5), (1690.0, -3.5), (1820.0, -6.5))


def make_site_records(n_records, seed, n_subcarriers=600, spacing_hz=LTE_SCS_HZ, n_tx=4,
                      taps_ns=SITE_TAPS_NS, doppler_hz=5.0, pcis=(301, 302, 17),
                      origin=(33.7490, -84.3880), meas_interval_s=0.5e-3):
    """Synthetic drive-test records from a fixed two-cluster delay profile.

    Tap delays are fixed for the whole dataset (the "site"); gains are
    re-drawn per record and evolve slowly across its measurements.
    """
    rng = np.random.default_rng(seed)
    taps = [(d, p) for d, p in taps_ns]
    out = []
    per_pci = max(1, n_records // len(pcis))
    lat, lon = origin
    for i in range(n_records):
        proc = make_tdl("site", 1.0, doppler_hz, n_tx, 1, int(rng.integers(2 ** 63)), taps=taps)
        t0 = i * N_MEAS * meas_interval_s
        h = freq_response(proc, t0 + np.arange(N_MEAS) * meas_interval_s, spacing_hz, n_subcarriers)
        # (meas, rx=1, tx, K) -> (meas, tx, rx, K)
        h = h.transpose(0, 2, 1, 3).astype(np.complex64)
        lat += rng.normal(0, 1e-4)
        lon += rng.normal(0, 1e-4)
        pci = pcis[min(i // per_pci, len(pcis) - 1)]
        out.append(ChannelRecord(pci, int(round(t0 * 1e9)), lat, lon, FIX_GPS, h))
    return out
