"""Receiver contract and the LS/MMSE baseline receiver.

Every receiver maps a :class:`ReceiverInput` to LLRs ordered data-RE
symbol-major, subcarrier-minor, bits MSB-first (the order ``fec`` expects).
LLR sign convention: positive means bit 0 is more likely.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NoPilots, UnknownReceiver
from .fec import mcs_lookup
from .gridphy import RE_PILOT, ResourceGrid, SlotConfig, maxlog_llr, slot_layout
from .sounder import DEFAULT_DELAY_SPREAD_S, mmse_smooth, interpolate_pilots


@dataclass(frozen=True)
class ReceiverInput:
    rx_grid: ResourceGrid  # (14, K, n_rx)
    slot_cfg: SlotConfig
    noise_var: float

    def __post_init__(self):
        if self.rx_grid.values.shape[:2] != slot_layout(self.slot_cfg)[0].shape:
            raise DimensionMismatch(
                f"grid {self.rx_grid.values.shape[:2]} does not match slot {slot_layout(self.slot_cfg)[0].shape}")

    @property
    def bits_per_symbol(self):
        return mcs_lookup(self.slot_cfg.mcs_index, self.slot_cfg.mcs_table).bits_per_symbol


@dataclass(frozen=True)
class ReceiverOutput:
    llrs: np.ndarray


def subcarrier_freqs(cfg):
    k = np.arange(cfg.n_subcarriers) - cfg.n_subcarriers // 2
    return k * cfg.subcarrier_spacing_hz


def ls_estimates(inp):
    """LS estimates y/p on each DMRS symbol: dict symbol -> (subcarriers, (n_pilots, n_rx))."""
    re_map, pilots = slot_layout(inp.slot_cfg)
    out = {}
    for s in inp.slot_cfg.dmrs_symbol_indices:
        k = np.nonzero(re_map[s] == RE_PILOT)[0]
        out[s] = (k, inp.rx_grid.values[s, k, :] / pilots[s, k, None])
    if not out:
        raise NoPilots("slot has no DMRS symbols")
    return out


def estimate_channel(inp, delay_spread_s=DEFAULT_DELAY_SPREAD_S):
    """MMSE channel estimate over the whole slot, shape (14, K, n_rx).

    Each DMRS symbol is smoothed and interpolated in frequency with the
    sounder's estimator; in time the estimate is held (one DMRS symbol) or
    linearly interpolated between DMRS symbols.
    """
    cfg = inp.slot_cfg
    f = subcarrier_freqs(cfg)
    n_rx = inp.rx_grid.n_ports
    per_sym = {}
    for s, (k, h_ls) in ls_estimates(inp).items():
        h = np.empty((cfg.n_subcarriers, n_rx), dtype=np.complex128)
        for r in range(n_rx):
            h_p = mmse_smooth(h_ls[:, r], f[k], inp.noise_var, delay_spread_s)
            h[:, r] = interpolate_pilots(h_p, f[k], f)
        per_sym[s] = h
    syms = np.array(sorted(per_sym))
    stack = np.stack([per_sym[s] for s in syms])
    t = np.arange(inp.rx_grid.n_symbols)
    if syms.size == 1:
        return np.broadcast_to(stack, (t.size,) + stack.shape[1:]).copy()
    w = np.clip(np.interp(t, syms, np.arange(syms.size)), 0, syms.size - 1)
    lo = np.floor(w).astype(int)
    hi = np.minimum(lo + 1, syms.size - 1)
    a = (w - lo)[:, None, None]
    return (1 - a) * stack[lo] + a * stack[hi]


def combine_and_demap(y, h, noise_var, bits_per_symbol):
    """MMSE combining across antennas and max-log demapping.

    For one stream the bias-corrected MMSE combiner output has effective
    noise ``noise_var / |h|^2``; demapping it is the same as max-log on the
    matched-filter statistics, which is what is computed here.
    """
    z = np.sum(np.conj(h) * y, axis=-1)
    g = np.sum(np.abs(h) ** 2, axis=-1)
    g = np.maximum(g, 1e-12)
    return maxlog_llr(z, g, noise_var, bits_per_symbol)


def _data_llrs(inp, h):
    re_map, _ = slot_layout(inp.slot_cfg)
    sym, sc = np.nonzero(re_map != RE_PILOT)
    y = inp.rx_grid.values[sym, sc, :]
    llr = combine_and_demap(y, h[sym, sc, :], inp.noise_var, inp.bits_per_symbol)
    return llr.reshape(-1)


def receive_mmse(inp, delay_spread_s=DEFAULT_DELAY_SPREAD_S):
    return ReceiverOutput(_data_llrs(inp, estimate_channel(inp, delay_spread_s)))


def perfect_csi_receive(inp, true_h):
    """Genie receiver: combining with the exact channel.

    ``true_h`` is a FreqResponse-like object with ``h`` of shape
    (14, n_rx, 1, K) or (n_rx, 1, K) (static), or a bare array of those shapes.
    """
    h = np.asarray(getattr(true_h, "h", true_h))
    n_sym, k, n_rx = inp.rx_grid.values.shape
    if h.ndim == 3:
        h = np.broadcast_to(h, (n_sym,) + h.shape)
    if h.shape != (n_sym, n_rx, 1, k):
        raise DimensionMismatch(f"channel shape {h.shape} does not match ({n_sym}, {n_rx}, 1, {k})")
    return ReceiverOutput(_data_llrs(inp, h[:, :, 0, :].transpose(0, 2, 1)))


RECEIVER_KINDS = ("mmse", "neural", "perfect")


def receive(kind, params, inp, true_h=None):
    """Uniform dispatch. ``params`` is ignored for mmse; for neural it is a NeuralRxParams."""
    if kind == "mmse":
        return receive_mmse(inp)
    if kind == "neural":
        from .neuralrx import neural_receive
        return neural_receive(params, inp)
    if kind == "perfect":
        if true_h is None:
            raise ValueError("perfect-CSI receiver needs the true channel")
        return perfect_csi_receive(inp, true_h)
    raise UnknownReceiver(f"unknown receiver kind {kind!r}")
