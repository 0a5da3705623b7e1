"""One PUSCH transmission through a channel source: the shared front half of
training and evaluation."""

from dataclasses import dataclass

import numpy as np

from . import chansim
from .fec import mcs_lookup, tb_code_config, tb_encode
from .gridphy import ResourceGrid, build_pusch_slot, data_re_count
from .rxchain import ReceiverInput


@dataclass(frozen=True)
class LinkSample:
    inp: ReceiverInput
    payload: np.ndarray
    coded_bits: np.ndarray
    h: np.ndarray  # (14, n_rx, 1, K) channel applied to the slot


def code_config(slot_cfg):
    mcs = mcs_lookup(slot_cfg.mcs_index, slot_cfg.mcs_table)
    return tb_code_config(mcs, data_re_count(slot_cfg) * mcs.bits_per_symbol)


def draw_link(rng, slot_cfg, source, snr_db, convention="measured", encode=True):
    """Random payload -> coded slot -> channel draw -> AWGN.

    With ``encode=False`` the coded bits are drawn uniformly instead of via
    LDPC (training only needs coded-bit targets).
    """
    mcs = mcs_lookup(slot_cfg.mcs_index, slot_cfg.mcs_table)
    cfg = code_config(slot_cfg)
    if encode:
        payload = rng.integers(0, 2, cfg.payload_bits, dtype=np.uint8)
        coded = tb_encode(payload, cfg)
    else:
        payload = np.zeros(0, dtype=np.uint8)
        coded = rng.integers(0, 2, cfg.rate_matched_bits, dtype=np.uint8)
    tx = build_pusch_slot(slot_cfg, coded, mcs.bits_per_symbol)
    h = source.draw(rng, tx.n_symbols, tx.n_subcarriers, slot_cfg.subcarrier_spacing_hz)
    rx = chansim.apply_channel(tx, h)
    nv = chansim.awgn_variance(rx, snr_db, convention)
    if nv == 0:
        nv_rx = 1e-10  # receivers need a positive value; the grid itself stays noiseless
    else:
        nv_rx = nv
        rx = chansim.add_awgn(rx, snr_db, seed=rng, noise_var=nv)
    return LinkSample(ReceiverInput(ResourceGrid(rx.values, rx.re_map), slot_cfg, nv_rx), payload, coded, h)
