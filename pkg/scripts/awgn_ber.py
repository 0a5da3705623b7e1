"""Uncoded QPSK BER over AWGN with perfect CSI against Q(sqrt(2 Eb/N0))."""

import argparse

import numpy as np
from scipy.stats import norm

from sitelink.chansim import FlatSource
from sitelink.gridphy import SlotConfig
from sitelink.link import draw_link
from sitelink.rxchain import perfect_csi_receive


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--ebn0", type=float, nargs="+", default=[0, 2, 4, 6, 8])
    ap.add_argument("--min-bits", type=float, default=1e5)
    ap.add_argument("--min-errors", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=101)
    a = ap.parse_args()
    slot = SlotConfig(n_rb=100, mcs_index=0, mcs_table="qam256")
    rng = np.random.default_rng(a.seed)
    print("Eb/N0_dB      bits    errors   BER        theory     rel_err")
    for ebn0 in a.ebn0:
        errors = bits = 0
        while bits < a.min_bits or (errors < a.min_errors and bits < 3e7):
            s = draw_link(rng, slot, FlatSource(1), ebn0 + 10 * np.log10(2), encode=False)
            errors += int(np.count_nonzero((perfect_csi_receive(s.inp, s.h).llrs < 0) != s.coded_bits))
            bits += s.coded_bits.size
        ref = norm.sf(np.sqrt(2 * 10 ** (ebn0 / 10)))
        print(f"{ebn0:8.1f} {bits:9d} {errors:9d}   {errors / bits:.3e}  {ref:.3e}  {errors / bits / ref - 1:+.3f}")


if __name__ == "__main__":
    main()
