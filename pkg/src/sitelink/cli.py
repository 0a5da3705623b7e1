"""Command-line front end: ``sitelink <command> ...``.

Exit status: 0 success (warnings included), 1 usage error, 2 data error,
3 internal error.
"""

import argparse
import os
import sys
import traceback
from collections import Counter

import numpy as np

from . import __version__, chansim, neuralrx, sounder
from .config import load_config
from .errors import NotCrossed, SitelinkError
from .gridphy import SlotConfig
from .records import read_records, write_records
from .sweep import Receiver, SplitSpec, SweepResult, bler_sweep, passing_snr, split_dataset

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _write_text(path, text):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    with open(path, "w", newline="\n") as f:
        f.write(text)


# ---------------------------------------------------------------- builders

def slot_from_config(cfg):
    return SlotConfig(n_rb=cfg.get("slot", "n_rb"), mcs_index=cfg.get("slot", "mcs_index"),
                      mcs_table=cfg.get("slot", "mcs_table"))


def records_from_config(cfg):
    path = cfg.resolve(cfg.get("channel", "records"))
    if not path:
        raise SitelinkError("[channel] records is required for a record source")
    records = read_records(path)
    mode = cfg.get("channel", "split_mode")
    if mode == "none" or not records:
        return records
    spec = SplitSpec(mode, cfg.get("channel", "train_fraction"), cfg.get("channel", "test_pcis"),
                     cfg.get("channel", "bbox"), cfg.get("channel", "split_seed"))
    train, test = split_dataset(records, spec)
    return train if cfg.get("channel", "split_side") == "train" else test


def source_from_config(cfg):
    kind = cfg.get("channel", "source")
    n_rx = cfg.get("channel", "n_rx")
    if kind == "flat":
        return chansim.FlatSource(n_rx)
    if kind == "tdl":
        return chansim.TdlSource(cfg.get("channel", "profiles"), cfg.get("channel", "delay_spread_ns"),
                                 cfg.get("channel", "doppler_hz"), n_rx)
    records = records_from_config(cfg)
    from .errors import EmptyDataset
    if not records:
        raise EmptyDataset("record source has no records")
    label = os.path.basename(cfg.get("channel", "records")) + ":" + cfg.get("channel", "split_side")
    return chansim.RecordSource(tuple(records), cfg.get("channel", "source_spacing_hz"), label=label)


def receiver_from_config(cfg):
    kind = cfg.get("receiver", "kind")
    params = None
    if kind == "neural":
        path = cfg.resolve(cfg.get("receiver", "params"))
        if not path:
            raise SitelinkError("[receiver] params is required for a neural receiver")
        params = neuralrx.load_params(path)
    return Receiver(kind, params, cfg.get("receiver", "label"))


def train_config(cfg, finetune):
    lr = cfg.get("train", "learning_rate")
    if lr is None:
        lr = neuralrx.FINETUNE_LR if finetune else neuralrx.PRETRAIN_LR
    src = cfg.get("channel", "source")
    arch = neuralrx.Architecture(kind=cfg.get("train", "kind"), n_rx=cfg.get("channel", "n_rx"),
                                 channels=cfg.get("train", "channels"), blocks=cfg.get("train", "blocks"),
                                 bps=_bps(cfg) if cfg.get("train", "kind") == "direct" else 0)
    return neuralrx.TrainConfig(
        learning_rate=lr, batch_size=cfg.get("train", "batch_size"), steps=cfg.get("train", "steps"),
        snr_range_db=cfg.get("train", "snr_db"),
        channel_source="record_dataset" if src == "records" else "tdl_mix",
        mcs_index=cfg.get("slot", "mcs_index"), mcs_table=cfg.get("slot", "mcs_table"),
        n_rb=cfg.get("slot", "n_rb"), seed=cfg.get("experiment", "seed"),
        delay_spread_ns=cfg.get("channel", "delay_spread_ns"), doppler_hz=cfg.get("channel", "doppler_hz"),
        profiles=cfg.get("channel", "profiles"), n_rx=cfg.get("channel", "n_rx"), arch=arch)


def _bps(cfg):
    from .fec import mcs_lookup
    return mcs_lookup(cfg.get("slot", "mcs_index"), cfg.get("slot", "mcs_table")).bits_per_symbol


def _output(cfg, key, fallback):
    rel = cfg.get("output", key)
    return cfg.resolve(rel) if rel else fallback


def _provenance(cfg, command):
    return [f"sitelink {__version__} {command}"] + cfg.provenance()


# ---------------------------------------------------------------- commands

def cmd_synth(a):
    proc = None
    if a.channel != "none":
        proc = chansim.make_tdl(a.channel, a.delay_spread_ns, a.doppler_hz, a.ports, 1, a.seed + 1)
    cap = sounder.synth_lte_downlink(a.pci, a.n_rb, a.frames, a.ports, proc, a.snr_db, a.seed, a.cfo_hz)
    os.makedirs(os.path.dirname(os.path.abspath(a.out)), exist_ok=True)
    sounder.write_iq(a.out, cap.iq, cap.sample_rate, start_time_ns=a.start_ns, pci=a.pci, n_rb=a.n_rb,
                     n_tx_ports=a.ports, snr_db=a.snr_db, seed=a.seed, channel=a.channel)
    print(f"wrote {cap.iq.size} samples ({a.frames} frames, PCI {a.pci}) to {a.out}")
    return EXIT_OK


def cmd_sound(a):
    if not os.path.exists(a.iq):
        raise FileNotFoundError(f"IQ file not found: {a.iq}")
    iq, hdr = sounder.read_iq(a.iq)
    rate = float(hdr["sample_rate_hz"])
    n_rb = a.n_rb or int(hdr.get("n_rb", 50))
    gps = sounder.read_gps(a.gps) if a.gps else None
    recs = sounder.sound(iq, rate, gps, n_rb=n_rb, n_tx_ports=a.ports,
                         start_time_ns=int(hdr.get("start_time_ns", 0)))
    write_records(a.out, recs)
    counts = Counter(r.pci for r in recs)
    print(f"wrote {len(recs)} records to {a.out}")
    for pci in sorted(counts):
        print(f"  PCI {pci}: {counts[pci]} records")
    return EXIT_OK


def cmd_site(a):
    recs = chansim.make_site_records(a.records, a.seed, n_subcarriers=12 * a.n_rb, n_tx=a.ports)
    write_records(a.out, recs)
    print(f"wrote {len(recs)} synthetic site records to {a.out}")
    return EXIT_OK


def _write_log(path, prov, history):
    lines = ["# " + p for p in prov] + ["step loss"]
    lines += [f"{i} {loss!r}" for i, loss in enumerate(history)]
    _write_text(path, "\n".join(lines) + "\n")


def cmd_pretrain(a):
    cfg = load_config(a.config)
    tc = train_config(cfg, finetune=False)
    if tc.channel_source != "tdl_mix":
        raise SitelinkError("pretrain needs [channel] source = tdl")
    history = []
    params = neuralrx.pretrain(tc, history)
    out = _output(cfg, "params", "pretrained.nrxp")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    neuralrx.save_params(out, params)
    _write_log(_output(cfg, "log", out + ".log"), _provenance(cfg, "pretrain"), history)
    print(f"wrote {out} ({params.values.size} parameters, {tc.steps} steps)")
    return EXIT_OK


def cmd_finetune(a):
    cfg = load_config(a.config)
    tc = train_config(cfg, finetune=True)
    init = cfg.resolve(cfg.get("train", "init_params"))
    if not init:
        raise SitelinkError("finetune needs [train] init_params")
    params = neuralrx.load_params(init)
    tc = neuralrx.TrainConfig(**{**tc.__dict__, "arch": params.arch})
    records = records_from_config(cfg) if tc.channel_source == "record_dataset" else None
    history = []
    tuned = neuralrx.finetune(params, records, tc, history, cfg.get("channel", "source_spacing_hz"))
    out = _output(cfg, "params", "finetuned.nrxp")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    neuralrx.save_params(out, tuned)
    _write_log(_output(cfg, "log", out + ".log"), _provenance(cfg, "finetune"), history)
    print(f"wrote {out} ({tc.steps} steps)")
    return EXIT_OK


def cmd_sweep(a):
    cfg = load_config(a.config)
    grid = cfg.get("sweep", "snr_db")
    if not grid:
        raise SitelinkError("[sweep] snr_db must list at least one SNR")
    workers = a.workers if a.workers is not None else cfg.get("experiment", "workers")
    res = bler_sweep(receiver_from_config(cfg), source_from_config(cfg), slot_from_config(cfg), grid,
                     cfg.get("sweep", "min_blocks"), cfg.get("sweep", "max_blocks"),
                     cfg.get("sweep", "min_block_errors"), cfg.get("experiment", "seed"), workers)
    for line in cfg.provenance():
        k, v = line.split(" = ", 1)
        res.metadata["cfg." + k] = v
    out = _output(cfg, "result", "result.sweep")
    _write_text(out, res.to_text())
    csv_path = _output(cfg, "csv", os.path.splitext(out)[0] + ".csv")
    write_csv(csv_path, res, _provenance(cfg, "sweep"))
    for p in res.points:
        lo, hi = p.interval
        print(f"{p.snr_db:7.2f} dB  BLER {p.bler:.4f} [{lo:.4f}, {hi:.4f}]  ({p.block_errors}/{p.blocks_run})")
    try:
        print(f"passing SNR @ 10% BLER: {passing_snr(res):.2f} dB")
    except NotCrossed as e:
        print(f"warning: {e}")
    return EXIT_OK


CSV_COLUMNS = ("snr_db", "blocks", "block_errors", "bler", "ber", "ci_low", "ci_high")


def write_csv(path, res, provenance):
    lines = ["# " + p for p in provenance] + [",".join(CSV_COLUMNS)]
    for p in res.points:
        lo, hi = p.interval
        lines.append(f"{p.snr_db:.4f},{p.blocks_run},{p.block_errors},{p.bler:.6g},{p.ber:.6g},{lo:.6g},{hi:.6g}")
    _write_text(path, "\n".join(lines) + "\n")


def read_csv(path):
    """SweepResult from a CSV written by :func:`write_csv` (bit counts are not kept)."""
    from .sweep import SweepPoint
    pts = []
    with open(path) as f:
        rows = [line.strip() for line in f if line.strip() and not line.startswith("#")]
    header = rows[0].split(",")
    for row in rows[1:]:
        d = dict(zip(header, row.split(",")))
        n = int(d["blocks"])
        pts.append(SweepPoint(float(d["snr_db"]), n, int(d["block_errors"]), n, int(round(float(d["ber"]) * n))))
    return SweepResult(pts, {"source": os.path.basename(path)})


def load_result(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"result file not found: {path}")
    if path.endswith(".csv"):
        return read_csv(path)
    return SweepResult.load(path)


def cmd_compare(a):
    ra, rb = load_result(a.a), load_result(a.b)
    out = {}
    for name, r in (("a", ra), ("b", rb)):
        try:
            out[name] = passing_snr(r, a.target)
            print(f"{name}: {getattr(a, name)}  passing SNR {out[name]:.2f} dB")
        except NotCrossed as e:
            print(f"warning: {getattr(a, name)}: {e}")
    if len(out) == 2:
        print(f"delta (a - b): {out['a'] - out['b']:.2f} dB")
    return EXIT_OK


def cmd_plot(a):
    from .plot import waterfall_svg
    results = [load_result(p) for p in a.results]
    labels = a.labels.split(",") if a.labels else [os.path.splitext(os.path.basename(p))[0] for p in a.results]
    if len(labels) != len(results):
        raise UsageError("--labels must name every result file")
    prov = [f"sitelink {__version__} plot"] + [f"input = {os.path.basename(p)}" for p in a.results]
    _write_text(a.out, waterfall_svg(results, labels, a.target, a.title, prov))
    print(f"wrote {a.out}")
    return EXIT_OK


def cmd_selftest(a):
    """Fast end-to-end checks; prints one line per check."""
    from .fec import mcs_lookup, tb_decode
    from .link import code_config, draw_link
    from .rxchain import receive_mmse
    checks = []
    cap = sounder.synth_lte_downlink(301, 50, 1, 4, None, 10.0, seed=1)
    sync = sounder.detect_sync(cap.iq)
    checks.append(("sounder PCI recovery", sync.pci == 301))
    recs = sounder.sound(cap.iq, sync=sync)
    checks.append(("sounder record shape", len(recs) == 1 and recs[0].h.shape[1:3] == (4, 1)))
    slot = SlotConfig(n_rb=4, mcs_index=27, mcs_table="qam256")
    s = draw_link(np.random.default_rng(a.seed), slot, chansim.FlatSource(4), float("inf"))
    payload, ok, _ = tb_decode(receive_mmse(s.inp).llrs, code_config(slot))
    checks.append(("noiseless MCS 27 link", bool(ok) and np.array_equal(payload, s.payload)))
    checks.append(("MCS 20 in the 64QAM table", mcs_lookup(20, "qam64").bits_per_symbol == 6))
    params = neuralrx.init_params(neuralrx.Architecture(channels=4, blocks=1), a.seed)
    llr = neuralrx.forward(params, s.inp).llrs
    checks.append(("untrained hybrid receiver equals MMSE", np.allclose(llr, receive_mmse(s.inp).llrs,
                                                                          rtol=1e-4, atol=1e-3)))
    for name, ok in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    return EXIT_OK if all(ok for _, ok in checks) else EXIT_DATA


# ---------------------------------------------------------------- parser

def build_parser():
    p = _Parser(prog="sitelink", description="Site-specific neural receiver toolkit.")
    p.add_argument("--version", action="version", version=f"sitelink {__version__}")
    sub = p.add_subparsers(dest="command", metavar="command")

    s = sub.add_parser("synth", help="synthesise an LTE downlink IQ capture")
    s.add_argument("-o", "--out", required=True, help="output IQ path (a .hdr sidecar is written next to it)")
    s.add_argument("--pci", type=int, default=301)
    s.add_argument("--n-rb", type=int, default=50)
    s.add_argument("--frames", type=int, default=2)
    s.add_argument("--ports", type=int, default=4, choices=(1, 2, 4))
    s.add_argument("--snr-db", type=float, default=20.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--channel", default="none", help="none, TDL-B or TDL-C")
    s.add_argument("--delay-spread-ns", type=float, default=300.0)
    s.add_argument("--doppler-hz", type=float, default=5.0)
    s.add_argument("--cfo-hz", type=float, default=0.0)
    s.add_argument("--start-ns", type=int, default=0, help="capture start time stamped into the header")
    s.set_defaults(fn=cmd_synth)

    s = sub.add_parser("sound", help="extract channel records from an IQ capture")
    s.add_argument("iq", help="raw f32 I/Q file with a .hdr sidecar")
    s.add_argument("-o", "--out", required=True, help="output HCIR record file")
    s.add_argument("--gps", help="GPS log: 'timestamp_ns lat lon fix' per line")
    s.add_argument("--n-rb", type=int, default=0, help="cell bandwidth in RBs (default: header or 50)")
    s.add_argument("--ports", type=int, default=4, choices=(1, 2, 4))
    s.set_defaults(fn=cmd_sound)

    s = sub.add_parser("site", help="write a synthetic two-cluster site record dataset")
    s.add_argument("-o", "--out", required=True)
    s.add_argument("--records", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n-rb", type=int, default=50)
    s.add_argument("--ports", type=int, default=4, help="transmit ports (uplink receive antennas on replay)")
    s.set_defaults(fn=cmd_site)

    for name, fn, text in (("pretrain", cmd_pretrain, "pre-train a neural receiver on the TDL mix"),
                           ("finetune", cmd_finetune, "fine-tune a neural receiver on records")):
        s = sub.add_parser(name, help=text)
        s.add_argument("config", help="experiment config file")
        s.set_defaults(fn=fn)

    s = sub.add_parser("sweep", help="run a BLER sweep")
    s.add_argument("config")
    s.add_argument("--workers", type=int, default=None, help="worker processes (results do not depend on it)")
    s.set_defaults(fn=cmd_sweep)

    s = sub.add_parser("compare", help="passing SNRs of two sweep results and their difference")
    s.add_argument("a")
    s.add_argument("b")
    s.add_argument("--target", type=float, default=0.1)
    s.set_defaults(fn=cmd_compare)

    s = sub.add_parser("plot", help="SVG waterfall chart of sweep results")
    s.add_argument("results", nargs="+", help="sweep result (.sweep) or CSV files")
    s.add_argument("-o", "--out", required=True)
    s.add_argument("--labels", help="comma-separated curve labels")
    s.add_argument("--title", default="BLER vs SNR")
    s.add_argument("--target", type=float, default=0.1)
    s.set_defaults(fn=cmd_plot)

    s = sub.add_parser("selftest", help="quick end-to-end sanity checks")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_selftest)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "fn", None):
            parser.print_help()
            return EXIT_USAGE
        return args.fn(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (SitelinkError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except Exception:  # noqa: BLE001
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
