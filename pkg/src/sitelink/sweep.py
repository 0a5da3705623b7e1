"""Monte Carlo BLER sweeps, passing-SNR interpolation and dataset splits.

Block ``b`` of SNR point ``i`` always uses the generator
``SeedSequence([seed, i, b])``. Blocks run in fixed-size chunks and a point
stops at the first chunk boundary where the stopping rule is met, so the
result does not depend on how many workers ran the chunks. Receivers given
the same seed see the same payloads, channels and noise.
"""

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .errors import EmptySplit, NotCrossed
from .fec import tb_decode
from .gridphy import SlotConfig
from .link import code_config, draw_link
from .rxchain import perfect_csi_receive, receive_mmse

CHUNK = 16
FORMAT_HEADER = "# sitelink sweep v1"


@dataclass(frozen=True, eq=False)
class Receiver:
    """Receiver kind plus whatever it needs (NeuralRxParams for ``neural``)."""
    kind: str = "mmse"
    params: object = None
    label: str = ""

    @property
    def name(self):
        return self.label or self.kind

    def llrs(self, samples):
        if self.kind == "mmse":
            return [receive_mmse(s.inp).llrs for s in samples]
        if self.kind == "perfect":
            return [perfect_csi_receive(s.inp, s.h).llrs for s in samples]
        if self.kind == "neural":
            from .neuralrx import forward_batch
            return list(forward_batch(self.params, [s.inp for s in samples]))
        from .errors import UnknownReceiver
        raise UnknownReceiver(f"unknown receiver kind {self.kind!r}")


def block_rng(seed, snr_index, block_index):
    return np.random.default_rng(np.random.SeedSequence([seed, snr_index, block_index]))


def simulate_blocks(receiver, source, slot_cfg, snr_db, rngs):
    """Run one block per generator; returns int arrays (block_error, bit_errors, bits)."""
    cc = code_config(slot_cfg)
    samples = [draw_link(rng, slot_cfg, source, snr_db) for rng in rngs]
    llrs = np.stack(receiver.llrs(samples))
    payload, ok, _ = tb_decode(llrs, cc)
    sent = np.stack([s.payload for s in samples])
    bit_err = np.count_nonzero(payload != sent, axis=1)
    return (~np.asarray(ok)).astype(np.int64), bit_err.astype(np.int64), np.full(len(samples), cc.payload_bits)


def simulate_block(receiver, source, slot_cfg, snr_db, block_seed):
    """(block_error, bit_errors, bits) for one block; ``block_seed`` is an int or a Generator."""
    rng = block_seed if isinstance(block_seed, np.random.Generator) else np.random.default_rng(block_seed)
    e, be, b = simulate_blocks(receiver, source, slot_cfg, snr_db, [rng])
    return bool(e[0]), int(be[0]), int(b[0])


# ---------------------------------------------------------------- results

def wilson_interval(errors, n, confidence=0.95):
    if n == 0:
        return 0.0, 1.0
    z = norm.ppf(0.5 + confidence / 2)
    p = errors / n
    den = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return max(0.0, centre - half), min(1.0, centre + half)


@dataclass
class SweepPoint:
    snr_db: float
    blocks_run: int
    block_errors: int
    bits_run: int
    bit_errors: int

    @property
    def bler(self):
        return self.block_errors / self.blocks_run if self.blocks_run else 0.0

    @property
    def ber(self):
        return self.bit_errors / self.bits_run if self.bits_run else 0.0

    @property
    def interval(self):
        return wilson_interval(self.block_errors, self.blocks_run)


@dataclass
class SweepResult:
    points: list
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        snrs = [p.snr_db for p in self.points]
        if any(b <= a for a, b in zip(snrs, snrs[1:])):
            raise ValueError("SNR points must be strictly increasing")

    @property
    def snr_points_db(self):
        return [p.snr_db for p in self.points]

    @property
    def bler(self):
        return np.array([p.bler for p in self.points])

    def shifted(self, delta_db):
        pts = [SweepPoint(p.snr_db + delta_db, p.blocks_run, p.block_errors, p.bits_run, p.bit_errors)
               for p in self.points]
        return SweepResult(pts, dict(self.metadata))

    # text format: header, "key = value" metadata, a blank line, then a table
    def to_text(self):
        lines = [FORMAT_HEADER]
        for k in sorted(self.metadata):
            lines.append(f"{k} = {self.metadata[k]}")
        lines.append("")
        lines.append("snr_db blocks_run block_errors bits_run bit_errors bler ber ci_low ci_high")
        for p in self.points:
            lo, hi = p.interval
            lines.append(f"{p.snr_db:.4f} {p.blocks_run} {p.block_errors} {p.bits_run} {p.bit_errors} "
                         f"{p.bler:.6g} {p.ber:.6g} {lo:.6g} {hi:.6g}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        from .errors import FormatError
        lines = text.splitlines()
        if not lines or lines[0].strip() != FORMAT_HEADER:
            raise FormatError("not a sweep result file")
        meta, i = {}, 1
        while i < len(lines) and lines[i].strip():
            k, v = lines[i].split("=", 1)
            meta[k.strip()] = v.strip()
            i += 1
        pts = []
        for line in lines[i + 2:]:
            if line.strip():
                f = line.split()
                pts.append(SweepPoint(float(f[0]), int(f[1]), int(f[2]), int(f[3]), int(f[4])))
        return cls(pts, meta)

    def save(self, path):
        with open(path, "w") as f:
            f.write(self.to_text())

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_text(f.read())

    def to_csv(self, path):
        import csv
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["snr_db", "blocks_run", "block_errors", "bits_run", "bit_errors",
                        "bler", "ber", "ci_low", "ci_high"])
            for p in self.points:
                lo, hi = p.interval
                w.writerow([f"{p.snr_db:.4f}", p.blocks_run, p.block_errors, p.bits_run, p.bit_errors,
                            f"{p.bler:.6g}", f"{p.ber:.6g}", f"{lo:.6g}", f"{hi:.6g}"])


# ---------------------------------------------------------------- sweeps

_WORKER = {}


def _init_worker(receiver, source, slot_cfg):
    _WORKER.update(receiver=receiver, source=source, slot_cfg=slot_cfg)


def _run_chunk(task):
    seed, snr_index, snr_db, start, n = task
    rngs = [block_rng(seed, snr_index, b) for b in range(start, start + n)]
    e, be, b = simulate_blocks(_WORKER["receiver"], _WORKER["source"], _WORKER["slot_cfg"], snr_db, rngs)
    return int(e.sum()), int(be.sum()), int(b.sum()), n


def _done(blocks, errors, min_blocks, max_blocks, min_block_errors):
    return blocks >= max_blocks or (blocks >= min_blocks and errors >= min_block_errors)


def bler_sweep(receiver, source, slot_cfg, snr_grid_db, min_blocks=100, max_blocks=1000,
               min_block_errors=50, seed=0, workers=1, chunk=CHUNK):
    """BLER/BER per SNR point with the chunked stopping rule described above."""
    snr_grid_db = [float(s) for s in snr_grid_db]
    if not snr_grid_db:
        raise ValueError("empty SNR grid")
    if workers is None or workers < 1:
        workers = os.cpu_count() or 1
    _init_worker(receiver, source, slot_cfg)
    pool = None
    if workers > 1:
        pool = ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(receiver, source, slot_cfg))
    points = []
    try:
        for i, snr in enumerate(snr_grid_db):
            blocks = errors = bit_err = bits = 0
            start = 0
            while not _done(blocks, errors, min_blocks, max_blocks, min_block_errors):
                tasks = []
                for _ in range(workers):
                    n = min(chunk, max_blocks - start)
                    if n <= 0:
                        break
                    tasks.append((seed, i, snr, start, n))
                    start += n
                results = pool.map(_run_chunk, tasks) if pool else map(_run_chunk, tasks)
                for e, be, b, n in results:
                    if _done(blocks, errors, min_blocks, max_blocks, min_block_errors):
                        break  # speculative chunk past the stopping point
                    blocks += n
                    errors += e
                    bit_err += be
                    bits += b
            points.append(SweepPoint(snr, blocks, errors, bits, bit_err))
    finally:
        if pool:
            pool.shutdown()
    meta = {"receiver": receiver.name, "mcs": slot_cfg.mcs_index, "mcs_table": slot_cfg.mcs_table,
            "n_rb": slot_cfg.n_rb, "channel": source.describe(), "seed": seed,
            "min_blocks": min_blocks, "max_blocks": max_blocks, "min_block_errors": min_block_errors}
    return SweepResult(points, meta)


# ---------------------------------------------------------------- passing SNR

def passing_snr(result, target_bler=0.1):
    """Lowest SNR where log10(BLER) crosses ``target_bler``, by linear interpolation.

    Zero-error points use a floor of 1/(3 * blocks_run).
    """
    pts = result.points
    if not any(p.bler > target_bler for p in pts):
        raise NotCrossed("above", target_bler)
    if not any(p.bler <= target_bler for p in pts):
        raise NotCrossed("below", target_bler)
    lt = math.log10(target_bler)

    def lb(p):
        b = p.bler if p.block_errors else 1.0 / (3 * max(p.blocks_run, 1))
        return math.log10(b)

    for a, b in zip(pts, pts[1:]):
        if a.bler > target_bler >= b.bler:
            if b.bler == target_bler:
                return b.snr_db
            la, lbb = lb(a), lb(b)
            return a.snr_db + (b.snr_db - a.snr_db) * (la - lt) / (la - lbb)
    # the first point is already below target and a later one is above
    raise NotCrossed("above", target_bler)


def compare(result_a, result_b, target_bler=0.1):
    """passing_snr(a) - passing_snr(b); positive means b needs less SNR."""
    return passing_snr(result_a, target_bler) - passing_snr(result_b, target_bler)


# ---------------------------------------------------------------- dataset splits

@dataclass(frozen=True)
class SplitSpec:
    mode: str = "by_record_index"
    train_fraction: float = 0.8
    test_pcis: tuple = ()
    bbox: tuple = ()  # (lat_min, lat_max, lon_min, lon_max): records inside go to test
    seed: int = 0
    shuffle: bool = False

    def __post_init__(self):
        if self.mode not in ("by_pci", "by_record_index", "by_region_bbox"):
            raise ValueError(f"unknown split mode {self.mode!r}")


def in_bbox(lat, lon, bbox):
    lat_min, lat_max, lon_min, lon_max = bbox
    return lat_min <= lat <= lat_max and lon_min <= lon <= lon_max


def split_dataset(records, spec):
    """(train, test) lists; disjoint and together equal to ``records``."""
    records = list(records)
    if not records:
        raise EmptySplit("no records to split")
    if spec.mode == "by_pci":
        test_set = set(spec.test_pcis)
        is_test = [r.pci in test_set for r in records]
    elif spec.mode == "by_region_bbox":
        is_test = [in_bbox(r.lat, r.lon, spec.bbox) for r in records]
    else:
        order = np.arange(len(records))
        if spec.shuffle:
            order = np.random.default_rng(spec.seed).permutation(len(records))
        n_train = int(round(spec.train_fraction * len(records)))
        is_test = [False] * len(records)
        for j in order[n_train:]:
            is_test[j] = True
    train = [r for r, t in zip(records, is_test) if not t]
    test = [r for r, t in zip(records, is_test) if t]
    if not train or not test:
        raise EmptySplit(f"split leaves {len(train)} train and {len(test)} test records")
    return train, test


def default_slot(mcs_index=20, mcs_table="qam64", n_rb=4):
    return SlotConfig(n_rb=n_rb, mcs_index=mcs_index, mcs_table=mcs_table)
