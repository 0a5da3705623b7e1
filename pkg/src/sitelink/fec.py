"""Transport-block coding: MCS tables, CRC, quasi-cyclic LDPC, rate matching.

The LDPC family is the 38.212 one (base graphs BG1/BG2, lifted by cyclic
shifts). Simplifications: one code block per transport block, redundancy
version 0 only, no bit interleaving. Filler bits are known zeros fed to the
decoder with LLR ``+LLR_CAP``.

CRC polynomials (38.212 5.1):
    CRC24A: D^24+D^23+D^18+D^17+D^14+D^11+D^10+D^7+D^6+D^5+D^4+D^3+D+1
    CRC16:  D^16+D^12+D^5+1
"""

from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np
import scipy.sparse as sp

from .errors import CapacityTooSmall, ConfigInvalid, LengthMismatch, UnknownMcs

LLR_CAP = 127.0
MIN_SUM_SCALE = 0.8
DEFAULT_MAX_ITERS = 25

CRC_POLYS = {24: 0x1864CFB, 16: 0x11021}

# lifting sizes supported here (all valid 38.212 values), smallest fitting one is used
LIFTING_SIZES = (16, 24, 32, 48, 64, 96, 128, 160, 192, 224, 256, 288, 320, 352, 384)

_BG = {1: dict(kb=22, rows=46, cols=68), 2: dict(kb=10, rows=42, cols=52)}


# ---------------------------------------------------------------- MCS

@dataclass(frozen=True)
class McsEntry:
    index: int
    bits_per_symbol: int
    code_rate: float
    spectral_efficiency: float
    table: str = "qam256"


# (Qm, R x 1024) per index; TS 38.214 Table 5.1.3.1-2 (256QAM) and 5.1.3.1-1 (64QAM)
_MCS_QAM256 = [
    (2, 120), (2, 193), (2, 308), (2, 449), (2, 602), (4, 378), (4, 434), (4, 490),
    (4, 553), (4, 616), (4, 658), (6, 466), (6, 517), (6, 567), (6, 616), (6, 666),
    (6, 719), (6, 772), (6, 822), (6, 873), (8, 682.5), (8, 711), (8, 754), (8, 797),
    (8, 841), (8, 885), (8, 916.5), (8, 948),
]
_MCS_QAM64 = [
    (2, 120), (2, 157), (2, 193), (2, 251), (2, 308), (2, 379), (2, 449), (2, 526),
    (2, 602), (2, 679), (4, 340), (4, 378), (4, 434), (4, 490), (4, 553), (4, 616),
    (4, 658), (6, 438), (6, 466), (6, 517), (6, 567), (6, 616), (6, 666), (6, 719),
    (6, 772), (6, 822), (6, 873), (6, 910), (6, 948),
]
MCS_TABLES = {"qam256": _MCS_QAM256, "qam64": _MCS_QAM64}


def mcs_lookup(index, table="qam256"):
    """MCS entry; ``table`` is 'qam256' (38.214 Table 5.1.3.1-2) or 'qam64' (Table 5.1.3.1-1)."""
    try:
        rows = MCS_TABLES[table]
    except KeyError:
        raise UnknownMcs(f"unknown MCS table {table!r}") from None
    if not 0 <= index < len(rows):
        raise UnknownMcs(f"MCS index {index} is not in table {table}")
    qm, r1024 = rows[index]
    rate = r1024 / 1024
    return McsEntry(index, qm, rate, qm * rate, table)


# ---------------------------------------------------------------- CRC

def _crc_remainder_bitwise(bits, poly, width):
    reg = 0
    top = 1 << width
    for b in bits:
        reg = (reg << 1) | int(b)
        if reg & top:
            reg ^= poly
    for _ in range(width):
        reg <<= 1
        if reg & top:
            reg ^= poly
    return reg


@lru_cache(maxsize=64)
def _crc_matrix(length, width):
    """(length, width) GF(2) matrix mapping a message to its CRC bits."""
    poly = CRC_POLYS[width]
    mat = np.zeros((length, width), dtype=np.uint8)
    # row i holds x^(width + length - 1 - i) mod g
    rems = []
    reg = 1
    for _ in range(width):
        reg <<= 1
        if reg & (1 << width):
            reg ^= poly
    for i in range(length):
        rems.append(reg)
        reg <<= 1
        if reg & (1 << width):
            reg ^= poly
    shifts = np.arange(width - 1, -1, -1)
    for i, r in enumerate(reversed(rems)):
        mat[i] = (r >> shifts) & 1
    return mat


def crc_bits(bits, width=24):
    """CRC parity of ``bits`` (last axis); works on batches."""
    bits = np.asarray(bits, dtype=np.uint8)
    n = bits.shape[-1]
    if n == 0:
        return np.zeros(bits.shape[:-1] + (width,), dtype=np.uint8)
    # float32 keeps the BLAS path and is exact: sums stay below 2^24
    mat = _crc_matrix(n, width).astype(np.float32)
    return ((bits.astype(np.float32) @ mat).astype(np.int64) & 1).astype(np.uint8)


def crc_attach(bits, width=24):
    bits = np.asarray(bits, dtype=np.uint8)
    return np.concatenate([bits, crc_bits(bits, width)], axis=-1)


def crc_check(bits, width=24):
    """True where the trailing ``width`` bits are the CRC of the rest."""
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.shape[-1] < width:
        return np.zeros(bits.shape[:-1], dtype=bool) if bits.ndim > 1 else False
    ok = np.all(crc_bits(bits[..., :-width], width) == bits[..., -width:], axis=-1)
    return ok if bits.ndim > 1 else bool(ok)


# ---------------------------------------------------------------- base graphs

@lru_cache(maxsize=2)
def base_graph(bg):
    """Entries (row, col, V[0..7]) of a base graph loaded from the shipped data file."""
    text = resources.files("sitelink").joinpath("data").joinpath(f"bg{bg}.txt").read_text()
    entries = []
    version = shape = None
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        head = line.split()
        if head[0] == "version":
            version = int(head[1])
        elif head[0] == "shape":
            shape = (int(head[1]), int(head[2]))
        else:
            entries.append(tuple(int(v) for v in head))
    if version != 1 or shape != (_BG[bg]["rows"], _BG[bg]["cols"]):
        raise ConfigInvalid(f"base graph file for BG{bg} has unexpected header")
    return np.array(entries, dtype=np.int64)


def set_index(z):
    """38.212 lifting-set index iLS for lifting size z = a * 2^j."""
    a = z
    while a % 2 == 0 and a > 2:
        a //= 2
    table = {2: 0, 3: 1, 5: 2, 7: 3, 9: 4, 11: 5, 13: 6, 15: 7}
    if a not in table:
        raise ConfigInvalid(f"{z} is not a valid lifting size")
    return table[a]


@lru_cache(maxsize=64)
def lifted_shifts(bg, z):
    """Base-graph entries with shifts reduced for lifting size z: (row, col, shift)."""
    ent = base_graph(bg)
    ils = set_index(z)
    return np.stack([ent[:, 0], ent[:, 1], ent[:, 2 + ils] % z], axis=1)


@lru_cache(maxsize=64)
def parity_check_matrix(bg, z):
    """Full lifted parity-check matrix (CSR, uint8)."""
    sh = lifted_shifts(bg, z)
    i = np.arange(z)
    rows = (sh[:, 0, None] * z + i[None, :]).ravel()
    cols = (sh[:, 1, None] * z + (i[None, :] + sh[:, 2, None]) % z).ravel()
    shape = (_BG[bg]["rows"] * z, _BG[bg]["cols"] * z)
    return sp.csr_matrix((np.ones(rows.size, dtype=np.uint8), (rows, cols)), shape=shape)


# ---------------------------------------------------------------- code config

@dataclass(frozen=True)
class CodeConfig:
    base_graph: int
    lifting_size: int
    info_bits: int  # K' = payload + CRC
    rate_matched_bits: int  # E
    crc_width: int = 24

    def __post_init__(self):
        if self.base_graph not in _BG:
            raise ConfigInvalid(f"base graph must be 1 or 2, got {self.base_graph}")
        set_index(self.lifting_size)
        if not 0 < self.info_bits <= self.k:
            raise ConfigInvalid(
                f"info_bits={self.info_bits} does not fit BG{self.base_graph} with Z={self.lifting_size}")
        if self.rate_matched_bits < self.info_bits:
            raise ConfigInvalid("rate_matched_bits must be at least info_bits")

    @property
    def kb(self):
        return _BG[self.base_graph]["kb"]

    @property
    def k(self):
        return self.kb * self.lifting_size

    @property
    def n(self):
        return _BG[self.base_graph]["cols"] * self.lifting_size

    @property
    def n_filler(self):
        return self.k - self.info_bits

    @property
    def payload_bits(self):
        return self.info_bits - self.crc_width


def select_base_graph(code_rate):
    return 2 if code_rate <= 0.67 else 1


def make_code_config(payload_bits, code_rate, rate_matched_bits, crc_width=24):
    bg = select_base_graph(code_rate)
    kprime = payload_bits + crc_width
    kb = _BG[bg]["kb"]
    for z in LIFTING_SIZES:
        if kb * z >= kprime:
            return CodeConfig(bg, z, kprime, rate_matched_bits, crc_width)
    raise ConfigInvalid(
        f"{kprime} info bits exceed a single BG{bg} code block (max {kb * LIFTING_SIZES[-1]})")


# ---------------------------------------------------------------- encoding

def _shift(blocks, s):
    # (P_s x)[i] = x[(i + s) mod Z]
    return np.roll(blocks, -int(s), axis=-1)


def ldpc_encode(info_bits, cfg):
    """Systematic encoding; returns the full mother codeword (length ``cfg.n``).

    Filler positions [info_bits, k) are zeros. Accepts a batch on the leading axis.
    """
    u = np.asarray(info_bits, dtype=np.uint8)
    single = u.ndim == 1
    u = np.atleast_2d(u)
    if u.shape[1] != cfg.info_bits:
        raise ConfigInvalid(f"expected {cfg.info_bits} info bits, got {u.shape[1]}")
    z, kb = cfg.lifting_size, cfg.kb
    nb = cfg.n // z
    b = u.shape[0]
    c = np.zeros((b, nb, z), dtype=np.uint8)
    c.reshape(b, -1)[:, :cfg.info_bits] = u
    sh = lifted_shifts(cfg.base_graph, z)

    # core rows 0..3: accumulate systematic contribution
    lam = np.zeros((4, b, z), dtype=np.uint8)
    for r, col, s in sh:
        if r < 4 and col < kb:
            lam[r] ^= _shift(c[:, col], s)
    core = {(r, col): s for r, col, s in sh if r < 4 and kb <= col < kb + 4}
    # the first parity column appears in three core rows; two shifts cancel
    col0 = [(r, s) for (r, col), s in core.items() if col == kb]
    svals = [s for _, s in col0]
    s_odd = next(s for s in svals if svals.count(s) == 1)
    total = lam[0] ^ lam[1] ^ lam[2] ^ lam[3]
    c[:, kb] = np.roll(total, int(s_odd), axis=-1)
    known = {kb}
    while len(known) < 4:
        progressed = False
        for r in range(4):
            cols = [col for (rr, col) in core if rr == r]
            unknown = [col for col in cols if col not in known]
            if len(unknown) != 1:
                continue
            acc = lam[r].copy()
            for col in cols:
                if col in known:
                    acc ^= _shift(c[:, col], core[(r, col)])
            tgt = unknown[0]
            c[:, tgt] = np.roll(acc, int(core[(r, tgt)]), axis=-1)
            known.add(tgt)
            progressed = True
        if not progressed:
            raise ConfigInvalid("core parity structure not solvable")

    # extension rows: single degree-one parity column each
    ext = {}
    for r, col, s in sh:
        if r >= 4:
            ext.setdefault(r, []).append((col, s))
    for r in sorted(ext):
        acc = np.zeros((b, z), dtype=np.uint8)
        tgt = None
        for col, s in ext[r]:
            if col >= kb + 4:
                tgt = (col, s)
            else:
                acc ^= _shift(c[:, col], s)
        c[:, tgt[0]] = np.roll(acc, int(tgt[1]), axis=-1)
    out = c.reshape(b, -1)
    return out[0] if single else out


def syndrome(codeword, cfg):
    h = parity_check_matrix(cfg.base_graph, cfg.lifting_size)
    cw = np.atleast_2d(np.asarray(codeword, dtype=np.int64))
    return (h @ cw.T).T % 2


# ---------------------------------------------------------------- rate matching

def buffer_positions(cfg):
    """Codeword positions forming the circular buffer (punctured and filler bits excluded)."""
    z = cfg.lifting_size
    pos = np.arange(2 * z, cfg.n)
    return pos[(pos < cfg.info_bits) | (pos >= cfg.k)]


def rate_match(codeword, target_bits, cfg):
    if target_bits <= 0:
        raise ConfigInvalid("target_bits must be positive")
    pos = buffer_positions(cfg)
    sel = pos[np.arange(target_bits) % pos.size]
    return np.asarray(codeword)[..., sel]


def rate_recover(llrs, cfg):
    """Map E received LLRs back onto the mother codeword.

    Repeated positions accumulate, punctured ones stay 0 and filler bits get
    ``+LLR_CAP``.
    """
    llrs = np.asarray(llrs, dtype=np.float64)
    single = llrs.ndim == 1
    llrs = np.atleast_2d(llrs)
    e = llrs.shape[1]
    pos = buffer_positions(cfg)
    sel = pos[np.arange(e) % pos.size]
    out = np.zeros((llrs.shape[0], cfg.n))
    if e <= pos.size:
        out[:, sel] = llrs
    else:
        for b in range(llrs.shape[0]):
            out[b] = np.bincount(sel, weights=llrs[b], minlength=cfg.n)
    out[:, cfg.info_bits:cfg.k] = LLR_CAP
    return out[0] if single else out


# ---------------------------------------------------------------- decoding

@dataclass(frozen=True)
class _DecoderGraph:
    n_vars: int
    groups: tuple  # (var_idx (n_checks_g, degree), edge offset) per check degree
    gather: sp.csr_matrix  # (n_vars, n_edges) sums check messages per variable
    h: sp.csr_matrix  # (n_checks, n_vars) parity checks


@lru_cache(maxsize=64)
def _decoder_graph(bg, z, n_cols):
    """Lifted graph restricted to the first ``n_cols`` base columns, checks grouped by degree."""
    kb = _BG[bg]["kb"]
    n_rows = n_cols - kb
    sh = lifted_shifts(bg, z)
    sh = sh[(sh[:, 0] < n_rows) & (sh[:, 1] < n_cols)]
    i = np.arange(z)
    rows = [[col * z + (i + s) % z for _, col, s in sh[sh[:, 0] == r]] for r in range(n_rows)]
    groups, edges, checks, off = [], [], [], 0
    for d in sorted({len(r) for r in rows}):
        members = [r for r in range(n_rows) if len(rows[r]) == d]
        vidx = np.concatenate([np.stack(rows[r], axis=1) for r in members])  # (len(members) * z, d)
        groups.append((vidx, off))
        off += vidx.size
        edges.append(vidx.ravel())
        checks.append(np.repeat(np.concatenate([r * z + i for r in members]), d))
    edges, checks = np.concatenate(edges), np.concatenate(checks)
    n_vars = n_cols * z
    gather = sp.csr_matrix((np.ones(edges.size, dtype=np.float32), (edges, np.arange(edges.size))),
                           shape=(n_vars, edges.size))
    h = sp.csr_matrix((np.ones(edges.size, dtype=np.int32), (checks, edges)), shape=(n_rows * z, n_vars))
    return _DecoderGraph(n_vars, tuple(groups), gather, h)


def used_columns(cfg):
    """Number of base-graph columns that carry transmitted bits (at least the core)."""
    pos = buffer_positions(cfg)
    last = pos[min(cfg.rate_matched_bits, pos.size) - 1]
    cols = int(last // cfg.lifting_size) + 1
    return max(cols, cfg.kb + 4)


def _check_update(v2c, scale):
    """Normalised min-sum check-to-variable messages; v2c is (checks, degree, blocks)."""
    mag = np.abs(v2c)
    neg = v2c < 0
    m1 = mag.min(axis=1, keepdims=True)
    is_min = mag == m1
    m2 = np.where(is_min, np.float32(np.inf), mag).min(axis=1, keepdims=True)
    # a repeated minimum is also the second minimum
    m2 = np.where(is_min.sum(axis=1, keepdims=True) > 1, m1, m2)
    out = np.where(is_min, m2, m1) * np.float32(scale)
    flip = np.bitwise_xor.reduce(neg, axis=1, keepdims=True) ^ neg
    return np.where(flip, -out, out)


def ldpc_decode(llrs, cfg, max_iters=DEFAULT_MAX_ITERS, scale=MIN_SUM_SCALE):
    """Normalised min-sum decoding with early exit on a zero syndrome.

    ``llrs`` are mother-codeword LLRs (from :func:`rate_recover`), one row per
    block. Returns ``(info_bits, crc_pass, iters_used)``; ``info_bits``
    excludes filler and includes the CRC. Ties (LLR exactly 0) decide bit 1.
    Messages are float32.
    """
    llrs = np.asarray(llrs, dtype=np.float64)
    single = llrs.ndim == 1
    llrs = np.atleast_2d(llrs)
    if llrs.shape[1] != cfg.n:
        raise LengthMismatch(f"expected {cfg.n} LLRs, got {llrs.shape[1]}")
    n_cols = used_columns(cfg)
    graph = _decoder_graph(cfg.base_graph, cfg.lifting_size, n_cols)
    nb = llrs.shape[0]
    # variables x blocks, so gathers copy contiguous rows
    ch = np.ascontiguousarray(np.clip(llrs[:, :graph.n_vars], -LLR_CAP, LLR_CAP).T, dtype=np.float32)
    hard = (ch <= 0).astype(np.int32)
    result = hard.T.astype(np.uint8)
    iters = np.full(nb, max_iters, dtype=np.int64)

    def parity_ok(h):
        return ~np.any((graph.h @ h) & 1, axis=0)

    ok = parity_ok(hard)
    iters[ok] = 0
    act = np.nonzero(~ok)[0]
    ch_a = ch[:, act]
    total = ch_a.copy()
    c2v = np.zeros((graph.gather.shape[1], act.size), dtype=np.float32)
    for it in range(1, max_iters + 1):
        if act.size == 0:
            break
        for vidx, off in graph.groups:
            msg = c2v[off:off + vidx.size].reshape(vidx.shape + (act.size,))
            msg[...] = _check_update(total[vidx] - msg, scale)
        total = ch_a + graph.gather @ c2v
        hard = (total <= 0).astype(np.int32)
        result[act] = hard.T
        ok = parity_ok(hard)
        iters[act[ok]] = it
        if ok.any():
            keep = ~ok
            act, ch_a, c2v, total = act[keep], ch_a[:, keep], c2v[:, keep], total[:, keep]
    info = result[:, :cfg.info_bits]
    crc_ok = crc_check(info, cfg.crc_width)
    if single:
        return info[0], bool(crc_ok[0]), int(iters[0])
    return info, crc_ok, iters


# ---------------------------------------------------------------- transport block

def tb_code_config(mcs, capacity_bits):
    """Deterministic single-code-block configuration for an MCS and data capacity.

    payload = floor(capacity * code_rate) - 24.
    """
    payload = int(np.floor(capacity_bits * mcs.code_rate)) - 24
    if payload <= 0:
        raise CapacityTooSmall(
            f"capacity of {capacity_bits} bits cannot carry MCS {mcs.index} (payload {payload})")
    return make_code_config(payload, mcs.code_rate, capacity_bits)


def tb_encode(payload_bits, cfg):
    """payload -> CRC -> LDPC -> rate matching; batch on the leading axis."""
    cw = ldpc_encode(crc_attach(payload_bits, cfg.crc_width), cfg)
    return rate_match(cw, cfg.rate_matched_bits, cfg)


def tb_decode(llrs, cfg, max_iters=DEFAULT_MAX_ITERS):
    """Inverse of :func:`tb_encode` from coded-bit LLRs; returns (payload, crc_pass, iters)."""
    info, ok, iters = ldpc_decode(rate_recover(llrs, cfg), cfg, max_iters)
    return info[..., :cfg.payload_bits], ok, iters


def transport_block_pipeline(payload_bits, mcs, capacity_bits):
    """Coded bits for a payload at ``mcs`` filling ``capacity_bits``; returns (bits, cfg)."""
    cfg = tb_code_config(mcs, capacity_bits)
    payload_bits = np.asarray(payload_bits, dtype=np.uint8)
    if payload_bits.shape[-1] != cfg.payload_bits:
        raise LengthMismatch(f"payload must have {cfg.payload_bits} bits, got {payload_bits.shape[-1]}")
    return tb_encode(payload_bits, cfg), cfg
