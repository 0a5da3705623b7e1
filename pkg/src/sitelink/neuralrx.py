"""Convolutional neural receiver: model, training loops and parameter files.

Two architectures share one descriptor format:

``direct``
    Received grid, pilot pattern, DMRS and noise planes for all antennas are
    stacked and pushed through residual 3x3 convolutions; a linear 1x1 head
    emits ``bps`` LLRs per resource element.

``hybrid`` (default)
    The same backbone runs per receive antenna on top of the classical
    estimates (LS at the pilots and the MMSE interpolation). It outputs a
    correction to the MMSE channel estimate and a per-RE LLR scale; combining
    and demapping are the max-log operator. The correction head starts at
    zero and the scale at one, so an untrained hybrid receiver is the MMSE
    receiver. It does not depend on the modulation order.
"""

import struct
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .chansim import RecordSource, TdlSource
from .errors import ArchitectureMismatch, EmptyDataset, FormatError, ShapeMismatch, VersionMismatch
from .gridphy import RE_PILOT, SlotConfig, _axis_table, slot_layout
from .link import draw_link
from .rxchain import ReceiverOutput, estimate_channel, ls_estimates

MAGIC = b"NRXP"
VERSION = 1


# ---------------------------------------------------------------- architecture

@dataclass(frozen=True)
class Architecture:
    kind: str = "hybrid"
    n_rx: int = 4
    channels: int = 16
    blocks: int = 3
    stem: tuple = (3, 9)
    kernel: tuple = (3, 3)
    activation: str = "relu"
    bps: int = 0  # direct head only

    def __post_init__(self):
        if self.kind not in ("hybrid", "direct"):
            raise ValueError(f"unknown architecture kind {self.kind!r}")
        if self.activation != "relu":
            raise ValueError("only relu is implemented")
        if self.kind == "direct" and self.bps not in (2, 4, 6, 8):
            raise ValueError("direct architecture needs bps in {2, 4, 6, 8}")

    @property
    def in_channels(self):
        return 10 if self.kind == "hybrid" else 2 * self.n_rx + 4

    def descriptor(self):
        return (f"kind={self.kind};n_rx={self.n_rx};channels={self.channels};blocks={self.blocks};"
                f"stem={self.stem[0]}x{self.stem[1]};kernel={self.kernel[0]}x{self.kernel[1]};"
                f"activation={self.activation};bps={self.bps}")

    @classmethod
    def from_descriptor(cls, text):
        kv = dict(item.split("=", 1) for item in text.strip().split(";") if item)
        try:
            return cls(kind=kv["kind"], n_rx=int(kv["n_rx"]), channels=int(kv["channels"]),
                       blocks=int(kv["blocks"]), stem=tuple(int(v) for v in kv["stem"].split("x")),
                       kernel=tuple(int(v) for v in kv["kernel"].split("x")),
                       activation=kv["activation"], bps=int(kv["bps"]))
        except (KeyError, ValueError) as e:
            raise FormatError(f"bad architecture descriptor {text!r}: {e}") from None

    def param_shapes(self):
        c, (kh, kw), (sh, sw) = self.channels, self.kernel, self.stem
        shapes = [("stem.w", (c, self.in_channels, sh, sw)), ("stem.b", (c,))]
        for i in range(self.blocks):
            shapes += [(f"block{i}.w1", (c, c, kh, kw)), (f"block{i}.b1", (c,)),
                       (f"block{i}.w2", (c, c, kh, kw)), (f"block{i}.b2", (c,))]
        if self.kind == "hybrid":
            shapes += [("delta.w", (2, c, 1, 1)), ("delta.b", (2,)),
                       ("scale.w", (1, c, 1, 1)), ("scale.b", (1,))]
        else:
            shapes += [("head.w", (self.bps, c, 1, 1)), ("head.b", (self.bps,))]
        return shapes

    def n_params(self):
        return int(sum(np.prod(s) for _, s in self.param_shapes()))


@dataclass(frozen=True, eq=False)
class NeuralRxParams:
    arch: Architecture
    values: np.ndarray  # flat float32
    seed: int = 0

    def __post_init__(self):
        if self.values.shape != (self.arch.n_params(),):
            raise ArchitectureMismatch(
                f"{self.values.size} values for an architecture with {self.arch.n_params()} parameters")

    def with_values(self, values):
        return NeuralRxParams(self.arch, np.asarray(values, dtype=np.float32), self.seed)

    def unpack(self, values=None):
        values = self.values if values is None else values
        out, off = {}, 0
        for name, shape in self.arch.param_shapes():
            n = int(np.prod(shape))
            out[name] = values[off:off + n].reshape(shape)
            off += n
        return out


def init_params(arch, seed=0):
    """Fan-in-scaled uniform init; residual branches start small, heads as documented."""
    rng = np.random.default_rng(seed)
    parts = []
    for name, shape in arch.param_shapes():
        if name.endswith(".b"):
            v = np.full(shape, 1.0 if name == "scale.b" else 0.0)
        elif name.startswith(("delta", "scale")):
            v = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            bound = np.sqrt(6.0 / fan_in)
            if name.endswith("w2"):
                bound *= 0.1
            v = rng.uniform(-bound, bound, shape)
        parts.append(np.asarray(v).ravel())
    return NeuralRxParams(arch, np.concatenate(parts).astype(np.float32), seed)


# ---------------------------------------------------------------- features

def _grid_shape(cfg):
    re_map, _ = slot_layout(cfg)
    return re_map.shape


def data_flat_index(cfg):
    re_map, _ = slot_layout(cfg)
    return np.flatnonzero(re_map != RE_PILOT)


def _check_inputs(arch, inputs):
    cfg = inputs[0].slot_cfg
    for inp in inputs:
        if inp.slot_cfg != cfg:
            raise ShapeMismatch("all inputs of a batch must share one slot configuration")
        if inp.rx_grid.n_ports != arch.n_rx:
            raise ShapeMismatch(f"architecture expects {arch.n_rx} receive antennas, got {inp.rx_grid.n_ports}")
    return cfg


def features(arch, inputs, dtype=np.float32):
    """Input planes. hybrid: (B*n_rx, 10, S, K) plus side arrays; direct: (B, 2R+4, S, K)."""
    cfg = _check_inputs(arch, inputs)
    re_map, pilots = slot_layout(cfg)
    pmask = (re_map == RE_PILOT).astype(np.float64)
    n_s, n_k = re_map.shape
    b, r = len(inputs), arch.n_rx
    y = np.stack([inp.rx_grid.values for inp in inputs]).transpose(0, 3, 1, 2)  # B R S K
    nv = np.array([inp.noise_var for inp in inputs], dtype=np.float64)
    noise_plane = np.broadcast_to(np.log10(nv)[:, None, None], (b, n_s, n_k))
    if arch.kind == "direct":
        x = np.concatenate([
            y.real, y.imag,
            np.broadcast_to(pmask, (b, 1, n_s, n_k)),
            np.broadcast_to(pilots.real, (b, 1, n_s, n_k)),
            np.broadcast_to(pilots.imag, (b, 1, n_s, n_k)),
            noise_plane[:, None]], axis=1)
        return x.astype(dtype), None
    ls = np.zeros((b, r, n_s, n_k), dtype=np.complex128)
    hm = np.empty((b, r, n_s, n_k), dtype=np.complex128)
    for i, inp in enumerate(inputs):
        for s, (k, h_ls) in ls_estimates(inp).items():
            ls[i, :, s, k] = h_ls  # advanced index axis comes first
        hm[i] = estimate_channel(inp).transpose(2, 0, 1)
    shared = lambda a: np.broadcast_to(a, (b, r, n_s, n_k))  # noqa: E731
    x = np.stack([y.real, y.imag, ls.real, ls.imag, hm.real, hm.imag, shared(pmask),
                  shared(pilots.real), shared(pilots.imag), shared(noise_plane[:, None])], axis=2)
    x = x.reshape(b * r, 10, n_s, n_k)
    side = {"y": y.astype(np.complex128), "h_mmse": hm, "noise_var": nv}
    return x.astype(dtype), side


# ---------------------------------------------------------------- forward

def _backbone(p, x, arch):
    h = ad.relu(ad.conv2d(x, p["stem.w"], p["stem.b"]))
    for i in range(arch.blocks):
        t = ad.relu(ad.conv2d(h, p[f"block{i}.w1"], p[f"block{i}.b1"]))
        t = ad.conv2d(t, p[f"block{i}.w2"], p[f"block{i}.b2"])
        h = ad.relu(ad.add(h, t))
    return h


def forward_graph(params, inputs, dtype=np.float32, values=None):
    """Build the graph for a batch; returns (llrs Tensor (B, n_bits), param Tensors, bps)."""
    arch = params.arch
    cfg = inputs[0].slot_cfg
    bps = inputs[0].bits_per_symbol
    if arch.kind == "direct" and bps != arch.bps:
        raise ShapeMismatch(f"direct architecture emits {arch.bps} bits per symbol, slot needs {bps}")
    raw = params.unpack(values)
    p = {k: ad.Tensor(v.astype(dtype), requires_grad=True) for k, v in raw.items()}
    x, side = features(arch, inputs, dtype)
    h = _backbone(p, ad.Tensor(x), arch)
    b = len(inputs)
    n_s, n_k = _grid_shape(cfg)
    idx = data_flat_index(cfg)
    if arch.kind == "direct":
        out = ad.conv2d(h, p["head.w"], p["head.b"])  # B bps S K
        out = ad.transpose(ad.reshape(out, (b, bps, n_s * n_k)), (0, 2, 1))
    else:
        r = arch.n_rx
        d = ad.reshape(ad.conv2d(h, p["delta.w"], p["delta.b"]), (b, r, 2, n_s, n_k))
        hm = side["h_mmse"]
        h_re = ad.add(ad.getitem(d, (slice(None), slice(None), 0)), hm.real.astype(dtype))
        h_im = ad.add(ad.getitem(d, (slice(None), slice(None), 1)), hm.imag.astype(dtype))
        y = side["y"]
        yr, yi = y.real.astype(dtype), y.imag.astype(dtype)
        z_re = ad.sum_(ad.add(ad.mul(h_re, yr), ad.mul(h_im, yi)), axis=1)
        z_im = ad.sum_(ad.add(ad.mul(h_re, yi), ad.neg(ad.mul(h_im, yr))), axis=1)
        g = ad.sum_(ad.add(ad.square(h_re), ad.square(h_im)), axis=1)
        levels, lbits = _axis_table(bps)
        nv = side["noise_var"].astype(dtype)[:, None, None]
        llr = ad.maxlog(z_re, z_im, g, nv, levels, lbits)  # B S K bps
        scale = ad.mean(ad.reshape(ad.conv2d(h, p["scale.w"], p["scale.b"]), (b, r, n_s, n_k)), axis=1)
        out = ad.mul(llr, ad.reshape(scale, (b, n_s, n_k, 1)))
        out = ad.reshape(out, (b, n_s * n_k, bps))
    out = ad.take(out, idx, axis=1)
    return ad.reshape(out, (b, idx.size * bps)), p, bps


def forward_batch(params, inputs, dtype=np.float32):
    llr, _, _ = forward_graph(params, inputs, dtype)
    return llr.value.astype(np.float64)


def forward(params, inp, dtype=np.float32):
    return ReceiverOutput(forward_batch(params, [inp], dtype)[0])


neural_receive = forward


def receive_batch(params, inputs, dtype=np.float32):
    return [ReceiverOutput(v) for v in forward_batch(params, inputs, dtype)]


def bce_from_llr_loss(llrs, target_coded_bits):
    return ad.bce_with_llr(llrs, target_coded_bits)


def loss_and_grad(params, inputs, targets, dtype=np.float32, values=None):
    """Mean BCE over the batch and its gradient as a flat float64 vector."""
    llr, p, _ = forward_graph(params, inputs, dtype, values)
    loss = bce_from_llr_loss(llr, np.asarray(targets))
    loss.backward()
    grads = [p[name].grad if p[name].grad is not None else np.zeros(shape)
             for name, shape in params.arch.param_shapes()]
    return float(loss.value), np.concatenate([g.ravel() for g in grads]).astype(np.float64)


# ---------------------------------------------------------------- training

PRETRAIN_LR = 1e-3
FINETUNE_LR = 1e-4


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = PRETRAIN_LR
    batch_size: int = 8
    steps: int = 2000
    snr_range_db: tuple = (0.0, 12.0)
    channel_source: str = "tdl_mix"
    mcs_index: int = 20
    mcs_table: str = "qam64"
    n_rb: int = 4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    delay_spread_ns: tuple = (10.0, 600.0)
    doppler_hz: tuple = (20.0, 400.0)
    profiles: tuple = ("TDL-B", "TDL-C")
    n_rx: int = 4
    arch: Architecture = field(default_factory=Architecture)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.snr_range_db[0] > self.snr_range_db[1]:
            raise ValueError("snr_range_db must be (low, high) with low <= high")
        if self.channel_source not in ("tdl_mix", "record_dataset"):
            raise ValueError(f"unknown channel source {self.channel_source!r}")

    def slot_config(self):
        return SlotConfig(n_rb=self.n_rb, mcs_index=self.mcs_index, mcs_table=self.mcs_table)

    def tdl_source(self):
        return TdlSource(self.profiles, self.delay_spread_ns, self.doppler_hz, self.n_rx)


def training_batch(rng, slot_cfg, source, batch_size, snr_range_db):
    """Per example: fresh channel draw, SNR ~ U[snr_range_db], random coded bits."""
    inputs, targets = [], []
    for _ in range(batch_size):
        snr = rng.uniform(*snr_range_db)
        s = draw_link(rng, slot_cfg, source, snr, encode=False)
        inputs.append(s.inp)
        targets.append(s.coded_bits)
    return inputs, np.stack(targets)


def _train(params, source, cfg, history):
    if cfg.steps <= 0:
        return params
    rng = np.random.default_rng(cfg.seed)
    slot_cfg = cfg.slot_config()
    opt = ad.Adam(params.values.size, cfg.beta1, cfg.beta2, cfg.eps)
    values = params.values.astype(np.float32).copy()
    for _ in range(cfg.steps):
        inputs, targets = training_batch(rng, slot_cfg, source, cfg.batch_size, cfg.snr_range_db)
        loss, grad = loss_and_grad(params, inputs, targets, values=values)
        values = opt.step(values, grad.astype(np.float32), cfg.learning_rate)
        if history is not None:
            history.append(loss)
    return params.with_values(values)


def pretrain(cfg, history=None, params=None):
    """Pre-training on the TDL mix. ``history`` (a list) receives per-step losses."""
    if cfg.channel_source != "tdl_mix":
        raise ValueError("pretrain expects channel_source = tdl_mix")
    if params is None:
        params = init_params(replace(cfg.arch, n_rx=cfg.n_rx), cfg.seed)
    return _train(params, cfg.tdl_source(), cfg, history)


def finetune(params, records, cfg, history=None, source_spacing_hz=15e3):
    """Fine-tuning on replayed records (or on the TDL mix when ``records`` is None
    and ``cfg.channel_source`` is tdl_mix, the no-shift control). ``params`` is not modified."""
    if cfg.learning_rate > PRETRAIN_LR:
        warnings.warn(f"fine-tune learning rate {cfg.learning_rate} exceeds the pretraining rate")
    if cfg.channel_source == "record_dataset":
        if not records:
            raise EmptyDataset("no records to fine-tune on")
        source = RecordSource(tuple(records), source_spacing_hz)
    else:
        source = cfg.tdl_source()
    return _train(params, source, cfg, history)


# ---------------------------------------------------------------- files

def save_params(path, params):
    desc = params.arch.descriptor().encode()
    with open(path, "wb") as f:
        f.write(MAGIC + struct.pack("<H", VERSION))
        f.write(struct.pack("<I", len(desc)) + desc)
        f.write(struct.pack("<Q", params.values.size))
        f.write(params.values.astype("<f4").tobytes())


def load_params(path, expected_arch=None):
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MAGIC:
        raise FormatError(f"{path}: not a parameter file (bad magic)")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != VERSION:
        raise VersionMismatch(version, VERSION)
    (n,) = struct.unpack_from("<I", data, 6)
    arch = Architecture.from_descriptor(data[10:10 + n].decode())
    off = 10 + n
    (count,) = struct.unpack_from("<Q", data, off)
    off += 8
    if len(data) - off != 4 * count:
        raise FormatError(f"{path}: expected {count} parameters, found {(len(data) - off) // 4}")
    if expected_arch is not None and expected_arch != arch:
        raise ArchitectureMismatch(f"file holds {arch.descriptor()}, expected {expected_arch.descriptor()}")
    values = np.frombuffer(data, dtype="<f4", count=count, offset=off).astype(np.float32)
    return NeuralRxParams(arch, values)
