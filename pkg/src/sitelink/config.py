"""Experiment configuration files.

Flat INI sections with ``key = value`` lines. Unknown sections or keys are
rejected with the offending line number. Every section is optional; missing
keys take the defaults in ``SCHEMA``.

Example::

    [experiment]
    seed = 7

    [slot]
    n_rb = 4
    mcs_index = 20
    mcs_table = qam64

    [channel]
    source = tdl
    profiles = TDL-B
    delay_spread_ns = 300, 300
    doppler_hz = 100, 100

    [receiver]
    kind = mmse

    [sweep]
    snr_db = 4, 6, 8, 10

    [output]
    result = out/mmse.sweep
"""

import configparser
import hashlib
import os
from dataclasses import dataclass

from .errors import ConfigInvalid


def _floats(text):
    return tuple(float(v) for v in text.replace(",", " ").split())


def _ints(text):
    return tuple(int(v) for v in text.replace(",", " ").split())


def _words(text):
    return tuple(v for v in text.replace(",", " ").split())


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _choice(*options):
    def parse(text):
        t = text.strip()
        if t not in options:
            raise ValueError(f"{t!r} is not one of {', '.join(options)}")
        return t
    return parse


def _pair(text):
    v = _floats(text)
    if len(v) == 1:
        v = (v[0], v[0])
    if len(v) != 2 or v[0] > v[1]:
        raise ValueError("expected 'low, high' with low <= high")
    return v


SCHEMA = {
    "experiment": {"seed": (int, 0), "workers": (int, 1), "name": (str, "")},
    "slot": {"n_rb": (int, 4), "mcs_index": (int, 20), "mcs_table": (_choice("qam64", "qam256"), "qam64")},
    "channel": {
        "source": (_choice("tdl", "records", "flat"), "tdl"),
        "profiles": (_words, ("TDL-B", "TDL-C")),
        "delay_spread_ns": (_pair, (10.0, 600.0)),
        "doppler_hz": (_pair, (20.0, 400.0)),
        "n_rx": (int, 4),
        "records": (str, ""),
        "source_spacing_hz": (float, 15e3),
        "split_mode": (_choice("none", "by_pci", "by_record_index", "by_region_bbox"), "none"),
        "split_side": (_choice("train", "test"), "train"),
        "train_fraction": (float, 0.8),
        "test_pcis": (_ints, ()),
        "bbox": (_floats, ()),
        "split_seed": (int, 0),
    },
    "receiver": {"kind": (_choice("mmse", "neural", "perfect"), "mmse"), "params": (str, ""), "label": (str, "")},
    "train": {
        "steps": (int, 2000),
        "batch_size": (int, 8),
        "learning_rate": (float, None),
        "snr_db": (_pair, (2.0, 14.0)),
        "init_params": (str, ""),
        "channels": (int, 16),
        "blocks": (int, 3),
        "kind": (_choice("hybrid", "direct"), "hybrid"),
    },
    "sweep": {
        "snr_db": (_floats, ()),
        "min_blocks": (int, 100),
        "max_blocks": (int, 1000),
        "min_block_errors": (int, 50),
    },
    "output": {"params": (str, ""), "log": (str, ""), "result": (str, ""), "csv": (str, "")},
}


@dataclass(frozen=True)
class ExperimentConfig:
    path: str
    values: dict  # section -> key -> parsed value
    digest: str  # sha256 of the file bytes

    def get(self, section, key):
        return self.values[section][key]

    def resolve(self, rel):
        """Paths in a config are relative to the config file."""
        if not rel or os.path.isabs(rel):
            return rel
        return os.path.join(os.path.dirname(os.path.abspath(self.path)), rel)

    def provenance(self):
        lines = [f"config = {os.path.basename(self.path)}", f"config_sha256 = {self.digest}"]
        for sec in SCHEMA:
            for key in SCHEMA[sec]:
                v = self.values[sec][key]
                if isinstance(v, tuple):
                    v = ", ".join(str(x) for x in v)
                lines.append(f"{sec}.{key} = {v}")
        return lines


def _line_of(text, section, key=None):
    current = None
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1].strip()
            if key is None and current == section:
                return no
        elif key is not None and current == section and "=" in s:
            if s.split("=", 1)[0].strip().lower() == key:
                return no
    return 0


def load_config(path, require_files=True):
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise ConfigInvalid(f"{path}: cannot read config: {e.strerror}") from None
    text = raw.decode("utf-8")
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"),
                                   inline_comment_prefixes=("#",))
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as e:
        raise ConfigInvalid(f"{path}: {e}") from None
    values = {}
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigInvalid(f"{path}:{_line_of(text, sec)}: unknown section [{sec}]")
        for key in cp[sec]:
            if key not in SCHEMA[sec]:
                raise ConfigInvalid(f"{path}:{_line_of(text, sec, key)}: unknown key '{key}' in [{sec}]")
    for sec, keys in SCHEMA.items():
        values[sec] = {}
        for key, (parse, default) in keys.items():
            if cp.has_option(sec, key):
                try:
                    values[sec][key] = parse(cp.get(sec, key))
                except ValueError as e:
                    raise ConfigInvalid(f"{path}:{_line_of(text, sec, key)}: [{sec}] {key}: {e}") from None
            else:
                values[sec][key] = default
    cfg = ExperimentConfig(str(path), values, hashlib.sha256(raw).hexdigest())
    if require_files:
        for sec, key in (("channel", "records"), ("receiver", "params"), ("train", "init_params")):
            rel = values[sec][key]
            if rel and not os.path.exists(cfg.resolve(rel)):
                raise ConfigInvalid(f"{path}:{_line_of(text, sec, key)}: [{sec}] {key}: "
                                    f"file not found: {cfg.resolve(rel)}")
    return cfg
