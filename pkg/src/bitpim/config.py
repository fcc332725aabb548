"""TOML experiment configuration.

Grammar (every table optional except ``[model]``)::

    seed = 7                      # single source of randomness

    [model]
    name = "sample"
    input_shape = [3, 16, 16]
    input = "input.pimq"          # optional; otherwise a seeded random image
    weight_bits = 2               # defaults for layers that do not set them
    input_bits = 2

    [[model.layers]]
    kind = "conv"                 # conv | fc | avgpool
    out_channels = 8
    kernel = 3
    padding = 1
    quantize = false              # full-precision layer
    weight_bits = 32
    input_bits = 8
    weights = "conv1.pimq"        # relative to the config file
    activation = "half_tanh"      # half_tanh | sign | identity
    bn = { mean = [...], var = [...], gamma = [...], beta = [...] }

    [device]        # subarray.DeviceParams fields
    [cost]          # costmodel.CostParams fields
    [hierarchy]     # mapping.MemoryHierarchy fields
    [intermittency] # trace, mean_on, mean_off, n_intervals, on, off, path, traces, checkpoint_k, nv_mode
    [run]           # verify, format, out_dir
    [sweep]         # bitwidths, checkpoint_k, sigma, trials
    [mc]            # trials

Any unknown or ill-typed key raises :class:`ConfigError` naming the key and
its line.
"""

from __future__ import annotations

import dataclasses
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .bitplane import load_pimq
from .costmodel import CostParams
from .engine import Activation, BatchNormParams, LayerDef, Network
from .exceptions import ConfigError, PimError
from .mapping import MemoryHierarchy
from .subarray import DeviceParams

TOP_KEYS = {"seed", "model", "device", "cost", "hierarchy", "intermittency", "run", "sweep", "mc"}
MODEL_KEYS = {"name", "input_shape", "input", "weight_bits", "input_bits", "layers"}
LAYER_KEYS = {"kind", "name", "out_channels", "kernel", "stride", "padding", "weight_bits", "input_bits",
              "quantize", "weights", "activation", "bn", "window"}
BN_KEYS = {"mean", "var", "gamma", "beta", "eps"}
INTERMITTENCY_DEFAULTS = {
    "trace": "exponential",
    "mean_on": 1e6,
    "mean_off": 1e3,
    "n_intervals": 1000,
    "on": 10_000,
    "off": 100,
    "path": "",
    "traces": 1,
    "checkpoint_k": 20,
    "nv_mode": "two_ff",
}
RUN_DEFAULTS = {"verify": False, "format": "json", "out_dir": "out"}
SWEEP_DEFAULTS = {
    "bitwidths": ["1:1", "1:4", "1:8", "2:2"],
    "checkpoint_k": [1, 5, 20, 50],
    "sigma": [0.0, 0.05, 0.10, 0.15],
    "trials": 100_000,
    "traces": 10,
}
MC_DEFAULTS = {"trials": 100_000}


@dataclass
class Config:
    seed: int = 0
    network: Network | None = None
    input_path: Path | None = None
    device: DeviceParams = field(default_factory=DeviceParams)
    cost: CostParams = field(default_factory=CostParams)
    hierarchy: MemoryHierarchy = field(default_factory=MemoryHierarchy)
    intermittency: dict = field(default_factory=lambda: dict(INTERMITTENCY_DEFAULTS))
    run: dict = field(default_factory=lambda: dict(RUN_DEFAULTS))
    sweep: dict = field(default_factory=lambda: dict(SWEEP_DEFAULTS))
    mc: dict = field(default_factory=lambda: dict(MC_DEFAULTS))
    source: Path | None = None

    def input_tensor(self, seed: int | None = None) -> np.ndarray:
        """The configured input image in [0, 1], or a seeded random one."""
        if self.network is None:
            raise ConfigError("no [model] section", key="model")
        shape = tuple(self.network.input_shape)
        if self.input_path is not None:
            q = _load_tensor(self.input_path, "model.input", None)
            real = q.values.astype(np.float64) / max(1, (1 << q.bit_width) - 1)
            if real.size != int(np.prod(shape)):
                raise ConfigError(f"model.input has {real.size} values, input_shape needs {int(np.prod(shape))}",
                                  key="model.input")
            return real.reshape(shape)
        rng = np.random.default_rng(self.seed if seed is None else seed)
        return rng.random(shape)


class _Locator:
    """Maps dotted keys back to line numbers in the TOML source."""

    HEADER = re.compile(r"^\s*\[\[?\s*([A-Za-z0-9_.\-\s\"]+?)\s*\]\]?\s*(#.*)?$")
    ASSIGN = re.compile(r"^\s*([A-Za-z0-9_\-\"]+)\s*=")

    def __init__(self, text: str):
        self.lines = {}
        self.layer_lines = []
        section = ""
        for lineno, line in enumerate(text.splitlines(), 1):
            m = self.HEADER.match(line)
            if m:
                section = m.group(1).replace(" ", "").replace('"', "")
                if line.strip().startswith("[[") and section == "model.layers":
                    self.layer_lines.append(lineno)
                self.lines.setdefault(section, lineno)
                continue
            m = self.ASSIGN.match(line)
            if m:
                key = m.group(1).strip('"')
                if section == "model.layers" or section.startswith("model.layers."):
                    sub = section[len("model.layers"):]
                    full = f"model.layers[{len(self.layer_lines) - 1}]{sub}.{key}"
                else:
                    full = f"{section}.{key}" if section else key
                self.lines.setdefault(full, lineno)

    def line(self, key: str) -> int | None:
        while key:
            if key in self.lines:
                return self.lines[key]
            m = re.fullmatch(r"model\.layers\[(\d+)\]", key)
            if m and int(m.group(1)) < len(self.layer_lines):
                return self.layer_lines[int(m.group(1))]
            key = key.rpartition(".")[0] if "." in key else ""
        return None


def _err(loc: _Locator, key: str, msg: str) -> ConfigError:
    return ConfigError(f"{key}: {msg}", key=key, line=loc.line(key))


def _check_keys(loc, table: dict, allowed, prefix: str):
    for k in table:
        if k not in allowed:
            raise _err(loc, f"{prefix}{k}", f"unknown key; expected one of {sorted(allowed)}")


def _typed(loc, key, value, kind):
    ok = {
        "int": lambda v: isinstance(v, int) and not isinstance(v, bool),
        "num": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v),
        "bool": lambda v: isinstance(v, bool),
        "str": lambda v: isinstance(v, str),
        "list": lambda v: isinstance(v, list),
    }[kind]
    if not ok(value):
        raise _err(loc, key, f"expected {kind}, got {value!r}")
    return value


def _dataclass_section(loc, raw: dict, name: str, cls):
    table = raw.get(name, {})
    if not isinstance(table, dict):
        raise _err(loc, name, "expected a table")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    _check_keys(loc, table, fields, f"{name}.")
    kwargs = {}
    for k, v in table.items():
        default = fields[k].default
        if isinstance(default, bool):
            _typed(loc, f"{name}.{k}", v, "bool")
        elif isinstance(default, int):
            _typed(loc, f"{name}.{k}", v, "int")
        elif isinstance(default, float):
            _typed(loc, f"{name}.{k}", v, "num")
        else:
            _typed(loc, f"{name}.{k}", v, "str")
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except (PimError, ValueError) as exc:
        key = f"{name}.{next(iter(kwargs))}" if kwargs else name
        for k in kwargs:
            if k in str(exc):
                key = f"{name}.{k}"
                break
        raise _err(loc, key, str(exc)) from None


def _plain_section(loc, raw: dict, name: str, defaults: dict) -> dict:
    table = raw.get(name, {})
    if not isinstance(table, dict):
        raise _err(loc, name, "expected a table")
    _check_keys(loc, table, defaults, f"{name}.")
    out = dict(defaults)
    for k, v in table.items():
        d = defaults[k]
        kind = "bool" if isinstance(d, bool) else "int" if isinstance(d, int) else "num" if isinstance(d, float) \
            else "list" if isinstance(d, list) else "str"
        if kind == "int" and isinstance(v, float):
            kind = "num" if k not in ("n_intervals", "traces", "trials", "checkpoint_k") else kind
        out[k] = _typed(loc, f"{name}.{k}", v, kind)
    return out


def _load_tensor(path: Path, key: str, loc):
    if not path.is_file():
        msg = f"tensor file {str(path)!r} not found"
        raise _err(loc, key, msg) if loc else ConfigError(f"{key}: {msg}", key=key)
    try:
        return load_pimq(path)
    except PimError as exc:
        raise (_err(loc, key, str(exc)) if loc else ConfigError(f"{key}: {exc}", key=key)) from None


def _parse_layer(loc, i: int, raw: dict, model: dict, base: Path) -> LayerDef:
    prefix = f"model.layers[{i}]."
    if not isinstance(raw, dict):
        raise _err(loc, prefix[:-1], "expected a table")
    _check_keys(loc, raw, LAYER_KEYS, prefix)
    kind = _typed(loc, prefix + "kind", raw.get("kind", ""), "str")
    if kind not in ("conv", "fc", "avgpool"):
        raise _err(loc, prefix + "kind", f"unknown layer kind {kind!r}")
    if kind == "avgpool":
        window = _typed(loc, prefix + "window", raw.get("window", 2), "int")
        stride = _typed(loc, prefix + "stride", raw.get("stride", window), "int")
        return LayerDef("avgpool", name=raw.get("name", ""), window=window, stride=stride)
    for req in ("out_channels", "weights"):
        if req not in raw:
            raise _err(loc, prefix[:-1], f"missing required key {req!r}")
    ints = {}
    for k, d in (("out_channels", 1), ("kernel", 1), ("stride", 1), ("padding", 0),
                 ("weight_bits", model.get("weight_bits", 1)), ("input_bits", model.get("input_bits", 1))):
        ints[k] = _typed(loc, prefix + k, raw.get(k, d), "int")
    quant = _typed(loc, prefix + "quantize", raw.get("quantize", True), "bool")
    act = _typed(loc, prefix + "activation", raw.get("activation", "identity"), "str")
    try:
        Activation(act)
    except ValueError:
        raise _err(loc, prefix + "activation", f"unknown activation {act!r}") from None
    wpath = base / _typed(loc, prefix + "weights", raw["weights"], "str")
    weights = _load_tensor(wpath, prefix + "weights", loc)
    bn = None
    if "bn" in raw:
        table = raw["bn"]
        if not isinstance(table, dict):
            raise _err(loc, prefix + "bn", "expected a table")
        _check_keys(loc, table, BN_KEYS, prefix + "bn.")
        vecs = {}
        for k in ("mean", "var", "gamma", "beta"):
            if k not in table:
                raise _err(loc, prefix + "bn", f"missing {k!r}")
            v = _typed(loc, f"{prefix}bn.{k}", table[k], "list")
            if len(v) != ints["out_channels"]:
                raise _err(loc, f"{prefix}bn.{k}", f"needs {ints['out_channels']} entries, has {len(v)}")
            vecs[k] = np.asarray(v, dtype=np.float64)
        bn = BatchNormParams(**vecs, eps=float(_typed(loc, prefix + "bn.eps", table.get("eps", 1e-5), "num")))
    return LayerDef(kind, name=raw.get("name", ""), out_channels=ints["out_channels"], kernel=ints["kernel"],
                    stride=ints["stride"], padding=ints["padding"], weight_bits=ints["weight_bits"],
                    input_bits=ints["input_bits"], quantize=quant, weights=weights, activation=act, bn=bn)


def parse_config(text: str, source: Path | None = None) -> Config:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"malformed TOML: {exc}", key=None, line=int(m.group(1)) if m else None) from None
    loc = _Locator(text)
    base = source.parent if source is not None else Path(".")
    _check_keys(loc, raw, TOP_KEYS, "")
    cfg = Config(source=source)
    cfg.seed = _typed(loc, "seed", raw.get("seed", 0), "int")
    cfg.device = _dataclass_section(loc, raw, "device", DeviceParams)
    cfg.cost = _dataclass_section(loc, raw, "cost", CostParams)
    cfg.hierarchy = _dataclass_section(loc, raw, "hierarchy", MemoryHierarchy)
    cfg.intermittency = _plain_section(loc, raw, "intermittency", INTERMITTENCY_DEFAULTS)
    cfg.run = _plain_section(loc, raw, "run", RUN_DEFAULTS)
    cfg.sweep = _plain_section(loc, raw, "sweep", SWEEP_DEFAULTS)
    cfg.mc = _plain_section(loc, raw, "mc", MC_DEFAULTS)
    if cfg.intermittency["trace"] not in ("exponential", "periodic", "always_on", "file"):
        raise _err(loc, "intermittency.trace", "expected exponential, periodic, always_on or file")
    if cfg.intermittency["nv_mode"] not in ("two_ff", "one_ff"):
        raise _err(loc, "intermittency.nv_mode", "expected two_ff or one_ff")
    if cfg.run["format"] not in ("csv", "json"):
        raise _err(loc, "run.format", "expected csv or json")

    if "model" in raw:
        model = raw["model"]
        if not isinstance(model, dict):
            raise _err(loc, "model", "expected a table")
        _check_keys(loc, model, MODEL_KEYS, "model.")
        shape = _typed(loc, "model.input_shape", model.get("input_shape", []), "list")
        if len(shape) != 3 or not all(isinstance(s, int) and s > 0 for s in shape):
            raise _err(loc, "model.input_shape", "expected three positive integers [C, H, W]")
        layers_raw = _typed(loc, "model.layers", model.get("layers", []), "list")
        if not layers_raw:
            raise _err(loc, "model.layers", "model needs at least one layer")
        layers = [_parse_layer(loc, i, lr, model, base) for i, lr in enumerate(layers_raw)]
        cfg.network = Network(layers, tuple(shape), _typed(loc, "model.name", model.get("name", "model"), "str"))
        try:
            cfg.network.resolve()
        except PimError as exc:
            bad = re.match(r"(\S+?):", str(exc))
            key = "model.layers"
            if bad:
                for i, ld in enumerate(layers):
                    if ld.name == bad.group(1) or f"layer{i}" == bad.group(1):
                        key = f"model.layers[{i}]"
            raise _err(loc, key, str(exc)) from None
        if "input" in model:
            cfg.input_path = base / _typed(loc, "model.input", model["input"], "str")
            if not cfg.input_path.is_file():
                raise _err(loc, "model.input", f"tensor file {str(cfg.input_path)!r} not found")
    return cfg


def load_config(path) -> Config:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {str(path)!r}: {exc.strerror}", key=None) from None
    return parse_config(text, path)
