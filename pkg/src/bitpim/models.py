"""Network builders: random-weight models, BN calibration and the shipped sample."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .bitplane import QuantizedTensor, full_scale, quantize, save_pimq
from .engine import BatchNormParams, LayerDef, Network, NetworkProgram, run_network

# (kind, out_channels, kernel, padding, quantized); pooling entries carry the window
SAMPLE_ARCH = (
    ("conv", 8, 3, 1, False),
    ("conv", 8, 3, 1, True),
    ("avgpool", 2),
    ("conv", 16, 3, 1, True),
    ("conv", 16, 3, 1, True),
    ("avgpool", 2),
    ("conv", 16, 3, 1, True),
    ("conv", 16, 3, 1, True),
    ("fc", 32, True),
    ("fc", 10, False),
)
SAMPLE_INPUT_SHAPE = (3, 16, 16)
FULL_PRECISION_BITS = 32


def random_network(arch, input_shape, weight_bits: int, input_bits: int, seed: int = 0,
                   activation: str = "half_tanh", name: str = "random") -> Network:
    """Uniform random weights; unquantized entries get 32-bit weights and 8-bit inputs."""
    rng = np.random.default_rng(seed)
    layers = []
    c, h, w = input_shape
    conv_i = fc_i = pool_i = 0
    n_compute = sum(1 for a in arch if a[0] != "avgpool")
    seen = 0
    for entry in arch:
        kind = entry[0]
        if kind == "avgpool":
            pool_i += 1
            layers.append(LayerDef("avgpool", name=f"pool{pool_i}", window=entry[1], stride=entry[1]))
            h, w = h // entry[1], w // entry[1]
            continue
        seen += 1
        if kind == "conv":
            _, oc, k, pad, quant = entry
            conv_i += 1
            lname, cin = f"conv{conv_i}", c * k * k
        else:
            _, oc, quant = entry
            fc_i += 1
            lname, cin, k, pad = f"fc{fc_i}", c * h * w, 1, 0
        wb = weight_bits if quant else FULL_PRECISION_BITS
        ib = input_bits if quant else 8
        values = rng.integers(0, full_scale(wb), size=(oc, cin), dtype=np.uint64, endpoint=True)
        weights = QuantizedTensor(values.reshape(oc, -1, k, k), wb)
        last = seen == n_compute
        layers.append(LayerDef(kind, name=lname, out_channels=oc, kernel=k, padding=pad, weight_bits=wb,
                               input_bits=ib, quantize=quant, weights=weights,
                               activation="identity" if last else activation))
        if kind == "conv":
            c = oc
        else:
            c, h, w = oc, 1, 1
    return Network(layers, tuple(input_shape), name)


def calibrate_bn(network: Network, x, eps: float = 1e-5) -> Network:
    """Per-channel batch norm fitted to one input, so activations stay away from saturation.

    Layers are calibrated front to back, each on the already-normalized
    output of the layers before it.  The final layer is left unnormalized.
    """
    compute = [i for i, ld in enumerate(network.layers) if ld.kind != "avgpool"]
    for i in compute[:-1]:
        ld = network.layers[i]
        saved = ld.activation
        ld.activation, ld.bn = "identity", None
        prefix = Network(network.layers[: i + 1], network.input_shape, network.name)
        pre = run_network(NetworkProgram(prefix), x, keep_outputs=True).layer_outputs[-1]
        pre = np.asarray(pre, dtype=np.float64).reshape(ld.out_channels, -1)
        var = pre.var(axis=1)
        ld.bn = BatchNormParams(mean=pre.mean(axis=1), var=np.where(var > 0, var, 1.0),
                                gamma=np.ones(ld.out_channels), beta=np.zeros(ld.out_channels), eps=eps)
        ld.activation = saved
    return network


def sample_input(seed: int = 0, shape=SAMPLE_INPUT_SHAPE) -> np.ndarray:
    return np.random.default_rng(seed).random(shape)


def _toml_list(values) -> str:
    return "[" + ", ".join(repr(float(v)) for v in values) + "]"


def write_sample(directory, seed: int = 0, weight_bits: int = 2, input_bits: int = 2) -> Path:
    """Write the sample model (config.toml, weights, input image) into ``directory``.

    Full-precision first and last layers, quantized layers in between, and
    batch norm calibrated on the shipped input.  Deterministic in ``seed``.
    """
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    net = random_network(SAMPLE_ARCH, SAMPLE_INPUT_SHAPE, weight_bits, input_bits, seed=seed, name="sample")
    x = sample_input(seed)
    image = quantize(x, 8)
    calibrate_bn(net, dequantize_image(image))
    save_pimq(out / "input.pimq", image)
    lines = [
        "# Sample model: 6 conv, 2 average-pool and 2 fully connected layers.",
        "# The first and last layers keep 32-bit weights; the rest run bit-wise.",
        f"seed = {seed}",
        "",
        "[model]",
        'name = "sample"',
        f"input_shape = [{', '.join(str(d) for d in SAMPLE_INPUT_SHAPE)}]",
        'input = "input.pimq"',
        f"weight_bits = {weight_bits}",
        f"input_bits = {input_bits}",
    ]
    for ld in net.layers:
        lines += ["", "[[model.layers]]", f'kind = "{ld.kind}"', f'name = "{ld.name}"']
        if ld.kind == "avgpool":
            lines += [f"window = {ld.window}", f"stride = {ld.stride}"]
            continue
        fname = f"{ld.name}.pimq"
        save_pimq(out / fname, ld.weights)
        lines += [f"out_channels = {ld.out_channels}"]
        if ld.kind == "conv":
            lines += [f"kernel = {ld.kernel}", f"padding = {ld.padding}"]
        lines += [f"quantize = {'true' if ld.quantize else 'false'}", f"weight_bits = {ld.weight_bits}",
                  f"input_bits = {ld.input_bits}", f'weights = "{fname}"', f'activation = "{ld.activation}"']
        if ld.bn is not None:
            lines += [
                "[model.layers.bn]",
                f"mean = {_toml_list(ld.bn.mean)}",
                f"var = {_toml_list(ld.bn.var)}",
                f"gamma = {_toml_list(ld.bn.gamma)}",
                f"beta = {_toml_list(ld.bn.beta)}",
                f"eps = {ld.bn.eps!r}",
            ]
    lines += [
        "",
        "[intermittency]",
        'trace = "exponential"',
        "mean_on = 200000.0",
        "mean_off = 100.0",
        "n_intervals = 1000",
        "checkpoint_k = 20",
        'nv_mode = "two_ff"',
        "",
        "[run]",
        "verify = false",
        'format = "json"',
        'out_dir = "out"',
        "",
        "[sweep]",
        "checkpoint_k = [1, 5, 20, 50]",
        "sigma = [0.0, 0.05, 0.10, 0.15]",
        "trials = 100000",
        "traces = 5",
        "",
    ]
    (out / "config.toml").write_text("\n".join(lines))
    return out / "config.toml"


def dequantize_image(q: QuantizedTensor) -> np.ndarray:
    return q.values.astype(np.float64) / full_scale(q.bit_width)


def sample_config_path() -> Path:
    return Path(__file__).parent / "data" / "sample" / "config.toml"
