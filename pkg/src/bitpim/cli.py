"""Command-line experiment runner.

Exit codes: 0 success, 1 verification failure (or a broken TWO_FF
invariance), 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from .accumulator import NvMode
from .config import Config, load_config
from .costmodel import (
    AccumulationMode,
    CostReport,
    accumulation_cycles,
    alexnet_layers,
    complexity_index,
    layer_cost,
    storage_footprint,
)
from .engine import NetworkProgram, run_network
from .exceptions import ConfigError, PimError, VerificationError
from .intermittency import PowerTrace, compare_outputs, run_with_trace
from .mapping import map_layer
from .models import sample_config_path, write_sample
from .subarray import sense_margin_mc

EXIT_OK, EXIT_VERIFY, EXIT_USAGE = 0, 1, 2
G_BITS = 8


def _write_table(path: Path, rows: list, fmt: str) -> Path:
    path = path.with_suffix("." + fmt)
    if fmt == "json":
        path.write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n")
    else:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        path.write_text(buf.getvalue())
    return path


def _cost_rows(report: CostReport) -> list:
    rows = [{"phase": p, "cycles": report.breakdown_cycles[p], "energy_pj": report.breakdown_energy[p]}
            for p in report.breakdown_cycles]
    rows.append({"phase": "total", "cycles": report.cycles, "energy_pj": report.energy_pj})
    return rows


def _settings(args) -> Config:
    cfg = load_config(args.config or sample_config_path())
    if args.seed is not None:
        cfg.seed = args.seed
    if args.mode is not None:
        cfg.cost = cfg.cost.replace(accumulation_mode=AccumulationMode(args.mode))
    if args.checkpoint_k is not None:
        if args.checkpoint_k < 1:
            raise ConfigError("--checkpoint-k must be >= 1", key="checkpoint-k")
        cfg.intermittency["checkpoint_k"] = args.checkpoint_k
        cfg.cost = cfg.cost.replace(checkpoint_interval=args.checkpoint_k)
    if args.nv is not None:
        cfg.intermittency["nv_mode"] = args.nv
    if args.format is not None:
        cfg.run["format"] = args.format
    if args.verify:
        cfg.run["verify"] = True
    if args.out_dir is not None:
        cfg.run["out_dir"] = args.out_dir
    return cfg


def _out_dir(cfg: Config) -> Path:
    out = Path(cfg.run["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require_model(cfg: Config):
    if cfg.network is None:
        raise ConfigError("this command needs a [model] section", key="model")


def _program(cfg: Config) -> NetworkProgram:
    _require_model(cfg)
    return NetworkProgram(cfg.network, cfg.hierarchy, cfg.cost)


def _trace(cfg: Config, seed: int) -> PowerTrace:
    it = cfg.intermittency
    kind = it["trace"]
    if kind == "always_on":
        return PowerTrace.always_on()
    if kind == "periodic":
        return PowerTrace.periodic(it["on"], it["off"], it["n_intervals"])
    if kind == "file":
        base = cfg.source.parent if cfg.source else Path(".")
        return PowerTrace.from_csv(base / it["path"])
    return PowerTrace.exponential(seed, it["mean_on"], it["mean_off"], it["n_intervals"])


# -- subcommands -----------------------------------------------------------------


def cmd_run(args) -> int:
    cfg = _settings(args)
    program = _program(cfg)
    x = cfg.input_tensor()
    fmt = cfg.run["format"]
    try:
        result = run_network(program, x, verify=cfg.run["verify"], checkpoint_interval=cfg.cost.checkpoint_interval)
    except VerificationError as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    out = _out_dir(cfg)
    scores = [{"class": i, "score": float(s)} for i, s in enumerate(result.scores)]
    _write_table(out / "scores", scores, fmt)
    _write_table(out / "cost", _cost_rows(result.report), fmt)
    print(result.report.render())
    print(f"predicted class {int(np.argmax(result.scores))}; "
          f"{'verified against the reference path' if cfg.run['verify'] else 'not verified'}")
    return EXIT_OK


def _parse_bitwidth(text: str):
    try:
        w, i = (int(v) for v in str(text).split(":"))
    except ValueError:
        raise ConfigError(f"bit-width point {text!r} is not W:I", key="sweep.bitwidths") from None
    if w < 1 or i < 1:
        raise ConfigError(f"bit-width point {text!r} must be positive", key="sweep.bitwidths")
    return w, i


def _sweep_bitwidth(cfg: Config, values) -> list:
    rows = []
    specs = cfg.network.conv_specs() if cfg.network is not None else []
    for v in values:
        w, i = _parse_bitwidth(v)
        inf, train = complexity_index(w, i, G_BITS)
        storage = storage_footprint(alexnet_layers(), w, i)
        row = {"w_bits": w, "i_bits": i, "complexity_inference": inf, "complexity_training": train,
               "storage_mb": storage.total_mb}
        if specs:
            total = CostReport()
            for spec in specs:
                if spec.quantize:
                    spec = dataclasses.replace(spec, weight_bits=w, input_bits=i)
                total = total + layer_cost(map_layer(spec, cfg.hierarchy), spec, cfg.cost)
            row.update(cycles=total.cycles, energy_pj=total.energy_pj, accumulation_cycles=accumulation_cycles(total))
        rows.append(row)
    return rows


def _sweep_checkpoint_k(cfg: Config, values) -> list:
    program = _program(cfg)
    x = cfg.input_tensor()
    reference = run_network(program, x).scores
    n_traces = int(cfg.sweep["traces"])
    rows = []
    for k in values:
        k = int(k)
        if k < 1:
            raise ConfigError("checkpoint K must be >= 1", key="sweep.checkpoint_k")
        wasted, restores, checkpoints, identical, complete = [], 0, 0, 0, 0
        for t in range(n_traces):
            res = run_with_trace(program, x, _trace(cfg, cfg.seed + t), k, cfg.intermittency["nv_mode"])
            st = res.stats
            wasted.append(st["wasted_cycle_fraction"])
            restores += st["restores"]
            checkpoints += res.journal.count("checkpoint")
            complete += res.complete
            identical += compare_outputs(res, reference)["identical"]
        rows.append({"checkpoint_k": k, "traces": n_traces, "complete": complete, "identical": identical,
                     "restores": restores, "checkpoints": checkpoints,
                     "wasted_cycle_fraction": float(np.mean(wasted))})
    return rows


def _sweep_sigma(cfg: Config, values) -> list:
    rows = []
    for s in values:
        params = dataclasses.replace(cfg.device, sigma_ra=float(s))
        rep = sense_margin_mc(params, int(cfg.sweep["trials"]), cfg.seed)
        rows.append({"sigma_ra": float(s), "sigma_tmr": params.sigma_tmr,
                     "misclassification_rate": rep.misclassification_rate,
                     **{f"misclass_{m.lower()}": r for m, r in rep.mode_misclass.items()}})
    return rows


def cmd_sweep(args) -> int:
    cfg = _settings(args)
    key = {"bitwidth": "bitwidths", "checkpoint_K": "checkpoint_k", "sigma": "sigma"}[args.dimension]
    values = args.values if args.values is not None else cfg.sweep[key]
    if not values:
        raise ConfigError(f"empty range for sweep over {args.dimension}", key=f"sweep.{key}")
    if args.dimension == "bitwidth":
        rows = _sweep_bitwidth(cfg, values)
    elif args.dimension == "checkpoint_K":
        rows = _sweep_checkpoint_k(cfg, [int(float(v)) for v in values])
    else:
        rows = _sweep_sigma(cfg, [float(v) for v in values])
    path = _write_table(_out_dir(cfg) / f"sweep_{args.dimension}", rows, cfg.run["format"])
    for r in rows:
        print(", ".join(f"{k}={v}" for k, v in r.items()))
    print(f"wrote {path}")
    return EXIT_OK


def cmd_intermittent(args) -> int:
    cfg = _settings(args)
    program = _program(cfg)
    x = cfg.input_tensor()
    reference = run_network(program, x).scores
    k = cfg.intermittency["checkpoint_k"]
    mode = NvMode(cfg.intermittency["nv_mode"])
    n_traces = args.traces if args.traces is not None else int(cfg.intermittency["traces"])
    if n_traces < 1:
        raise ConfigError("--traces must be >= 1", key="intermittency.traces")
    out = _out_dir(cfg)
    rows = []
    broken = []
    for t in range(n_traces):
        seed = cfg.seed + t
        res = run_with_trace(program, x, _trace(cfg, seed), k, mode)
        res.journal.to_jsonl(out / f"journal_{t:03d}.jsonl")
        cmp = compare_outputs(res, reference)
        st = res.stats
        restores = [e["detail"]["replay"] for e in res.journal.events if e["kind"] == "restore"]
        rows.append({"trace": t, "seed": seed, "complete": res.complete, "identical": cmp["identical"],
                     "max_abs_diff": cmp["max_abs_diff"], "restores": st["restores"],
                     "replayed_frames": st["replayed_frames"], "max_replay": max(restores, default=0),
                     "completed_frames": st["completed_frames"], "lost_cycles": st["lost_cycles"],
                     "wasted_cycle_fraction": st["wasted_cycle_fraction"]})
        if mode is NvMode.TWO_FF and res.complete and (not cmp["identical"] or rows[-1]["max_replay"] > k):
            broken.append(t)
    path = _write_table(out / "intermittent", rows, cfg.run["format"])
    done = sum(r["complete"] for r in rows)
    print(f"{n_traces} traces, {done} complete, K={k}, nv_mode={mode.value}")
    if mode is NvMode.ONE_FF:
        diffs = [r["max_abs_diff"] for r in rows if r["complete"]]
        print(f"one_ff: {sum(not r['identical'] for r in rows if r['complete'])} of {done} complete runs differ, "
              f"max |diff| = {max(diffs, default=0.0):.6g}")
    print(f"wrote {path}")
    if broken:
        print(f"result invariance violated on traces {broken}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def cmd_mc_sense(args) -> int:
    cfg = _settings(args)
    changes = {}
    if args.sigma_ra is not None:
        changes["sigma_ra"] = args.sigma_ra
    if args.sigma_tmr is not None:
        changes["sigma_tmr"] = args.sigma_tmr
    params = dataclasses.replace(cfg.device, **changes)
    trials = args.trials if args.trials is not None else int(cfg.mc["trials"])
    rep = sense_margin_mc(params, trials, cfg.seed)
    out = _out_dir(cfg)
    if cfg.run["format"] == "csv":
        path = out / "mc_sense.csv"
        rep.to_csv(path)
    else:
        path = _write_table(out / "mc_sense", [{"state": s, "mean": m, "std": sd, "misclass_rate": r}
                                               for s, m, sd, r in rep.rows()], "json")
    print(rep.to_csv(), end="")
    print(f"worst-mode misclassification {rep.misclassification_rate:.6g} over {trials} trials; wrote {path}")
    return EXIT_OK


def cmd_report(args) -> int:
    cfg = _settings(args)
    out = _out_dir(cfg)
    fmt = cfg.run["format"]
    if cfg.network is not None:
        program = _program(cfg)
        report = program.cost()
        print(f"model {cfg.network.name!r}, mode {cfg.cost.accumulation_mode.value}")
        print(report.render())
        _write_table(out / "cost", _cost_rows(report), fmt)
        other = AccumulationMode.SERIAL_BITCOUNT if cfg.cost.accumulation_mode is AccumulationMode.COMPRESSOR \
            else AccumulationMode.COMPRESSOR
        alt = NetworkProgram(cfg.network, cfg.hierarchy, cfg.cost.replace(accumulation_mode=other)).cost()
        a, b = accumulation_cycles(report), accumulation_cycles(alt)
        print(f"accumulation cycles {a} vs {b} in {other.value} mode (ratio {a / b if b else math.nan:.3f})")
    w, i = _parse_bitwidth(args.storage_bits or "1:1")
    storage = storage_footprint(alexnet_layers(), w, i)
    print(f"storage model (AlexNet-class reference network) at {w}:{i}")
    print(storage.render())
    print(f"capacity {cfg.hierarchy.capacity_bits} bits ({cfg.hierarchy.capacity_bits / 2 ** 20:g} Mb)")
    return EXIT_OK


def cmd_init_sample(args) -> int:
    path = write_sample(args.directory, seed=args.seed if args.seed is not None else 0)
    print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config (default: shipped sample model)")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--verify", action="store_true", help="check every layer against the reference path")
    common.add_argument("--out-dir", help="directory for report files")
    common.add_argument("--format", choices=("csv", "json"))
    common.add_argument("--mode", choices=("compressor", "serial"), help="accumulation mode")
    common.add_argument("--nv", choices=("two_ff", "one_ff"), help="NV flip-flops per adder")
    common.add_argument("--checkpoint-k", type=int, help="frames between checkpoints")

    parser = argparse.ArgumentParser(prog="bitpim", description="Bit-wise in-memory CNN accelerator simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", parents=[common], help="inference on the configured model")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("sweep", parents=[common], help="metric vs parameter table")
    p.add_argument("dimension", choices=("bitwidth", "checkpoint_K", "sigma"))
    p.add_argument("--values", nargs="*", help="points to sweep (default: [sweep] table)")
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("intermittent", parents=[common], help="inference under power-failure traces")
    p.add_argument("--traces", type=int, help="number of seeded traces")
    p.set_defaults(func=cmd_intermittent)
    p = sub.add_parser("mc-sense", parents=[common], help="Monte-Carlo sense margins")
    p.add_argument("--trials", type=int)
    p.add_argument("--sigma-ra", type=float)
    p.add_argument("--sigma-tmr", type=float)
    p.set_defaults(func=cmd_mc_sense)
    p = sub.add_parser("report", parents=[common], help="cost and storage report")
    p.add_argument("--storage-bits", help="W:I precision for the storage model (default 1:1)")
    p.set_defaults(func=cmd_report)
    p = sub.add_parser("init-sample", help="write the sample model to a directory")
    p.add_argument("directory")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_init_sample)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except VerificationError as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except PimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
