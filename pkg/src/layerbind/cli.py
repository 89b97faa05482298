"""Command line interface.

Subcommands: ``run``, ``validate-layout``, ``profile-blocks``, ``bench`` and
``dump-read``. Failures print one JSON line on stderr,
``{"error": CODE, "exit_code": N, "message": ...}``, and exit with the error
class's code (see :mod:`layerbind.errors`); usage errors exit 2.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .attention import AttentionRecorder
from .bench import affine_r2, format_table, run_bench
from .config import load_config
from .dump import read_tensor, write_atomic, write_tensor
from .errors import ConfigError, EmptyForegroundError, LayerBindError, SchemaError, ValidationError
from .estimator import LayerBindGenerator
from .layout import parse_layout, scene_regions, serialize_layout, validate
from .model import Trace, profile_blocks, select_vital_blocks
from .sampler import record_plain_attention


def _read_layout(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise SchemaError("<document>", f"cannot read layout: {exc}") from exc
    return parse_layout(text)


def _fail(exc):
    code = getattr(exc, "code", "INTERNAL_ERROR")
    exit_code = getattr(exc, "exit_code", 1)
    msg = str(exc).replace("\n", " ")
    print(json.dumps({"error": code, "exit_code": exit_code, "message": msg}), file=sys.stderr)
    return exit_code


def _parse_range(text):
    if ".." in text:
        lo, hi = text.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(t) for t in text.split(",")]


def cmd_run(args):
    cfg = load_config(args.config)
    if args.dump_every is not None:
        cfg["dump"]["every"] = args.dump_every
    if args.layout:
        scene = _read_layout(args.layout)
    elif "layout" in cfg:
        scene = parse_layout(cfg["layout"])
    else:
        raise ConfigError("no layout given (use --layout or a manifest with a layout)")
    report = validate(scene, strict=args.strict)
    for v in report.violations:
        print(str(v), file=sys.stderr)
    if report.errors:
        raise ValidationError(report.errors)

    out = Path(args.out or cfg["output_dir"])
    est = LayerBindGenerator.from_config(cfg).fit(scene)
    trace = Trace(capture=cfg["dump"]["composite"])
    traj = est.generate(trace=trace)

    every = cfg["dump"]["every"]
    if every:
        for state in traj.states:
            if state.step_index % every == 0 or state.step_index == est.schedule_.total_steps:
                write_tensor(out / "trajectory" / f"step_{state.step_index:04d}.lbnd", state.tokens)
    if cfg["dump"]["alpha"]:
        for order, mask in traj.alphas.items():
            write_tensor(out / f"alpha_layer{order}.lbnd", mask.values)
    if cfg["dump"]["composite"]:
        last = est.num_blocks - 1
        for key, arr in trace.captured.items():
            if key[0] == "composite" and key[2] == last:
                write_tensor(out / "composite" / f"step_{key[1]:04d}.lbnd", arr)
    write_tensor(out / "final_latent.lbnd", traj.final.tokens)

    manifest = {k: v for k, v in cfg.items() if k != "resolved_vital_blocks"}
    manifest["output_dir"] = str(out)
    manifest["resolved_vital_blocks"] = list(est.vital_blocks_)
    manifest["layout"] = serialize_layout(scene)
    manifest["model_checksum"] = est.model_.checksum()
    manifest["version"] = __version__
    write_atomic(out / "manifest.json", (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode())
    print(json.dumps({"status": "ok", "output_dir": str(out), "steps": est.schedule_.total_steps,
                      "vital_blocks": est.vital_blocks_, "alpha_layers": sorted(traj.alphas)}))
    return 0


def cmd_validate_layout(args):
    scene = _read_layout(args.layout)
    report = validate(scene, strict=False)
    strict_errors = [v for v in report.violations if v.severity == "error" or args.strict]
    for v in report.violations:
        sev = "error" if (args.strict or v.severity == "error") else v.severity
        print(json.dumps({"severity": sev, "kind": v.kind, "order": v.order, "detail": v.detail}))
    if strict_errors:
        raise ValidationError(strict_errors)
    print(json.dumps({"status": "ok", "layers": len(scene.layers)}))
    return 0


def cmd_profile_blocks(args):
    cfg = load_config(args.config)
    scene = _read_layout(args.layout)
    est = LayerBindGenerator.from_config(cfg)
    est.set_params(vital_blocks=[0]).fit(scene)
    regions = scene_regions(scene, est.grid_h, est.grid_w)
    if not regions:
        raise EmptyForegroundError("layout has no layers to take a foreground from")
    n_steps = max(1, int(np.floor(args.steps_frac * est.steps + 1e-9)))
    rec = record_plain_attention(est.model_, scene, est.schedule_, AttentionRecorder(frozenset(range(n_steps))), est.seed)
    fg = np.unique(np.concatenate([r.indices for r in regions]))
    profiles = profile_blocks(rec, fg, None)
    early, late = cfg["vital_counts"]
    vital = set(select_vital_blocks(profiles, early, late))
    for p in profiles:
        print(json.dumps({"block": p.block_index, "self": p.response_self, "background": p.response_background,
                          "text": p.response_text, "vital": p.block_index in vital}))
    if args.dump_maps:
        for block, maps in rec.maps.items():
            write_tensor(Path(args.dump_maps) / f"attn_block{block:03d}.lbnd", np.mean(maps, axis=0))
    return 0


def cmd_bench(args):
    cfg = load_config(args.config)
    counts = _parse_range(args.regions)

    def make():
        return LayerBindGenerator.from_config(cfg)

    rows = run_bench(make, counts, repeats=args.repeats)
    print(format_table(rows))
    added = [r for r in rows if r.regions > 0]
    if len(added) >= 2:
        r2 = affine_r2([r.branch_tokens for r in added], [r.pair_count for r in added])
        print(f"phase1 pair-count affine R^2 = {r2:.6f}")
    return 0


def cmd_dump_read(args):
    arr = read_tensor(args.file)
    info = {"shape": list(arr.shape), "dtype": "float32"}
    if arr.size:
        info.update(min=float(arr.min()), max=float(arr.max()), mean=float(arr.mean()))
    print(json.dumps(info))
    if args.values:
        np.savetxt(sys.stdout, arr.reshape(arr.shape[0] if arr.ndim else 1, -1), fmt="%.9g")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="layerbind", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the full pipeline")
    p.add_argument("--config", help="config or manifest JSON")
    p.add_argument("--layout", help="layout JSON (optional when the config is a manifest)")
    p.add_argument("--strict", action="store_true", help="treat fully occluded layers as errors")
    p.add_argument("--dump-every", type=int, default=None, metavar="N")
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("validate-layout", help="check a layout file")
    p.add_argument("layout")
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_validate_layout)

    p = sub.add_parser("profile-blocks", help="attention response per block")
    p.add_argument("--config")
    p.add_argument("--layout", required=True)
    p.add_argument("--steps-frac", type=float, default=0.2)
    p.add_argument("--dump-maps", metavar="DIR")
    p.set_defaults(func=cmd_profile_blocks)

    p = sub.add_parser("bench", help="overhead vs number of regions")
    p.add_argument("--config")
    p.add_argument("--regions", default="1..6")
    p.add_argument("--repeats", type=int, default=3)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("dump-read", help="print a tensor dump")
    p.add_argument("file")
    p.add_argument("--values", action="store_true")
    p.set_defaults(func=cmd_dump_read)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except LayerBindError as exc:
        return _fail(exc)


if __name__ == "__main__":
    sys.exit(main())
