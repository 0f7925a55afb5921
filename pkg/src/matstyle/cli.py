"""Command-line front end: one subcommand per pipeline stage plus run-all.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 stage failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .pipeline import (ConfigError, PipelineConfig, _file_hash, evaluate,
                       load_landmarks, resolve_weights, run_all, stage_eval,
                       stage_extract, stage_fit, stage_gen, stage_map,
                       stage_match, stage_segment)
from .plyio import PlyParseError
from .transfer import StageError

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_STAGE = 0, 2, 3, 4


def _load_json(path):
    with open(path) as fh:
        return json.load(fh)


def _weights_from_arg(value):
    if value is None:
        return None
    if os.path.exists(value):
        return resolve_weights(_load_json(value))
    return resolve_weights(value)


def _print(obj):
    print(json.dumps(obj, sort_keys=True, indent=2))


def _cmd_gen(args):
    spec = _load_json(args.spec) if args.spec else {}
    paths = stage_gen(spec, args.seed, args.out)
    _print(paths)


def _cmd_map(args):
    opts = {}
    if args.max_iters is not None:
        opts["max_iters"] = args.max_iters
    if args.energy_tol is not None:
        opts["energy_tol"] = args.energy_tol
    _print(stage_map(args.mesh, args.out, opts))


def _cmd_extract(args):
    _print(stage_extract(args.mesh, args.out))


def _cmd_segment(args):
    filter_opts, seg_opts = {}, {}
    if args.sigma_r is not None:
        filter_opts["sigma_r"] = args.sigma_r
    if args.k is not None:
        seg_opts["k"] = args.k
    if args.min_size is not None:
        seg_opts["min_size"] = args.min_size
    _print(stage_segment(args.mesh, args.out, filter_opts, seg_opts))


def _cmd_fit(args):
    paths, hit = stage_fit(args.mesh, args.out, order=args.order,
                           source=args.source, cache=not args.no_cache)
    _print({"pdfs": paths["pdfs"], "cache_hit": hit,
            "sha256": _file_hash(paths["pdfs"])})


def _cmd_match(args):
    _print(stage_match(args.src_fit, args.tar_fit, args.out,
                       weights=_weights_from_arg(args.weights)))


def _transfer_config(args):
    params = {"mu_s": args.mu_s, "mu_h": args.mu_h, "f_s": args.f_s,
              "raw_sigma": args.raw_sigma}
    if args.blend_sigma is not None:
        params["blend_sigma"] = args.blend_sigma
    return PipelineConfig(
        out=args.out, src=args.src, tar=args.tar, order=args.order,
        weights=_weights_from_arg(args.weights) or "paper-similar",
        params=params, landmarks=args.landmarks,
        cache=not args.no_cache, render=args.render,
        indicator_division=not args.no_indicator_division)


def _cmd_transfer(args):
    summary = run_all(_transfer_config(args))
    _print({"result": summary["result"], "stages": summary["stages"]})


def _cmd_eval(args):
    report = stage_eval(args.result, args.ground_truth, args.out)
    _print(report.to_json_dict())


def _cmd_render(args):
    from .render import render_outputs
    _print({"written": render_outputs(args.run_dir, args.out)})


def _cmd_run_all(args):
    cfg = PipelineConfig.from_json(args.config)
    if args.out:
        cfg.out = args.out
    if args.no_cache:
        cfg.cache = False
    if args.render:
        cfg.render = True
    summary = run_all(cfg)
    out = {"result": summary.get("result"), "stages": summary["stages"]}
    if "eval" in summary:
        out["report"] = summary["report"]
        out["accuracy_hue"] = summary["eval"].accuracy_hue
        out["accuracy_sat"] = summary["eval"].accuracy_sat
    _print(out)


def build_parser():
    p = argparse.ArgumentParser(
        prog="matstyle",
        description="Material-driven appearance transfer between genus-zero meshes.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic source/target/truth triple")
    g.add_argument("--spec", help="JSON file with generator fields")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(fn=_cmd_gen)

    m = sub.add_parser("map", help="conformally map a mesh to the unit sphere")
    m.add_argument("--mesh", required=True)
    m.add_argument("--out", required=True)
    m.add_argument("--max-iters", type=int)
    m.add_argument("--energy-tol", type=float)
    m.set_defaults(fn=_cmd_map)

    e = sub.add_parser("extract", help="derive material channels from bispectral color")
    e.add_argument("--mesh", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(fn=_cmd_extract)

    s = sub.add_parser("segment", help="filter concentration and split into patches")
    s.add_argument("--mesh", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--k", type=float, help="merge threshold scale")
    s.add_argument("--min-size", type=int)
    s.add_argument("--sigma-r", type=float, help="filter range sigma")
    s.set_defaults(fn=_cmd_segment)

    f = sub.add_parser("fit", help="fit per-patch spherical-harmonic PDFs")
    f.add_argument("--mesh", required=True)
    f.add_argument("--out", required=True, help="output JSON")
    f.add_argument("--order", type=int, default=16)
    f.add_argument("--source", action="store_true",
                   help="also fit appearance channels (hue, saturation)")
    f.add_argument("--no-cache", action="store_true")
    f.set_defaults(fn=_cmd_fit)

    mt = sub.add_parser("match", help="assign source patches to target patches")
    mt.add_argument("--src-fit", required=True)
    mt.add_argument("--tar-fit", required=True)
    mt.add_argument("--out", required=True)
    mt.add_argument("--weights", help="preset name or JSON file")
    mt.set_defaults(fn=_cmd_match)

    t = sub.add_parser("transfer", help="full transfer between two mesh files")
    t.add_argument("--src", required=True)
    t.add_argument("--tar", required=True)
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--order", type=int, default=16)
    t.add_argument("--weights", help="preset name or JSON file")
    t.add_argument("--landmarks", help="JSON file with alignment pairs")
    t.add_argument("--mu-s", type=float, default=1.0)
    t.add_argument("--mu-h", type=float, default=1.0)
    t.add_argument("--f-s", type=float, default=0.0)
    t.add_argument("--blend-sigma", type=float)
    t.add_argument("--raw-sigma", action="store_true",
                   help="skip the per-band frequency-weight normalization")
    t.add_argument("--no-indicator-division", action="store_true")
    t.add_argument("--no-cache", action="store_true")
    t.add_argument("--render", action="store_true")
    t.set_defaults(fn=_cmd_transfer)

    ev = sub.add_parser("eval", help="score a reconstruction against ground truth")
    ev.add_argument("--result", required=True)
    ev.add_argument("--ground-truth", required=True)
    ev.add_argument("--out", required=True)
    ev.set_defaults(fn=_cmd_eval)

    r = sub.add_parser("render", help="emit false-color meshes and diagnostic plots")
    r.add_argument("--run-dir", required=True)
    r.add_argument("--out")
    r.set_defaults(fn=_cmd_render)

    ra = sub.add_parser("run-all", help="chain gen/load, transfer, eval, render")
    ra.add_argument("--config", required=True, help="pipeline config JSON")
    ra.add_argument("--out", help="override the config's output directory")
    ra.add_argument("--no-cache", action="store_true")
    ra.add_argument("--render", action="store_true")
    ra.set_defaults(fn=_cmd_run_all)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, PermissionError, IsADirectoryError,
            PlyParseError, json.JSONDecodeError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except StageError as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (ValueError, KeyError) as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
