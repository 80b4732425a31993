"""Command-line interface.

Subcommands: spot, answer, eval, index, occlude, report. Exit codes are
fixed so scripts can branch: 0 ok, 2 configuration error, 3 backend error,
4 bad input. Config resolves as flags > environment > config file.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import config as config_mod
from .answering import MllmRequest, ask, build_prompt
from .attention import HighlightStyle, SpotlightConfig, spotlight
from .caching import FileCache
from .embedding import encode_image_b64
from .errors import BackendError, ConfigError, InputError, SpotlightError
from .harness import (
    EvalReport,
    RunConfig,
    load_dataset,
    render_report,
    run_eval,
    write_report_files,
)
from .occlusion import OcclusionConfig, occlusion_sweep, smooth_heatmap
from .pages import GridSpec, PageImage
from .retrieval import index_corpus

log = logging.getLogger("spotlight")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BACKEND = 3
EXIT_INPUT = 4


def _parse_color(text: str) -> tuple[int, int, int]:
    parts = text.split(",")
    if len(parts) != 3:
        raise InputError(f"expected color as r,g,b, got {text!r}")
    try:
        r, g, b = (int(p) for p in parts)
    except ValueError as exc:
        raise InputError(f"expected integer color channels, got {text!r}") from exc
    return (r, g, b)


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="config file path (or SPOTLIGHT_CONFIG)")
    common.add_argument("--cache-dir", help="response cache directory")
    common.add_argument("--seed", type=int, help="seed for randomized steps")
    common.add_argument("--json", action="store_true", help="machine-readable JSON on stdout")
    common.add_argument("--verbose", action="store_true", help="debug logging on stderr")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(prog="spotlight", description="Question-guided document highlighting and evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    spot = sub.add_parser("spot", parents=[common], help="highlight the query-relevant region of a page")
    spot.add_argument("--image", required=True, help="input page image (PNG/JPEG)")
    spot.add_argument("--query", required=True)
    spot.add_argument("--out", help="output PNG path (default: <image>.attended.png)")
    spot.add_argument("--emit-debug", action="store_true", help="write selection/mask sidecar JSON")
    spot.add_argument("--grid-n", type=int)
    spot.add_argument("--alpha", type=float)
    spot.add_argument("--color", help="highlight color as r,g,b")

    answer = sub.add_parser("answer", parents=[common], help="ask the configured MLLM about one or more pages")
    answer.add_argument("--image", action="append", default=[], help="page image; repeatable")
    answer.add_argument("--question", required=True)
    answer.add_argument("--mode", choices=("baseline", "spotlight", "cot"), default="baseline")

    index = sub.add_parser("index", parents=[common], help="build a retrieval index over page images")
    index.add_argument("--images", nargs="+", required=True, help="image files and/or directories")
    index.add_argument("--out", required=True, help="index JSON output path")

    ev = sub.add_parser("eval", parents=[common], help="run the evaluation harness over a dataset")
    ev.add_argument("--dataset", required=True)
    ev.add_argument("--setting", choices=("closed", "open", "distractor"))
    ev.add_argument("--pipeline", choices=("baseline", "spotlight", "ocr_stub", "cot"))
    ev.add_argument("--out-dir", required=True)
    ev.add_argument("--grid-n", type=int)
    ev.add_argument("--alpha", type=float)
    ev.add_argument("--k", type=int)
    ev.add_argument("--m", type=int)
    ev.add_argument("--index-path")
    ev.add_argument("--parallelism", type=int)

    occ = sub.add_parser("occlude", parents=[common], help="occlusion-sensitivity heatmap for one page")
    occ.add_argument("--image", required=True)
    occ.add_argument("--query", required=True)
    occ.add_argument("--window", type=int, required=True)
    occ.add_argument("--stride", type=int, required=True)
    occ.add_argument("--fill", default="128,128,128", help="occluder color as r,g,b")
    occ.add_argument("--smooth-sigma", type=float, default=1.0)
    occ.add_argument("--reference", help="reference answer; defaults to the model's own answer")
    occ.add_argument("--out-prefix", required=True, help="writes <prefix>.json and <prefix>.png")

    rep = sub.add_parser("report", parents=[common], help="re-render a saved report")
    rep.add_argument("--report", required=True, help="report JSON path")
    rep.add_argument("--format", choices=("markdown", "csv", "json"), default="markdown")
    rep.add_argument("--out", help="output file (default: stdout)")
    return parser


def _file_config(args) -> dict:
    return config_mod.load_config_file(args.config)


def _cache_dir(args, cfg: dict) -> str | None:
    return config_mod.resolve_setting(args.cache_dir, config_mod.CACHE_ENV_VAR, cfg.get("cache_dir"), None)


def _seed(args, cfg: dict) -> int:
    value = config_mod.resolve_setting(args.seed, config_mod.SEED_ENV_VAR, cfg.get("seed"), 0)
    return int(value)


def cmd_spot(args) -> int:
    cfg = _file_config(args)
    cache_dir = _cache_dir(args, cfg)
    backend = config_mod.build_embedding_backend(cfg.get("embedding", {"kind": "synthetic"}), cache_dir=cache_dir)
    page = PageImage.load(args.image)
    grid_n = args.grid_n if args.grid_n is not None else int(cfg.get("grid_n", 6))
    alpha = args.alpha if args.alpha is not None else float(cfg.get("alpha", 0.5))
    color = _parse_color(args.color) if args.color else tuple(cfg.get("highlight_color", (0, 0, 255)))
    sconfig = SpotlightConfig(
        grid=GridSpec(grid_n),
        style=HighlightStyle(color=color, alpha=alpha),
        clean_mode=cfg.get("clean_mode", "rule_based"),
    )
    attended, selection, params = spotlight(page, args.query, backend, sconfig)
    out_path = Path(args.out) if args.out else Path(str(args.image) + ".attended.png")
    attended.image.save_png(out_path)
    if args.emit_debug:
        debug = {
            "selection": selection.to_dict(),
            "mask": {"sigma": params.sigma, "draw": params.draw, "center": {"xn": params.center.xn, "yn": params.center.yn}},
            "style": {"color": list(color), "alpha": alpha},
        }
        Path(str(out_path) + ".debug.json").write_text(json.dumps(debug, sort_keys=True, indent=1), encoding="utf-8")
    print(
        json.dumps(
            {
                "page_id": page.id,
                "i_star": selection.i_star,
                "j_star": selection.j_star,
                "p": selection.p,
                "sigma": params.sigma,
                "draw": params.draw,
                "out": str(out_path),
            },
            sort_keys=True,
        )
    )
    return EXIT_OK


def cmd_answer(args) -> int:
    cfg = _file_config(args)
    if not args.image:
        raise InputError("answer requires at least one --image")
    if "mllm" not in cfg:
        raise ConfigError("config has no 'mllm' backend block")
    backend = config_mod.build_mllm_backend(cfg["mllm"])
    cache_dir = _cache_dir(args, cfg)
    cache = FileCache(cache_dir, "answers") if cache_dir else None
    images = tuple(encode_image_b64(PageImage.load(p).pixels) for p in args.image)
    req = MllmRequest(
        prompt=build_prompt(args.question, args.mode),
        images=images,
        max_tokens=int(cfg.get("max_tokens", 256)),
        temperature=float(cfg.get("temperature", 0.0)),
    )
    result = ask(backend, req, cache=cache, retries=int(cfg.get("retries", 3)))
    if args.json:
        print(
            json.dumps(
                {
                    "raw": result.raw,
                    "normalized": list(result.normalized),
                    "latency_ms": result.latency_ms,
                    "cache_hit": result.cache_hit,
                },
                sort_keys=True,
            )
        )
    else:
        print(result.raw)
    return EXIT_OK


def _collect_images(specs: list[str]) -> list[Path]:
    paths: list[Path] = []
    for spec in specs:
        p = Path(spec)
        if p.is_dir():
            paths.extend(sorted(q for q in p.iterdir() if q.suffix.lower() in (".png", ".jpg", ".jpeg")))
        elif p.is_file():
            paths.append(p)
        else:
            raise InputError(f"image path not found: {p}")
    if not paths:
        raise InputError("no images found to index")
    return paths


def cmd_index(args) -> int:
    cfg = _file_config(args)
    cache_dir = _cache_dir(args, cfg)
    backend = config_mod.build_embedding_backend(cfg.get("embedding", {"kind": "synthetic"}), cache_dir=cache_dir)
    paths = _collect_images(args.images)
    pages = [PageImage.load(p) for p in paths]
    index = index_corpus(pages, backend)
    index.save(args.out)
    payload = {"pages": len(pages), "backend_id": index.backend_id, "out": str(args.out)}
    print(json.dumps(payload, sort_keys=True) if args.json else f"indexed {len(pages)} pages -> {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _file_config(args)
    records = load_dataset(args.dataset)
    run_config = RunConfig(
        setting=args.setting or cfg.get("setting", "closed"),
        pipeline=args.pipeline or cfg.get("pipeline", "baseline"),
        grid_n=args.grid_n if args.grid_n is not None else int(cfg.get("grid_n", 6)),
        alpha=args.alpha if args.alpha is not None else float(cfg.get("alpha", 0.5)),
        highlight_color=tuple(cfg.get("highlight_color", (0, 0, 255))),
        k=args.k if args.k is not None else int(cfg.get("k", 4)),
        m=args.m if args.m is not None else int(cfg.get("m", 0)),
        seed=_seed(args, cfg),
        clean_mode=cfg.get("clean_mode", "rule_based"),
        parallelism=args.parallelism if args.parallelism is not None else int(cfg.get("parallelism", 8)),
        max_tokens=int(cfg.get("max_tokens", 256)),
        temperature=float(cfg.get("temperature", 0.0)),
        retries=int(cfg.get("retries", 3)),
        cache_dir=_cache_dir(args, cfg),
        index_path=args.index_path or cfg.get("index_path"),
        embedding=cfg.get("embedding", {"kind": "synthetic"}),
        mllm=cfg.get("mllm", {}),
    )
    report = run_eval(records, run_config)
    write_report_files(report, args.out_dir)
    if args.json:
        print(
            json.dumps(
                {
                    "overall": report.scores.overall,
                    "cache_hit_ratio": report.cache_hit_ratio,
                    "out_dir": str(args.out_dir),
                },
                sort_keys=True,
            )
        )
    else:
        print(render_report(report, "markdown"))
    return EXIT_OK


def cmd_occlude(args) -> int:
    cfg = _file_config(args)
    if "mllm" not in cfg:
        raise ConfigError("config has no 'mllm' backend block")
    backend = config_mod.build_mllm_backend(cfg["mllm"])
    page = PageImage.load(args.image)
    occ_config = OcclusionConfig(
        window=args.window,
        stride=args.stride,
        fill=_parse_color(args.fill),
        smooth_sigma=args.smooth_sigma,
    )
    grid = occlusion_sweep(page, args.query, backend, occ_config, reference=args.reference)
    smoothed, overlay = smooth_heatmap(grid, occ_config.smooth_sigma, page=page)
    out_json = Path(args.out_prefix + ".json")
    out_png = Path(args.out_prefix + ".png")
    out_json.write_text(json.dumps(smoothed.to_dict(), sort_keys=True, indent=1), encoding="utf-8")
    overlay.save_png(out_png)
    row, col = smoothed.argmax_cell()
    payload = {
        "argmax_cell": [row, col],
        "p_orig": smoothed.p_orig,
        "out_json": str(out_json),
        "out_png": str(out_png),
    }
    print(json.dumps(payload, sort_keys=True) if args.json else f"argmax cell ({row},{col}), p_orig={smoothed.p_orig:.4f} -> {out_json}")
    return EXIT_OK


def cmd_report(args) -> int:
    report = EvalReport.load(args.report)
    rendered = render_report(report, args.format)
    if args.out:
        Path(args.out).write_text(rendered, encoding="utf-8")
    else:
        sys.stdout.write(rendered)
    return EXIT_OK


_COMMANDS = {
    "spot": cmd_spot,
    "answer": cmd_answer,
    "index": cmd_index,
    "eval": cmd_eval,
    "occlude": cmd_occlude,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SpotlightError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
