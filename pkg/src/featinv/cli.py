"""Command-line front end and reproduction harness.

Subcommands: fmi, random-style, style-transfer, inspect, fetch-weights,
replay. Config precedence: CLI flags > config file > built-in defaults; the
resolved config is echoed into every run's manifest so runs can be replayed
bit-exactly.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from PIL import Image

from . import __version__
from .backbone import Backbone, build_toy_backbone, load_backbone
from .codeops import sample_simplex, style_descriptor
from .errors import FeatinvError, UsageError, WeightsError
from .grids import GridSpec, contact_sheet
from .images import area_matched_size, load_image, save_image, to_pil
from .manifest import (RunManifest, check_input_hashes, environment_info,
                       file_sha256, load_manifest)
from .objectives import (DEFAULT_ALPHA, DEFAULT_BETA, DEFAULT_CONTENT_LAYER,
                         DEFAULT_FMI_LAYERS, DEFAULT_STYLE_LAYERS, PriorWeights,
                         build_fmi_objective, build_gram_objective,
                         build_pmci_objective, build_random_objective)
from .optimize import OptimizerConfig, optimize, write_trace_csv
from .weights import fetch_weights, resolve_weights_path

COMMON_DEFAULTS = {
    "weights": None,
    "size": 224,
    "iters": 300,
    "seed": 0,
    "tv_weight": 1e-4,
    "l2_weight": 0.0,
    "step_rule": "lbfgs",
    "lr": 1.0,
    "noise_sigma": 0.1,
    "tol": 1e-5,
    "tol_window": 10,
    "bound_pixels": True,
    "jobs": 1,
    "out": None,
}

COMMAND_DEFAULTS = {
    "fmi": {**COMMON_DEFAULTS, "image": None, "init": "noise",
            "layers": list(DEFAULT_FMI_LAYERS), "filters": [0, 1, 2, 3, 4]},
    "random-style": {**COMMON_DEFAULTS, "image": None, "init": "noise",
                     "layers": list(DEFAULT_STYLE_LAYERS), "seeds": [0, 1]},
    "style-transfer": {**COMMON_DEFAULTS, "content": None, "style": None,
                       "init": "content", "mode": "channel_sum",
                       "alpha": DEFAULT_ALPHA, "beta": DEFAULT_BETA,
                       "content_layer": DEFAULT_CONTENT_LAYER,
                       "style_layers": list(DEFAULT_STYLE_LAYERS),
                       "style_resize": "area", "normalize_style": False},
    "inspect": {"weights": None, "size": 224, "image": None, "layers": None,
                "out": None},
}


class _Parser(argparse.ArgumentParser):
    """argparse parser whose usage errors exit with code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_common(sp: argparse.ArgumentParser, init_default: str) -> None:
    sp.add_argument("--weights", help="weights file, or toy:SEED for the test backbone")
    sp.add_argument("--size", help="input size: N or HxW (default 224)")
    sp.add_argument("--iters", type=int, help="max optimization iterations")
    sp.add_argument("--init", choices=("noise", "content"),
                    help=f"initialization (default {init_default})")
    sp.add_argument("--seed", type=int, help="base seed for initialization")
    sp.add_argument("--tv-weight", type=float, dest="tv_weight")
    sp.add_argument("--l2-weight", type=float, dest="l2_weight")
    sp.add_argument("--step-rule", choices=("lbfgs", "fixed"), dest="step_rule")
    sp.add_argument("--lr", type=float)
    sp.add_argument("--noise-sigma", type=float, dest="noise_sigma")
    sp.add_argument("--tol", type=float)
    sp.add_argument("--tol-window", type=int, dest="tol_window")
    sp.add_argument("--bound-pixels", action=argparse.BooleanOptionalAction,
                    default=None, dest="bound_pixels")
    sp.add_argument("--jobs", type=int, help="run independent cells concurrently")
    sp.add_argument("--out", help="output directory")
    sp.add_argument("--config", help="JSON config file (flat key-value)")


def build_parser() -> _Parser:
    p = _Parser(prog="featinv",
                description="Reconstruct images from modified CNN activation codes.")
    p.add_argument("--version", action="version", version=f"featinv {__version__}")
    sub = p.add_subparsers(dest="command")

    sp = sub.add_parser("fmi", parents=[], help="invert single-filter codes")
    sp.add_argument("image")
    sp.add_argument("--layers", help="comma-separated relu layer names")
    sp.add_argument("--filters", help="comma-separated filter indices")
    _add_common(sp, "noise")

    sp = sub.add_parser("random-style", help="invert randomly reallocated codes")
    sp.add_argument("image")
    sp.add_argument("--layers", help="comma-separated relu layer names")
    sp.add_argument("--seeds", help="comma-separated reallocation seeds")
    _add_common(sp, "noise")

    sp = sub.add_parser("style-transfer", help="restyle a content image")
    sp.add_argument("content")
    sp.add_argument("style")
    sp.add_argument("--mode", choices=("channel_sum", "gram"))
    sp.add_argument("--alpha", type=float, help="content term weight")
    sp.add_argument("--beta", type=float, help="combined style term weight")
    sp.add_argument("--content-layer", dest="content_layer")
    sp.add_argument("--style-layers", dest="style_layers")
    sp.add_argument("--style-resize", dest="style_resize",
                    help="area (match content area), none, or HxW")
    sp.add_argument("--normalize-style", action=argparse.BooleanOptionalAction,
                    default=None, dest="normalize_style",
                    help="divide channel sums by spatial size")
    _add_common(sp, "content")

    sp = sub.add_parser("inspect", help="dump code shapes and channel sums")
    sp.add_argument("image")
    sp.add_argument("--layers", help="comma-separated layer names (default: all relu)")
    sp.add_argument("--weights")
    sp.add_argument("--size")
    sp.add_argument("--out", help="also write report.json and manifest.json here")
    sp.add_argument("--config")

    sp = sub.add_parser("fetch-weights", help="download and cache pinned weights")
    sp.add_argument("--dest", help="target file (default: package cache)")

    sp = sub.add_parser("replay", help="re-run a command from its manifest")
    sp.add_argument("manifest")
    sp.add_argument("--out", help="write outputs to a different directory")
    return p


# ---- config plumbing ----

def _csv(value, cast=str) -> list:
    try:
        if isinstance(value, (list, tuple)):
            return [cast(v) for v in value]
        items = [s.strip() for s in str(value).split(",") if s.strip()]
        return [cast(s) for s in items]
    except ValueError as exc:
        raise UsageError(f"bad list value {value!r}: {exc}") from exc


def _parse_size(value) -> int | list[int]:
    try:
        if isinstance(value, int):
            return value
        if isinstance(value, (list, tuple)):
            return [int(value[0]), int(value[1])]
        s = str(value).lower()
        if "x" in s:
            h, w = s.split("x", 1)
            return [int(h), int(w)]
        return int(s)
    except ValueError as exc:
        raise UsageError(f"size must be N or HxW, got {value!r}") from exc


def resolve_config(command: str, provided: dict, config_path: str | None) -> dict:
    cfg = dict(COMMAND_DEFAULTS[command])
    if config_path:
        path = Path(config_path)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            file_vals = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc
        unknown = set(file_vals) - set(cfg)
        if unknown:
            raise UsageError(f"unknown config key {sorted(unknown)[0]!r} for {command}")
        cfg.update(file_vals)
    cfg.update({k: v for k, v in provided.items() if v is not None})

    if "size" in cfg and cfg["size"] is not None:
        cfg["size"] = _parse_size(cfg["size"])
    if command in ("fmi", "random-style") and cfg.get("layers"):
        cfg["layers"] = _csv(cfg["layers"])
    if command == "fmi":
        cfg["filters"] = _csv(cfg["filters"], int)
        if not cfg["filters"]:
            raise UsageError("filter list is empty")
    if command == "random-style":
        cfg["seeds"] = _csv(cfg["seeds"], int)
        if not cfg["seeds"]:
            raise UsageError("seed list is empty")
    if command == "style-transfer":
        cfg["style_layers"] = _csv(cfg["style_layers"])
    if command == "inspect" and cfg.get("layers"):
        cfg["layers"] = _csv(cfg["layers"])
    return cfg


def _size_hw(cfg) -> tuple[int, int]:
    s = cfg["size"]
    return (s, s) if isinstance(s, int) else (s[0], s[1])


def _backbone_from_cfg(cfg: dict) -> Backbone:
    w = cfg.get("weights")
    if isinstance(w, str) and w.startswith("toy:"):
        return build_toy_backbone(int(w.split(":", 1)[1]))
    path = resolve_weights_path(w)
    cfg["weights"] = str(path)
    return load_backbone(path)


def _out_dir(cfg: dict, command: str) -> Path:
    out = cfg.get("out") or f"featinv_{command}_out"
    cfg["out"] = str(out)
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _optimizer_config(cfg: dict, seed: int) -> OptimizerConfig:
    return OptimizerConfig(
        max_iters=cfg["iters"], step_rule=cfg["step_rule"], lr=cfg["lr"],
        init_mode=cfg["init"], noise_sigma=cfg["noise_sigma"], seed=seed,
        tol=cfg["tol"], tol_window=cfg["tol_window"],
        bound_pixels=cfg["bound_pixels"])


def _priors(cfg: dict) -> PriorWeights:
    return PriorWeights(tv=cfg["tv_weight"], l2=cfg["l2_weight"])


def _run_cells(worker, cells, jobs: int) -> list:
    if jobs <= 1:
        return [worker(i, cell) for i, cell in enumerate(cells)]
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        futures = [ex.submit(worker, i, cell) for i, cell in enumerate(cells)]
        return [f.result() for f in futures]


def _cell_record(tag: dict, name: str, trace_name: str, result) -> dict:
    return {**tag, "output": name, "trace": trace_name,
            "converged": result.converged, "failure": result.failure,
            "initial_loss": result.initial_loss, "final_loss": result.final_loss,
            "per_term_final": result.trace[-1].parts,
            "iterations": result.trace[-1].iteration,
            "objective": result.manifest["objective"]}


# ---- commands ----

def cmd_fmi(cfg: dict) -> int:
    t0 = time.perf_counter()
    backbone = _backbone_from_cfg(cfg)
    out = _out_dir(cfg, "fmi")
    img = load_image(cfg["image"], _size_hw(cfg), dtype=backbone.dtype)
    layers, filters = cfg["layers"], cfg["filters"]
    for layer in layers:
        if backbone.spec(layer).kind != "relu":
            raise UsageError(f"layer {layer!r} is not a relu layer")
        for f in filters:
            backbone.check_channel(layer, f)
    cells = [(layer, f) for layer in layers for f in filters]
    priors = _priors(cfg)

    def worker(idx, cell):
        layer, f = cell
        obj = build_fmi_objective(backbone, img, layer, f, priors)
        ocfg = _optimizer_config(cfg, cfg["seed"] + idx)
        content = img if cfg["init"] == "content" else None
        return optimize(backbone, obj, ocfg, content=content,
                        size=(img.height, img.width))

    results = _run_cells(worker, cells, cfg["jobs"])
    manifest = RunManifest("fmi", cfg, weights_checksum=backbone.weights_checksum,
                           inputs={cfg["image"]: file_sha256(cfg["image"])},
                           environment=environment_info())
    tiles = []
    for idx, ((layer, f), res) in enumerate(zip(cells, results)):
        name, trace_name = f"fmi_{layer}_{f}.png", f"trace_{layer}_{f}.csv"
        save_image(res.image, out / name)
        write_trace_csv(res.trace, out / trace_name)
        tiles.append(to_pil(res.image))
        manifest.runs.append(_cell_record(
            {"layer": layer, "index": f, "init_seed": cfg["seed"] + idx},
            name, trace_name, res))
        manifest.outputs += [name, trace_name]
    sheet = contact_sheet(tiles, GridSpec(rows=list(layers),
                                          cols=[str(f) for f in filters]))
    sheet.save(out / "grid.png", format="PNG")
    manifest.outputs.append("grid.png")
    manifest.wall_time_s = time.perf_counter() - t0
    manifest.write(out)
    return 2 if any(r.failure for r in results) else 0


def cmd_random_style(cfg: dict) -> int:
    t0 = time.perf_counter()
    backbone = _backbone_from_cfg(cfg)
    out = _out_dir(cfg, "random-style")
    img = load_image(cfg["image"], _size_hw(cfg), dtype=backbone.dtype)
    layers, seeds = cfg["layers"], cfg["seeds"]
    for layer in layers:
        if backbone.spec(layer).kind != "relu":
            raise UsageError(f"layer {layer!r} is not a relu layer")
    cells = [(layer, s) for layer in layers for s in seeds]
    priors = _priors(cfg)

    def worker(idx, cell):
        layer, s = cell
        v = sample_simplex(backbone.channel_count(layer), s)
        obj = build_random_objective(backbone, img, layer, v, priors)
        ocfg = _optimizer_config(cfg, cfg["seed"] + idx)
        content = img if cfg["init"] == "content" else None
        return optimize(backbone, obj, ocfg, content=content,
                        size=(img.height, img.width))

    results = _run_cells(worker, cells, cfg["jobs"])
    manifest = RunManifest("random-style", cfg,
                           weights_checksum=backbone.weights_checksum,
                           inputs={cfg["image"]: file_sha256(cfg["image"])},
                           environment=environment_info())
    tiles = []
    for idx, ((layer, s), res) in enumerate(zip(cells, results)):
        name, trace_name = f"random-style_{layer}_{s}.png", f"trace_{layer}_{s}.csv"
        save_image(res.image, out / name)
        write_trace_csv(res.trace, out / trace_name)
        tiles.append(to_pil(res.image))
        manifest.runs.append(_cell_record(
            {"layer": layer, "seed": s, "init_seed": cfg["seed"] + idx},
            name, trace_name, res))
        manifest.outputs += [name, trace_name]
    sheet = contact_sheet(tiles, GridSpec(rows=list(layers),
                                          cols=[str(s) for s in seeds]))
    sheet.save(out / "grid.png", format="PNG")
    manifest.outputs.append("grid.png")
    manifest.wall_time_s = time.perf_counter() - t0
    manifest.write(out)
    return 2 if any(r.failure for r in results) else 0


def _load_style_image(cfg: dict, content_hw: tuple[int, int], dtype) -> "Image":
    policy = str(cfg["style_resize"])
    path = cfg["style"]
    if policy == "none":
        return load_image(path, dtype=dtype)
    if policy == "area":
        try:
            with Image.open(path) as im:
                sw, sh = im.size
        except (FileNotFoundError, OSError) as exc:
            raise UsageError(f"cannot read image {path}: {exc}") from exc
        return load_image(path, area_matched_size((sh, sw), content_hw), dtype=dtype)
    return load_image(path, _parse_size(policy), dtype=dtype)


def cmd_style_transfer(cfg: dict) -> int:
    t0 = time.perf_counter()
    backbone = _backbone_from_cfg(cfg)
    out = _out_dir(cfg, "style-transfer")
    content = load_image(cfg["content"], _size_hw(cfg), dtype=backbone.dtype)
    style = _load_style_image(cfg, (content.height, content.width), backbone.dtype)
    builder = build_pmci_objective if cfg["mode"] == "channel_sum" else build_gram_objective
    kwargs = {}
    if cfg["mode"] == "channel_sum":
        kwargs["normalize_style"] = bool(cfg["normalize_style"])
    obj = builder(backbone, content, style, content_layer=cfg["content_layer"],
                  style_layers=cfg["style_layers"], alpha=cfg["alpha"],
                  beta=cfg["beta"], priors=_priors(cfg), **kwargs)
    ocfg = _optimizer_config(cfg, cfg["seed"])
    res = optimize(backbone, obj, ocfg,
                   content=content if cfg["init"] == "content" else None,
                   size=(content.height, content.width))
    name = f"style-transfer_{cfg['content_layer']}_{cfg['seed']}.png"
    trace_name = f"trace_{cfg['content_layer']}_{cfg['seed']}.csv"
    save_image(res.image, out / name)
    write_trace_csv(res.trace, out / trace_name)
    manifest = RunManifest("style-transfer", cfg,
                           weights_checksum=backbone.weights_checksum,
                           inputs={cfg["content"]: file_sha256(cfg["content"]),
                                   cfg["style"]: file_sha256(cfg["style"])},
                           environment=environment_info())
    manifest.runs.append(_cell_record(
        {"mode": cfg["mode"], "content_layer": cfg["content_layer"],
         "style_layers": list(cfg["style_layers"]), "alpha": cfg["alpha"],
         "beta": cfg["beta"], "init_seed": cfg["seed"],
         "style_size": [style.height, style.width]},
        name, trace_name, res))
    manifest.outputs += [name, trace_name]
    manifest.wall_time_s = time.perf_counter() - t0
    manifest.write(out)
    return 2 if res.failure else 0


def cmd_inspect(cfg: dict) -> int:
    backbone = _backbone_from_cfg(cfg)
    img = load_image(cfg["image"], _size_hw(cfg), dtype=backbone.dtype)
    layers = cfg["layers"] or list(backbone.relu_layers)
    codes = backbone.extract_codes(img, layers)
    report = {"image": cfg["image"], "size": [img.height, img.width], "layers": {}}
    for name in layers:
        desc = style_descriptor(codes[name])
        report["layers"][name] = {
            "shape": list(codes[name].values.shape),
            "spatial_size": desc.spatial_size,
            "channel_sums": desc.sums.tolist(),
            "grand_total": float(desc.sums.sum()),
        }
    text = json.dumps(report, indent=2)
    if cfg.get("out"):
        out = _out_dir(cfg, "inspect")
        (out / "report.json").write_text(text + "\n")
        manifest = RunManifest("inspect", cfg,
                               weights_checksum=backbone.weights_checksum,
                               inputs={cfg["image"]: file_sha256(cfg["image"])},
                               outputs=["report.json"],
                               environment=environment_info())
        manifest.write(out)
    else:
        print(text)
    return 0


def cmd_fetch_weights(dest: str | None) -> int:
    try:
        path = fetch_weights(dest)
    except WeightsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(path)
    return 0


def cmd_replay(manifest_path: str, out: str | None) -> int:
    data = load_manifest(manifest_path)
    command, cfg = data["command"], dict(data["config"])
    if command not in ("fmi", "random-style", "style-transfer", "inspect"):
        raise UsageError(f"manifest command {command!r} cannot be replayed")
    check_input_hashes(data.get("inputs", {}))
    if out:
        cfg["out"] = out
    return dispatch(command, cfg)


def dispatch(command: str, cfg: dict) -> int:
    if command == "fmi":
        return cmd_fmi(cfg)
    if command == "random-style":
        return cmd_random_style(cfg)
    if command == "style-transfer":
        return cmd_style_transfer(cfg)
    if command == "inspect":
        return cmd_inspect(cfg)
    raise UsageError(f"unknown command {command!r}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help(sys.stderr)
        return 1
    try:
        if args.command == "fetch-weights":
            return cmd_fetch_weights(args.dest)
        if args.command == "replay":
            return cmd_replay(args.manifest, args.out)
        provided = {k: v for k, v in vars(args).items()
                    if k not in ("command", "config")}
        cfg = resolve_config(args.command, provided, args.config)
        return dispatch(args.command, cfg)
    except (UsageError, WeightsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FeatinvError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
