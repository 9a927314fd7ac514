"""Command-line frontend: a thin client of the voxrecon service.

Every subcommand builds a request, sends it to the service (an in-process
ASGI app by default, or a remote server via --server), and renders the
response. Exit codes: 0 ok, 2 config error, 3 numeric failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import sys
from pathlib import Path

import httpx

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4

_KIND_TO_EXIT = {"config": EXIT_CONFIG, "numeric": EXIT_NUMERIC, "io": EXIT_IO}


def _call_inprocess(method: str, url: str, payload):
    from .service import create_app

    async def go():
        transport = httpx.ASGITransport(app=create_app())
        async with httpx.AsyncClient(
            transport=transport, base_url="http://voxrecon", timeout=None
        ) as client:
            return await client.request(method, url, json=payload)

    return asyncio.run(go())


def _call(args, method: str, url: str, payload=None):
    if args.server:
        try:
            with httpx.Client(base_url=args.server, timeout=None) as client:
                return client.request(method, url, json=payload)
        except httpx.HTTPError as exc:
            print(f"error: cannot reach {args.server}: {exc}", file=sys.stderr)
            raise SystemExit(EXIT_IO)
    return _call_inprocess(method, url, payload)


def _finish(resp, *, key_value=False) -> int:
    if resp.status_code == 200:
        body = resp.json()
        if key_value and "metrics" in body:
            for k, v in body["metrics"].items():
                print(f"{k}={v:.6g}")
            print(json.dumps(body))
        else:
            if isinstance(body, dict) and body.get("warning"):
                print(f"warning: {body['warning']}", file=sys.stderr)
            print(json.dumps(body, indent=2))
        return EXIT_OK
    try:
        detail = resp.json().get("detail")
    except ValueError:
        detail = resp.text
    if isinstance(detail, dict) and "kind" in detail:
        print(f"error ({detail['kind']}): {detail['message']}", file=sys.stderr)
        return _KIND_TO_EXIT.get(detail["kind"], EXIT_IO)
    # pydantic validation errors name the offending field
    if isinstance(detail, list):
        for item in detail:
            loc = ".".join(str(p) for p in item.get("loc", []) if p != "body")
            print(f"error (config): {loc}: {item.get('msg')}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"error: {detail}", file=sys.stderr)
    return EXIT_CONFIG if resp.status_code in (400, 422) else EXIT_IO


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        elif v is not None:
            out[k] = v
    return out


def _with_config_file(args, payload: dict) -> dict:
    if not args.config:
        return {k: v for k, v in payload.items() if v is not None}
    try:
        with open(args.config, "r", encoding="utf-8") as f:
            base = json.load(f)
    except FileNotFoundError:
        print(f"error (config): config file not found: {args.config}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)
    except json.JSONDecodeError as exc:
        print(f"error (config): bad config file: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)
    return _merge(base, payload)


def _vec(text: str):
    return tuple(float(x) for x in text.split(","))


def _abs(path):
    """Resolve CLI path arguments so remote servers see absolute paths."""
    return None if path is None else str(Path(path).absolute())


def _grid_payload(args) -> dict:
    grid = {
        "voxel_size": args.voxel_size,
        "truncation": args.truncation,
        "max_depth": args.max_depth,
        "center_depth": args.center_depth,
    }
    if args.dims is not None:
        d = [int(x) for x in args.dims.split(",")]
        grid["dims"] = d * 3 if len(d) == 1 else d
    if args.origin is not None:
        grid["origin"] = _vec(args.origin)
    return {k: v for k, v in grid.items() if v is not None}


def _add_grid_flags(p):
    p.add_argument("--voxel-size", dest="voxel_size", type=float, help="voxel edge in meters")
    p.add_argument("--dims", help="grid dimensions, e.g. 96 or 64,64,48")
    p.add_argument("--truncation", type=float, help="SDF truncation band in meters")
    p.add_argument("--max-depth", dest="max_depth", type=float, help="max fusion depth in meters")
    p.add_argument("--origin", help="grid origin x,y,z (auto-placed when omitted)")
    p.add_argument("--center-depth", dest="center_depth", type=float)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="voxrecon", description=__doc__)
    parser.add_argument("--server", help="remote service URL (default: run in-process)")
    parser.add_argument("--config", help="JSON config file; flags override its values")
    parser.add_argument(
        "--threads",
        type=int,
        default=0,
        help="reserved; computation is vectorized and thread-count invariant",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a posed orbit of a synthetic scene")
    p.add_argument("scene_file")
    p.add_argument("out_dir")
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--radius", type=float, default=None)
    p.add_argument("--center", default=None, help="orbit center x,y,z")
    p.add_argument("--height", type=float, default=None)
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--image-height", dest="image_height", type=int, default=None)
    p.add_argument("--fov", dest="fov_deg", type=float, default=None)

    p = sub.add_parser("fuse", help="fuse ground-truth depth into a TSDF checkpoint")
    p.add_argument("views_dir")
    p.add_argument("out_checkpoint")
    _add_grid_flags(p)

    p = sub.add_parser("optimize", help="gradient descent on voxel SDF values")
    p.add_argument("views_dir")
    p.add_argument("out_checkpoint")
    p.add_argument("out_csv")
    p.add_argument("--init", choices=("constant", "tsdf", "checkpoint"), default=None)
    p.add_argument("--init-checkpoint", dest="init_checkpoint", default=None)
    p.add_argument("--init-value", dest="init_value", type=float, default=None)
    _add_grid_flags(p)
    p.add_argument("--lr", dest="learning_rate", type=float, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--momentum", type=float, default=None)
    p.add_argument("--weights", default=None, help="sdf,plane,depth,nerf")
    p.add_argument("--no-photometric", action="store_true")
    p.add_argument("--no-coplanar", action="store_true")
    p.add_argument("--huber", dest="huber_delta", type=float, default=None)
    p.add_argument("--min-points", dest="min_points", type=int, default=None)
    p.add_argument("--plane-eps", dest="plane_eps", type=float, default=None)
    p.add_argument("--freeze-plane", action="store_true")
    p.add_argument("--seg-k", dest="seg_k", type=float, default=None)
    p.add_argument("--seg-min-size", dest="seg_min_size", type=int, default=None)
    p.add_argument("--seg-sigma", dest="seg_sigma", type=float, default=None)
    p.add_argument("--inter-fragment", action="store_true")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--rotation-deg", dest="rotation_deg", type=float, default=None)
    p.add_argument("--translation-m", dest="translation_m", type=float, default=None)
    p.add_argument("--views-per-fragment", dest="views_per_fragment", type=int, default=None)

    p = sub.add_parser("mesh", help="marching cubes on a checkpoint, writes PLY")
    p.add_argument("checkpoint")
    p.add_argument("out_ply")
    p.add_argument("--iso", type=float, default=None)

    p = sub.add_parser("render-depth", help="z-buffer depth maps of a mesh or checkpoint")
    p.add_argument("source", help="PLY mesh or voxel checkpoint")
    p.add_argument("trajectory")
    p.add_argument("out_dir")

    p = sub.add_parser("eval", help="depth or mesh metrics against ground truth")
    p.add_argument("pred")
    p.add_argument("gt")
    p.add_argument("--kind", choices=("depth", "mesh"), required=True)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--samples", dest="n_samples", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("config", help="print the default configuration")

    p = sub.add_parser("write-scene", help="write the demo scene description file")
    p.add_argument("out_file")
    p.add_argument("--seed", type=int, default=7)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)

    args = parser.parse_args(argv)

    if args.command == "serve":
        import uvicorn

        from .service import create_app

        uvicorn.run(create_app(), host=args.host, port=args.port)
        return EXIT_OK

    if args.command == "write-scene":
        from .synth import demo_scene, save_scene

        save_scene(demo_scene(args.seed), args.out_file)
        print(json.dumps({"scene_file": args.out_file}))
        return EXIT_OK

    if args.command == "config":
        resp = _call(args, "GET", "/config/defaults")
        return _finish(resp)

    if args.command == "synth":
        payload = _with_config_file(
            args,
            {
                "scene_file": _abs(args.scene_file),
                "out_dir": _abs(args.out_dir),
                "n_frames": args.frames,
                "radius": args.radius,
                "center": _vec(args.center) if args.center else None,
                "height": args.height,
                "width": args.width,
                "image_height": args.image_height,
                "fov_deg": args.fov_deg,
            },
        )
        return _finish(_call(args, "POST", "/synth", payload))

    if args.command == "fuse":
        payload = _with_config_file(
            args,
            {
                "views_dir": _abs(args.views_dir),
                "out_checkpoint": _abs(args.out_checkpoint),
                "grid": _grid_payload(args),
            },
        )
        return _finish(_call(args, "POST", "/fuse", payload))

    if args.command == "optimize":
        optim = {
            "learning_rate": args.learning_rate,
            "iterations": args.iterations,
            "momentum": args.momentum,
            "huber_delta": args.huber_delta,
            "min_points": args.min_points,
            "plane_eps": args.plane_eps,
            "seg_k": args.seg_k,
            "seg_min_size": args.seg_min_size,
            "seg_sigma": args.seg_sigma,
            "seed": args.seed,
        }
        optim = {k: v for k, v in optim.items() if v is not None}
        if args.weights:
            s, pl, d, n = _vec(args.weights)
            optim["weights"] = {"sdf": s, "plane": pl, "depth": d, "nerf": n}
        if args.no_photometric:
            optim["use_photometric"] = False
        if args.no_coplanar:
            optim["use_coplanar"] = False
        if args.freeze_plane:
            optim["freeze_plane"] = True
        if args.inter_fragment:
            optim["inter_fragment"] = True
        payload = _with_config_file(
            args,
            {
                "views_dir": _abs(args.views_dir),
                "out_checkpoint": _abs(args.out_checkpoint),
                "out_csv": _abs(args.out_csv),
                "init": args.init,
                "init_checkpoint": _abs(args.init_checkpoint),
                "init_value": args.init_value,
                "grid": _grid_payload(args),
                "optim": optim or None,
                "rotation_deg": args.rotation_deg,
                "translation_m": args.translation_m,
                "views_per_fragment": args.views_per_fragment,
            },
        )
        return _finish(_call(args, "POST", "/optimize", payload))

    if args.command == "mesh":
        payload = _with_config_file(
            args,
            {"checkpoint": _abs(args.checkpoint), "out_ply": _abs(args.out_ply), "iso": args.iso},
        )
        return _finish(_call(args, "POST", "/mesh", payload))

    if args.command == "render-depth":
        payload = _with_config_file(
            args,
            {"source": _abs(args.source), "trajectory": _abs(args.trajectory), "out_dir": _abs(args.out_dir)},
        )
        return _finish(_call(args, "POST", "/render-depth", payload))

    if args.command == "eval":
        payload = _with_config_file(
            args,
            {
                "pred": _abs(args.pred),
                "gt": _abs(args.gt),
                "kind": args.kind,
                "threshold": args.threshold,
                "n_samples": args.n_samples,
                "seed": args.seed,
            },
        )
        return _finish(_call(args, "POST", "/eval", payload), key_value=True)

    parser.error(f"unknown command {args.command}")
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
