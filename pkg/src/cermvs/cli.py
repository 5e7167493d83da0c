"""Command-line client for the reconstruction service.

Each subcommand builds a request model and posts it to the service — by
default an in-process instance of the FastAPI app, or a remote server when
``--server`` is given. Exit codes: 0 success, 2 invalid input, 3 numerical
failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import os
import sys
from importlib import resources

EXIT_CODES = {"invalid-input": 2, "numerical-failure": 3, "io": 4}


class ServiceError(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


class Client:
    """Thin HTTP client; in-process ASGI transport unless a server is given."""

    def __init__(self, server: str = None):
        if server:
            import httpx

            self._client = httpx.Client(base_url=server, timeout=None)
        else:
            from fastapi.testclient import TestClient

            from .service import create_app

            self._client = TestClient(create_app(), raise_server_exceptions=False)

    def post(self, path: str, payload: dict) -> dict:
        response = self._client.post(path, json=payload)
        if response.status_code >= 400:
            try:
                body = response.json()
                kind = body.get("kind", "internal")
                message = body.get("message", body.get("detail", response.text))
            except ValueError:
                kind, message = "internal", response.text
            raise ServiceError(kind, str(message))
        return response.json()


def default_weights() -> str:
    """Path of the bundled tiny fitted checkpoint."""
    return str(resources.files("cermvs").joinpath("data/tiny_checkpoint/manifest.txt"))


def _threads(args) -> int:
    env = os.environ.get("CERMVS_THREADS")
    if env is not None:
        return int(env)
    return args.threads


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cermvs",
        description="Multiview stereo pipeline: depth, fuse, stitch, eval, synth, bench.",
    )
    parser.add_argument("--server", help="remote service URL (default: run in-process)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("depth", help="predict per-view disparity maps")
    p.add_argument("scene_dir")
    p.add_argument("--out", required=True, help="output directory for disp_XXXX.pfm")
    p.add_argument("--weights", default=None, help="weight manifest (default: bundled tiny checkpoint)")
    p.add_argument("--resolution", choices=("native", "2x"), default="native")
    p.add_argument("--views", type=int, default=None, help="neighbor views per reference")
    p.add_argument("--config", default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--scale-mode", dest="scale_mode",
                   choices=("gt-median-600", "sparse-min-400", "none"), default=None)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("fuse", help="multiresolution fusion of two disparity dirs")
    p.add_argument("--lr", required=True, help="native-resolution disparity dir")
    p.add_argument("--hr", required=True, help="2x-resolution disparity dir")
    p.add_argument("--out", required=True)
    p.add_argument("--t", type=float, default=None, help="relative depth threshold")
    p.add_argument("--config", default=None)

    p = sub.add_parser("stitch", help="consistency-filter and fuse into a point cloud")
    p.add_argument("scene_dir")
    p.add_argument("--depth", required=True, help="disparity dir to stitch")
    p.add_argument("--out", required=True, help="output PLY path")
    p.add_argument("--p", type=float, default=None, help="target pass percentage")
    p.add_argument("--t1", type=float, default=None, help="base pixel threshold")
    p.add_argument("--t2", type=float, default=None, help="base relative depth threshold")
    p.add_argument("--nmin", type=int, default=None, help="min consistent neighbors")
    p.add_argument("--resolution", choices=("native", "half"), default=None)
    p.add_argument("--config", default=None)

    p = sub.add_parser("eval", help="point-cloud distance metrics")
    p.add_argument("recon_ply")
    p.add_argument("gt_ply")
    p.add_argument("--tau", type=float, required=True, help="precision/recall threshold (mm)")
    p.add_argument("--max-dist", type=float, default=20.0)

    p = sub.add_parser("synth", help="generate a synthetic scene directory")
    p.add_argument("spec", help="scene spec file (key=value)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("bench", help="cascaded vs non-cascaded cost-volume memory")
    p.add_argument("--config", default=None)
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--height", type=int, default=None)
    p.add_argument("--views", type=int, default=None)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8731)
    return parser


def _run_depth(client, args):
    result = client.post(
        "/v1/depth",
        {
            "scene_dir": args.scene_dir,
            "weights": args.weights or default_weights(),
            "out_dir": args.out,
            "resolution": args.resolution,
            "views": args.views,
            "config": args.config,
            "threads": _threads(args),
            "scale_mode": args.scale_mode,
            "seed": args.seed,
        },
    )
    for vid in sorted(result["outputs"], key=int):
        factor = result["scale_factors"].get(str(vid), 1.0)
        print(f"view {vid}: {result['outputs'][vid]} (scale {factor:g})")
    return 0


def _run_fuse(client, args):
    result = client.post(
        "/v1/fuse",
        {"lr_dir": args.lr, "hr_dir": args.hr, "out_dir": args.out,
         "threshold": args.t, "config": args.config},
    )
    for vid in sorted(result["outputs"], key=int):
        print(f"view {vid}: {result['outputs'][vid]}")
    return 0


def _run_stitch(client, args):
    result = client.post(
        "/v1/stitch",
        {
            "scene_dir": args.scene_dir,
            "depth_dir": args.depth,
            "out_ply": args.out,
            "pass_percent": args.p,
            "pixel_threshold": args.t1,
            "depth_threshold": args.t2,
            "min_consistent": args.nmin,
            "stitch_resolution": args.resolution,
            "config": args.config,
        },
    )
    print(
        f"{result['ply']}: {result['num_points']} points "
        f"(k={result['k']:.6g}, pass={100 * result['pass_fraction']:.2f}%"
        + (", FLAGGED" if result["flagged"] else "")
        + ")"
    )
    return 0


def _run_eval(client, args):
    result = client.post(
        "/v1/eval",
        {"recon_ply": args.recon_ply, "gt_ply": args.gt_ply,
         "tau": args.tau, "max_dist": args.max_dist},
    )
    for key in ("accuracy", "completeness", "overall", "precision", "recall", "f1"):
        print(f"{key} {result[key]:.6f}")
    return 0


def _run_synth(client, args):
    if not os.path.isfile(args.spec):
        raise ServiceError("io", f"no scene spec at {args.spec}")
    with open(args.spec) as f:
        text = f.read()
    result = client.post("/v1/synth", {"out_dir": args.out, "spec_text": text})
    print(f"{result['scene_dir']}: {result['views']} views")
    return 0


def _run_bench(client, args):
    result = client.post(
        "/v1/bench",
        {"config": args.config, "width": args.width,
         "height": args.height, "views": args.views},
    )
    print(f"cascaded_elems {result['cascaded_elems']}")
    print(f"non_cascaded_elems {result['non_cascaded_elems']}")
    print(f"ratio {result['ratio']:.6g}")
    print(f"cascaded_bytes {result['cascaded_bytes']}")
    print(f"non_cascaded_bytes {result['non_cascaded_bytes']}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        import uvicorn

        from .service import create_app

        uvicorn.run(create_app(), host=args.host, port=args.port)
        return 0
    try:
        client = Client(args.server)
        handler = {
            "depth": _run_depth,
            "fuse": _run_fuse,
            "stitch": _run_stitch,
            "eval": _run_eval,
            "synth": _run_synth,
            "bench": _run_bench,
        }[args.command]
        return handler(client, args)
    except ServiceError as exc:
        print(f"error ({exc.kind}): {exc}", file=sys.stderr)
        return EXIT_CODES.get(exc.kind, 1)


if __name__ == "__main__":
    sys.exit(main())
