"""Command-line entry point.

Subcommands mirror the pipeline stages::

    meshforge --config cfg.json mesh
    meshforge --config cfg.json scale
    meshforge --config cfg.json register
    meshforge --config cfg.json merge
    meshforge --config cfg.json eval [--mesh out/merged.ply]
    meshforge --config cfg.json serve [--port 8776] [--static-dir DIR]
    meshforge gen-fixture --scene scale|pair|eval-diffuse|eval-view --dir DIR

Global flags: --config, --output-dir, --threads, --seed.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import __version__
from .errors import MeshforgeError
from .pipeline import (
    generate_eval_fixture,
    generate_pair_fixture,
    generate_scale_fixture,
    load_config,
    stage_eval,
    stage_merge,
    stage_mesh,
    stage_register,
    stage_scale,
)

DEFAULT_PORT = 8776


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meshforge",
                                     description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version",
                        version=f"meshforge {__version__}")
    parser.add_argument("--config", type=Path, help="pipeline config JSON")
    parser.add_argument("--output-dir", type=Path, default=None,
                        help="override the config's output directory")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads for extraction and rendering")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the evaluation sampling seed")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("mesh", help="extract per-fragment meshes")
    sub.add_parser("scale", help="estimate marker scale and rescale fragments")
    sub.add_parser("register", help="register fragment pairs from correspondences")
    sub.add_parser("merge", help="register, fuse, and re-extract the full mesh")

    p_eval = sub.add_parser("eval", help="rerender and score a mesh")
    p_eval.add_argument("--mesh", type=Path, default=None,
                        help="mesh to evaluate (default: out/merged.ply)")

    p_serve = sub.add_parser("serve", help="run the local picker service")
    p_serve.add_argument("--port", type=int,
                         default=int(os.environ.get("MESHFORGE_PORT", DEFAULT_PORT)))
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--static-dir", type=Path, default=None,
                         help="directory of picker UI assets served at /")

    p_fix = sub.add_parser("gen-fixture", help="write a synthetic test scene")
    p_fix.add_argument("--scene", required=True,
                       choices=["scale", "scale-grid", "pair", "eval-diffuse",
                                "eval-view"])
    p_fix.add_argument("--dir", type=Path, required=True)
    p_fix.add_argument("--rho", type=float, default=2.0,
                       help="metric/reconstruction scale ratio (scale scenes)")
    p_fix.add_argument("--resolution", type=int, default=None)
    return parser


def _config(args) -> "PipelineConfig":
    if args.config is None:
        raise MeshforgeError("--config is required for this command")
    cfg = load_config(args.config, output_dir=args.output_dir,
                      threads=max(1, args.threads))
    if args.seed is not None:
        from dataclasses import replace
        cfg = replace(cfg, eval=replace(cfg.eval, seed=args.seed))
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "mesh":
            for path in stage_mesh(_config(args)):
                print(path)
        elif args.command == "scale":
            for path in stage_scale(_config(args)):
                print(path)
        elif args.command == "register":
            for path in stage_register(_config(args)):
                print(path)
        elif args.command == "merge":
            print(stage_merge(_config(args)))
        elif args.command == "eval":
            print(stage_eval(_config(args),
                             str(args.mesh) if args.mesh else None))
        elif args.command == "serve":
            from .service import serve
            server = serve(_config(args), host=args.host, port=args.port,
                           static_dir=args.static_dir)
            host, port = server.server_address[:2]
            print(f"serving on http://{host}:{port}/ (Ctrl-C to stop)")
            try:
                server.serve_forever()
            except KeyboardInterrupt:
                server.shutdown()
        elif args.command == "gen-fixture":
            res = args.resolution
            if args.scene == "scale":
                path = generate_scale_fixture(args.dir, rho=args.rho,
                                              resolution=res or 48)
            elif args.scene == "scale-grid":
                path = generate_scale_fixture(args.dir, rho=args.rho, grid=True,
                                              resolution=res or 48)
            elif args.scene == "pair":
                path = generate_pair_fixture(args.dir, resolution=res or 64)
            elif args.scene == "eval-diffuse":
                path = generate_eval_fixture(args.dir, view_gain=0.0,
                                             resolution=res or 48)
            else:
                path = generate_eval_fixture(args.dir, view_gain=1.0,
                                             resolution=res or 48)
            print(path)
    except MeshforgeError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
