"""Local HTTP service mediating the operator's point-picking workflow.

Single in-memory session over the scaled fragments of one pipeline config;
everything it persists goes through the same files the CLI reads and
writes, so a UI-driven merge is byte-identical to the CLI path.

Endpoints (JSON unless noted):

* ``GET  /api/fragments``            fragment ids with vertex/face counts
* ``GET  /api/fragments/{id}/mesh``  fragment as binary mesh (PLY)
* ``POST /api/correspondences``      validate + store a correspondence set
* ``POST /api/register``             run registration, return transform,
  rmse, per-iteration trace (409 while another job runs)
* ``GET  /api/preview``              current pair transform for overlay
* ``POST /api/merge``                full merge, returns the result mesh id
* ``GET  /api/result/{id}``          merged mesh (PLY)

Static picker assets are served at ``/`` from ``static_dir`` when given.
Invariant violations return 400 with a message naming the violated rule.
"""
from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import MeshforgeError
from .formats import load_mesh_ply, save_correspondences
from .pipeline import PipelineConfig, stage_merge, stage_register
from .registration import CorrespondenceSet

MIN_PAIRS_RULE = ("the operator selects at least three matching points on "
                  "each partial object mesh")

_MIME = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".mjs": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".json": "application/json",
    ".png": "image/png",
    ".svg": "image/svg+xml",
    ".ico": "image/x-icon",
}


class Session:
    """Mutable service state: fragments, picks, last registration, result."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.out = Path(cfg.output_dir)
        self.fragments = {}
        for bundle in cfg.bundles:
            path = self.out / f"{bundle.id}_scaled.ply"
            if not path.exists():
                raise MeshforgeError(
                    f"fragment not ready, run the scale stage first: {path}")
            mesh, _ = load_mesh_ply(path)
            self.fragments[bundle.id] = (path, mesh)
        self.correspondence_files: dict[tuple[str, str], Path] = {}
        self.registration: Optional[dict] = None
        self.merged: dict[str, Path] = {}
        self.job_lock = threading.Lock()
        self.state_lock = threading.Lock()

    def store_correspondences(self, payload: dict) -> dict:
        try:
            pairs = payload["pairs"]
            src = np.asarray([p["src"] for p in pairs], dtype=np.float64)
            dst = np.asarray([p["dst"] for p in pairs], dtype=np.float64)
            c = CorrespondenceSet(str(payload["source_id"]),
                                  str(payload["target_id"]),
                                  src.reshape(-1, 3), dst.reshape(-1, 3))
        except (KeyError, TypeError, ValueError) as e:
            raise BadRequest(f"malformed correspondence payload: {e}") from e
        if len(c) < 3:
            raise BadRequest(
                f"got {len(c)} pairs; {MIN_PAIRS_RULE}")
        for fid in (c.source_id, c.target_id):
            if fid not in self.fragments:
                raise BadRequest(f"unknown fragment id {fid!r}")
        dest = self.out / f"corr_{c.source_id}_{c.target_id}.json"
        save_correspondences(dest, c)
        with self.state_lock:
            self.correspondence_files[(c.source_id, c.target_id)] = dest
        return {"stored": str(dest), "pairs": len(c)}

    def _session_config(self) -> PipelineConfig:
        from dataclasses import replace
        with self.state_lock:
            extra = tuple(self.correspondence_files.values())
        base = {Path(p).resolve() for p in self.cfg.correspondence_paths}
        merged_paths = tuple(self.cfg.correspondence_paths) + tuple(
            p for p in extra if Path(p).resolve() not in base)
        return replace(self.cfg, correspondence_paths=merged_paths)

    def run_register(self, payload: dict) -> dict:
        source_id = str(payload.get("source_id", ""))
        target_id = str(payload.get("target_id", ""))
        key = (source_id, target_id)
        with self.state_lock:
            known = dict(self.correspondence_files)
        if key not in known:
            raise BadRequest(
                f"no stored correspondences for {source_id!r} -> {target_id!r}")
        cfg = self._session_config()
        written = stage_register(cfg)
        wanted = Path(cfg.output_dir) / f"{source_id}_to_{target_id}_transform.json"
        if wanted not in written:
            raise BadRequest(f"registration did not produce {wanted.name}")
        result = json.loads(wanted.read_text())
        with self.state_lock:
            self.registration = result
        return result

    def preview(self) -> dict:
        with self.state_lock:
            if self.registration is None:
                raise BadRequest("no registration has been run yet")
            reg = dict(self.registration)
        return {
            "source_id": reg["source_id"],
            "target_id": reg["target_id"],
            "transform": reg["transform"],
            "rmse": reg["rmse"],
            "iterations": reg["iterations"],
        }

    def run_merge(self) -> dict:
        cfg = self._session_config()
        dest = stage_merge(cfg)
        with self.state_lock:
            self.merged["merged"] = dest
        return {"mesh_id": "merged"}

    def result_path(self, mesh_id: str) -> Path:
        with self.state_lock:
            path = self.merged.get(mesh_id)
        if path is None or not path.exists():
            raise NotFound(f"no merged result {mesh_id!r}")
        return path


class BadRequest(MeshforgeError):
    pass


class NotFound(MeshforgeError):
    pass


class _Handler(BaseHTTPRequestHandler):
    session: Session
    static_dir: Optional[Path] = None

    # Quiet request logging; tests assert on payloads, not logs.
    def log_message(self, fmt, *args):
        pass

    def _send_json(self, obj, status=200):
        body = json.dumps(obj).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_bytes(self, data: bytes, content_type: str, status=200):
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _error(self, status: int, message: str):
        self._send_json({"error": message}, status=status)

    def _read_body(self) -> dict:
        length = int(self.headers.get("Content-Length", "0"))
        raw = self.rfile.read(length) if length else b"{}"
        try:
            return json.loads(raw.decode("utf-8"))
        except json.JSONDecodeError as e:
            raise BadRequest(f"invalid JSON body: {e}") from e

    def do_GET(self):
        try:
            parts = [p for p in self.path.split("?")[0].split("/") if p]
            if parts[:1] == ["api"]:
                self._api_get(parts[1:])
            else:
                self._static(parts)
        except NotFound as e:
            self._error(404, str(e))
        except BadRequest as e:
            self._error(400, str(e))
        except MeshforgeError as e:
            self._error(500, str(e))

    def do_POST(self):
        try:
            parts = [p for p in self.path.split("?")[0].split("/") if p]
            if parts[:1] != ["api"]:
                raise NotFound(f"no POST route {self.path!r}")
            self._api_post(parts[1:])
        except NotFound as e:
            self._error(404, str(e))
        except BadRequest as e:
            self._error(400, str(e))
        except MeshforgeError as e:
            self._error(500, str(e))

    def _api_get(self, parts):
        s = self.session
        if parts == ["fragments"]:
            listing = [{"id": fid, "vertices": len(mesh.vertices),
                        "faces": len(mesh.faces)}
                       for fid, (_, mesh) in sorted(s.fragments.items())]
            self._send_json(listing)
        elif len(parts) == 3 and parts[0] == "fragments" and parts[2] == "mesh":
            fid = parts[1]
            if fid not in s.fragments:
                raise NotFound(f"unknown fragment {fid!r}")
            self._send_bytes(s.fragments[fid][0].read_bytes(),
                             "application/octet-stream")
        elif parts == ["preview"]:
            self._send_json(s.preview())
        elif len(parts) == 2 and parts[0] == "result":
            self._send_bytes(s.result_path(parts[1]).read_bytes(),
                             "application/octet-stream")
        else:
            raise NotFound(f"no GET route /{'/'.join(parts)}")

    def _api_post(self, parts):
        s = self.session
        if parts == ["correspondences"]:
            self._send_json(s.store_correspondences(self._read_body()))
        elif parts == ["register"]:
            body = self._read_body()
            if not s.job_lock.acquire(blocking=False):
                self._error(409, "a registration job is already running")
                return
            try:
                self._send_json(s.run_register(body))
            finally:
                s.job_lock.release()
        elif parts == ["merge"]:
            if not s.job_lock.acquire(blocking=False):
                self._error(409, "a registration job is already running")
                return
            try:
                self._send_json(s.run_merge())
            finally:
                s.job_lock.release()
        else:
            raise NotFound(f"no POST route /{'/'.join(parts)}")

    def _static(self, parts):
        if self.static_dir is None:
            raise NotFound("no static assets configured; use the /api routes")
        rel = Path(*parts) if parts else Path("index.html")
        path = (self.static_dir / rel).resolve()
        if not str(path).startswith(str(self.static_dir.resolve())):
            raise NotFound("path escapes the static directory")
        if path.is_dir():
            path = path / "index.html"
        if not path.exists():
            raise NotFound(f"no such asset: /{rel}")
        mime = _MIME.get(path.suffix, "application/octet-stream")
        self._send_bytes(path.read_bytes(), mime)


def serve(cfg: PipelineConfig, host: str = "127.0.0.1", port: int = 0,
          static_dir: Optional[Path] = None) -> ThreadingHTTPServer:
    """Bind the picker service; caller runs ``serve_forever``.

    Binds localhost by default. ``port=0`` picks a free port (tests).
    """
    session = Session(cfg)
    if static_dir is None:
        candidate = Path(__file__).resolve().parents[2] / "frontend" / "dist"
        if candidate.exists():
            static_dir = candidate
    handler = type("BoundHandler", (_Handler,), {
        "session": session,
        "static_dir": Path(static_dir) if static_dir else None,
    })
    server = ThreadingHTTPServer((host, port), handler)
    server.session = session  # type: ignore[attr-defined]
    return server
