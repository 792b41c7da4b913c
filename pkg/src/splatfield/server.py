"""HTTP serve mode driving the interactive viewer.

Endpoints (JSON in, JSON or PNG out; every response carries a request id):

    GET  /meta    scene dimensions, config, query names, default camera
    POST /render  {camera, width, height} -> PNG color render
    POST /query   {camera, width, height, query, level, window}
                  -> JSON with stage timings, chosen level, score stats,
                     localization point, and a base64 PNG overlay

The scene and query set are immutable; request handling is threaded and
per-request buffers are private, so concurrent requests behave exactly like
serial ones. Overlays use a fixed turbo-style polynomial color ramp with
score-mapped alpha so screenshots are comparable across runs.
"""

from __future__ import annotations

import base64
import io as _io
import json
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
from PIL import Image

from .core import Scene
from .errors import SplatfieldError, ValidationError
from .io import QuerySet
from .projection import CameraPose
from .query import QueryEmbedding, segment
from .rasterizer import render_dense
from .sparse_splat import query_pipeline

DEFAULT_PORT = 7878
DEFAULT_SIZE_CAP = 512  # max pixels per image dimension


@dataclass
class ServeSession:
    """Immutable state shared by all requests."""

    scene: Scene
    query_set: QuerySet
    size_cap: int = DEFAULT_SIZE_CAP
    default_pose: CameraPose | None = None
    overlay_strength: float = 0.85
    workers: int = 1  # tile workers per render
    _counter: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock)

    def __post_init__(self):
        self.scene.validate()
        if self.query_set.dim != self.scene.config.D:
            raise ValidationError(
                f"query set dimension {self.query_set.dim} != scene D {self.scene.config.D}"
            )

    def next_request_id(self) -> str:
        with self._lock:
            self._counter += 1
            return f"req-{self._counter:06d}"


def turbo_color(x: np.ndarray) -> np.ndarray:
    """Turbo-style ramp: polynomial fit, input in [0, 1], output (..., 3) in [0, 1]."""
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    r = 0.13572138 + x * (4.61539260 + x * (-42.66032258 + x * (132.13108234 + x * (-152.94239396 + x * 59.28637943))))
    g = 0.09140261 + x * (2.19418839 + x * (4.84296658 + x * (-14.18503333 + x * (4.27729857 + x * 2.82956604))))
    b = 0.10667330 + x * (12.64194608 + x * (-60.58204836 + x * (110.36276771 + x * (-89.90310912 + x * 27.34824973))))
    return np.clip(np.stack([r, g, b], axis=-1), 0.0, 1.0)


def _to_png_bytes(rgb: np.ndarray) -> bytes:
    img = Image.fromarray((np.clip(rgb, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8), mode="RGB")
    buf = _io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def render_color_png(session: ServeSession, pose: CameraPose) -> bytes:
    cam = pose.to_camera()
    fb = render_dense(session.scene, cam, "color", workers=session.workers)
    return _to_png_bytes(fb.data)


def render_query_overlay(session: ServeSession, pose: CameraPose, result) -> bytes:
    """Relevancy heat map alpha-blended over the color render."""
    cam = pose.to_camera()
    color = render_dense(session.scene, cam, "color", workers=session.workers).data
    score = result.chosen.data
    lo, hi = float(score.min()), float(score.max())
    norm = (score - lo) / (hi - lo) if hi > lo else np.zeros_like(score)
    heat = turbo_color(norm)
    alpha = (norm * session.overlay_strength)[:, :, None]
    return _to_png_bytes(color * (1.0 - alpha) + heat * alpha)


class _RequestError(Exception):
    def __init__(self, status: int, message: str, extra: dict | None = None):
        super().__init__(message)
        self.status = status
        self.message = message
        self.extra = extra or {}


def _parse_pose(doc: dict, session: ServeSession) -> CameraPose:
    width = int(doc.get("width", 64))
    height = int(doc.get("height", 64))
    if width < 1 or height < 1:
        raise _RequestError(400, "width and height must be >= 1")
    if width > session.size_cap or height > session.size_cap:
        raise _RequestError(
            413, f"requested {width}x{height} exceeds the size cap of {session.size_cap}"
        )
    cam_doc = doc.get("camera")
    if cam_doc is None:
        raise _RequestError(400, "missing 'camera'")
    try:
        pose = CameraPose.from_dict({**cam_doc, "width": width, "height": height})
    except (ValidationError, AttributeError, TypeError) as exc:
        raise _RequestError(400, f"bad camera: {exc}") from exc
    return pose


def _resolve_query(doc: dict, session: ServeSession) -> QueryEmbedding:
    q = doc.get("query")
    if isinstance(q, str):
        try:
            return session.query_set.get(q)
        except ValidationError:
            raise _RequestError(
                404,
                f"unknown query {q!r}",
                {"available": session.query_set.names()},
            ) from None
    if isinstance(q, list):
        vec = np.asarray(q, dtype=np.float64)
        if vec.shape != (session.scene.config.D,):
            raise _RequestError(
                400, f"query vector must have {session.scene.config.D} entries"
            )
        return QueryEmbedding(name="<vector>", vector=vec)
    raise _RequestError(400, "'query' must be a name or a list of floats")


def handle_meta(session: ServeSession) -> dict:
    cfg = session.scene.config
    pose = session.default_pose
    return {
        "gaussians": session.scene.num_gaussians,
        "levels": cfg.num_levels,
        "L": cfg.L,
        "K": cfg.K,
        "D": cfg.D,
        "size_cap": session.size_cap,
        "queries": session.query_set.names(),
        "default_camera": pose.to_dict() if pose else None,
    }


def handle_query(session: ServeSession, doc: dict) -> dict:
    pose = _parse_pose(doc, session)
    query = _resolve_query(doc, session)
    level_raw = doc.get("level", "auto")
    level = None
    if level_raw != "auto":
        try:
            level = int(level_raw)
        except (TypeError, ValueError):
            raise _RequestError(400, "'level' must be 'auto' or an integer") from None
        if not 0 <= level < session.scene.config.num_levels:
            raise _RequestError(400, f"level {level} out of range")
    window = int(doc.get("window", 11))
    try:
        result = query_pipeline(
            session.scene, pose.to_camera(), query, session.query_set.canonicals,
            window=window, level=level, workers=session.workers,
        )
    except ValidationError as exc:
        raise _RequestError(400, str(exc)) from exc
    seg = segment(result.chosen)
    overlay = render_query_overlay(session, pose, result)
    return {
        "query": result.query,
        "level": result.level,
        "timings_ms": result.timings.as_dict(),
        "point": [int(result.point[0]), int(result.point[1])],
        "score_stats": {
            "min": float(result.chosen.data.min()),
            "max": float(result.chosen.data.max()),
            "mean": float(result.chosen.data.mean()),
        },
        "settings": {
            "level_mode": "auto" if level is None else level,
            "window": window,
            "threshold": seg.threshold,
            "degenerate_mask": seg.degenerate,
        },
        "overlay_png_base64": base64.b64encode(overlay).decode("ascii"),
    }


class _Handler(BaseHTTPRequestHandler):
    session: ServeSession = None  # set by make_server

    # quiet the default stderr-per-request logging
    def log_message(self, fmt, *args):
        pass

    def _send(self, status: int, body: bytes, content_type: str, request_id: str):
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.send_header("X-Request-Id", request_id)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def _send_json(self, status: int, doc: dict, request_id: str):
        doc = {"request_id": request_id, **doc}
        self._send(status, json.dumps(doc).encode(), "application/json", request_id)

    def do_OPTIONS(self):
        self.send_response(204)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.end_headers()

    def do_GET(self):
        rid = self.session.next_request_id()
        if self.path.rstrip("/") in ("", "/meta") or self.path == "/meta":
            self._send_json(200, handle_meta(self.session), rid)
        else:
            self._send_json(404, {"error": f"no such endpoint {self.path!r}"}, rid)

    def do_POST(self):
        rid = self.session.next_request_id()
        try:
            length = int(self.headers.get("Content-Length", 0))
            raw = self.rfile.read(length)
            try:
                doc = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise _RequestError(400, f"malformed JSON: {exc}") from exc
            if not isinstance(doc, dict):
                raise _RequestError(400, "request body must be a JSON object")
            if self.path == "/render":
                pose = _parse_pose(doc, self.session)
                self._send(200, render_color_png(self.session, pose), "image/png", rid)
            elif self.path == "/query":
                self._send_json(200, handle_query(self.session, doc), rid)
            else:
                raise _RequestError(404, f"no such endpoint {self.path!r}")
        except _RequestError as exc:
            self._send_json(exc.status, {"error": exc.message, **exc.extra}, rid)
        except SplatfieldError as exc:
            self._send_json(400, {"error": str(exc)}, rid)


def make_server(
    session: ServeSession, host: str = "127.0.0.1", port: int = DEFAULT_PORT
) -> ThreadingHTTPServer:
    handler = type("BoundHandler", (_Handler,), {"session": session})
    return ThreadingHTTPServer((host, port), handler)


def serve(session: ServeSession, host: str = "127.0.0.1", port: int = DEFAULT_PORT) -> None:
    """Run the server until interrupted."""
    server = make_server(session, host, port)
    addr = server.server_address
    print(f"serving on http://{addr[0]}:{addr[1]} "
          f"({session.scene.num_gaussians} gaussians, "
          f"{len(session.query_set.names())} queries)")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
