"""Local HTTP+JSON service exposing the trained pipeline for interactive
exploration: pick a motion, set shape coefficients, stream posed frames with
per-vertex displacement magnitudes.

Sessions own the recurrent state; any shape or motion change resets it, and
requesting an out-of-order frame transparently recomputes from frame zero.
"""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .bodymodel import BodyTemplate, PoseParams, ShapeParams, skin, unposed_body
from .datagen import MotionClip
from .motion import MotionSequence, build_descriptors
from .regressor import Pipeline, regress_step, reset_state


class ServiceError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status


@dataclass
class Session:
    session_id: str
    beta: np.ndarray
    motion_id: str
    revision: int = 0
    cursor: int = 0                      # next frame to be computed
    state: dict = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)


class SoftDynService:
    """Request-independent core so the HTTP layer stays a thin shim."""

    def __init__(self, pipeline: Pipeline, motions: dict[str, MotionClip]):
        self.pipeline = pipeline
        self.motions = dict(motions)
        self.sequences: dict[str, MotionSequence] = {
            mid: build_descriptors(pipeline.pose_ae, clip.poses, clip.frame_rate)
            for mid, clip in self.motions.items()
        }
        self.sessions: dict[str, Session] = {}
        self._counter = 0
        self._lock = threading.Lock()
        self._delta_p95 = self._estimate_delta_p95()

    def _estimate_delta_p95(self) -> float:
        mags = []
        for mid in sorted(self.motions)[:2]:
            seq = self.sequences[mid]
            beta = np.zeros(self.pipeline.tpl.num_shape)
            beta[0] = -1.0
            from .regressor import predict_latents

            latents = predict_latents(self.pipeline.regressor, seq, beta)
            deltas = self.pipeline.soft_ae.decode(latents)
            mags.append(np.linalg.norm(deltas, axis=2).ravel())
        if not mags:
            return 0.05
        return float(np.percentile(np.concatenate(mags), 95))

    # ---- endpoints -------------------------------------------------------

    def info(self) -> dict:
        tpl = self.pipeline.tpl
        return {
            "template": {"vertices": tpl.num_vertices, "faces": tpl.rest_mesh.num_faces,
                         "joints": tpl.num_joints, "shape_dim": tpl.num_shape},
            "latent_dim": self.pipeline.soft_ae.latent_dim,
            "descriptor_dim": self.pipeline.regressor.descriptor_dim,
            "model_hashes": {
                "pose_ae": self.pipeline.pose_ae.content_hash() if self.pipeline.pose_ae else "",
                "soft_ae": self.pipeline.soft_ae.content_hash(),
                "regressor": self.pipeline.regressor.net.content_hash(),
            },
            "delta_p95": self._delta_p95,
            "motions": len(self.motions),
        }

    def list_motions(self) -> list[dict]:
        return [{"id": mid, "family": clip.family, "frames": clip.num_frames,
                 "frame_rate": clip.frame_rate}
                for mid, clip in sorted(self.motions.items())]

    def template_mesh(self) -> dict:
        tpl = self.pipeline.tpl
        return {"vertices": tpl.rest_mesh.vertices.round(6).tolist(),
                "faces": tpl.rest_mesh.faces.tolist()}

    def _check_beta(self, beta) -> np.ndarray:
        arr = np.asarray(beta, dtype=np.float64).ravel() if beta is not None else None
        n = self.pipeline.tpl.num_shape
        if arr is None or arr.size != n or not np.all(np.isfinite(arr)):
            raise ServiceError(422, f"beta must be {n} finite numbers")
        return arr

    def create_session(self, beta, motion_id) -> dict:
        arr = self._check_beta(beta)
        if motion_id not in self.motions:
            raise ServiceError(404, f"unknown motion {motion_id!r}")
        with self._lock:
            self._counter += 1
            sid = f"s{self._counter:06d}"
        sess = Session(session_id=sid, beta=arr, motion_id=motion_id,
                       state=reset_state(self.pipeline.regressor))
        self.sessions[sid] = sess
        return {"session_id": sid, "revision": 0,
                "frames": self.motions[motion_id].num_frames}

    def patch_session(self, sid: str, beta) -> dict:
        sess = self.sessions.get(sid)
        if sess is None:
            raise ServiceError(404, f"unknown session {sid!r}")
        arr = self._check_beta(beta)
        with sess.lock:
            sess.beta = arr
            sess.state = reset_state(self.pipeline.regressor)
            sess.cursor = 0
            sess.revision += 1
            return {"session_id": sid, "revision": sess.revision}

    def frame(self, sid: str, t: int) -> dict:
        sess = self.sessions.get(sid)
        if sess is None:
            raise ServiceError(404, f"unknown session {sid!r}")
        clip = self.motions[sess.motion_id]
        seq = self.sequences[sess.motion_id]
        if not 0 <= t < clip.num_frames:
            raise ServiceError(404, f"frame {t} out of range")
        with sess.lock:
            if t < sess.cursor:
                sess.state = reset_state(self.pipeline.regressor)
                sess.cursor = 0
            desc = seq.descriptor_matrix()
            latent = None
            while sess.cursor <= t:
                latent, sess.state = regress_step(
                    self.pipeline.regressor, desc[sess.cursor], sess.beta, sess.state)
                sess.cursor += 1
            revision = sess.revision
        delta = self.pipeline.soft_ae.decode(latent)
        beta = ShapeParams(sess.beta)
        pose = clip.poses[t]
        mesh = skin(self.pipeline.tpl, unposed_body(self.pipeline.tpl, beta, pose, delta),
                    beta, pose)
        return {
            "frame": t,
            "revision": revision,
            # 9 decimals preserves the 1e-9 equivalence contract; magnitudes
            # only drive the colormap so micrometers suffice
            "vertices": mesh.vertices.round(9).ravel().tolist(),
            "delta_magnitude": np.linalg.norm(delta, axis=1).round(6).tolist(),
        }


# ---- HTTP layer -------------------------------------------------------------

_ROUTES = [
    ("GET", re.compile(r"^/api/info$"), "info"),
    ("GET", re.compile(r"^/api/motions$"), "motions"),
    ("GET", re.compile(r"^/api/mesh/template$"), "mesh"),
    ("POST", re.compile(r"^/api/session$"), "create"),
    ("PATCH", re.compile(r"^/api/session/([^/]+)$"), "patch"),
    ("GET", re.compile(r"^/api/session/([^/]+)/frame/(\d+)$"), "frame"),
]


def make_handler(service: SoftDynService):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):
            pass

        def _send(self, status: int, payload: dict):
            body = json.dumps(payload, separators=(",", ":")).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Methods", "GET, POST, PATCH, OPTIONS")
            self.send_header("Access-Control-Allow-Headers", "Content-Type")
            self.end_headers()
            self.wfile.write(body)

        def _body(self) -> dict:
            length = int(self.headers.get("Content-Length") or 0)
            if length == 0:
                return {}
            try:
                return json.loads(self.rfile.read(length))
            except json.JSONDecodeError:
                raise ServiceError(422, "request body is not valid JSON")

        def _dispatch(self, method: str):
            for m, pattern, name in _ROUTES:
                if m != method:
                    continue
                match = pattern.match(self.path)
                if not match:
                    continue
                try:
                    if name == "info":
                        return self._send(200, service.info())
                    if name == "motions":
                        return self._send(200, {"motions": service.list_motions()})
                    if name == "mesh":
                        return self._send(200, service.template_mesh())
                    if name == "create":
                        body = self._body()
                        return self._send(200, service.create_session(
                            body.get("beta"), body.get("motion_id")))
                    if name == "patch":
                        body = self._body()
                        return self._send(200, service.patch_session(
                            match.group(1), body.get("beta")))
                    if name == "frame":
                        return self._send(200, service.frame(match.group(1),
                                                             int(match.group(2))))
                except ServiceError as exc:
                    return self._send(exc.status, {"error": str(exc)})
            self._send(404, {"error": f"no route for {method} {self.path}"})

        def do_GET(self):
            self._dispatch("GET")

        def do_POST(self):
            self._dispatch("POST")

        def do_PATCH(self):
            self._dispatch("PATCH")

        def do_OPTIONS(self):
            self._send(200, {})

    return Handler


def serve(service: SoftDynService, port: int = 8787,
          host: str = "127.0.0.1") -> ThreadingHTTPServer:
    """Start the HTTP server; caller owns the returned server object."""
    server = ThreadingHTTPServer((host, port), make_handler(service))
    return server
