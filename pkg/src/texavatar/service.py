"""HTTP/WebSocket service exposing interactive avatar rendering.

Protocol (one WebSocket at /ws):
  client -> server: JSON text
    {"type": "view", "frame": int, "position": [x,y,z], "target": [x,y,z],
     "up": [x,y,z], "fov_deg": float, "width": int, "height": int}
  server -> client, per view request:
    1. one binary frame: 16-byte header (magic b"DUTR", u32le request counter
       echoing the order the request was received on this connection, u32le
       payload byte length, u32le reserved zero) followed by the PNG payload;
    2. one JSON text message {"type": "stats", "timings_ms": {...}} whose
       per-stage times sum to "total".
  Malformed or failing requests produce {"type": "error", "message": str}
  and leave the connection open.

GET /healthz reports liveness, the package version, and the loaded scene.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, WebSocket, WebSocketDisconnect

import numpy as np

from . import __version__
from .io import png_bytes
from .pipeline import FrameResult, PipelineConfig, run_frame
from .splatting import render as splat_render
from .synth import SceneConfig, SyntheticScene, load_scene, look_at_camera, synth

FRAME_MAGIC = b"DUTR"
FRAME_HEADER = struct.Struct("<4sIII")  # magic, request counter, payload length, reserved

_REQUIRED_VIEW_KEYS = ("frame", "position", "target", "up", "fov_deg", "width", "height")


def frame_header(counter: int, payload_length: int) -> bytes:
    return FRAME_HEADER.pack(FRAME_MAGIC, counter, payload_length, 0)


def parse_frame_header(blob: bytes) -> tuple[int, int]:
    """(request counter, payload length) from a binary frame header."""
    magic, counter, length, reserved = FRAME_HEADER.unpack(blob[: FRAME_HEADER.size])
    if magic != FRAME_MAGIC:
        raise ValueError("bad frame magic")
    if reserved != 0:
        raise ValueError("nonzero reserved field")
    return counter, length


@dataclass
class AvatarStore:
    """Per-frame avatar cache: the expensive stages run once per frame."""

    scene: SyntheticScene
    config: PipelineConfig = field(default_factory=PipelineConfig)
    _cache: dict[int, FrameResult] = field(default_factory=dict)

    @property
    def num_frames(self) -> int:
        return self.scene.num_frames

    def frame_result(self, frame: int) -> FrameResult:
        if not (0 <= frame < self.num_frames):
            raise ValueError(
                f"frame {frame} out of range [0, {self.num_frames})"
            )
        if frame not in self._cache:
            self._cache[frame] = run_frame(
                self.scene, frame, self.config, render_cameras=()
            )
        return self._cache[frame]

    def render_view(self, request: dict) -> tuple[bytes, dict[str, float]]:
        """PNG bytes plus the six-stage timing breakdown for one view request."""
        for key in _REQUIRED_VIEW_KEYS:
            if key not in request:
                raise ValueError(f"view request missing field {key!r}")
        width, height = int(request["width"]), int(request["height"])
        if not (1 <= width <= 4096 and 1 <= height <= 4096):
            raise ValueError("width/height must lie in [1, 4096]")
        fov = float(request["fov_deg"])
        if not (0.0 < fov < 180.0):
            raise ValueError("fov_deg must lie in (0, 180)")
        cam = look_at_camera(
            np.asarray(request["position"], dtype=np.float64),
            np.asarray(request["target"], dtype=np.float64),
            np.asarray(request["up"], dtype=np.float64),
            fov, width, height,
        )
        result = self.frame_result(int(request["frame"]))
        start = time.perf_counter()
        frame = splat_render(
            result.gaussians, cam,
            background=self.config.background, tile_size=self.config.tile_size,
        )
        render_ms = (time.perf_counter() - start) * 1000.0
        timings = dict(result.timings_ms)
        timings["render"] = render_ms
        timings["total"] = sum(v for k, v in timings.items() if k != "total")
        return png_bytes(frame.color.data), timings


def create_app(store: AvatarStore) -> FastAPI:
    app = FastAPI(title="texavatar", version=__version__)
    app.state.store = store

    @app.get("/healthz")
    def healthz() -> dict:
        return {
            "status": "ok",
            "package": "texavatar",
            "version": __version__,
            "num_frames": store.num_frames,
        }

    @app.websocket("/ws")
    async def ws(socket: WebSocket) -> None:
        await socket.accept()
        counter = 0
        try:
            while True:
                try:
                    message = await socket.receive_json()
                except WebSocketDisconnect:
                    raise
                except Exception:
                    await socket.send_json(
                        {"type": "error", "message": "message is not valid JSON"}
                    )
                    continue
                counter += 1
                try:
                    if not isinstance(message, dict):
                        raise ValueError("message must be a JSON object")
                    if message.get("type") != "view":
                        raise ValueError(
                            f"unsupported message type {message.get('type')!r}"
                        )
                    payload, timings = store.render_view(message)
                except (ValueError, KeyError, TypeError) as exc:
                    await socket.send_json({"type": "error", "message": str(exc)})
                    continue
                await socket.send_bytes(frame_header(counter, len(payload)) + payload)
                await socket.send_json({"type": "stats", "timings_ms": timings})
        except WebSocketDisconnect:
            return

    return app


def app_from_scene_dir(
    scene_dir: str | Path | None = None,
    config: PipelineConfig | None = None,
) -> FastAPI:
    """App factory: loads a scene directory, or synthesizes a default scene."""
    if scene_dir is None:
        scene = synth(SceneConfig())
    else:
        scene = load_scene(scene_dir)
    store = AvatarStore(scene=scene, config=config or PipelineConfig())
    return create_app(store)
