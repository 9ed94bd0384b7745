import numpy as np
import pytest
from fastapi.testclient import TestClient

from texavatar import __version__
from texavatar.io import png_bytes
from texavatar.pipeline import PipelineConfig
from texavatar.service import (
    FRAME_HEADER,
    AvatarStore,
    create_app,
    frame_header,
    parse_frame_header,
)
from texavatar.splatting import render as splat_render
from texavatar.synth import look_at_camera


@pytest.fixture(scope="module")
def store(request):
    scene = request.getfixturevalue("small_scene")
    return AvatarStore(scene=scene, config=PipelineConfig(texture_resolution=64, fit_steps=8))


@pytest.fixture(scope="module")
def client(store):
    return TestClient(create_app(store))


def view_request(frame=0, az_deg=75.0, width=128, height=128):
    az = np.deg2rad(az_deg)
    return {
        "type": "view",
        "frame": frame,
        "position": [1.5 * float(np.cos(az)), 1.5 * float(np.sin(az)), 0.55],
        "target": [0.0, 0.0, 0.4],
        "up": [0.0, 0.0, 1.0],
        "fov_deg": 40.0,
        "width": width,
        "height": height,
    }


def expected_png(store, req):
    cam = look_at_camera(
        np.asarray(req["position"]), np.asarray(req["target"]), np.asarray(req["up"]),
        req["fov_deg"], req["width"], req["height"],
    )
    frame = splat_render(
        store.frame_result(req["frame"]).gaussians, cam,
        background=store.config.background, tile_size=store.config.tile_size,
    )
    return png_bytes(frame.color.data)


def test_frame_header_round_trip():
    blob = frame_header(7, 1234)
    assert len(blob) == FRAME_HEADER.size == 16
    assert parse_frame_header(blob) == (7, 1234)
    with pytest.raises(ValueError, match="magic"):
        parse_frame_header(b"XXXX" + blob[4:])
    with pytest.raises(ValueError, match="reserved"):
        parse_frame_header(FRAME_HEADER.pack(b"DUTR", 1, 1, 9))


def test_healthz(client, store):
    out = client.get("/healthz").json()
    assert out["status"] == "ok"
    assert out["package"] == "texavatar"
    assert out["version"] == __version__
    assert out["num_frames"] == store.num_frames


def test_ws_view_round_trip(client, store):
    req = view_request()
    with client.websocket_connect("/ws") as ws:
        ws.send_json(req)
        blob = ws.receive_bytes()
        counter, length = parse_frame_header(blob)
        assert counter == 1
        payload = blob[FRAME_HEADER.size:]
        assert len(payload) == length
        assert payload == expected_png(store, req)
        stats = ws.receive_json()
        assert stats["type"] == "stats"
        t = stats["timings_ms"]
        stages = [k for k in t if k != "total"]
        assert abs(t["total"] - sum(t[s] for s in stages)) < 1e-6


def test_ws_errors_keep_connection_open(client, store):
    with client.websocket_connect("/ws") as ws:
        ws.send_text("this is not json")
        err = ws.receive_json()
        assert err["type"] == "error" and "JSON" in err["message"]

        ws.send_json({"type": "view", "frame": 99})
        err = ws.receive_json()
        assert err["type"] == "error" and "missing field" in err["message"]

        ws.send_json({**view_request(), "frame": 99})
        err = ws.receive_json()
        assert err["type"] == "error" and "out of range" in err["message"]

        ws.send_json({"type": "ping"})
        err = ws.receive_json()
        assert err["type"] == "error" and "unsupported" in err["message"]

        ws.send_json({**view_request(), "width": 0})
        err = ws.receive_json()
        assert err["type"] == "error"

        ws.send_json({**view_request(), "fov_deg": 200.0})
        err = ws.receive_json()
        assert err["type"] == "error"

        # the connection is still healthy; the counter counted the failures
        ws.send_json(view_request())
        blob = ws.receive_bytes()
        counter, _ = parse_frame_header(blob)
        assert counter == 6  # five failed view-counter increments + this one
        ws.receive_json()


def test_ws_counter_supports_stale_dropping(client, store):
    reqs = [view_request(az_deg=40.0 + 10 * i, width=96, height=96) for i in range(5)]
    with client.websocket_connect("/ws") as ws:
        for r in reqs:
            ws.send_json(r)
        frames = {}
        for _ in reqs:
            blob = ws.receive_bytes()
            counter, _ = parse_frame_header(blob)
            frames[counter] = blob[FRAME_HEADER.size:]
            ws.receive_json()
    # a client that drops stale responses keeps only the last counter
    displayed = frames[max(frames)]
    assert displayed == expected_png(store, reqs[-1])


def test_render_view_validation(store):
    with pytest.raises(ValueError, match="missing field"):
        store.render_view({"frame": 0})
    req = view_request()
    with pytest.raises(ValueError, match="4096"):
        store.render_view({**req, "width": 5000})
    with pytest.raises(ValueError, match="fov"):
        store.render_view({**req, "fov_deg": 0.0})
    with pytest.raises(ValueError, match="out of range"):
        store.frame_result(-1)
