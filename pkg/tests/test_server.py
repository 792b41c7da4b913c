import base64
import json
import threading
from http.client import HTTPConnection

import pytest

from splatfield.io import SyntheticSpec, generate_synthetic
from splatfield.server import ServeSession, make_server


@pytest.fixture(scope="module")
def server():
    spec = SyntheticSpec(seed=4, num_gaussians=40, num_classes=4, image_size=24,
                         num_levels=2, L=8, K=2, D=8, num_cameras=2)
    bundle = generate_synthetic(spec)
    session = ServeSession(
        scene=bundle.scene,
        query_set=bundle.query_set,
        size_cap=128,
        default_pose=bundle.camera_poses[0],
    )
    srv = make_server(session, host="127.0.0.1", port=0)
    thread = threading.Thread(target=srv.serve_forever, daemon=True)
    thread.start()
    yield srv.server_address
    srv.shutdown()
    srv.server_close()


def request(addr, method, path, body=None):
    conn = HTTPConnection(addr[0], addr[1], timeout=30)
    headers = {"Content-Type": "application/json"} if body is not None else {}
    conn.request(method, path, body=json.dumps(body) if body is not None else None,
                 headers=headers)
    resp = conn.getresponse()
    data = resp.read()
    out = (resp.status, dict(resp.getheaders()), data)
    conn.close()
    return out


def pose_doc():
    return {"position": [0.4, 0.3, -3.4], "look_at": [0, 0, 0], "fov_y_deg": 42.0}


class TestMeta:
    def test_meta_reports_config_and_queries(self, server):
        status, headers, data = request(server, "GET", "/meta")
        assert status == 200
        doc = json.loads(data)
        assert doc["L"] == 8 and doc["K"] == 2 and doc["levels"] == 2
        assert doc["queries"] == [f"class{c}" for c in range(4)]
        assert doc["request_id"].startswith("req-")
        assert "X-Request-Id" in headers

    def test_unknown_endpoint_404(self, server):
        status, _, _ = request(server, "GET", "/nope")
        assert status == 404

    def test_meta_on_default_config_scene(self):
        # a scene built with library defaults serves L=64, K=4
        import numpy as np

        from splatfield.core import Codebook, Scene, SceneConfig
        from splatfield.io import QuerySet
        from splatfield.query import QueryEmbedding
        from splatfield.server import handle_meta

        cfg = SceneConfig()
        scene = Scene(
            positions=np.zeros((0, 3), dtype=np.float32),
            rotations=np.zeros((0, 4), dtype=np.float32),
            scales=np.zeros((0, 3), dtype=np.float32),
            opacities=np.zeros(0, dtype=np.float32),
            colors=np.zeros((0, 3), dtype=np.float32),
            coeff_indices=np.zeros((cfg.num_levels, 0, cfg.K), dtype=np.uint16),
            coeff_values=np.zeros((cfg.num_levels, 0, cfg.K), dtype=np.float32),
            codebooks=tuple(
                Codebook(np.zeros((cfg.L, cfg.D), dtype=np.float32), level=lv)
                for lv in range(cfg.num_levels)
            ),
            config=cfg,
        )
        qs = QuerySet(dim=cfg.D, canonicals=np.zeros((1, cfg.D), dtype=np.float32),
                      queries=[QueryEmbedding("q", np.zeros(cfg.D))])
        meta = handle_meta(ServeSession(scene=scene, query_set=qs))
        assert meta["L"] == 64 and meta["K"] == 4 and meta["levels"] == 3


class TestRender:
    def test_render_returns_png(self, server):
        status, headers, data = request(
            server, "POST", "/render",
            {"camera": pose_doc(), "width": 32, "height": 32},
        )
        assert status == 200
        assert headers["Content-Type"] == "image/png"
        assert data[:8] == b"\x89PNG\r\n\x1a\n"

    def test_identical_requests_identical_png(self, server):
        body = {"camera": pose_doc(), "width": 24, "height": 24}
        _, _, a = request(server, "POST", "/render", body)
        _, _, b = request(server, "POST", "/render", body)
        assert a == b

    def test_size_cap_413(self, server):
        status, _, data = request(
            server, "POST", "/render",
            {"camera": pose_doc(), "width": 4096, "height": 4096},
        )
        assert status == 413
        assert "exceeds" in json.loads(data)["error"]

    def test_malformed_json_400(self, server):
        conn = HTTPConnection(server[0], server[1], timeout=30)
        conn.request("POST", "/render", body="{oops",
                     headers={"Content-Type": "application/json"})
        resp = conn.getresponse()
        body = resp.read()
        assert resp.status == 400
        assert "malformed JSON" in json.loads(body)["error"]
        conn.close()

    def test_missing_camera_400(self, server):
        status, _, data = request(server, "POST", "/render", {"width": 16, "height": 16})
        assert status == 400


class TestQuery:
    def query_body(self, **overrides):
        body = {
            "camera": pose_doc(), "width": 24, "height": 24,
            "query": "class0", "level": "auto", "window": 3,
        }
        body.update(overrides)
        return body

    def test_query_response_fields(self, server):
        status, _, data = request(server, "POST", "/query", self.query_body())
        assert status == 200
        doc = json.loads(data)
        assert set(doc) >= {
            "request_id", "query", "level", "timings_ms", "point",
            "score_stats", "settings", "overlay_png_base64",
        }
        assert set(doc["timings_ms"]) == {"render_ms", "decode_ms", "post_ms"}
        png = base64.b64decode(doc["overlay_png_base64"])
        assert png[:8] == b"\x89PNG\r\n\x1a\n"

    def test_auto_level_matches_explicit_selection(self, server):
        _, _, auto = request(server, "POST", "/query", self.query_body())
        chosen = json.loads(auto)["level"]
        _, _, fixed = request(
            server, "POST", "/query", self.query_body(level=chosen)
        )
        assert json.loads(fixed)["level"] == chosen

    def test_unknown_query_404_lists_names(self, server):
        status, _, data = request(
            server, "POST", "/query", self.query_body(query="banana")
        )
        assert status == 404
        doc = json.loads(data)
        assert doc["available"] == [f"class{c}" for c in range(4)]

    def test_vector_query(self, server):
        status, _, data = request(
            server, "POST", "/query", self.query_body(query=[0.5] * 8)
        )
        assert status == 200

    def test_wrong_vector_length_400(self, server):
        status, _, _ = request(
            server, "POST", "/query", self.query_body(query=[0.5] * 3)
        )
        assert status == 400

    def test_bad_level_400(self, server):
        status, _, _ = request(
            server, "POST", "/query", self.query_body(level=9)
        )
        assert status == 400

    def test_even_window_400(self, server):
        status, _, _ = request(
            server, "POST", "/query", self.query_body(window=4)
        )
        assert status == 400

    def test_query_determinism(self, server):
        body = self.query_body()
        _, _, a = request(server, "POST", "/query", body)
        _, _, b = request(server, "POST", "/query", body)
        da, db = json.loads(a), json.loads(b)
        for k in ("level", "point", "score_stats", "overlay_png_base64"):
            assert da[k] == db[k]

    def test_concurrent_requests_match_serial(self, server):
        bodies = [self.query_body(query=f"class{c}") for c in range(4)]
        serial = [json.loads(request(server, "POST", "/query", b)[2]) for b in bodies]
        results = [None] * 4

        def worker(i):
            results[i] = json.loads(request(server, "POST", "/query", bodies[i])[2])

        threads = [threading.Thread(target=worker, args=(i,)) for i in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        for s, c in zip(serial, results):
            assert s["point"] == c["point"]
            assert s["overlay_png_base64"] == c["overlay_png_base64"]
