import io
import json
import threading
import urllib.parse
import urllib.request

import numpy as np
import pytest

from panosplat.cameras import PerspectiveCamera
from panosplat.cloud import Sim3Transform
from panosplat.manifest import SceneManifest
from panosplat.placement import snap_to_plane
from panosplat.pipeline import run_pipeline
from panosplat.ply import read_ply
from panosplat.server import serve
from tests.test_pipeline import tiny_config


@pytest.fixture(scope="module")
def live_server(tmp_path_factory):
    base = tmp_path_factory.mktemp("srv")
    cfg = tiny_config(base, seed=11)
    result = run_pipeline(cfg)
    server = serve(result.manifest_path, 0)  # port 0: pick a free one
    port = server.server_address[1]
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{port}", result
    server.shutdown()
    server.server_close()


def get(url, raw=False):
    with urllib.request.urlopen(url, timeout=30) as resp:
        data = resp.read()
        return data if raw else json.loads(data)


def post(url, body):
    req = urllib.request.Request(url, data=json.dumps(body).encode(),
                                 headers={"Content-Type": "application/json"},
                                 method="POST")
    try:
        with urllib.request.urlopen(req, timeout=60) as resp:
            return resp.status, json.loads(resp.read())
    except urllib.error.HTTPError as exc:
        return exc.code, json.loads(exc.read())


class TestServe:
    def test_manifest_round_trip(self, live_server):
        url, result = live_server
        served = get(f"{url}/api/manifest")
        on_disk = json.loads(result.manifest_path.read_text())
        assert served == on_disk

    def test_asset_is_valid_ply(self, live_server, tmp_path):
        url, result = live_server
        blob = get(f"{url}/api/asset/background", raw=True)
        p = tmp_path / "bg.ply"
        p.write_bytes(blob)
        cloud = read_ply(p)
        assert len(cloud) > 0

    def test_unknown_asset_404(self, live_server):
        url, _ = live_server
        with pytest.raises(urllib.error.HTTPError) as err:
            get(f"{url}/api/asset/nonsense")
        assert err.value.code == 404

    def test_transform_persists_and_mtime_advances(self, live_server):
        url, result = live_server
        obj_id = result.manifest.objects[0].object_id
        before = result.manifest_path.stat().st_mtime_ns
        body = {"t": [0.5, 0.1, 0.2], "q": [1.0, 0.0, 0.0, 0.0], "s": 1.25}
        status, resp = post(f"{url}/api/objects/{obj_id}/transform", body)
        assert status == 200
        served = get(f"{url}/api/manifest")
        entry = next(o for o in served["objects"] if o["id"] == obj_id)
        assert entry["transform"]["s"] == 1.25
        assert entry["transform"]["t"] == [0.5, 0.1, 0.2]
        assert result.manifest_path.stat().st_mtime_ns > before

    def test_invalid_transform_422_names_field(self, live_server):
        url, result = live_server
        obj_id = result.manifest.objects[0].object_id
        status, resp = post(f"{url}/api/objects/{obj_id}/transform",
                            {"t": [0, 0, 0], "q": [2.0, 0, 0, 0], "s": 1.0})
        assert status == 422
        assert resp["field"] == "q"
        status, resp = post(f"{url}/api/objects/{obj_id}/transform",
                            {"t": [0, 0, 0], "q": [1.0, 0, 0, 0], "s": -2.0})
        assert status == 422
        assert resp["field"] == "s"

    def test_unknown_object_404(self, live_server):
        url, _ = live_server
        status, _ = post(f"{url}/api/objects/ghost/transform",
                         {"t": [0, 0, 0], "q": [1, 0, 0, 0], "s": 1.0})
        assert status == 404

    def test_snap_matches_in_process(self, live_server):
        url, result = live_server
        obj_id = result.manifest.objects[0].object_id
        # place the object slightly above the floor so the snap has work to do
        manifest = SceneManifest.load(result.manifest_path)
        obj = manifest.object_by_id(obj_id)
        cloud = read_ply(result.manifest_path.parent / obj.ply)
        floor = next(p for p in manifest.planes if p.kind == "FLOOR")
        span = cloud.positions[:, 1].max() - cloud.positions[:, 1].min()
        start = Sim3Transform(
            translation=np.array([0.4, floor.d + 0.52 * span, 0.4]), scale=1.0)
        status, _ = post(f"{url}/api/objects/{obj_id}/transform",
                         start.to_json_dict())
        assert status == 200
        status, resp = post(f"{url}/api/objects/{obj_id}/snap", {})
        assert status == 200
        expected = snap_to_plane((cloud, start), manifest.planes)
        got = Sim3Transform.from_json_dict(resp["transform"])
        assert np.abs(got.translation - expected.translation).max() < 1e-9
        assert np.abs(got.rotation - expected.rotation).max() < 1e-9

    def test_recompose_returns_asset(self, live_server, tmp_path):
        url, result = live_server
        status, resp = post(f"{url}/api/recompose", {})
        assert status == 200
        assert resp["asset"] == "merged"
        blob = get(f"{url}/api/asset/merged", raw=True)
        p = tmp_path / "merged.ply"
        p.write_bytes(blob)
        assert len(read_ply(p)) > 0

    def test_render_endpoint_returns_png(self, live_server):
        url, _ = live_server
        cam = PerspectiveCamera.from_fov(70, 48, 48)
        q = urllib.parse.quote(cam.to_json())
        blob = get(f"{url}/api/render?cam={q}", raw=True)
        assert blob[:8] == b"\x89PNG\r\n\x1a\n"
        from PIL import Image

        img = Image.open(io.BytesIO(blob))
        assert img.size == (48, 48)

    def test_render_missing_cam_422(self, live_server):
        url, _ = live_server
        with pytest.raises(urllib.error.HTTPError) as err:
            get(f"{url}/api/render")
        assert err.value.code == 422
