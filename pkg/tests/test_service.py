"""HTTP service tests: endpoint contracts and CLI equivalence."""

import threading

import httpx
import numpy as np
import pytest

from meshforge.formats import load_correspondences, load_mesh_ply
from meshforge.pipeline import (
    generate_pair_fixture,
    load_config,
    stage_merge,
    stage_mesh,
    stage_scale,
)
from meshforge.service import serve


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("svc_pair")
    generate_pair_fixture(d, resolution=40)
    return d


def prepared_config(fixture_dir, out_dir, with_corr=True):
    cfg = load_config(fixture_dir / "config.json", output_dir=out_dir)
    if not with_corr:
        from dataclasses import replace
        cfg = replace(cfg, correspondence_paths=())
    stage_mesh(cfg)
    stage_scale(cfg)
    return cfg


@pytest.fixture()
def client(fixture_dir, tmp_path):
    cfg = prepared_config(fixture_dir, tmp_path / "out", with_corr=False)
    server = serve(cfg, port=0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    host, port = server.server_address[:2]
    with httpx.Client(base_url=f"http://{host}:{port}", timeout=60.0) as c:
        yield c, cfg
    server.shutdown()
    thread.join(timeout=5)


def corr_payload(fixture_dir):
    c = load_correspondences(fixture_dir / "corr_frag1_frag0.json")
    return {
        "source_id": c.source_id,
        "target_id": c.target_id,
        "pairs": [{"src": s.tolist(), "dst": d.tolist()}
                  for s, d in zip(c.src, c.dst)],
    }


class TestEndpoints:
    def test_fragments_listing(self, client):
        c, cfg = client
        resp = c.get("/api/fragments")
        assert resp.status_code == 200
        listing = resp.json()
        assert [f["id"] for f in listing] == ["frag0", "frag1"]
        mesh, _ = load_mesh_ply(cfg.output_dir / "frag0_scaled.ply")
        assert listing[0]["vertices"] == len(mesh.vertices)
        assert listing[0]["faces"] == len(mesh.faces)

    def test_fragment_mesh_bytes(self, client):
        c, cfg = client
        resp = c.get("/api/fragments/frag1/mesh")
        assert resp.status_code == 200
        assert resp.content == (cfg.output_dir / "frag1_scaled.ply").read_bytes()

    def test_unknown_fragment_404(self, client):
        c, _ = client
        assert c.get("/api/fragments/nope/mesh").status_code == 404

    def test_correspondences_min_pairs(self, client, fixture_dir):
        c, _ = client
        payload = corr_payload(fixture_dir)
        payload["pairs"] = payload["pairs"][:2]
        resp = c.post("/api/correspondences", json=payload)
        assert resp.status_code == 400
        assert "at least three matching points" in resp.json()["error"]

    def test_register_without_correspondences(self, client):
        c, _ = client
        resp = c.post("/api/register",
                      json={"source_id": "frag1", "target_id": "frag0"})
        assert resp.status_code == 400

    def test_preview_before_register(self, client):
        c, _ = client
        assert c.get("/api/preview").status_code == 400

    def test_full_flow(self, client, fixture_dir):
        c, cfg = client
        resp = c.post("/api/correspondences", json=corr_payload(fixture_dir))
        assert resp.status_code == 200
        assert resp.json()["pairs"] == 4

        resp = c.post("/api/register",
                      json={"source_id": "frag1", "target_id": "frag0"})
        assert resp.status_code == 200
        reg = resp.json()
        assert len(reg["transform"]) == 16
        assert len(reg["trace"]) == reg["iterations"]
        assert reg["rmse"] >= 0

        resp = c.get("/api/preview")
        assert resp.status_code == 200
        prev = resp.json()
        assert prev["transform"] == reg["transform"]
        assert prev["rmse"] == reg["rmse"]

        resp = c.post("/api/merge")
        assert resp.status_code == 200
        mesh_id = resp.json()["mesh_id"]

        resp = c.get(f"/api/result/{mesh_id}")
        assert resp.status_code == 200
        assert resp.content == (cfg.output_dir / "merged.ply").read_bytes()

    def test_exact_identity_registration(self, client, fixture_dir):
        # Correspondences from a fragment onto itself: identity, rmse ~ 0.
        c, cfg = client
        mesh, _ = load_mesh_ply(cfg.output_dir / "frag0_scaled.ply")
        picks = mesh.vertices[[5, 500, 900, 1200]]
        payload = {"source_id": "frag0", "target_id": "frag0",
                   "pairs": [{"src": p.tolist(), "dst": p.tolist()} for p in picks]}
        assert c.post("/api/correspondences", json=payload).status_code == 200
        reg = c.post("/api/register",
                     json={"source_id": "frag0", "target_id": "frag0"}).json()
        m = np.asarray(reg["transform"]).reshape(4, 4)
        assert np.abs(m - np.eye(4)).max() < 1e-9
        assert reg["rmse"] < 1e-9

class TestBusy:
    def test_409_while_job_running(self, fixture_dir, tmp_path):
        cfg = prepared_config(fixture_dir, tmp_path / "out", with_corr=False)
        server = serve(cfg, port=0)
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        host, port = server.server_address[:2]
        try:
            with httpx.Client(base_url=f"http://{host}:{port}", timeout=30.0) as c:
                c.post("/api/correspondences", json=corr_payload(fixture_dir))
                session = server.session
                assert session.job_lock.acquire()
                try:
                    resp = c.post("/api/register",
                                  json={"source_id": "frag1", "target_id": "frag0"})
                    assert resp.status_code == 409
                    resp = c.post("/api/merge")
                    assert resp.status_code == 409
                finally:
                    session.job_lock.release()
        finally:
            server.shutdown()
            thread.join(timeout=5)


class TestCliEquivalence:
    def test_service_merge_bit_identical_to_cli(self, fixture_dir, tmp_path):
        # CLI path: fixture config with its correspondence file.
        cli_cfg = prepared_config(fixture_dir, tmp_path / "cli_out", with_corr=True)
        cli_merged = stage_merge(cli_cfg)

        # Service path: same inputs, correspondences arrive over HTTP.
        svc_cfg = prepared_config(fixture_dir, tmp_path / "svc_out", with_corr=False)
        server = serve(svc_cfg, port=0)
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        host, port = server.server_address[:2]
        try:
            with httpx.Client(base_url=f"http://{host}:{port}", timeout=120.0) as c:
                assert c.post("/api/correspondences",
                              json=corr_payload(fixture_dir)).status_code == 200
                assert c.post("/api/register",
                              json={"source_id": "frag1",
                                    "target_id": "frag0"}).status_code == 200
                mesh_id = c.post("/api/merge").json()["mesh_id"]
                body = c.get(f"/api/result/{mesh_id}").content
        finally:
            server.shutdown()
            thread.join(timeout=5)

        cli_bytes = cli_merged.read_bytes()
        svc_bytes = (svc_cfg.output_dir / "merged.ply").read_bytes()
        assert body == svc_bytes
        # The POSTed picks round-trip to the identical correspondence file,
        # so even the embedded manifests agree: full bytes match.
        assert cli_bytes == svc_bytes
