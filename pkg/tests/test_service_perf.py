"""Frame-latency check of the exploration service at full mesh resolution."""

import json
import threading
import time
import urllib.request

import numpy as np
import pytest

from softdyn.bodymodel import TemplateConfig, build_test_template
from softdyn.datagen import generate_motion
from softdyn.posespace import build_pose_ae
from softdyn.regressor import Pipeline, build_regressor
from softdyn.service import SoftDynService, serve
from softdyn.subspace import AeSpec, PcaModel, build_soft_ae


@pytest.fixture(scope="module")
def big_service():
    tpl = build_test_template(TemplateConfig(num_vertices=6890, num_joints=24, seed=3))
    rng = np.random.default_rng(0)
    d = 3 * tpl.num_vertices
    basis, _ = np.linalg.qr(rng.normal(size=(d, 200)))
    pca = PcaModel(mean=np.zeros(d), basis=basis.T[:200],
                   singular_values=np.linspace(1, 0.1, 200))
    pipe = Pipeline(
        tpl=tpl,
        pose_ae=build_pose_ae(tpl, seed=0),
        soft_ae=build_soft_ae(pca, AeSpec(latent_dim=50), seed=1),
        regressor=build_regressor(36, 10, 50, seed=2),
    )
    motions = {"run": generate_motion(tpl, "run", 120, 60.0)}
    service = SoftDynService(pipe, motions)
    server = serve(service, port=0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()


def test_p50_frame_latency_under_budget(big_service):
    base = big_service
    body = json.dumps({"beta": [0.0] * 10, "motion_id": "run"}).encode()
    req = urllib.request.Request(base + "/api/session", data=body, method="POST",
                                 headers={"Content-Type": "application/json"})
    with urllib.request.urlopen(req) as resp:
        sid = json.loads(resp.read())["session_id"]
    latencies = []
    for t in range(60):
        t0 = time.perf_counter()
        with urllib.request.urlopen(base + f"/api/session/{sid}/frame/{t}") as resp:
            resp.read()
        latencies.append((time.perf_counter() - t0) * 1000.0)
    p50 = float(np.percentile(latencies, 50))
    print(f"\nservice p50 frame latency at V=6890: {p50:.2f} ms")
    assert p50 < 15.0
