import json

import pytest
from click.testing import CliRunner
from fastapi.testclient import TestClient

from trwfw.cli import main
from trwfw.mrf import parse_uai, to_uai
from trwfw.service.app import app

from conftest import enum_logz, random_tree_mrf


@pytest.fixture(scope="module")
def client():
    return TestClient(app)


class TestEndpoints:
    def test_health(self, client):
        response = client.get("/health")
        assert response.status_code == 200
        assert response.json()["status"] == "ok"

    def test_gen_clique(self, client):
        response = client.post(
            "/gen", json={"family": "clique", "n": 4, "theta": 2.0, "seed": 3}
        )
        assert response.status_code == 200
        body = response.json()
        assert body["num_vars"] == 4
        assert body["num_edges"] == 6
        mrf = parse_uai(body["uai"])
        assert mrf.num_vars == 4

    def test_gen_grid_deterministic(self, client):
        payload = {"family": "grid", "rows": 2, "cols": 3, "seed": 9}
        a = client.post("/gen", json=payload).json()["uai"]
        b = client.post("/gen", json=payload).json()["uai"]
        assert a == b

    def test_gen_missing_params(self, client):
        response = client.post("/gen", json={"family": "clique", "seed": 0})
        assert response.status_code == 400
        assert "message" in response.json()["detail"]

    def test_gen_invalid_family(self, client):
        response = client.post("/gen", json={"family": "ring", "n": 4})
        assert response.status_code == 422

    def test_infer_tree(self, client, rng):
        mrf = random_tree_mrf(rng, 5)
        response = client.post(
            "/infer",
            json={
                "uai": to_uai(mrf),
                "options": {"eps": 0.01, "rho_iters": 1},
                "include_edge_marginals": True,
                "include_trace": True,
            },
        )
        assert response.status_code == 200
        body = response.json()
        assert body["num_vars"] == 5
        for block in body["node_marginals"]:
            assert sum(block) == pytest.approx(1.0, abs=1e-9)
        assert body["logz_upper_bound"] >= enum_logz(mrf) - 1e-8
        assert len(body["edge_marginals"]) == mrf.num_edges
        assert len(body["per_rho_iteration"]) == 2
        assert body["trace"]

    def test_infer_bad_uai(self, client):
        response = client.post("/infer", json={"uai": "BAYES 1"})
        assert response.status_code == 400
        assert response.json()["detail"]["error"] == "UaiParseError"

    def test_bench_streams_ndjson(self, client):
        response = client.post(
            "/bench",
            json={
                "family": "grid",
                "rows": 2,
                "cols": 2,
                "trials": 1,
                "seed": 4,
                "options": {"rho_iters": 1},
            },
        )
        assert response.status_code == 200
        lines = [json.loads(l) for l in response.text.splitlines() if l]
        assert lines[0]["kind"] == "meta"
        kinds = [l["kind"] for l in lines]
        assert "metrics" in kinds and "trace" in kinds

    def test_bench_invalid_spec(self, client):
        response = client.post(
            "/bench", json={"family": "clique", "trials": 1, "seed": 0}
        )
        assert response.status_code == 400


class TestCli:
    def test_gen_roundtrip(self, tmp_path):
        out = tmp_path / "instance.uai"
        result = CliRunner().invoke(
            main,
            ["gen", "--family", "clique", "--n", "4", "--theta", "2", "--seed", "1",
             "--out", str(out)],
        )
        assert result.exit_code == 0, result.output
        mrf = parse_uai(out.read_text())
        assert mrf.num_vars == 4

    def test_infer_generated_instance(self, tmp_path):
        out = tmp_path / "result.json"
        result = CliRunner().invoke(
            main,
            ["infer", "--family", "grid", "--rows", "2", "--cols", "2",
             "--seed", "2", "--eps", "0.5", "--rho-iters", "1", "--out", str(out)],
        )
        assert result.exit_code == 0, result.output
        body = json.loads(out.read_text())
        assert body["num_vars"] == 4
        assert len(body["node_marginals"]) == 4

    def test_infer_uai_file(self, tmp_path, rng):
        path = tmp_path / "tree.uai"
        path.write_text(to_uai(random_tree_mrf(rng, 4)))
        result = CliRunner().invoke(
            main, ["infer", "--uai", str(path), "--rho-iters", "0"]
        )
        assert result.exit_code == 0, result.output
        assert json.loads(result.output)["num_vars"] == 4

    def test_bench_writes_ndjson_and_csv(self, tmp_path):
        out = tmp_path / "records.ndjson"
        result = CliRunner().invoke(
            main,
            ["bench", "--family", "grid", "--rows", "2", "--cols", "2",
             "--trials", "1", "--seed", "3", "--rho-iters", "1",
             "--out", str(out)],
        )
        assert result.exit_code == 0, result.output
        lines = [json.loads(l) for l in out.read_text().splitlines()]
        assert lines[0]["kind"] == "meta"
        summary = (tmp_path / "records.ndjson.summary.csv").read_text()
        assert summary.startswith("schema_version")

    def test_bench_stdout(self):
        result = CliRunner().invoke(
            main,
            ["bench", "--family", "clique", "--n", "3", "--trials", "1",
             "--seed", "0", "--rho-iters", "0"],
        )
        assert result.exit_code == 0, result.output
        first = json.loads(result.output.splitlines()[0])
        assert first["kind"] == "meta"

    def test_error_record_on_bad_input(self, tmp_path):
        path = tmp_path / "bad.uai"
        path.write_text("BAYES\n1\n2\n0\n")
        result = CliRunner().invoke(main, ["infer", "--uai", str(path)])
        assert result.exit_code == 1
        error = json.loads(result.stderr.strip().splitlines()[-1])
        assert error["error"] == "UaiParseError"

    def test_missing_input_fails(self):
        result = CliRunner().invoke(main, ["infer"])
        assert result.exit_code == 1
