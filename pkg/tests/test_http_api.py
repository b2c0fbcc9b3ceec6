from __future__ import annotations

import copy
import json

import pytest
from fastapi.testclient import TestClient

from taskfleet.runner import build_runtime
from taskfleet.taskman.api import create_app

from test_taskman import scenario_config


@pytest.fixture
def runtime():
    return build_runtime(copy.deepcopy(scenario_config("scenario1")))


@pytest.fixture
def client(runtime):
    return TestClient(create_app(runtime.tm))


def drain(runtime):
    runtime.loop.run_until_idle()


def sse_events(client, txn_id, from_seq=0, limit=100):
    out = []
    with client.stream("GET", f"/transactions/{txn_id}/events", params={"fromSeq": from_seq}) as response:
        assert response.status_code == 200
        assert response.headers["content-type"].startswith("text/event-stream")
        for line in response.iter_lines():
            if line.startswith("data: "):
                out.append(json.loads(line[len("data: "):]))
                if len(out) >= limit:
                    break
    return out


class TestTasks:
    def test_submit_and_complete(self, runtime, client):
        response = client.post(
            "/tasks",
            json={"precondition": "Jar002 isOn ?Shelf", "effect": "Jar002 isOn Platform001"},
        )
        assert response.status_code == 200
        txn_id = response.json()["transactionId"]
        drain(runtime)
        view = client.get(f"/transactions/{txn_id}").json()
        assert view["status"] == "Completed"
        assert view["plan"]["nodes"][0]["serviceTypeName"] == "TransferObject"
        listing = client.get("/transactions").json()
        assert [v["transactionId"] for v in listing] == [txn_id]

    def test_malformed_formula_is_400_with_position(self, client):
        response = client.post("/tasks", json={"effect": "Jar002 isOn"})
        assert response.status_code == 400
        detail = response.json()["detail"]
        assert detail["position"] == len("Jar002 isOn")

    def test_empty_effect_rejected(self, client):
        response = client.post("/tasks", json={"effect": "   "})
        assert response.status_code == 400

    def test_unknown_transaction_404(self, client):
        assert client.get("/transactions/t404").status_code == 404
        assert client.post("/transactions/t404/cancel").status_code == 404


class TestEventStream:
    def test_stream_replays_full_history_in_order(self, runtime, client):
        txn_id = client.post(
            "/tasks",
            json={"precondition": "Jar002 isOn ?Shelf", "effect": "Jar002 isOn Platform001"},
        ).json()["transactionId"]
        drain(runtime)
        events = sse_events(client, txn_id)
        seqs = [e["seq"] for e in events]
        assert seqs == sorted(seqs)
        assert len(seqs) == len(set(seqs))
        types = [e["messageType"] for e in events]
        for expected in ("Arrange", "Terms", "Accept", "Cancel", "Execute", "Completed", "End"):
            assert expected in types
        assert events[-1]["messageType"] == "StatusChanged"
        assert events[-1]["bodySummary"].startswith("Completed")

    def test_resume_from_seq_has_no_duplicates_or_gaps(self, runtime, client):
        txn_id = client.post(
            "/tasks",
            json={"precondition": "Jar002 isOn ?Shelf", "effect": "Jar002 isOn Platform001"},
        ).json()["transactionId"]
        drain(runtime)
        full = sse_events(client, txn_id)
        cut = full[len(full) // 2]["seq"]
        resumed = sse_events(client, txn_id, from_seq=cut)
        combined = [e["seq"] for e in full if e["seq"] <= cut] + [e["seq"] for e in resumed]
        assert combined == list(range(1, combined[-1] + 1))

    def test_resume_past_the_end_of_a_finished_transaction_closes(self, runtime, client):
        txn_id = client.post(
            "/tasks",
            json={"precondition": "Jar002 isOn ?Shelf", "effect": "Jar002 isOn Platform001"},
        ).json()["transactionId"]
        drain(runtime)
        last = sse_events(client, txn_id)[-1]["seq"]
        assert sse_events(client, txn_id, from_seq=last) == []

    def test_cancel_reflected_in_stream(self, runtime, client):
        txn_id = client.post(
            "/tasks",
            json={"precondition": "Jar002 isOn ?Shelf", "effect": "Jar002 isOn Platform001"},
        ).json()["transactionId"]
        runtime.loop.run_until_idle(max_time=5.0)
        assert client.get(f"/transactions/{txn_id}").json()["status"] == "Executing"
        response = client.post(f"/transactions/{txn_id}/cancel")
        assert response.status_code == 200
        drain(runtime)
        events = sse_events(client, txn_id)
        assert events[-1]["bodySummary"].startswith("Cancelled")
        # A second cancel is already terminal.
        assert client.post(f"/transactions/{txn_id}/cancel").status_code == 409
