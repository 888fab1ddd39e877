"""
Tests for the HTTP API: error status mapping and bearer credentials against
a mocked gateway, then the full surface against a running cloud.
"""
import base64

import pytest
from fastapi.testclient import TestClient

from app.api.deps import bearer_credentials
from app.api.gateway import CloudGateway
from app.api.main import create_app, status_for
from app.errors import (
    AppStopped,
    AuthFailed,
    DispatchTimeout,
    InvalidRequest,
    OperationError,
    Unauthenticated,
    UnknownApplication,
)
from app.execution.schemas import ApplicationRecord, ProgrammingModel, SubmitAck
from app.transversal.identity import Credentials

AUTH = {"Authorization": "Bearer alice:s3cret"}


@pytest.fixture
def gateway(mocker):
    return mocker.create_autospec(CloudGateway, instance=True)


@pytest.fixture
def client(gateway):
    return TestClient(create_app(gateway))


@pytest.mark.parametrize("error,status", [
    (AuthFailed(), 401),
    (UnknownApplication("a"), 404),
    (AppStopped("a"), 409),
    (InvalidRequest("bad"), 422),
    (DispatchTimeout("slow"), 503),
    (OperationError("boom"), 500),
])
def test_status_mapping(error, status):
    assert status_for(error) == status


def test_bearer_parsing():
    assert bearer_credentials("Bearer alice:s3cret") == Credentials(user_id="alice", token="s3cret")
    assert bearer_credentials("bearer bob") == Credentials(user_id="bob", token="")
    for header in (None, "", "Basic abc", "Bearer ", "Bearer :token"):
        with pytest.raises(Unauthenticated):
            bearer_credentials(header)


def test_create_application_needs_credentials(client, gateway):
    response = client.post("/applications", json={"model": "task"})
    assert response.status_code == 401
    assert response.json()["code"] == "Unauthenticated"
    gateway.create_application.assert_not_called()


def test_create_application(client, gateway):
    gateway.create_application.return_value = ApplicationRecord(app_id="a1", model=ProgrammingModel.TASK, owner="alice")
    response = client.post(
        "/applications", headers=AUTH,
        json={"model": "task", "display_name": "demo", "channels": ["aftp://tok@127.0.0.1:7100/"]},
    )
    assert response.status_code == 200
    assert response.json()["app_id"] == "a1"
    credentials, model, name, channels = gateway.create_application.call_args.args
    assert credentials.user_id == "alice"
    assert (model, name) == (ProgrammingModel.TASK, "demo")
    assert channels[0].endpoint == "127.0.0.1:7100"


def test_submit_encodes_params(client, gateway):
    gateway.submit.return_value = SubmitAck(job_ids=["j1", "j2"])
    response = client.post("/applications/a1/jobs", headers=AUTH, json={"jobs": [
        {"job_id": "j1", "operation": "fib", "params": {"n": 10}},
        {"job_id": "j2", "operation": "echo", "params_base64": base64.b64encode(b"\x00\x01").decode()},
    ]})
    assert response.status_code == 200
    assert response.json() == {"job_ids": ["j1", "j2"]}
    _, app_id, specs = gateway.submit.call_args.args
    assert app_id == "a1"
    assert specs[0].payload.params == b'{"n": 10}'
    assert specs[1].payload.params == b"\x00\x01"


def test_submit_rejects_both_params_forms(client, gateway):
    response = client.post("/applications/a1/jobs", headers=AUTH, json={"jobs": [
        {"operation": "echo", "params": 1, "params_base64": "AA=="},
    ]})
    assert response.status_code == 422
    gateway.submit.assert_not_called()


def test_cloud_errors_become_json_payloads(client, gateway):
    gateway.application.side_effect = UnknownApplication("application ghost is not registered")
    response = client.get("/applications/ghost")
    assert response.status_code == 404
    assert response.json() == {"code": "UnknownApplication", "message": "application ghost is not registered"}


# ---------------------------------------------------------------- live


def test_api_against_a_running_cloud(running_cloud):
    from app.clock import now_s
    from tests.conftest import wait_until

    api = TestClient(create_app(CloudGateway(running_cloud.master)))

    health = api.get("/health").json()
    assert health["status"] == "healthy"
    assert health["services"]["scheduler"] == "started"

    assert len(api.get("/nodes").json()) == 3

    app_id = api.post("/applications", headers=AUTH, json={"model": "task"}).json()["app_id"]
    ack = api.post(f"/applications/{app_id}/jobs", headers=AUTH, json={"jobs": [
        {"operation": "fib", "params": {"n": 15}},
    ]})
    assert ack.status_code == 200
    job_id = ack.json()["job_ids"][0]

    def completed() -> bool:
        jobs = api.get(f"/applications/{app_id}").json()["jobs"]
        return jobs[0]["state"] == "completed"

    assert wait_until(completed, timeout=30)
    job = api.get(f"/applications/{app_id}").json()["jobs"][0]
    assert job["job_id"] == job_id
    assert base64.b64decode(job["result"]) == b"610"

    start = now_s() + 3600
    body = {"node_count": 3, "earliest": start, "latest": start + 100, "duration_s": 100}
    assert api.post("/reservations", headers=AUTH, json=body).status_code == 200
    offer = api.post("/reservations", headers=AUTH, json=body)
    assert offer.status_code == 409
    assert offer.json()["proposed_window"]["start"] == start + 100

    stats = api.get("/stats").json()
    assert stats["nodes_alive"] == 3
    assert stats["reservations_active"] == 0
    assert stats["jobs_by_state"]["completed"] >= 1
