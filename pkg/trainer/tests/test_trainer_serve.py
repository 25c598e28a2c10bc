"""/score endpoint contract, exercised through the ASGI test client."""

from __future__ import annotations

import pytest
from fastapi.testclient import TestClient

from _trainer_helpers import write_separable_trainset
from iktrainer.serve import create_app
from iktrainer.train import TrainJobConfig, train


@pytest.fixture(scope="module")
def client(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("serve")
    trainset = tmp / "ts.jsonl"
    write_separable_trainset(trainset, n=800, seed=9)
    report = train(
        TrainJobConfig(trainset_path=str(trainset), out_dir=str(tmp / "model"), seed=9)
    )
    return TestClient(create_app(report.model_dir))


def test_health(client):
    response = client.get("/health")
    assert response.status_code == 200
    body = response.json()
    assert body["status"] == "ok"
    assert body["prompt_version"] == "scorer-prompt/1"


def test_score_contract(client):
    response = client.post("/score", json={"question": "alpha topic?", "answer_prefix": "fact"})
    assert response.status_code == 200
    body = response.json()
    assert set(body) == {"yes_logit", "no_logit"}
    assert isinstance(body["yes_logit"], float) and isinstance(body["no_logit"], float)


def test_separable_direction(client):
    yes_case = client.post("/score", json={"question": "alpha topic fact?", "answer_prefix": ""}).json()
    no_case = client.post("/score", json={"question": "omega topic fact?", "answer_prefix": ""}).json()
    yes_margin = yes_case["yes_logit"] - yes_case["no_logit"]
    no_margin = no_case["yes_logit"] - no_case["no_logit"]
    assert yes_margin > no_margin  # marker flips the decision direction
    assert yes_margin > 0 and no_margin < 0


def test_missing_answer_prefix_is_400_naming_field(client):
    response = client.post("/score", json={"question": "alpha?"})
    assert response.status_code == 400
    assert response.json()["field"] == "answer_prefix"


def test_missing_question_is_400_naming_field(client):
    response = client.post("/score", json={"answer_prefix": ""})
    assert response.status_code == 400
    assert response.json()["field"] == "question"


def test_non_string_field_is_400(client):
    response = client.post("/score", json={"question": "q?", "answer_prefix": 7})
    assert response.status_code == 400
    assert response.json()["field"] == "answer_prefix"


def test_invalid_json_body_is_400(client):
    response = client.post(
        "/score", content=b"{nope", headers={"Content-Type": "application/json"}
    )
    assert response.status_code == 400


def test_model_load_failure_names_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError, match="model.pt"):
        create_app(str(tmp_path))
