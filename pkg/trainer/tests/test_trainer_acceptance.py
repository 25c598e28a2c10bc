"""Secondary acceptance: separable-task bar and cross-component integration."""

from __future__ import annotations

import random
import socket
import threading
import time

import pytest
import uvicorn

from iktrainer.serve import create_app
from iktrainer.trainset import read_trainset


def _announce(name: str) -> None:
    print(f"ACCEPTANCE PASS: {name}")


def test_separable_task_bar(trained):
    """2000 lexically separable records, one epoch at lr 1e-4 on the tiny
    base: held-out accuracy and AUC both reach 0.9 on CPU in < 10 min."""
    config, report = trained
    assert config.epochs == 1 and config.learning_rate == 1e-4
    assert report.wall_seconds < 600.0
    assert report.val_accuracy >= 0.9, f"val accuracy {report.val_accuracy}"
    assert report.val_auc is not None and report.val_auc >= 0.9, f"val auc {report.val_auc}"
    _announce(
        f"trainer separable-task (acc {report.val_accuracy:.3f}, auc {report.val_auc:.3f}, "
        f"{report.wall_seconds:.0f}s)"
    )


@pytest.fixture
def served(trained):
    """The trained model behind real HTTP, shut down after the test."""
    _, report = trained
    with socket.socket() as probe:
        probe.bind(("127.0.0.1", 0))
        port = probe.getsockname()[1]
    server = uvicorn.Server(
        uvicorn.Config(create_app(report.model_dir), host="127.0.0.1", port=port, log_level="error")
    )
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.monotonic() + 15
    while not server.started:
        if time.monotonic() > deadline:
            raise RuntimeError("uvicorn did not start")
        time.sleep(0.02)
    yield f"http://127.0.0.1:{port}"
    server.should_exit = True
    thread.join(timeout=5)


def test_prompt_rendering_matches_primary():
    """Training-side rendering is byte-identical to the primary's versioned
    scorer prompt asset for the same (question, prefix)."""
    from ikgate.prompts import PROMPT_VERSIONS, render_scorer_prompt

    from iktrainer.prompt import PROMPT_VERSION, render_prompt

    assert PROMPT_VERSION == PROMPT_VERSIONS["scorer"]
    cases = [
        ("Capital of France?", "The answer is Paris."),
        ("Question with  double  spaces?", ""),
        ("Üñíçödé?", "prefix with\ttab"),
        ("", ""),
    ]
    for question, prefix in cases:
        assert render_prompt(question, prefix) == render_scorer_prompt(question, prefix)


def test_cross_component_integration(trained, served):
    """The primary scorer pointed at the served endpoint: zero extract errors
    over 500 requests, and the same held-out accuracy the trainer reported."""
    from ikgate.errors import MissingClassError
    from ikgate.records import QueryRecord
    from ikgate.scoring import EndpointScorer, score_query

    config, report = trained
    examples, _ = read_trainset(config.trainset_path)
    # reconstruct the trainer's held-out slice: same seeded shuffle
    order = list(examples)
    random.Random(config.seed).shuffle(order)
    held_out = order[: report.n_validation]
    assert len(held_out) == 500

    scorer = EndpointScorer(served)
    extract_errors = 0
    correct = 0
    for example in held_out:
        query = QueryRecord(id=example.id, question=example.question, golds=["-"])
        try:
            score = score_query(query, example.answer_prefix, scorer, prefix_tokens=32)
        except MissingClassError:
            extract_errors += 1
            continue
        predicted_yes = score.ik >= 0.5
        correct += predicted_yes == (example.label == "Yes")
    accuracy = correct / len(held_out)

    assert extract_errors == 0
    assert abs(accuracy - report.val_accuracy) <= 0.01, (
        f"endpoint accuracy {accuracy} vs trainer-reported {report.val_accuracy}"
    )
    _announce(
        f"cross-component integration (500 requests, 0 extract errors, "
        f"acc {accuracy:.3f} vs reported {report.val_accuracy:.3f})"
    )
