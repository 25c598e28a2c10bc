"""HTTP serving of a trained classifier.

POST /score {"question": str, "answer_prefix": str} -> {"yes_logit", "no_logit"}
GET /health -> {"status": "ok", ...}

Prompt rendering is the same render_prompt used at training time, so the
serving input is byte-identical to the training input for a given pair.
Malformed requests get a 400 naming the offending field.
"""

from __future__ import annotations

import json

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .model import load_model, score_prompt
from .prompt import PROMPT_VERSION, render_prompt


def create_app(model_dir: str) -> FastAPI:
    model, tokenizer, metadata = load_model(model_dir)
    app = FastAPI(title="ik-score endpoint")

    @app.get("/health")
    def health() -> dict:
        return {
            "status": "ok",
            "prompt_version": metadata.get("prompt_version", PROMPT_VERSION),
            "base_model": metadata.get("base_model"),
        }

    @app.post("/score")
    async def score(request: Request):
        try:
            body = await request.json()
        except json.JSONDecodeError:
            return JSONResponse(status_code=400, content={"error": "body is not valid JSON"})
        if not isinstance(body, dict):
            return JSONResponse(status_code=400, content={"error": "body must be a JSON object"})
        for field in ("question", "answer_prefix"):
            if field not in body:
                return JSONResponse(
                    status_code=400, content={"error": f"missing field {field!r}", "field": field}
                )
            if not isinstance(body[field], str):
                return JSONResponse(
                    status_code=400,
                    content={"error": f"field {field!r} must be a string", "field": field},
                )
        yes_logit, no_logit = score_prompt(
            model, tokenizer, render_prompt(body["question"], body["answer_prefix"])
        )
        return {"yes_logit": yes_logit, "no_logit": no_logit}

    return app


def serve(model_dir: str, port: int, host: str = "127.0.0.1") -> None:
    import uvicorn

    uvicorn.run(create_app(model_dir), host=host, port=port, log_level="warning")
