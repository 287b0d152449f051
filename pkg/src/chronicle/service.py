"""JSON-over-HTTP service exposing a loaded model: forecasting, generation,
saliency, and vocabulary search. Stateless; timelines travel fully in
request bodies and responses are pure functions of (artifact, request)."""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .errors import SequenceTooLong, UnknownToken
from .metrics import NEW, RECURRING, candidate_filter
from .model import Model, SamplerConfig
from .ontology import ConceptType, Ontology
from .tokens import parse_token

VOCAB_SEARCH_LIMIT = 50


class ServiceError(Exception):
    def __init__(self, status: int, code: str, detail: str):
        super().__init__(detail)
        self.status = status
        self.code = code
        self.detail = detail


class ForecastRequest(BaseModel):
    items: list[str]
    type: str | None = None
    novelty: str | None = None
    k: int = Field(default=10, ge=1, le=100)


class GenerateRequest(BaseModel):
    items: list[str]
    top_k: int = Field(default=100, ge=1)
    temperature: float = Field(default=1.0, gt=0.0)
    seed: int = 0
    max_new_tokens: int = Field(default=15, ge=0)


class SaliencyRequest(BaseModel):
    items: list[str]
    target: str


def _encode_items(model: Model, items: list[str]) -> list[int]:
    if not items:
        raise ServiceError(400, "empty_timeline", "request timeline has no tokens")
    ids = []
    for pos, spelling in enumerate(items):
        try:
            parse_token(spelling)
        except UnknownToken as exc:
            raise ServiceError(
                400, "unknown_token", f"position {pos}: {exc}"
            ) from None
        idx = model.vocab.encode_known(spelling)
        if idx is None:
            raise ServiceError(
                400,
                "unknown_token",
                f"position {pos}: token {spelling!r} is not in the model vocabulary",
            )
        ids.append(idx)
    if len(ids) > model.config.context_len:
        raise ServiceError(
            422,
            "sequence_too_long",
            f"{len(ids)} tokens exceed the context window of "
            f"{model.config.context_len}",
        )
    return ids


def _request_history(items: list[str]) -> set[str]:
    return {s[2:] for s in items if s.startswith("C:")}


def create_app(model: Model, ontology: Ontology, version: str = "dev") -> FastAPI:
    app = FastAPI(title="chronicle", version=version)
    app.add_middleware(  # the browser explorer runs on its own origin
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(ServiceError)
    async def _service_error(_: Request, exc: ServiceError):
        return JSONResponse(
            status_code=exc.status, content={"error": exc.code, "detail": exc.detail}
        )

    @app.exception_handler(RequestValidationError)
    async def _validation_error(_: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=400, content={"error": "invalid_request", "detail": str(exc)}
        )

    def concept_name(concept_id: str) -> str:
        return (
            ontology.name_of(concept_id) if concept_id in ontology else concept_id
        )

    @app.get("/v1/health")
    def health():
        return {"status": "ok", "model_version": version}

    @app.post("/v1/forecast")
    def forecast(req: ForecastRequest):
        ids = _encode_items(model, req.items)
        gt_type = None
        if req.type is not None:
            gt_type = ConceptType.parse_or_none(req.type)
            if gt_type is None:
                raise ServiceError(400, "unknown_type", f"unknown type {req.type!r}")
            gt_type = gt_type.value
        if req.novelty is not None and req.novelty not in (NEW, RECURRING):
            raise ServiceError(
                400, "invalid_request", f"novelty must be '{NEW}' or '{RECURRING}'"
            )

        dist = model.next_distribution(ids)
        history = _request_history(req.items)
        ranked = candidate_filter(
            dist, model.vocab, gt_type, req.novelty, history, req.k
        )
        candidates = [
            {
                "concept": cid,
                "name": concept_name(cid),
                "type": model.vocab.concept_types.get(f"C:{cid}"),
                "probability": float(dist[model.vocab.index[f"C:{cid}"]]),
                "novelty": RECURRING if cid in history else NEW,
            }
            for cid in ranked
        ]
        return {"candidates": candidates}

    @app.post("/v1/generate")
    def generate(req: GenerateRequest):
        ids = _encode_items(model, req.items)
        sc = SamplerConfig(
            top_k=req.top_k,
            temperature=req.temperature,
            seed=req.seed,
            max_new_tokens=req.max_new_tokens,
        )
        try:
            out = model.generate(ids, sc)
        except SequenceTooLong as exc:
            raise ServiceError(422, "sequence_too_long", str(exc)) from None
        items = []
        for idx, generated in out:
            spelling = model.vocab.decode(idx)
            entry = {
                "token": spelling,
                "source": "generated" if generated else "prompt",
            }
            if spelling.startswith("C:"):
                entry["name"] = concept_name(spelling[2:])
            items.append(entry)
        return {"items": items, "seed": req.seed, "top_k": req.top_k}

    @app.post("/v1/saliency")
    def saliency(req: SaliencyRequest):
        ids = _encode_items(model, req.items)
        target_idx = model.vocab.encode_known(req.target)
        if target_idx is None:
            raise ServiceError(
                400, "unknown_token", f"target {req.target!r} is not in the vocabulary"
            )
        scores = model.saliency(ids, target_idx)
        return {
            "items": req.items,
            "target": req.target,
            "scores": [float(s) for s in scores],
        }

    @app.get("/v1/vocab")
    def vocab_search(query: str = ""):
        needle = query.lower()
        matches = []
        for concept_id in sorted(
            model.vocab.concept_id(i)
            for i in range(len(model.vocab))
            if model.vocab.is_concept(i)
        ):
            name = concept_name(concept_id)
            if needle in name.lower() or needle in concept_id.lower():
                matches.append(
                    {
                        "concept": concept_id,
                        "name": name,
                        "type": model.vocab.concept_types.get(f"C:{concept_id}"),
                    }
                )
                if len(matches) >= VOCAB_SEARCH_LIMIT:
                    break
        return {"matches": matches}

    return app


def serve(artifact_path: str, ontology_path: str, bind: str) -> None:
    """Load the artifact, verify it, and block serving HTTP."""
    import uvicorn

    from .artifact import artifact_version, load_model
    from .ontology import load_ontology_file

    model = load_model(artifact_path)
    ontology = load_ontology_file(ontology_path)
    app = create_app(model, ontology, version=artifact_version(artifact_path))
    host, _, port = bind.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"bind address must be host:port, got {bind!r}")
    uvicorn.run(app, host=host, port=int(port), log_level="warning")
