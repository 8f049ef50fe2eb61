"""HTTP service for the listening experiment and the melody-upload generator.

Evaluator-facing payloads are blinded: trials expose only content-hash MIDI
refs, never model tags. Responses are recorded append-only through the
experiment store and optionally mirrored to a JSONL file. The /generate
endpoint accepts a melody SMF body and returns accompaniment MIDIs with their
seeds.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import random
import threading
import uuid
from dataclasses import dataclass, field, asdict
from pathlib import Path

from fastapi import FastAPI, HTTPException, Query, Request
from fastapi.responses import Response as HttpResponse
from pydantic import BaseModel

from .experiment import (
    DuplicateResponseError,
    ExperimentStore,
    Response,
    export_results,
)
from .model import Checkpoint, SeqModel
from .sampling import SamplerConfig, generate_accompaniment
from .score import SmfParseError, parse_smf, write_smf

ENV_PREFIX = "ACCOMPANIST_"


@dataclass
class ServiceConfig:
    listen_addr: str = "127.0.0.1:8765"
    checkpoint_path: str | None = None
    data_root: str | None = None
    store_dir: str | None = None
    frontend_dir: str | None = None
    worker_count: int = 2
    default_generations: int = 3

    @classmethod
    def load(cls, path: str | os.PathLike | None = None) -> "ServiceConfig":
        """Config file (JSON) overridden by ACCOMPANIST_* environment variables."""
        values: dict = {}
        if path is not None:
            values.update(json.loads(Path(path).read_text()))
        env_map = {
            "LISTEN_ADDR": ("listen_addr", str),
            "CHECKPOINT": ("checkpoint_path", str),
            "DATA_ROOT": ("data_root", str),
            "STORE_DIR": ("store_dir", str),
            "FRONTEND_DIR": ("frontend_dir", str),
            "WORKERS": ("worker_count", int),
            "GENERATIONS": ("default_generations", int),
        }
        for suffix, (key, cast) in env_map.items():
            raw = os.environ.get(ENV_PREFIX + suffix)
            if raw is not None:
                values[key] = cast(raw)
        return cls(**values)


class MidiStore:
    """Content-hash keyed MIDI bytes, optionally mirrored to a directory."""

    def __init__(self, directory: Path | None = None):
        self._blobs: dict[str, bytes] = {}
        self._directory = directory
        if directory is not None:
            directory.mkdir(parents=True, exist_ok=True)
            for path in directory.glob("*.mid"):
                self._blobs[path.stem] = path.read_bytes()

    def put(self, data: bytes) -> str:
        digest = hashlib.sha256(data).hexdigest()
        if digest not in self._blobs:
            self._blobs[digest] = data
            if self._directory is not None:
                (self._directory / f"{digest}.mid").write_bytes(data)
        return digest

    def get(self, digest: str) -> bytes | None:
        return self._blobs.get(digest)


@dataclass
class Session:
    session_id: str
    evaluator_id: str
    queue: list[str]  # trial ids, seeded shuffle
    cursor: int = 0
    acks: dict[str, dict] = field(default_factory=dict)  # idempotency key -> ack

    @property
    def open(self) -> bool:
        return self.cursor < len(self.queue)


class ExperimentService:
    """Mutable state behind the app: store, sessions, files, generator."""

    def __init__(
        self,
        store: ExperimentStore | None = None,
        midi_store: MidiStore | None = None,
        experiment_id: str = "default",
        checkpoint: Checkpoint | None = None,
        sampler_config: SamplerConfig | None = None,
        sample_refs: dict[str, str] | None = None,  # sample id -> content hash
        melody_refs: dict[str, str] | None = None,  # melody id -> content hash
        response_log: Path | None = None,
        worker_count: int = 2,
        default_generations: int = 3,
    ):
        self.experiment_id = experiment_id
        self.store = store or ExperimentStore()
        self.midi = midi_store or MidiStore()
        self.sample_refs = sample_refs or {}
        self.melody_refs = melody_refs or {}
        self.sessions: dict[str, Session] = {}
        self.lock = threading.Lock()
        self.response_log = response_log
        self.checkpoint = checkpoint
        self._model: SeqModel | None = None
        self.sampler_config = sampler_config or SamplerConfig()
        self.generate_slots = threading.Semaphore(worker_count)
        self.default_generations = default_generations

    @property
    def model(self) -> SeqModel:
        if self._model is None:
            if self.checkpoint is None:
                raise RuntimeError("no checkpoint configured")
            self._model = SeqModel(self.checkpoint)
        return self._model

    def session_for_evaluator(self, evaluator_id: str) -> Session | None:
        for session in self.sessions.values():
            if session.evaluator_id == evaluator_id and session.open:
                return session
        return None

    def create_session(self, evaluator_id: str) -> Session:
        trials = self.store.trials_for(evaluator_id)
        seed_bytes = hashlib.sha256(f"{self.experiment_id}:{evaluator_id}".encode()).digest()
        rng = random.Random(int.from_bytes(seed_bytes[:8], "big"))
        queue = sorted(t.trial_id for t in trials)
        rng.shuffle(queue)
        session = Session(uuid.uuid4().hex, evaluator_id, queue)
        self.sessions[session.session_id] = session
        return session

    def record(self, session: Session, response: Response) -> None:
        with self.lock:
            self.store.record_response(response)
            if self.response_log is not None:
                with open(self.response_log, "a") as fh:
                    fh.write(json.dumps({"kind": "response", **asdict(response)}, sort_keys=True) + "\n")
            session.cursor += 1


class SessionRequest(BaseModel):
    evaluator: str


class ResponseBody(BaseModel):
    trial_id: str
    choice: str
    hard_errors_a: int = 0
    soft_errors_a: int = 0
    hard_errors_b: int = 0
    soft_errors_b: int = 0
    timestamp: float = 0.0
    idempotency_key: str | None = None


def create_app(service: ExperimentService, frontend_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="accompanist")

    @app.post("/experiments/{experiment_id}/sessions")
    def create_session(experiment_id: str, body: SessionRequest):
        if experiment_id != service.experiment_id:
            raise HTTPException(404, f"unknown experiment {experiment_id!r}")
        if not service.store.trials:
            raise HTTPException(409, "experiment has no built pairs")
        with service.lock:
            if service.session_for_evaluator(body.evaluator) is not None:
                raise HTTPException(409, f"evaluator {body.evaluator!r} already has an open session")
            session = service.create_session(body.evaluator)
        return {
            "session_id": session.session_id,
            "evaluator": session.evaluator_id,
            "total": len(session.queue),
            "answered": 0,
        }

    @app.get("/sessions/{session_id}/next")
    def next_trial(session_id: str):
        session = service.sessions.get(session_id)
        if session is None:
            raise HTTPException(404, "unknown session")
        if not session.open:
            return {"done": True, "answered": session.cursor, "total": len(session.queue)}
        trial = service.store.trials[session.queue[session.cursor]]
        melody_ref = service.melody_refs.get(trial.melody_id)
        return {
            "done": False,
            "trial_id": trial.trial_id,
            "melody": f"/midi/{melody_ref}" if melody_ref else None,
            "sample_a": f"/midi/{service.sample_refs[trial.slot_a]}",
            "sample_b": f"/midi/{service.sample_refs[trial.slot_b]}",
            "answered": session.cursor,
            "total": len(session.queue),
        }

    @app.post("/sessions/{session_id}/responses")
    def post_response(session_id: str, body: ResponseBody):
        session = service.sessions.get(session_id)
        if session is None:
            raise HTTPException(404, "unknown session")
        if body.idempotency_key and body.idempotency_key in session.acks:
            return session.acks[body.idempotency_key]
        if not session.open:
            raise HTTPException(409, "session already complete")
        expected = session.queue[session.cursor]
        if body.trial_id != expected:
            raise HTTPException(409, f"trial {body.trial_id} is not the cursor trial")
        try:
            response = Response(
                trial_id=body.trial_id,
                choice=body.choice,
                hard_errors_a=body.hard_errors_a,
                soft_errors_a=body.soft_errors_a,
                hard_errors_b=body.hard_errors_b,
                soft_errors_b=body.soft_errors_b,
                timestamp=body.timestamp,
            )
        except ValueError as err:
            raise HTTPException(422, str(err))
        try:
            service.record(session, response)
        except DuplicateResponseError:
            raise HTTPException(409, f"trial {body.trial_id} already has a response")
        ack = {"answered": session.cursor, "total": len(session.queue)}
        if body.idempotency_key:
            session.acks[body.idempotency_key] = ack
        return ack

    @app.get("/experiments/{experiment_id}/results")
    def results(experiment_id: str):
        if experiment_id != service.experiment_id:
            raise HTTPException(404, f"unknown experiment {experiment_id!r}")
        result = export_results(service.store)
        return {
            "per_type": [asdict(row) for row in result.per_type],
            "errors": [asdict(tally) for tally in result.errors],
            "total_trials": result.total_trials,
            "total_responses": result.total_responses,
        }

    @app.get("/midi/{digest}")
    def midi(digest: str):
        data = service.midi.get(digest)
        if data is None:
            raise HTTPException(404, "unknown MIDI ref")
        return HttpResponse(content=data, media_type="audio/midi")

    @app.post("/generate")
    async def generate_endpoint(
        request: Request,
        n: int | None = Query(default=None, ge=1, le=16),
        seed: int = Query(default=0),
        nucleus_p: float | None = Query(default=None),
        temperature: float | None = Query(default=None),
        rhythmic_temperature: float | None = Query(default=None),
    ):
        body = await request.body()
        try:
            melody_score = parse_smf(body)
        except SmfParseError as err:
            raise HTTPException(400, f"unparseable MIDI: {err}")
        if not melody_score.tracks or not melody_score.tracks[0].notes:
            raise HTTPException(400, "melody track is empty")
        overrides = {"seed": seed}
        if nucleus_p is not None:
            overrides["nucleus_p"] = nucleus_p
        if temperature is not None:
            overrides["temperature"] = temperature
        if rhythmic_temperature is not None:
            overrides["rhythmic_temperature"] = rhythmic_temperature
        try:
            config = SamplerConfig(**{**asdict(service.sampler_config), **overrides})
        except ValueError as err:
            raise HTTPException(422, str(err))
        count = n if n is not None else service.default_generations
        files = []
        with service.generate_slots:
            for i in range(count):
                result = generate_accompaniment(
                    service.model,
                    melody_score,
                    SamplerConfig(**{**asdict(config), "seed": config.seed + i}),
                )
                data = write_smf(result.score)
                files.append(
                    {
                        "seed": config.seed + i,
                        "ref": f"/midi/{service.midi.put(data)}",
                        "midi_base64": base64.b64encode(data).decode(),
                    }
                )
        return {"measures": melody_score.n_measures, "files": files}

    if frontend_dir and Path(frontend_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=frontend_dir, html=True), name="frontend")

    return app
