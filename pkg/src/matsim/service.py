"""HTTP session service for live annotation.

Serves adaptively selected triplets, records answers with per-session
idempotency, applies the control-consistency rejection rule on completion,
and merges only valid sessions' answers into the global store used for
posterior refits.  Trial kind never appears in any response body.
"""

from __future__ import annotations

import json
import os
import secrets
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import FileResponse
from pydantic import BaseModel

from .data import AnswerStore, DatasetBundle, TripletAnswer, save_answers
from .sampling import (HitPlan, SamplingError, SamplingPlan, append_convergence_log,
                       build_hit, judge_worker, select_next_pairs)
from .tste import TsteConfig, TsteEmbedding, tste_fit

ADMIN_TOKEN_ENV = "PERCEPT_ADMIN_TOKEN"


@dataclass
class Session:
    session_id: str
    worker: str
    hit_plan: HitPlan
    cursor: int = 0
    answers: list = field(default_factory=list)
    acks: dict = field(default_factory=dict)   # trial_index -> response body
    status: str = "active"
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)


@dataclass
class ServerState:
    bundle: DatasetBundle
    store: AnswerStore
    plan: SamplingPlan
    embedding: TsteEmbedding
    iteration: int = 0
    plan_cursor: int = 0                     # next unassigned unique trial
    sessions: dict = field(default_factory=dict)
    hit_size: int = 110
    n_training: int = 5
    n_control: int = 10
    asymmetric: bool = False
    coverage_threshold: float = 0.8
    persist_dir: Path | None = None
    convergence: list = field(default_factory=list)
    seed: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def pick_views(self, rng: np.random.Generator, materials: list[str]) -> list[str]:
        """One view id per material; symmetric mode shares a single
        (shape, illumination) condition across the whole triplet."""
        if self.asymmetric:
            out = []
            for m in materials:
                views = self.bundle.views_of(m)
                out.append(views[rng.integers(len(views))].view_id)
            return out
        conditions = [
            {(v.shape_tag, v.illumination_tag) for v in self.bundle.views_of(m)}
            for m in materials
        ]
        shared = sorted(set.intersection(*conditions))
        if shared:
            cond = shared[rng.integers(len(shared))]
            out = []
            for m in materials:
                v = next(v for v in self.bundle.views_of(m)
                         if (v.shape_tag, v.illumination_tag) == cond)
                out.append(v.view_id)
            return out
        return [self.bundle.views_of(m)[0].view_id for m in materials]

    def persist_session(self, session: Session) -> None:
        if self.persist_dir is None:
            return
        path = self.persist_dir / "sessions.jsonl"
        with open(path, "a") as fh:
            fh.write(json.dumps({
                "session_id": session.session_id,
                "worker": session.worker,
                "status": session.status,
                "answers": [
                    {"reference": a.reference, "option_a": a.option_a,
                     "option_b": a.option_b, "chosen": a.chosen,
                     "kind": a.kind, "timestamp": a.timestamp}
                    for a in session.answers
                ],
            }) + "\n")

    def persist_store(self) -> None:
        if self.persist_dir is not None:
            save_answers(self.persist_dir / "answers.jsonl", self.store)


class SessionRequest(BaseModel):
    worker: str
    hit_size: int | None = None


class AnswerRequest(BaseModel):
    trial_index: int
    chosen: str


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def create_app(state: ServerState, static_dir: Path | None = None) -> FastAPI:
    app = FastAPI(title="matsim annotation service")
    rng = np.random.default_rng(state.seed)

    def get_session(session_id: str) -> Session:
        session = state.sessions.get(session_id)
        if session is None:
            raise HTTPException(404, "unknown session")
        return session

    @app.post("/api/sessions", status_code=201)
    def create_session(req: SessionRequest):
        with state.lock:
            hit_size = req.hit_size or state.hit_size
            n_unique = hit_size - state.n_training - state.n_control
            remaining = len(state.plan.pairs) - state.plan_cursor
            if n_unique <= 0:
                raise HTTPException(400, "hit_size too small")
            if remaining < n_unique:
                raise HTTPException(409, "no trials remain in the current plan")
            try:
                plan = build_hit(state.plan, hit_size, state.n_training,
                                 state.n_control, rng, state.embedding,
                                 start=state.plan_cursor)
            except SamplingError as exc:
                raise HTTPException(409, str(exc)) from exc
            state.plan_cursor += n_unique
            session_id = secrets.token_hex(8)
            state.sessions[session_id] = Session(session_id, req.worker, plan)
        return {"session_id": session_id, "n_trials": len(plan)}

    @app.get("/api/sessions/{session_id}/next")
    def next_trial(session_id: str):
        session = get_session(session_id)
        if session.status != "active":
            raise HTTPException(410, f"session {session.status}")
        if session.cursor >= len(session.hit_plan):
            return {"done": True}
        trial = session.hit_plan.trials[session.cursor]
        ref_v, a_v, b_v = state.pick_views(rng, [trial.reference, trial.a, trial.b])
        return {
            "trial_index": session.cursor,
            "reference_view": ref_v,
            "candidate_a_view": a_v,
            "candidate_b_view": b_v,
            "progress": session.cursor / len(session.hit_plan),
        }

    @app.post("/api/sessions/{session_id}/answer")
    def answer(session_id: str, req: AnswerRequest):
        session = get_session(session_id)
        with session.lock:
            if req.trial_index in session.acks:
                return session.acks[req.trial_index]
            if session.status != "active":
                raise HTTPException(410, f"session {session.status}")
            if req.trial_index != session.cursor:
                raise HTTPException(409, "out-of-order trial index")
            if req.chosen not in ("a", "b"):
                raise HTTPException(400, "chosen must be 'a' or 'b'")
            trial = session.hit_plan.trials[session.cursor]
            session.answers.append(TripletAnswer(
                trial.reference, trial.a, trial.b, req.chosen.upper(),
                session.worker, trial.kind, _now()))
            session.cursor += 1
            if session.cursor == len(session.hit_plan):
                verdict = judge_worker(session.answers, session.hit_plan)
                session.status = "complete" if verdict["valid"] else "rejected"
                if verdict["valid"]:
                    with state.lock:
                        state.store.extend(a for a in session.answers
                                           if a.kind != "training")
                        state.persist_store()
                state.persist_session(session)
            body = {"accepted": True,
                    "remaining": len(session.hit_plan) - session.cursor}
            session.acks[req.trial_index] = body
            return body

    @app.get("/api/sessions/{session_id}/result")
    def result(session_id: str):
        session = get_session(session_id)
        if session.status == "active":
            return {"status": "active", "inconsistencies": None}
        verdict = judge_worker(session.answers, session.hit_plan)
        return {"status": session.status,
                "inconsistencies": verdict["inconsistencies"]}

    @app.get("/api/state/convergence")
    def convergence():
        return {"iteration": state.iteration,
                "mean_information_gain": state.plan.mean_information_gain,
                "answers_total": len(state.store),
                "history": state.convergence}

    @app.post("/api/state/advance")
    def advance(request: Request):
        token = os.environ.get(ADMIN_TOKEN_ENV, "")
        auth = request.headers.get("authorization", "")
        if not token or auth != f"Bearer {token}":
            raise HTTPException(401, "admin token required")
        with state.lock:
            asked = state.plan_cursor
            coverage = asked / len(state.plan.pairs) if state.plan.pairs else 1.0
            if coverage < state.coverage_threshold:
                raise HTTPException(
                    409, f"plan coverage {coverage:.2f} below threshold")
            state.iteration += 1
            state.embedding = tste_fit(state.store, TsteConfig(seed=state.seed))
            state.plan = select_next_pairs(
                state.store, state.bundle.material_ids,
                rng=np.random.default_rng(state.seed + state.iteration),
                iteration=state.iteration)
            state.plan_cursor = 0
            state.convergence.append({
                "iteration": state.iteration,
                "mean_ig": state.plan.mean_information_gain,
            })
            if state.persist_dir is not None:
                append_convergence_log(state.persist_dir / "convergence.csv",
                                       state.iteration,
                                       state.plan.mean_information_gain)
        return {"new_iteration": state.iteration,
                "mean_information_gain": state.plan.mean_information_gain}

    @app.get("/api/assets/{view_id}")
    def asset(view_id: str):
        if state.bundle.assets_dir is None:
            raise HTTPException(404, "dataset has no display assets")
        try:
            state.bundle.view(view_id)
        except Exception as exc:
            raise HTTPException(404, "unknown view") from exc
        for ext in (".png", ".jpg", ".jpeg"):
            path = state.bundle.assets_dir / f"{view_id}{ext}"
            if path.exists():
                return FileResponse(path)
        raise HTTPException(404, "no asset for view")

    if static_dir is not None and Path(static_dir).is_dir():
        static_dir = Path(static_dir)

        @app.get("/")
        def index_page():
            return FileResponse(static_dir / "index.html")

        @app.get("/static/{name}")
        def static_file(name: str):
            path = (static_dir / name).resolve()
            if static_dir.resolve() not in path.parents or not path.exists():
                raise HTTPException(404, "not found")
            return FileResponse(path)

    return app


def bootstrap_state(bundle: DatasetBundle, store: AnswerStore,
                    seed: int = 0, hit_size: int = 110, n_training: int = 5,
                    n_control: int = 10, asymmetric: bool = False,
                    persist_dir: Path | None = None) -> ServerState:
    """Initial server state: bootstrap plan when no answers exist yet,
    otherwise refit from the stored answers."""
    rng = np.random.default_rng(seed)
    if len(store) == 0:
        # seed the embedding from a random bootstrap plan answered nowhere:
        # training trials still need point positions, so scatter at random
        ids = bundle.material_ids
        pts = rng.standard_normal((len(ids), 2)) * 0.1
        embedding = TsteEmbedding(list(ids), pts, 0.0, 0.0, True, 5.0, seed)
        plan = select_next_pairs(store, ids, rng=rng, bootstrap=True)
    else:
        embedding = tste_fit(store, TsteConfig(seed=seed))
        plan = select_next_pairs(store, bundle.material_ids, rng=rng)
    return ServerState(bundle=bundle, store=store, plan=plan,
                       embedding=embedding, hit_size=hit_size,
                       n_training=n_training, n_control=n_control,
                       asymmetric=asymmetric, persist_dir=persist_dir,
                       seed=seed)
