"""Local HTTP session service for interactive annotation.

One session per cloud; the encoding is computed once at session creation and
every click is a decoder-only pass. Prompt history is replayable: undo pops
the last prompt and restores the previous prediction bit-for-bit.
"""

from __future__ import annotations

import base64
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import Response
from pydantic import BaseModel

from . import autograd as ag
from .geometry import PointCloud
from .model import PromptSegModel, PromptSet
from .pcio import decode_pcb, encode_pcb, load_cloud, masks_to_label_json


class CreateSession(BaseModel):
    cloud: str  # base64 PCB1 bytes, or a server-side file path


class PromptIn(BaseModel):
    x: float
    y: float
    z: float
    label: int


class SelectIn(BaseModel):
    mask_index: int


class CommitIn(BaseModel):
    name: str


@dataclass
class _Step:
    point_index: int
    label: int
    masks_u8: list[bytes]      # quantized probabilities per output mask
    ious: list[float]
    multimask: bool
    logits: np.ndarray         # (M', N) raw logits for mask-prompt chaining
    selected: int = 0


@dataclass
class AnnotationSession:
    id: str
    cloud: PointCloud
    session: object            # model session (cached encoding)
    steps: list[_Step] = field(default_factory=list)
    labels: list[tuple[str, np.ndarray]] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)

    @property
    def current(self) -> _Step | None:
        return self.steps[-1] if self.steps else None


def _quantize(logits: np.ndarray) -> bytes:
    from scipy.special import expit

    return (np.rint(expit(logits) * 255.0)).astype(np.uint8).tobytes()


def _step_payload(step: _Step | None) -> dict:
    if step is None:
        return {"masks": [], "ious": [], "multimask": False}
    return {
        "masks": [base64.b64encode(m).decode("ascii") for m in step.masks_u8],
        "ious": step.ious,
        "multimask": step.multimask,
    }


def create_app(model: PromptSegModel, cloud_root: str | Path = ".") -> FastAPI:
    app = FastAPI(title="promptseg annotation service")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    sessions: dict[str, AnnotationSession] = {}
    app.state.sessions = sessions
    cloud_root = Path(cloud_root)

    def _get(sid: str) -> AnnotationSession:
        if sid not in sessions:
            raise HTTPException(status_code=404, detail="unknown session")
        return sessions[sid]

    @app.post("/sessions")
    def create_session(body: CreateSession):
        raw = body.cloud
        cloud = None
        try:
            blob = base64.b64decode(raw, validate=True)
            if blob[:4] == b"PCB1":
                cloud = decode_pcb(blob)
        except Exception:
            cloud = None
        if cloud is None:
            path = (cloud_root / raw).resolve()
            if not path.exists():
                raise HTTPException(status_code=422, detail="cloud is neither base64 PCB1 nor an existing path")
            cloud = load_cloud(path)
        with ag.no_grad():
            model_session = model.start_session(cloud)
        sid = uuid.uuid4().hex[:12]
        sessions[sid] = AnnotationSession(id=sid, cloud=cloud, session=model_session)
        pts = model_session.cloud.points
        return {
            "id": sid,
            "n_points": cloud.n,
            "bounds": {"min": pts.min(axis=0).tolist(), "max": pts.max(axis=0).tolist()},
        }

    def _predict_step(state: AnnotationSession, point_index: int, label: int) -> _Step:
        prior = state.current
        indices = [s.point_index for s in state.steps] + [point_index]
        labels = [s.label for s in state.steps] + [label]
        mask_logits = prior.logits[prior.selected].copy() if prior is not None else None
        prompts = state.session.prompts_from_indices(indices, labels, mask_logits=mask_logits)
        with ag.no_grad():
            pred = state.session.predict(prompts)
        return _Step(
            point_index=point_index,
            label=label,
            masks_u8=[_quantize(pred.mask_logits[m]) for m in range(pred.n_masks)],
            ious=[float(v) for v in pred.iou_pred],
            multimask=pred.multimask,
            logits=pred.mask_logits.copy(),
            selected=pred.best_index(),
        )

    @app.post("/sessions/{sid}/prompts")
    def add_prompt(sid: str, body: PromptIn):
        state = _get(sid)
        if body.label not in (0, 1):
            raise HTTPException(status_code=422, detail="label must be 0 or 1")
        with state.lock:
            coord = np.array([body.x, body.y, body.z], dtype=np.float32)
            norm = state.session.encoding.normalization.apply(coord.reshape(1, 3))[0]
            d = ((state.session.cloud.points - norm) ** 2).sum(axis=1)
            point_index = int(np.argmin(d))  # snap to the nearest cloud point
            step = _predict_step(state, point_index, body.label)
            state.steps.append(step)
            return _step_payload(step)

    @app.post("/sessions/{sid}/select")
    def select_mask(sid: str, body: SelectIn):
        state = _get(sid)
        with state.lock:
            step = state.current
            if step is None:
                raise HTTPException(status_code=409, detail="no prediction yet")
            if not 0 <= body.mask_index < len(step.masks_u8):
                raise HTTPException(status_code=422, detail="mask_index out of range")
            step.selected = body.mask_index
            return {"ok": True, "selected": step.selected}

    @app.post("/sessions/{sid}/undo")
    def undo(sid: str):
        state = _get(sid)
        with state.lock:
            if not state.steps:
                raise HTTPException(status_code=409, detail="nothing to undo")
            state.steps.pop()
            return _step_payload(state.current)

    @app.post("/sessions/{sid}/commit")
    def commit(sid: str, body: CommitIn):
        state = _get(sid)
        with state.lock:
            step = state.current
            if step is None:
                raise HTTPException(status_code=409, detail="nothing to commit")
            mask = step.logits[step.selected] > 0
            state.labels.append((body.name, mask))
            return {"ok": True, "labels": len(state.labels)}

    @app.get("/sessions/{sid}/labels")
    def get_labels(sid: str):
        state = _get(sid)
        return masks_to_label_json(state.cloud.n, state.labels)

    @app.get("/sessions/{sid}/cloud")
    def get_cloud(sid: str):
        state = _get(sid)
        return Response(content=encode_pcb(state.cloud), media_type="application/octet-stream")

    return app


def serve(model: PromptSegModel, port: int = 8444, host: str = "127.0.0.1", cloud_root=".", static_dir=None):
    import uvicorn

    app = create_app(model, cloud_root=cloud_root)
    if static_dir is not None and Path(static_dir).exists():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")
    uvicorn.run(app, host=host, port=port, log_level="warning")
