"""HTTP service for the two-alternative forced-choice study.

Serves pairs of transferred images from the same style/content cell (style
reference for the effectiveness test, content reference for the coherence
test, where the pool is restricted to high-effectiveness images), records
forced-choice clicks into the calibration click log, and exports it.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass
from itertools import count
from pathlib import Path

import numpy as np

from .calibration import ClickRecord, click_to_json, top_quartile_threshold


class StudyError(ValueError):
    pass


class PoolExhausted(StudyError):
    pass


class DuplicateClick(StudyError):
    pass


@dataclass(frozen=True)
class PoolImage:
    id: str
    style_id: str
    content_id: str
    e_sum: float
    file: str  # path relative to the pool directory


@dataclass(frozen=True)
class PairAssignment:
    pair_id: str
    test: str
    reference_image: str
    left_id: str
    right_id: str

    def to_json(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "test": self.test,
            "reference_image": self.reference_image,
            "left_id": self.left_id,
            "right_id": self.right_id,
            "left_url": f"/img/{self.left_id}",
            "right_url": f"/img/{self.right_id}",
        }


def load_pool(pool_dir) -> list:
    """Read pool.json: {"images": [{id, style_id, content_id, e_sum, file}]}"""
    pool_dir = Path(pool_dir)
    manifest = json.loads((pool_dir / "pool.json").read_text())
    images = []
    for entry in manifest["images"]:
        images.append(
            PoolImage(
                id=str(entry["id"]),
                style_id=str(entry["style_id"]),
                content_id=str(entry["content_id"]),
                e_sum=float(entry["e_sum"]),
                file=str(entry["file"]),
            )
        )
    if not images:
        raise StudyError("empty pool")
    return images


def write_pool_manifest(images, pool_dir) -> Path:
    pool_dir = Path(pool_dir)
    pool_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "images": [
            {
                "id": im.id,
                "style_id": im.style_id,
                "content_id": im.content_id,
                "e_sum": im.e_sum,
                "file": im.file,
            }
            for im in images
        ]
    }
    path = pool_dir / "pool.json"
    path.write_text(json.dumps(payload, indent=1, sort_keys=True))
    return path


def pool_from_trials(trials, reference_kind: dict | None = None) -> list:
    """PoolImages from ok harness trials that saved an output image."""
    from .harness.fixtures import trial_id

    images = []
    for t in trials:
        if t.status != "ok" or not t.image_path:
            continue
        images.append(
            PoolImage(
                id=trial_id(t),
                style_id=t.style_id,
                content_id=t.content_id,
                e_sum=float(sum(t.e)),
                file=t.image_path,
            )
        )
    return images


class StudyState:
    """Pool, session bookkeeping, and the append-only click log.

    The pool is immutable after load; click appends and pair bookkeeping go
    through one lock. The eligibility threshold for the coherence test is
    computed once at load time.
    """

    def __init__(self, images, pool_dir, log_path, seed=None):
        self.images = {im.id: im for im in images}
        if len(self.images) != len(images):
            raise StudyError("duplicate image ids in pool")
        self.pool_dir = Path(pool_dir)
        self.log_path = Path(log_path)
        self.log_path.parent.mkdir(parents=True, exist_ok=True)
        if not self.log_path.exists():
            self.log_path.touch()
        self.rng = np.random.default_rng(seed)
        self.lock = threading.Lock()
        self.c_threshold = top_quartile_threshold([im.e_sum for im in images])
        self.cells: dict = {"E": {}, "C": {}}
        for im in images:
            self.cells["E"].setdefault((im.style_id, im.content_id), []).append(im)
            if im.e_sum >= self.c_threshold:
                self.cells["C"].setdefault((im.style_id, im.content_id), []).append(im)
        for test in ("E", "C"):
            self.cells[test] = {
                cell: sorted(members, key=lambda im: im.id)
                for cell, members in self.cells[test].items()
                if len(members) >= 2
            }
        self.served: dict = {}  # pair_id -> PairAssignment
        self.session_pairs: dict = {}  # session -> set of frozenset(id pair)
        self.clicked: set = set()  # (pair_id, user_id)
        self._pair_counter = count()

    def serve_pair(self, test: str, session: str) -> PairAssignment:
        if test not in ("E", "C"):
            raise StudyError(f"test must be E or C, got {test!r}")
        with self.lock:
            cells = self.cells[test]
            if not cells:
                raise PoolExhausted(f"no eligible pairs for the {test}-test")
            seen = self.session_pairs.setdefault(session, set())
            candidates = []
            for cell, members in sorted(cells.items()):
                fresh = [
                    (a, b)
                    for i, a in enumerate(members)
                    for b in members[i + 1 :]
                    if frozenset((a.id, b.id)) not in seen
                ]
                if fresh:
                    candidates.append((cell, fresh))
            if not candidates:
                raise PoolExhausted(f"session {session} exhausted the {test}-test pool")
            cell, fresh = candidates[self.rng.integers(0, len(candidates))]
            a, b = fresh[self.rng.integers(0, len(fresh))]
            if self.rng.random() < 0.5:
                a, b = b, a
            pair_id = f"pair{next(self._pair_counter):08d}"
            reference = a.style_id if test == "E" else a.content_id
            assignment = PairAssignment(
                pair_id=pair_id, test=test, reference_image=reference,
                left_id=a.id, right_id=b.id,
            )
            self.served[pair_id] = assignment
            seen.add(frozenset((a.id, b.id)))
            return assignment

    def record_click(self, pair_id: str, chosen: str, user_id: str) -> ClickRecord:
        with self.lock:
            if pair_id not in self.served:
                raise StudyError(f"unknown pair id {pair_id!r}")
            if (pair_id, user_id) in self.clicked:
                raise DuplicateClick(f"pair {pair_id} already clicked by {user_id}")
            assignment = self.served[pair_id]
            record = ClickRecord(
                pair_id=pair_id,
                test=assignment.test,
                left_id=assignment.left_id,
                right_id=assignment.right_id,
                chosen=chosen,
                user_id=user_id,
                timestamp=int(time.time() * 1000),
            )
            with open(self.log_path, "a") as f:
                f.write(click_to_json(record) + "\n")
            self.clicked.add((pair_id, user_id))
            return record

    def export_text(self) -> str:
        with self.lock:
            return self.log_path.read_text()

    def image_file(self, image_id: str) -> Path:
        if image_id not in self.images:
            raise StudyError(f"unknown image id {image_id!r}")
        path = self.pool_dir / self.images[image_id].file
        if not path.exists():
            raise StudyError(f"image file missing for {image_id!r}")
        return path


def create_app(state: StudyState):
    from fastapi import FastAPI, HTTPException
    from fastapi.middleware.cors import CORSMiddleware
    from fastapi.responses import FileResponse, PlainTextResponse
    from pydantic import BaseModel

    app = FastAPI(title="styleval study service")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    class ClickBody(BaseModel):
        pair_id: str
        chosen: str
        user_id: str

    @app.get("/pair")
    def get_pair(test: str, session: str):
        try:
            return state.serve_pair(test, session).to_json()
        except PoolExhausted as e:
            raise HTTPException(status_code=410, detail=str(e))
        except StudyError as e:
            raise HTTPException(status_code=400, detail=str(e))

    @app.post("/click")
    def post_click(body: ClickBody):
        try:
            state.record_click(body.pair_id, body.chosen, body.user_id)
        except DuplicateClick as e:
            raise HTTPException(status_code=409, detail=str(e))
        except StudyError as e:
            raise HTTPException(status_code=400, detail=str(e))
        return {"status": "ok"}

    @app.get("/export", response_class=PlainTextResponse)
    def export():
        return state.export_text()

    @app.get("/img/{image_id}")
    def image(image_id: str):
        try:
            return FileResponse(state.image_file(image_id), media_type="image/png")
        except StudyError as e:
            raise HTTPException(status_code=404, detail=str(e))

    return app


def serve(pool_dir, log_path, port: int = 8400, seed=None):
    import uvicorn

    state = StudyState(load_pool(pool_dir), pool_dir, log_path, seed=seed)
    uvicorn.run(create_app(state), host="127.0.0.1", port=port, log_level="warning")
