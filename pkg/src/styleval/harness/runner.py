"""Trial execution over a dataset with a resumable append-only CSV ledger."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from ..calibration import CalibratedModel
from ..coherence import base_c
from ..nncore import NetworkSpec, STYLE_TAPS
from ..stats import ProjectionBasis, base_e_against_summaries, style_summaries
from ..transfer import GalParams, TransferConfig, run_transfer

log = logging.getLogger(__name__)

AGGRESSIVE_METHODS = {"GatysAggressive": "Gatys", "XLAggressive": "XL"}
AGGRESSIVE_FACTOR = 5.0  # maps the top of the main range onto the aggressive range

LEDGER_FIELDS = (
    "method",
    "style_id",
    "content_id",
    "weight",
    "seed",
    "status",
    "E1",
    "E2",
    "E3",
    "E4",
    "E5",
    "C",
    "e_score",
    "c_score",
    "image_path",
)


@dataclass(frozen=True)
class Trial:
    method: str
    style_id: str
    content_id: str
    weight: float
    seed: int
    status: str = "ok"
    e: tuple = ()
    c: float = float("nan")
    e_score: float = float("nan")
    c_score: float = float("nan")
    image_path: str = ""

    def key(self):
        return (self.method, self.style_id, self.content_id, repr(float(self.weight)), self.seed)

    def stats(self) -> dict:
        d = {f"E{i+1}": self.e[i] for i in range(len(self.e))}
        d["C"] = self.c
        return d


def _fmt(x) -> str:
    return repr(float(x))


def trial_to_row(t: Trial) -> dict:
    row = {
        "method": t.method,
        "style_id": t.style_id,
        "content_id": t.content_id,
        "weight": _fmt(t.weight),
        "seed": str(t.seed),
        "status": t.status,
        "C": _fmt(t.c),
        "e_score": _fmt(t.e_score),
        "c_score": _fmt(t.c_score),
        "image_path": t.image_path,
    }
    for i in range(5):
        row[f"E{i+1}"] = _fmt(t.e[i]) if i < len(t.e) else _fmt(float("nan"))
    return row


def row_to_trial(row: dict) -> Trial:
    return Trial(
        method=row["method"],
        style_id=row["style_id"],
        content_id=row["content_id"],
        weight=float(row["weight"]),
        seed=int(row["seed"]),
        status=row["status"],
        e=tuple(float(row[f"E{i+1}"]) for i in range(5)),
        c=float(row["C"]),
        e_score=float(row["e_score"]),
        c_score=float(row["c_score"]),
        image_path=row.get("image_path", ""),
    )


def read_ledger(path) -> dict:
    path = Path(path)
    out = {}
    if not path.exists():
        return out
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            t = row_to_trial(row)
            out[t.key()] = t
    return out


class LedgerWriter:
    """Serialized appender; creates the header on first write."""

    def __init__(self, path):
        self.path = Path(path)
        if not self.path.exists():
            with open(self.path, "w", newline="") as f:
                csv.DictWriter(f, fieldnames=LEDGER_FIELDS).writeheader()

    def append(self, trial: Trial):
        with open(self.path, "a", newline="") as f:
            csv.DictWriter(f, fieldnames=LEDGER_FIELDS).writerow(trial_to_row(trial))


def score_trial(trial: Trial, e_model: CalibratedModel, c_model: CalibratedModel) -> Trial:
    stats = trial.stats()
    return replace(trial, e_score=e_model.score(stats), c_score=c_model.score(stats))


def score_trials(trials, e_model, c_model):
    return [score_trial(t, e_model, c_model) if t.status == "ok" else t for t in trials]


def run_matrix(triples, methods, net: NetworkSpec, basis: ProjectionBasis, styles: dict, contents: dict, gt: dict, ledger_path, models=None, base_seed: int = 0, dmax: float | None = None, transfer_kwargs: dict | None = None, image_dir=None):
    """Run every (triple, method) job not already in the ledger.

    Returns the full trial list (ledger order is canonical job order).
    Failures are recorded as status=error rows and do not stop the matrix.
    With `image_dir` set, transfer outputs are saved as PNGs there.
    """
    transfer_kwargs = dict(transfer_kwargs or {})
    if image_dir is not None:
        image_dir = Path(image_dir)
        image_dir.mkdir(parents=True, exist_ok=True)
    existing = read_ledger(ledger_path)
    writer = LedgerWriter(ledger_path)
    summaries_cache: dict = {}

    def summaries_for(sid):
        if sid not in summaries_cache:
            summaries_cache[sid] = style_summaries(styles[sid], net, basis)
        return summaries_cache[sid]

    e_model = c_model = None
    if models is not None:
        e_model, c_model = models

    jobs = []
    for ti, triple in enumerate(triples):
        for method in methods:
            weight = triple.weight
            if method in AGGRESSIVE_METHODS:
                weight = triple.weight * AGGRESSIVE_FACTOR
            seed = base_seed + ti
            jobs.append((method, triple.style_id, triple.content_id, weight, seed))

    results = []
    for method, sid, cid, weight, seed in jobs:
        key = (method, sid, cid, repr(float(weight)), seed)
        if key in existing:
            results.append(existing[key])
            continue
        base_method = AGGRESSIVE_METHODS.get(method, method)
        try:
            cfg = TransferConfig(
                method=base_method, style_weight=weight, seed=seed, **transfer_kwargs
            )
            img, _ = run_transfer(styles[sid], contents[cid], net, cfg)
            e = base_e_against_summaries(img, summaries_for(sid), net, basis)
            c = base_c(img, gt[cid], dmax=dmax)
            image_path = ""
            if image_dir is not None:
                from ..images import save_image

                fname = f"{method}_{sid}_{cid}_w{weight:g}_s{seed}.png"
                save_image(img, image_dir / fname)
                image_path = fname
            trial = Trial(
                method=method, style_id=sid, content_id=cid, weight=weight, seed=seed,
                e=tuple(float(v) for v in e), c=float(c), image_path=image_path,
            )
            if e_model is not None:
                trial = score_trial(trial, e_model, c_model)
        except Exception as exc:  # trial failures recorded, not fatal
            log.warning("trial %s failed: %s", key, exc)
            trial = Trial(
                method=method, style_id=sid, content_id=cid, weight=weight, seed=seed,
                status="error", e=(float("nan"),) * 5,
            )
        writer.append(trial)
        existing[trial.key()] = trial
        results.append(trial)
    return results
