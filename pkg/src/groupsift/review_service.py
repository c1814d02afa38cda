"""HTTP service for the human review loop.

The ranking proposes, the curator disposes: candidates are served in rank
order, keep/remove decisions land in an append-only JSON-lines log, and
an explicit re-rank recomputes scores without the removed images. The log
is the one irreplaceable artifact; every state change is durable on disk
before it is acknowledged, and replaying the log after a crash or restart
reconstructs the identical session.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import uuid
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Literal

from fastapi import FastAPI, HTTPException
from fastapi.responses import FileResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .config import ConfigError, RunConfig
from .embed_rank import rank_embedding
from .errors import (
    GroupsiftError,
    MalformedRowError,
    NoActiveRankingError,
    PathViolationError,
    SessionLockedError,
    UnknownImageIdError,
)
from .manifest import EmbeddingMatrix, ImageRecord, save_manifest
from .metrics import recall_at_fraction
from .ranking import Method, RankedList
from .size_rank import rank_size

log = logging.getLogger("groupsift.review")

LOG_NAME = "decisions.jsonl"
LOCK_NAME = "lock"

Action = Literal["Keep", "Remove"]

_MEDIA_TYPES = {
    ".png": "image/png",
    ".jpg": "image/jpeg",
    ".jpeg": "image/jpeg",
    ".pgm": "image/x-portable-graymap",
    ".ppm": "image/x-portable-pixmap",
    ".pnm": "image/x-portable-anymap",
}


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass(frozen=True)
class LiveDecision:
    action: Action
    timestamp: str


class _SessionLock:
    """One live process per session directory; stale locks are reclaimed."""

    def __init__(self, path: Path):
        self._path = path
        self._held = False

    def acquire(self) -> None:
        for _ in range(2):
            try:
                with open(self._path, "x", encoding="utf-8") as fh:
                    fh.write(f"{os.getpid()}\n")
                self._held = True
                return
            except FileExistsError:
                pid = self._read_pid()
                if pid is not None and _pid_alive(pid):
                    raise SessionLockedError(
                        f"session directory is locked by live pid {pid}"
                    ) from None
                # stale lock from a dead process
                self._path.unlink(missing_ok=True)
        raise SessionLockedError("could not acquire session lock")

    def _read_pid(self) -> int | None:
        try:
            return int(self._path.read_text(encoding="utf-8").strip())
        except (OSError, ValueError):
            return None

    def release(self) -> None:
        if self._held:
            self._path.unlink(missing_ok=True)
            self._held = False


def _pid_alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


class ReviewSession:
    """Decisions, ranking versions, and their durable log.

    All mutation goes through one internal lock, so concurrent HTTP
    handlers read a consistent (version, ranking, decisions) triple.
    """

    def __init__(
        self,
        session_dir: Path,
        config: RunConfig,
        records: list[ImageRecord],
        embeddings: EmbeddingMatrix | None,
        workers: int = 1,
    ):
        if config.method is Method.EMBEDDING and embeddings is None:
            raise NoActiveRankingError("embedding review requires embeddings")
        self.session_dir = session_dir
        self.config = config
        self.records = records
        self.embeddings = embeddings
        self.workers = workers
        self._by_id = {r.image_id: r for r in records}
        self._mutex = threading.RLock()
        self._lock = _SessionLock(session_dir / LOCK_NAME)
        self._log_file = None
        self.session_id = ""
        self.version = 0
        self.ranked: RankedList | None = None
        self.live: dict[str, LiveDecision] = {}
        self.decision_events = 0

    # -- lifecycle ----------------------------------------------------------

    @classmethod
    def open(
        cls,
        session_dir: Path,
        config: RunConfig,
        records: list[ImageRecord],
        embeddings: EmbeddingMatrix | None,
        workers: int = 1,
    ) -> "ReviewSession":
        session_dir.mkdir(parents=True, exist_ok=True)
        session = cls(session_dir, config, records, embeddings, workers)
        session._lock.acquire()
        try:
            log_path = session_dir / LOG_NAME
            if log_path.exists():
                session._replay(log_path)
            else:
                session.session_id = uuid.uuid4().hex
                session.version = 1
                session.ranked = session._compute_ranking(exclude=frozenset())
                session._log_file = open(log_path, "a", encoding="utf-8")
                session._append(
                    {
                        "event": "open",
                        "session_id": session.session_id,
                        "config": config.snapshot(),
                        "timestamp": _now(),
                    }
                )
            if session._log_file is None:
                session._log_file = open(log_path, "a", encoding="utf-8")
        except BaseException:
            session._lock.release()
            raise
        return session

    def close(self) -> None:
        with self._mutex:
            if self._log_file is not None:
                self._log_file.close()
                self._log_file = None
            self._lock.release()

    # -- persistence --------------------------------------------------------

    def _append(self, event: dict) -> None:
        """Write one event and make it durable before returning."""
        assert self._log_file is not None
        self._log_file.write(json.dumps(event, sort_keys=True) + "\n")
        self._log_file.flush()
        os.fsync(self._log_file.fileno())

    def _replay(self, log_path: Path) -> None:
        with open(log_path, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    event = json.loads(line)
                    kind = event["event"]
                except (ValueError, KeyError):
                    raise MalformedRowError(f"decision log line {line_no}: unparseable") from None
                if kind == "open":
                    self.session_id = event["session_id"]
                    if event["config"] != self.config.snapshot():
                        raise ConfigError(
                            "session directory belongs to a run with different settings"
                        )
                    self.version = 1
                    self.ranked = self._compute_ranking(exclude=frozenset())
                elif kind == "decision":
                    image_id = event["image_id"]
                    if image_id not in self._by_id:
                        raise MalformedRowError(
                            f"decision log line {line_no}: unknown image_id {image_id!r}"
                        )
                    self.live[image_id] = LiveDecision(event["action"], event["timestamp"])
                    self.decision_events += 1
                elif kind == "rerank":
                    self.version = event["version"]
                    self.ranked = self._compute_ranking(exclude=self._removed_ids())
                else:
                    raise MalformedRowError(f"decision log line {line_no}: unknown event {kind!r}")
        if self.version == 0:
            raise MalformedRowError("decision log has no open event")

    # -- ranking ------------------------------------------------------------

    def _removed_ids(self) -> frozenset[str]:
        return frozenset(i for i, d in self.live.items() if d.action == "Remove")

    def _compute_ranking(self, exclude: frozenset[str]) -> RankedList:
        survivors = [r for r in self.records if r.image_id not in exclude]
        before = {r.group_key(self.config.grouping) for r in self.records}
        after = {r.group_key(self.config.grouping) for r in survivors}
        for emptied in sorted(before - after):
            log.warning("group %s has no images left after removals; skipping", emptied)
        if self.config.method is Method.EMBEDDING:
            assert self.embeddings is not None
            return rank_embedding(
                survivors,
                self.embeddings,
                self.config.grouping,
                normalized=self.config.normalized,
                metric=self.config.distance,
                workers=self.workers,
            )
        return rank_size(survivors, self.config.grouping)

    # -- operations ---------------------------------------------------------

    def candidates(self, after_rank: int = 0, limit: int = 50) -> dict:
        with self._mutex:
            if self.ranked is None:
                raise NoActiveRankingError("no ranking in this session")
            page = [e for e in self.ranked.entries if e.rank > after_rank][:limit]
            entries = []
            for e in page:
                decision = self.live.get(e.image_id)
                entries.append(
                    {
                        "image_id": e.image_id,
                        "group_key": e.group_key,
                        "score": e.score,
                        "rank": e.rank,
                        "decision": None if decision is None else decision.action,
                    }
                )
            return {
                "version": self.version,
                "after_rank": after_rank,
                "total": len(self.ranked),
                "entries": entries,
            }

    def decide(self, image_id: str, action: Action) -> dict:
        with self._mutex:
            if image_id not in self._by_id:
                raise UnknownImageIdError(f"unknown image_id {image_id!r}")
            timestamp = _now()
            self._append(
                {
                    "event": "decision",
                    "image_id": image_id,
                    "action": action,
                    "timestamp": timestamp,
                    "session_id": self.session_id,
                }
            )
            self.live[image_id] = LiveDecision(action, timestamp)
            self.decision_events += 1
            return {
                "image_id": image_id,
                "action": action,
                "decision_count": self.decision_events,
                "reviewed": len(self.live),
            }

    def rerank(self) -> dict:
        with self._mutex:
            new_version = self.version + 1
            ranked = self._compute_ranking(exclude=self._removed_ids())
            self._append(
                {
                    "event": "rerank",
                    "version": new_version,
                    "timestamp": _now(),
                    "session_id": self.session_id,
                }
            )
            self.version = new_version
            self.ranked = ranked
            return {"version": self.version, "total": len(ranked)}

    def stats(self) -> dict:
        with self._mutex:
            if self.ranked is None:
                raise NoActiveRankingError("no ranking in this session")
            kept = sum(1 for d in self.live.values() if d.action == "Keep")
            removed = len(self.live) - kept

            by_type: dict[str, dict[str, int]] = {}
            by_group: dict[str, dict[str, int]] = {}
            for rec in self.records:
                group = rec.group_key(self.config.grouping)
                slot = by_group.setdefault(
                    group, {"total": 0, "reviewed": 0, "kept": 0, "removed": 0}
                )
                slot["total"] += 1
                decision = self.live.get(rec.image_id)
                if decision is not None:
                    slot["reviewed"] += 1
                    slot["kept" if decision.action == "Keep" else "removed"] += 1
                if rec.outlier and rec.outlier_type is not None:
                    tslot = by_type.setdefault(
                        rec.outlier_type.value, {"total": 0, "reviewed": 0, "kept": 0, "removed": 0}
                    )
                    tslot["total"] += 1
                    if decision is not None:
                        tslot["reviewed"] += 1
                        tslot["kept" if decision.action == "Keep" else "removed"] += 1

            return {
                "version": self.version,
                "total": len(self.records),
                "reviewed": len(self.live),
                "kept": kept,
                "removed": removed,
                "decision_count": self.decision_events,
                "by_outlier_type": by_type,
                "by_group": by_group,
                "recall": self._recall_block(),
            }

    def _recall_block(self) -> dict | None:
        """Recall within the fully reviewed prefix, when labels allow it."""
        assert self.ranked is not None
        ids = self.ranked.ids()
        labels = [self._by_id[i].outlier for i in ids]
        if any(label is None for label in labels):
            return None
        positives = {i for i, label in zip(ids, labels) if label}
        if not positives or len(positives) == len(ids):
            return None
        prefix = 0
        for image_id in ids:
            if image_id not in self.live:
                break
            prefix += 1
        if prefix == 0:
            return {"reviewed_prefix": 0, "value": 0.0}
        return {
            "reviewed_prefix": prefix,
            "value": recall_at_fraction(ids, positives, prefix / len(ids)),
        }

    def image_path(self, image_id: str) -> Path:
        rec = self._by_id.get(image_id)
        if rec is None:
            raise UnknownImageIdError(f"unknown image_id {image_id!r}")
        root = self.config.dataset_root.resolve()
        resolved = (root / rec.path).resolve()
        if not resolved.is_relative_to(root):
            raise PathViolationError(f"path for {image_id!r} escapes the dataset root")
        return resolved

    def export(self, dest_dir: Path | None = None) -> dict:
        """Write the curated manifest and a removal report; removals stay
        logical until this point."""
        with self._mutex:
            dest = dest_dir if dest_dir is not None else self.session_dir / "export"
            dest.mkdir(parents=True, exist_ok=True)
            removed_ids = self._removed_ids()
            curated = [r for r in self.records if r.image_id not in removed_ids]
            manifest_path = dest / "curated_manifest.csv"
            save_manifest(curated, manifest_path)

            report_path = dest / "removal_report.csv"
            with open(report_path, "w", encoding="utf-8", newline="") as fh:
                fh.write("image_id,path,group_key,decided_at\n")
                for rec in self.records:
                    if rec.image_id in removed_ids:
                        decided = self.live[rec.image_id].timestamp
                        fh.write(
                            f"{rec.image_id},{rec.path},"
                            f"{rec.group_key(self.config.grouping)},{decided}\n"
                        )
            return {
                "curated_manifest": str(manifest_path),
                "removal_report": str(report_path),
                "kept": len(curated),
                "removed": len(removed_ids),
            }

    def describe(self) -> dict:
        with self._mutex:
            return {
                "session_id": self.session_id,
                "version": self.version,
                "config": self.config.snapshot(),
                "total": len(self.records),
                "reviewed": len(self.live),
                "decision_count": self.decision_events,
            }


# ---------------------------------------------------------------------------
# HTTP layer
# ---------------------------------------------------------------------------

class DecisionIn(BaseModel):
    image_id: str
    action: Action


class ExportIn(BaseModel):
    dest: str | None = None


def _http_error(exc: GroupsiftError) -> HTTPException:
    if isinstance(exc, UnknownImageIdError):
        return HTTPException(status_code=404, detail=str(exc))
    if isinstance(exc, PathViolationError):
        return HTTPException(status_code=403, detail=str(exc))
    if isinstance(exc, NoActiveRankingError):
        return HTTPException(status_code=409, detail=str(exc))
    return HTTPException(status_code=400, detail=str(exc))


def create_app(session: ReviewSession, ui_dir: Path | None = None) -> FastAPI:
    app = FastAPI(title="groupsift review", docs_url=None, redoc_url=None)

    @app.get("/api/session")
    def get_session() -> dict:
        return session.describe()

    @app.get("/api/candidates")
    def get_candidates(
        after_rank: int = 0,
        limit: int = 50,
        method: str | None = None,
        grouping: str | None = None,
    ) -> dict:
        if method is not None and method != session.config.method.value:
            raise HTTPException(
                status_code=409,
                detail=f"session ranks by {session.config.method.value!r}, not {method!r}",
            )
        if grouping is not None and grouping != session.config.grouping.value:
            raise HTTPException(
                status_code=409,
                detail=f"session groups by {session.config.grouping.value!r}, not {grouping!r}",
            )
        try:
            return session.candidates(after_rank=after_rank, limit=max(0, limit))
        except GroupsiftError as exc:
            raise _http_error(exc) from None

    @app.post("/api/decisions")
    def post_decision(decision: DecisionIn) -> dict:
        try:
            return session.decide(decision.image_id, decision.action)
        except GroupsiftError as exc:
            raise _http_error(exc) from None

    @app.post("/api/rerank")
    def post_rerank() -> dict:
        try:
            return session.rerank()
        except GroupsiftError as exc:
            raise _http_error(exc) from None

    @app.get("/api/stats")
    def get_stats() -> dict:
        try:
            return session.stats()
        except GroupsiftError as exc:
            raise _http_error(exc) from None

    @app.post("/api/export")
    def post_export(body: ExportIn) -> dict:
        try:
            dest = Path(body.dest) if body.dest else None
            return session.export(dest)
        except GroupsiftError as exc:
            raise _http_error(exc) from None

    @app.get("/api/images/{image_id}")
    def get_image(image_id: str) -> FileResponse:
        try:
            path = session.image_path(image_id)
        except GroupsiftError as exc:
            raise _http_error(exc) from None
        if not path.is_file():
            raise HTTPException(status_code=404, detail=f"no file for {image_id!r}")
        media = _MEDIA_TYPES.get(path.suffix.lower(), "application/octet-stream")
        return FileResponse(path, media_type=media)

    if ui_dir is not None and ui_dir.is_dir():
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
    return app
