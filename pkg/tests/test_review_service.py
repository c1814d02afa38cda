"""Review session lifecycle, the decision log, and the HTTP surface."""

from __future__ import annotations

import json
import subprocess
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from groupsift.config import ConfigError, RunConfig
from groupsift.errors import (
    MalformedRowError,
    NoActiveRankingError,
    SessionLockedError,
)
from groupsift.manifest import Grouping, ImageRecord, OutlierType, load_manifest
from groupsift.metrics import recall_at_fraction
from groupsift.ranking import DistanceMetric, Method
from groupsift.review_service import LOCK_NAME, LOG_NAME, ReviewSession, create_app

from .conftest import embeddings_for, record, unit


def toy_records():
    """Two taxa of five tight inliers plus one labeled outlier each."""
    records, rows = [], []
    for g, base in ((0, 0.0), (1, 90.0)):
        for k in range(5):
            iid = f"in_{g}{k}"
            records.append(record(iid, taxon=f"T{g}", specimen=f"Sp{g}", sample=f"S{g}"))
            rows.append(unit(base + 3.0 * k))
        iid = f"out_{g}"
        records.append(
            record(
                iid,
                taxon=f"T{g}",
                specimen=f"Sp{g}",
                sample=f"S{g}",
                outlier=True,
                outlier_type=OutlierType.BUBBLES,
            )
        )
        rows.append(unit(base + 65.0))
    return records, embeddings_for([r.image_id for r in records], rows)


def config_for(root: Path, **overrides) -> RunConfig:
    base = dict(
        dataset_root=root,
        manifest=root / "manifest.csv",
        embeddings=root / "embeddings.csv",
        grouping=Grouping.TAXON,
        normalized=False,
        distance=DistanceMetric.COSINE,
        method=Method.EMBEDDING,
        output=None,
        sweep=False,
    )
    base.update(overrides)
    return RunConfig(**base)


@pytest.fixture
def session(tmp_path):
    records, emb = toy_records()
    s = ReviewSession.open(tmp_path / "session", config_for(tmp_path), records, emb)
    yield s
    s.close()


@pytest.fixture
def client(session):
    return TestClient(create_app(session))


def log_lines(session: ReviewSession) -> list[dict]:
    text = (session.session_dir / LOG_NAME).read_text(encoding="utf-8")
    return [json.loads(line) for line in text.splitlines() if line.strip()]


class TestSessionOpen:
    def test_fresh_session_ranks_everything(self, session):
        info = session.describe()
        assert info["version"] == 1
        assert info["total"] == 12
        assert info["reviewed"] == 0
        assert len(info["session_id"]) == 32

    def test_open_event_is_logged_first(self, session):
        events = log_lines(session)
        assert events[0]["event"] == "open"
        assert events[0]["session_id"] == session.session_id
        assert events[0]["config"] == session.config.snapshot()

    def test_outliers_rank_first(self, session):
        ids = session.ranked.ids()
        assert set(ids[:2]) == {"out_0", "out_1"}

    def test_embedding_method_requires_embeddings(self, tmp_path):
        records, _ = toy_records()
        with pytest.raises(NoActiveRankingError):
            ReviewSession(tmp_path / "s", config_for(tmp_path), records, None)

    def test_size_method_needs_no_embeddings(self, tmp_path):
        records = [
            record("a", area_px=100.0),
            record("b", area_px=100.0),
            record("c", area_px=900.0),
        ]
        s = ReviewSession.open(
            tmp_path / "s", config_for(tmp_path, method=Method.SIZE), records, None
        )
        try:
            assert s.ranked.ids()[0] == "c"
        finally:
            s.close()


class TestHttpSessionAndCandidates:
    def test_session_endpoint(self, client, session):
        body = client.get("/api/session").json()
        assert body["session_id"] == session.session_id
        assert body["total"] == 12

    def test_all_candidates_in_rank_order(self, client):
        body = client.get("/api/candidates").json()
        assert body["version"] == 1
        assert body["total"] == 12
        assert [e["rank"] for e in body["entries"]] == list(range(1, 13))

    def test_limit_truncates_page(self, client):
        body = client.get("/api/candidates", params={"limit": 4}).json()
        assert [e["rank"] for e in body["entries"]] == [1, 2, 3, 4]

    def test_after_rank_pages_forward(self, client):
        body = client.get("/api/candidates", params={"after_rank": 10}).json()
        assert [e["rank"] for e in body["entries"]] == [11, 12]
        assert body["after_rank"] == 10

    def test_page_past_the_end_is_empty(self, client):
        body = client.get("/api/candidates", params={"after_rank": 12}).json()
        assert body["entries"] == []

    def test_entry_shape(self, client):
        entry = client.get("/api/candidates", params={"limit": 1}).json()["entries"][0]
        assert set(entry) == {"image_id", "group_key", "score", "rank", "decision"}
        assert entry["decision"] is None

    def test_matching_method_and_grouping_pass(self, client):
        r = client.get(
            "/api/candidates", params={"method": "embedding", "grouping": "taxon"}
        )
        assert r.status_code == 200

    def test_method_mismatch_is_409(self, client):
        r = client.get("/api/candidates", params={"method": "size"})
        assert r.status_code == 409
        assert "size" in r.json()["detail"]

    def test_grouping_mismatch_is_409(self, client):
        r = client.get("/api/candidates", params={"grouping": "sample"})
        assert r.status_code == 409


class TestDecisions:
    def test_remove_shows_up_in_candidates(self, client):
        top = client.get("/api/candidates", params={"limit": 1}).json()["entries"][0]
        r = client.post(
            "/api/decisions", json={"image_id": top["image_id"], "action": "Remove"}
        )
        assert r.status_code == 200
        assert r.json() == {
            "image_id": top["image_id"],
            "action": "Remove",
            "decision_count": 1,
            "reviewed": 1,
        }
        again = client.get("/api/candidates", params={"limit": 1}).json()["entries"][0]
        assert again["decision"] == "Remove"

    def test_later_decision_supersedes_earlier(self, client, session):
        client.post("/api/decisions", json={"image_id": "in_00", "action": "Keep"})
        r = client.post("/api/decisions", json={"image_id": "in_00", "action": "Remove"})
        assert r.json()["decision_count"] == 2
        assert r.json()["reviewed"] == 1
        assert session.live["in_00"].action == "Remove"
        events = log_lines(session)
        # both decisions stay in the log; only the live view collapses them
        assert [e["action"] for e in events if e["event"] == "decision"] == [
            "Keep",
            "Remove",
        ]

    def test_unknown_image_is_404_and_not_logged(self, client, session):
        before = len(log_lines(session))
        r = client.post("/api/decisions", json={"image_id": "ghost", "action": "Keep"})
        assert r.status_code == 404
        assert len(log_lines(session)) == before

    def test_invalid_action_is_rejected(self, client):
        r = client.post("/api/decisions", json={"image_id": "in_00", "action": "Toss"})
        assert r.status_code == 422

    def test_decisions_survive_on_disk_immediately(self, client, session):
        client.post("/api/decisions", json={"image_id": "in_00", "action": "Keep"})
        event = log_lines(session)[-1]
        assert event["event"] == "decision"
        assert event["image_id"] == "in_00"
        assert event["session_id"] == session.session_id
        assert "timestamp" in event


class TestRerank:
    def test_rerank_drops_removed_images(self, client):
        top = client.get("/api/candidates", params={"limit": 1}).json()["entries"][0]
        client.post("/api/decisions", json={"image_id": top["image_id"], "action": "Remove"})
        r = client.post("/api/rerank").json()
        assert r == {"version": 2, "total": 11}
        ids = [e["image_id"] for e in client.get("/api/candidates").json()["entries"]]
        assert top["image_id"] not in ids
        assert len(ids) == 11

    def test_kept_images_stay_in_ranking(self, client):
        client.post("/api/decisions", json={"image_id": "out_0", "action": "Keep"})
        r = client.post("/api/rerank").json()
        assert r["total"] == 12

    def test_rerank_without_decisions_repeats_the_ranking(self, session):
        before = session.ranked.ids()
        out = session.rerank()
        assert out["version"] == 2
        assert session.ranked.ids() == before

    def test_versions_keep_counting(self, session):
        session.rerank()
        session.rerank()
        assert session.rerank()["version"] == 4

    def test_scores_recomputed_for_shrunken_group(self, session):
        # with the impostor gone the T0 prototype recenters on the inliers
        before = {e.image_id: e.score for e in session.ranked.entries}
        session.decide("out_0", "Remove")
        session.rerank()
        after = {e.image_id: e.score for e in session.ranked.entries}
        assert after["in_00"] != before["in_00"]
        assert after["in_10"] == before["in_10"]

    def test_emptied_group_warns_and_is_skipped(self, session, caplog):
        for iid in ("in_00", "in_01", "in_02", "in_03", "in_04", "out_0"):
            session.decide(iid, "Remove")
        with caplog.at_level("WARNING", logger="groupsift.review"):
            out = session.rerank()
        assert out["total"] == 6
        assert any("T0" in m and "no images left" in m for m in caplog.messages)


class TestStats:
    def test_fresh_session_counts(self, client):
        body = client.get("/api/stats").json()
        assert body["version"] == 1
        assert body["total"] == 12
        assert body["reviewed"] == 0
        assert body["kept"] == 0
        assert body["removed"] == 0
        assert body["decision_count"] == 0
        assert body["by_outlier_type"]["Bubbles"]["total"] == 2
        assert body["by_group"]["T0"]["total"] == 6
        assert body["by_group"]["T1"]["total"] == 6
        assert body["recall"] == {"reviewed_prefix": 0, "value": 0.0}

    def test_mixed_decisions_roll_up(self, client, session):
        ids = session.ranked.ids()
        for iid in ids[:3]:
            client.post("/api/decisions", json={"image_id": iid, "action": "Remove"})
        for iid in ids[3:5]:
            client.post("/api/decisions", json={"image_id": iid, "action": "Keep"})
        body = client.get("/api/stats").json()
        assert body["reviewed"] == 5
        assert body["removed"] == 3
        assert body["kept"] == 2
        assert body["decision_count"] == 5
        assert body["by_outlier_type"]["Bubbles"]["removed"] == 2

    def test_recall_tracks_the_reviewed_prefix(self, client, session):
        ids = session.ranked.ids()
        for iid in ids[:3]:
            client.post("/api/decisions", json={"image_id": iid, "action": "Keep"})
        block = client.get("/api/stats").json()["recall"]
        assert block["reviewed_prefix"] == 3
        expected = recall_at_fraction(ids, {"out_0", "out_1"}, 3 / len(ids))
        assert block["value"] == expected == 1.0

    def test_gap_in_review_order_freezes_the_prefix(self, client, session):
        client.post(
            "/api/decisions", json={"image_id": session.ranked.ids()[4], "action": "Keep"}
        )
        block = client.get("/api/stats").json()["recall"]
        assert block == {"reviewed_prefix": 0, "value": 0.0}

    def test_unlabeled_manifest_has_no_recall_block(self, tmp_path):
        records = [record(f"u{k}", outlier=None) for k in range(4)]
        emb = embeddings_for([r.image_id for r in records], [unit(10.0 * k) for k in range(4)])
        s = ReviewSession.open(tmp_path / "s", config_for(tmp_path), records, emb)
        try:
            assert s.stats()["recall"] is None
        finally:
            s.close()


class TestImages:
    def test_serves_image_bytes(self, client, session, tmp_path):
        payload = b"\x89PNG not really"
        target = tmp_path / "img" / "in_00.png"
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(payload)
        r = client.get("/api/images/in_00")
        assert r.status_code == 200
        assert r.headers["content-type"] == "image/png"
        assert r.content == payload

    def test_unknown_id_is_404(self, client):
        assert client.get("/api/images/ghost").status_code == 404

    def test_missing_file_is_404(self, client):
        assert client.get("/api/images/in_01").status_code == 404

    def test_escaping_path_is_403(self, tmp_path):
        root = tmp_path / "data"
        root.mkdir()
        rec = ImageRecord(
            image_id="evil",
            path="../outside.png",
            taxon="T1",
            specimen="Sp1",
            sample="S1",
            cam="C1",
            area_px=None,
            outlier=False,
            outlier_type=None,
        )
        emb = embeddings_for(["evil"], [unit(0.0)])
        s = ReviewSession.open(tmp_path / "s", config_for(root), [rec], emb)
        try:
            client = TestClient(create_app(s))
            assert client.get("/api/images/evil").status_code == 403
        finally:
            s.close()


class TestExport:
    def test_export_omits_removed_images(self, client, session, tmp_path):
        for iid in ("out_0", "out_1"):
            client.post("/api/decisions", json={"image_id": iid, "action": "Remove"})
        dest = tmp_path / "out"
        body = client.post("/api/export", json={"dest": str(dest)}).json()
        assert body["kept"] == 10
        assert body["removed"] == 2
        curated = load_manifest(dest / "curated_manifest.csv")
        assert {r.image_id for r in curated} == {
            r.image_id for r in session.records
        } - {"out_0", "out_1"}

    def test_removal_report_lists_removed_in_manifest_order(self, session, tmp_path):
        session.decide("out_1", "Remove")
        session.decide("out_0", "Remove")
        out = session.export(tmp_path / "exp")
        lines = Path(out["removal_report"]).read_text(encoding="utf-8").splitlines()
        assert lines[0] == "image_id,path,group_key,decided_at"
        assert [ln.split(",")[0] for ln in lines[1:]] == ["out_0", "out_1"]
        assert lines[1].split(",")[1] == "img/out_0.png"
        assert lines[1].split(",")[2] == "T0"

    def test_keep_decisions_do_not_remove(self, session, tmp_path):
        session.decide("out_0", "Keep")
        out = session.export(tmp_path / "exp")
        assert out["kept"] == 12
        assert out["removed"] == 0

    def test_default_destination_is_inside_the_session(self, session):
        out = session.export()
        assert Path(out["curated_manifest"]).parent == session.session_dir / "export"


class TestRestartReplay:
    def test_replay_rebuilds_identical_state(self, tmp_path):
        records, emb = toy_records()
        cfg = config_for(tmp_path)
        s1 = ReviewSession.open(tmp_path / "s", cfg, records, emb)
        s1.decide("out_0", "Remove")
        s1.decide("in_00", "Keep")
        s1.rerank()
        s1.decide("out_1", "Remove")
        expect = (
            s1.session_id,
            s1.version,
            dict(s1.live),
            s1.ranked.ids(),
            s1.decision_events,
        )
        s1.close()

        s2 = ReviewSession.open(tmp_path / "s", cfg, records, emb)
        try:
            assert (
                s2.session_id,
                s2.version,
                dict(s2.live),
                s2.ranked.ids(),
                s2.decision_events,
            ) == expect
        finally:
            s2.close()

    def test_replay_applies_supersession(self, tmp_path):
        records, emb = toy_records()
        cfg = config_for(tmp_path)
        s1 = ReviewSession.open(tmp_path / "s", cfg, records, emb)
        s1.decide("in_00", "Remove")
        s1.decide("in_00", "Keep")
        s1.close()
        s2 = ReviewSession.open(tmp_path / "s", cfg, records, emb)
        try:
            assert s2.live["in_00"].action == "Keep"
            assert s2.decision_events == 2
        finally:
            s2.close()

    def test_reopen_with_other_settings_is_refused(self, tmp_path):
        records, emb = toy_records()
        s1 = ReviewSession.open(tmp_path / "s", config_for(tmp_path), records, emb)
        s1.close()
        with pytest.raises(ConfigError, match="different settings"):
            ReviewSession.open(
                tmp_path / "s",
                config_for(tmp_path, grouping=Grouping.SAMPLE),
                records,
                emb,
            )

    def test_garbage_log_line_is_refused(self, tmp_path):
        records, emb = toy_records()
        cfg = config_for(tmp_path)
        s1 = ReviewSession.open(tmp_path / "s", cfg, records, emb)
        s1.close()
        with open(tmp_path / "s" / LOG_NAME, "a", encoding="utf-8") as fh:
            fh.write("not json\n")
        with pytest.raises(MalformedRowError, match="line 2"):
            ReviewSession.open(tmp_path / "s", cfg, records, emb)

    def test_log_without_open_event_is_refused(self, tmp_path):
        (tmp_path / "s").mkdir()
        (tmp_path / "s" / LOG_NAME).write_text("", encoding="utf-8")
        records, emb = toy_records()
        with pytest.raises(MalformedRowError, match="no open event"):
            ReviewSession.open(tmp_path / "s", config_for(tmp_path), records, emb)

    def test_logged_decision_for_unknown_image_is_refused(self, tmp_path):
        records, emb = toy_records()
        cfg = config_for(tmp_path)
        s1 = ReviewSession.open(tmp_path / "s", cfg, records, emb)
        s1.decide("in_00", "Keep")
        s1.close()
        smaller = [r for r in records if r.image_id != "in_00"]
        with pytest.raises(MalformedRowError, match="in_00"):
            ReviewSession.open(tmp_path / "s", cfg, smaller, emb)


class TestLocking:
    def test_second_open_is_refused_while_live(self, session):
        records, emb = toy_records()
        with pytest.raises(SessionLockedError, match="live pid"):
            ReviewSession.open(
                session.session_dir, session.config, records, emb
            )

    def test_stale_lock_from_dead_pid_is_reclaimed(self, tmp_path):
        proc = subprocess.Popen(["sleep", "0"])
        proc.wait()
        sdir = tmp_path / "s"
        sdir.mkdir()
        (sdir / LOCK_NAME).write_text(f"{proc.pid}\n", encoding="utf-8")
        records, emb = toy_records()
        s = ReviewSession.open(sdir, config_for(tmp_path), records, emb)
        try:
            assert (sdir / LOCK_NAME).read_text(encoding="utf-8").strip() == str(
                __import__("os").getpid()
            )
        finally:
            s.close()

    def test_unreadable_lock_counts_as_stale(self, tmp_path):
        sdir = tmp_path / "s"
        sdir.mkdir()
        (sdir / LOCK_NAME).write_text("not a pid\n", encoding="utf-8")
        records, emb = toy_records()
        s = ReviewSession.open(sdir, config_for(tmp_path), records, emb)
        s.close()

    def test_close_releases_the_lock(self, tmp_path):
        records, emb = toy_records()
        cfg = config_for(tmp_path)
        s1 = ReviewSession.open(tmp_path / "s", cfg, records, emb)
        s1.close()
        assert not (tmp_path / "s" / LOCK_NAME).exists()
        s2 = ReviewSession.open(tmp_path / "s", cfg, records, emb)
        s2.close()


class TestStaticUi:
    def test_ui_dir_is_served_at_root(self, session, tmp_path):
        ui = tmp_path / "ui"
        ui.mkdir()
        (ui / "index.html").write_text("<html>review</html>", encoding="utf-8")
        client = TestClient(create_app(session, ui_dir=ui))
        r = client.get("/")
        assert r.status_code == 200
        assert "review" in r.text

    def test_api_still_wins_over_static_mount(self, session, tmp_path):
        ui = tmp_path / "ui"
        ui.mkdir()
        (ui / "index.html").write_text("<html></html>", encoding="utf-8")
        client = TestClient(create_app(session, ui_dir=ui))
        assert client.get("/api/session").status_code == 200

    def test_without_ui_dir_root_is_404(self, client):
        assert client.get("/").status_code == 404
