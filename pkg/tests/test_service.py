import struct
import wave
import io

import numpy as np
import pytest
from fastapi.testclient import TestClient

from birdclean.evaluate import ReviewVerdict, Verdict, estimate_rate
from birdclean.fixture import make_mirror
from birdclean.ingest import (
    LocalMirrorFetcher,
    decode_audio,
    fetch_species_recordings,
    load_species_index,
)
from birdclean.preprocess import ClipStore, PreprocessConfig, preprocess_recording
from birdclean.service import SessionStore, UnknownId, WrongClip, create_app
from birdclean.uod import ensemble_vote, save_result


@pytest.fixture(scope="module")
def data_root(tmp_path_factory):
    """A populated data root: audio, clips, and one saved detection run."""
    base = tmp_path_factory.mktemp("service")
    mirror = make_mirror(base / "mirror", n_recordings=6, outlier_recordings=2, seed=0)
    root = base / "root"
    metas = fetch_species_recordings(
        "Testus", "syntheticus", "SYNT", root, LocalMirrorFetcher(mirror)
    )
    cfg = PreprocessConfig()
    clips = []
    for meta in metas:
        w = decode_audio(meta.audio_path)
        clips.extend(preprocess_recording(w, meta.recording_id, meta.category, cfg))
    assert len(clips) >= 8
    ClipStore(root / "SYNT" / "clips", cfg).write(clips)

    ids = [c.clip_id for c in clips]
    flagged = ids[:4]
    result = ensemble_vote([set(flagged)] * 3, "majority", universe=ids)
    save_result(result, root, "SYNT", "run1")
    return root, ids, flagged


@pytest.fixture()
def client(data_root):
    root, _, _ = data_root
    return TestClient(create_app(root))


def make_session(client, **over):
    body = {"species_code": "SYNT", "run_id": "run1", "seed": 0, "max_n": 3}
    body.update(over)
    resp = client.post("/api/sessions", json=body)
    assert resp.status_code == 200
    return resp.json()


class TestSessionFlow:
    def test_round_trip(self, client, data_root):
        _, _, flagged = data_root
        session = make_session(client)
        assert set(session["sample_order"]) <= set(flagged)
        assert session["cursor"] == 0
        sid = session["session_id"]

        seen = []
        while True:
            nxt = client.get(f"/api/sessions/{sid}/next").json()
            if nxt["complete"]:
                break
            seen.append(nxt["clip_id"])
            assert nxt["progress"]["total"] == 3
            verdict = "outlier" if len(seen) < 3 else "inlier"
            resp = client.post(
                f"/api/sessions/{sid}/verdicts",
                json={"clip_id": nxt["clip_id"], "verdict": verdict},
            )
            assert resp.status_code == 200
        assert seen == session["sample_order"]

        report = client.get(f"/api/sessions/{sid}/report").json()
        assert report["estimate"]["rate"] == pytest.approx(2 / 3)
        assert report["estimate"]["n_sampled"] == 3
        assert report["tallies"] == {"outlier": 2, "inlier": 1, "indeterminate": 0}
        expected = estimate_rate(
            [ReviewVerdict("x", Verdict.OUTLIER)] * 2 + [ReviewVerdict("y", Verdict.INLIER)]
        )
        assert report["estimate"]["moe"] == pytest.approx(expected.moe)

    def test_inlier_class_session(self, client, data_root):
        _, ids, flagged = data_root
        session = make_session(client, class_under_review="inlier_class", max_n=2)
        assert set(session["sample_order"]) <= set(ids) - set(flagged)
        sid = session["session_id"]
        for cid in session["sample_order"]:
            client.post(
                f"/api/sessions/{sid}/verdicts", json={"clip_id": cid, "verdict": "inlier"}
            )
        report = client.get(f"/api/sessions/{sid}/report").json()
        assert report["positive"] == "inlier"
        assert report["estimate"]["rate"] == 1.0

    def test_indeterminate_excluded_from_rate(self, client):
        session = make_session(client)
        sid = session["session_id"]
        order = session["sample_order"]
        for cid, v in zip(order, ["outlier", "indeterminate", "outlier"]):
            client.post(f"/api/sessions/{sid}/verdicts", json={"clip_id": cid, "verdict": v})
        report = client.get(f"/api/sessions/{sid}/report").json()
        assert report["estimate"]["rate"] == 1.0
        assert report["estimate"]["n_sampled"] == 2
        assert report["n_reviewed"] == 3

    def test_same_seed_same_sample(self, client):
        a = make_session(client, seed=4)
        b = make_session(client, seed=4)
        assert a["sample_order"] == b["sample_order"]


class TestVerdictGuards:
    def test_wrong_clip_409(self, client):
        session = make_session(client)
        sid = session["session_id"]
        wrong = session["sample_order"][1]
        resp = client.post(
            f"/api/sessions/{sid}/verdicts", json={"clip_id": wrong, "verdict": "outlier"}
        )
        assert resp.status_code == 409
        # the session did not advance
        nxt = client.get(f"/api/sessions/{sid}/next").json()
        assert nxt["clip_id"] == session["sample_order"][0]

    def test_override_resubmits_with_audit_note(self, client, data_root):
        root, _, _ = data_root
        session = make_session(client)
        sid = session["session_id"]
        first = session["sample_order"][0]
        client.post(f"/api/sessions/{sid}/verdicts", json={"clip_id": first, "verdict": "outlier"})
        resp = client.post(
            f"/api/sessions/{sid}/verdicts",
            json={"clip_id": first, "verdict": "inlier", "override": True, "comment": "second look"},
        )
        assert resp.status_code == 200
        store = SessionStore(root)
        again = store.get(sid)
        (v,) = [v for v in again.verdicts if v.clip_id == first]
        assert v.verdict == Verdict.INLIER
        assert v.comment.startswith("[resubmitted]")
        assert again.cursor == 1  # override does not advance

    def test_clip_outside_sample_404(self, client, data_root):
        _, ids, _ = data_root
        session = make_session(client)
        sid = session["session_id"]
        outside = next(c for c in ids if c not in session["sample_order"])
        resp = client.post(
            f"/api/sessions/{sid}/verdicts", json={"clip_id": outside, "verdict": "outlier"}
        )
        assert resp.status_code == 404

    def test_bad_verdict_422(self, client):
        session = make_session(client)
        resp = client.post(
            f"/api/sessions/{session['session_id']}/verdicts",
            json={"clip_id": session["sample_order"][0], "verdict": "maybe"},
        )
        assert resp.status_code == 422


class TestNotFound:
    def test_unknown_session(self, client):
        assert client.get("/api/sessions/nope/next").status_code == 404
        assert client.get("/api/sessions/nope/report").status_code == 404

    def test_unknown_run(self, client):
        resp = client.post(
            "/api/sessions",
            json={"species_code": "SYNT", "run_id": "missing", "seed": 0, "max_n": 3},
        )
        assert resp.status_code == 404

    def test_unknown_class(self, client):
        resp = client.post(
            "/api/sessions",
            json={
                "species_code": "SYNT",
                "run_id": "run1",
                "class_under_review": "mystery_class",
            },
        )
        assert resp.status_code == 422

    def test_unknown_clip_assets(self, client):
        assert client.get("/api/clips/nope/spectrogram.png").status_code == 404
        assert client.get("/api/clips/nope/segment.wav").status_code == 404


class TestAssets:
    def test_spectrogram_png_dimensions(self, client, data_root):
        _, ids, _ = data_root
        resp = client.get(f"/api/clips/{ids[0]}/spectrogram.png")
        assert resp.status_code == 200
        assert resp.headers["content-type"] == "image/png"
        data = resp.content
        assert data[:8] == b"\x89PNG\r\n\x1a\n"
        width, height = struct.unpack(">II", data[16:24])
        assert (width, height) == (40 * 8, 32 * 8)

    def test_segment_wav_matches_source(self, client, data_root):
        root, ids, _ = data_root
        store = SessionStore(root)
        species, clip = store.find_clip(ids[0])
        resp = client.get(f"/api/clips/{ids[0]}/segment.wav")
        assert resp.status_code == 200
        assert resp.headers["content-type"] == "audio/wav"
        with wave.open(io.BytesIO(resp.content)) as f:
            assert f.getframerate() == 22050
            assert f.getnchannels() == 1
            n = f.getnframes()
            payload = np.frombuffer(f.readframes(n), dtype="<i2") / 32767.0
        assert n == clip.end_sample - clip.start_sample

        metas = {m.recording_id: m for m in load_species_index(root, species)}
        source = decode_audio(metas[clip.recording_id].audio_path)
        expected = source.samples[clip.start_sample : clip.end_sample]
        assert np.abs(payload - expected).max() < 2 / 32767  # 16-bit round trip


class TestDurability:
    def test_session_survives_restart(self, data_root):
        root, _, _ = data_root
        store = SessionStore(root)
        session = store.create("SYNT", "run1", "outlier_class", seed=9, max_n=3)
        first = session.sample_order[0]
        store.submit_verdict(session.session_id, first, Verdict.OUTLIER)

        fresh = SessionStore(root)  # simulated restart
        resumed = fresh.get(session.session_id)
        assert resumed.cursor == 1
        assert resumed.current_clip == session.sample_order[1]
        assert resumed.verdicts[0].clip_id == first
        fresh.submit_verdict(session.session_id, resumed.current_clip, Verdict.INLIER)
        fresh.submit_verdict(session.session_id, session.sample_order[2], Verdict.OUTLIER)
        assert fresh.get(session.session_id).complete

    def test_store_level_guards(self, data_root):
        root, _, _ = data_root
        store = SessionStore(root)
        session = store.create("SYNT", "run1", "outlier_class", seed=10, max_n=2)
        with pytest.raises(WrongClip):
            store.submit_verdict(
                session.session_id, session.sample_order[1], Verdict.OUTLIER
            )
        with pytest.raises(UnknownId):
            store.get("missing-session")
        with pytest.raises(UnknownId):
            store.load_result("SYNT", "missing-run")
