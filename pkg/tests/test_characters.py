from __future__ import annotations

import json

import numpy as np
import pytest

from adzero.characters import (
    CharacterBank,
    StubFaceDetector,
    detect_faces,
    first_name,
    ingest_bank,
    load_bank,
    match_frame,
    save_bank,
)
from adzero.errors import BankFormatError, ContractError, DetectionError, EmptyBankError

from conftest import (
    as_tuples,
    make_bank,
    make_detection,
    oracle_match,
    random_instance,
)


def write_manifest(tmp_path, entries):
    path = tmp_path / "cast.json"
    path.write_text(json.dumps(entries))
    return path


def test_ingest_truncates_to_capacity(tmp_path):
    entries = [
        {"name": f"Person {i}", "portrait": f"p{i}.jpg", "feature": [1.0, float(i)]}
        for i in range(12)
    ]
    bank = ingest_bank(write_manifest(tmp_path, entries), capacity=10)
    assert len(bank.profiles) == 10
    assert bank.names == [f"Person {i}" for i in range(10)]


def test_ingest_empty_manifest(tmp_path):
    with pytest.raises(EmptyBankError):
        ingest_bank(write_manifest(tmp_path, []))


def test_ingest_skips_portraits_without_faces(tmp_path, caplog):
    class NoFaceSecond:
        def embed(self, portrait):
            return None if portrait == "p1.jpg" else np.array([3.0, 4.0])

    entries = [
        {"name": "Keeps Face", "portrait": "p0.jpg"},
        {"name": "No Face", "portrait": "p1.jpg"},
    ]
    with caplog.at_level("WARNING"):
        bank = ingest_bank(write_manifest(tmp_path, entries), NoFaceSecond())
    assert bank.names == ["Keeps Face"]
    assert "No Face" in caplog.text
    # embedder output was normalized
    assert np.allclose(bank.profiles[0].portrait_feature, [0.6, 0.8])


def test_ingest_unreadable_manifest(tmp_path):
    bad = tmp_path / "cast.json"
    bad.write_text("{not json")
    with pytest.raises(BankFormatError):
        ingest_bank(bad)


def test_bank_rejects_duplicate_names():
    with pytest.raises(ContractError):
        make_bank([[1.0, 0.0], [0.0, 1.0]], names=["Same", "Same"])


def test_save_load_roundtrip(tmp_path):
    bank = make_bank([[1.0, 0.0], [0.3, 0.7]], names=["Ana Poe", "Bo Li"],
                     title="show")
    path = tmp_path / "bank.json"
    save_bank(bank, path)
    loaded = load_bank(path)
    assert loaded.title_id == "show"
    assert loaded.names == ["Ana Poe", "Bo Li"]
    assert np.allclose(loaded.feature_matrix(), bank.feature_matrix())


def test_first_name_strips_titles():
    assert first_name("Dr. Ross Geller") == "Ross"
    assert first_name("Monica Geller") == "Monica"
    assert first_name("Mr. Big") == "Big"


# --------------------------------------------------------------------------
# detect_faces


def test_detect_passthrough_sorted(tmp_path):
    path = tmp_path / "dets.jsonl"
    rows = [
        {"frame_index": 3, "bbox": [0, 0, 5, 5], "feature": [1, 0], "confidence": 0.4},
        {"frame_index": 3, "bbox": [6, 0, 9, 5], "feature": [0, 1], "confidence": 0.9},
    ]
    path.write_text("\n".join(json.dumps(r) for r in rows))
    detector = StubFaceDetector(path)
    out = detect_faces(None, detector, frame_index=3)
    assert [d.detector_confidence for d in out] == [0.9, 0.4]
    assert detect_faces(None, detector, frame_index=7) == []


def test_detect_normalizes_features(tmp_path):
    path = tmp_path / "dets.jsonl"
    path.write_text(
        json.dumps(
            {"frame_index": 0, "bbox": [0, 0, 5, 5], "feature": [2.0, 0.0],
             "confidence": 1.0}
        )
    )
    out = detect_faces(None, StubFaceDetector(path), frame_index=0)
    assert np.isclose(np.linalg.norm(out[0].feature), 1.0)


def test_detect_port_failure_wrapped():
    class Exploding:
        def detect(self, frame, frame_index):
            raise RuntimeError("camera on fire")

    with pytest.raises(DetectionError):
        detect_faces(None, Exploding())


# --------------------------------------------------------------------------
# match_frame


def test_match_empty_detections():
    bank = make_bank([[1.0, 0.0]])
    assert match_frame([], bank, 0.2) == []


def test_match_cosine_value():
    bank = make_bank([[1.0, 0.0], [0.0, 1.0]])
    det = make_detection([0.9, 0.1])
    matches = match_frame([det], bank, 0.2)
    assert len(matches) == 1
    assert matches[0].character_index == 0
    assert matches[0].score == pytest.approx(0.9 / np.sqrt(0.82), abs=1e-12)


def test_match_threshold_drops_low_scores():
    bank = make_bank([[1.0, 0.0]])
    # unit vector with cosine exactly 0.15 against the only profile
    weak = make_detection([0.15, np.sqrt(1 - 0.15**2)])
    assert match_frame([weak], bank, 0.2) == []
    assert len(match_frame([weak], bank, 0.1)) == 1


def test_match_duplicate_character_keeps_best():
    bank = make_bank([[1.0, 0.0], [0.0, 1.0]])
    # both argmax to character 1, with scores 0.8 and 0.5
    stronger = make_detection([0.6, 0.8], bbox=(0, 0, 5, 5))
    weaker = make_detection([-np.sqrt(0.75), 0.5], bbox=(6, 0, 9, 5))
    matches = match_frame([stronger, weaker], bank, 0.2)
    assert len(matches) == 1
    assert matches[0].character_index == 1
    assert matches[0].score == pytest.approx(0.8)
    assert matches[0].bbox == (0, 0, 5, 5)


def test_match_dimension_mismatch():
    bank = make_bank([[1.0, 0.0]])
    det = make_detection([1.0, 0.0, 0.0])
    with pytest.raises(ContractError):
        match_frame([det], bank, 0.2)


def test_match_equals_oracle_on_random_instances(rng):
    for _ in range(60):
        bank, detections = random_instance(rng)
        got = as_tuples(match_frame(detections, bank, 0.2))
        expected = oracle_match(detections, bank, 0.2)
        assert [(f, c, b) for f, c, b, _ in got] == [
            (f, c, b) for f, c, b, _ in expected
        ]
        assert np.allclose(
            [s for *_, s in got], [s for *_, s in expected], atol=1e-12
        )


def test_match_scale_invariance(rng):
    # scaling raw features by any positive constant before normalization
    # cannot change the outcome, because make_detection re-normalizes
    for _ in range(20):
        bank, detections = random_instance(rng)
        scaled = [
            make_detection(
                d.feature * float(rng.uniform(0.1, 10.0)),
                frame_index=d.frame_index,
                bbox=d.bbox,
                confidence=d.detector_confidence,
            )
            for d in detections
        ]
        original = as_tuples(match_frame(detections, bank, 0.2))
        rescaled = as_tuples(match_frame(scaled, bank, 0.2))
        assert [(f, c, b) for f, c, b, _ in original] == [
            (f, c, b) for f, c, b, _ in rescaled
        ]
        assert np.allclose(
            [s for *_, s in original], [s for *_, s in rescaled], atol=1e-12
        )


def test_match_per_frame_independence(rng):
    bank, _ = random_instance(rng)
    frames = []
    for frame_index in range(4):
        frames.append(
            [
                make_detection(rng.normal(size=8), frame_index=frame_index,
                               bbox=(float(j), 0.0, float(j) + 4.0, 4.0))
                for j in range(int(rng.integers(0, 5)))
            ]
        )
    per_frame = [match_frame(dets, bank, 0.2) for dets in frames]
    permuted = [match_frame(frames[i], bank, 0.2) for i in (2, 0, 3, 1)]
    assert [as_tuples(m) for m in permuted] == [
        as_tuples(per_frame[i]) for i in (2, 0, 3, 1)
    ]


def test_match_results_unique_and_thresholded(rng):
    for _ in range(30):
        bank, detections = random_instance(rng)
        matches = match_frame(detections, bank, 0.2)
        chars = [m.character_index for m in matches]
        assert len(set(chars)) == len(chars)
        assert all(m.score >= 0.2 for m in matches)
