from __future__ import annotations

import numpy as np
import pytest

from adzero.characters import CharacterBank, CharacterProfile, FaceDetection


def unit(vector) -> np.ndarray:
    v = np.asarray(vector, dtype=np.float64)
    return v / np.linalg.norm(v)


def make_bank(features, names=None, title="t") -> CharacterBank:
    profiles = tuple(
        CharacterProfile(
            name=(names[i] if names else f"Char {chr(65 + i)} Surname"),
            portrait_feature=unit(f),
        )
        for i, f in enumerate(features)
    )
    return CharacterBank(title_id=title, profiles=profiles)


def make_detection(feature, frame_index=0, bbox=(0.0, 0.0, 10.0, 10.0),
                   confidence=0.9) -> FaceDetection:
    return FaceDetection(
        frame_index=frame_index,
        bbox=bbox,
        feature=unit(feature),
        detector_confidence=confidence,
    )


def random_instance(rng: np.random.Generator, dim: int = 8):
    """Random bank + detections for oracle-equivalence checks."""
    n_chars = int(rng.integers(1, 11))
    n_dets = int(rng.integers(0, 11))
    bank = make_bank([rng.normal(size=dim) for _ in range(n_chars)])
    detections = [
        make_detection(
            rng.normal(size=dim),
            frame_index=0,
            bbox=(float(j), 0.0, float(j) + 5.0, 5.0),
            confidence=float(rng.uniform(0.2, 1.0)),
        )
        for j in range(n_dets)
    ]
    return bank, detections


def oracle_match(detections, bank, threshold):
    """Brute-force face matching: full similarity matrix, argmax per
    detection, threshold, per-character max.  Kept independent of the
    library implementation (pure-python loops over explicit cosines)."""
    results = {}
    for j, det in enumerate(detections):
        best_i, best_score = None, None
        for i, profile in enumerate(bank.profiles):
            p = profile.portrait_feature
            f = det.feature
            score = float(
                np.dot(p, f) / (np.linalg.norm(p) * np.linalg.norm(f))
            )
            if best_score is None or score > best_score:
                best_i, best_score = i, score
        if best_score < threshold:
            continue
        current = results.get(best_i)
        if current is None or best_score > current[0]:
            results[best_i] = (best_score, j)
    rows = sorted((j, i, s) for i, (s, j) in results.items())
    return [
        (detections[j].frame_index, i, detections[j].bbox, s) for j, i, s in rows
    ]


def as_tuples(matches):
    return [(m.frame_index, m.character_index, m.bbox, m.score) for m in matches]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
