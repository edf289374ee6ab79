"""Per-title character banks and frame-level face-to-character matching.

A bank pairs official cast names with unit-norm portrait face features.
Detected faces in a frame are scored against every profile by cosine
similarity; each detection is assigned its argmax profile, low-confidence
matches are dropped, and when several detections claim the same character
only the highest-scoring one survives.  Matching is per-frame independent.

Face detection and embedding are ports: the toolkit ships an HTTP service
client and a deterministic file-backed stub reading precomputed
detections, so the pipeline runs offline and reproducibly.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BankFormatError,
    ContractError,
    DetectionError,
    EmptyBankError,
)
from .gateway import encode_frame

logger = logging.getLogger(__name__)

DEFAULT_BANK_CAPACITY = 10  # top-10 cast entries per title
DEFAULT_MATCH_THRESHOLD = 0.2

_TITLES = {"mr", "mrs", "ms", "dr", "miss", "prof", "sir", "lady", "lord"}


def first_name(full_name: str) -> str:
    """First name with leading honorifics stripped ("Dr. Ross Geller" -> "Ross")."""
    for token in full_name.split():
        if token.rstrip(".").lower() not in _TITLES:
            return token
    return full_name.split()[0] if full_name.split() else full_name


def _unit(vector) -> np.ndarray:
    v = np.asarray(vector, dtype=np.float64)
    if v.ndim != 1:
        raise ContractError("feature must be a 1-D vector")
    norm = float(np.linalg.norm(v))
    if not np.isfinite(norm) or norm == 0.0:
        raise ContractError("feature norm must be finite and non-zero")
    return v / norm


@dataclass(frozen=True)
class CharacterProfile:
    name: str
    portrait_feature: np.ndarray  # unit L2 norm
    portrait_source: str = ""


@dataclass(frozen=True)
class CharacterBank:
    title_id: str
    profiles: tuple[CharacterProfile, ...]

    def __post_init__(self):
        names = [p.name for p in self.profiles]
        if len(set(names)) != len(names):
            raise ContractError("character names must be unique within a bank")
        if not self.profiles:
            raise EmptyBankError("bank has no profiles")
        dims = {p.portrait_feature.shape[0] for p in self.profiles}
        if len(dims) != 1:
            raise ContractError("all portrait features must share one dimension")

    @property
    def dim(self) -> int:
        return self.profiles[0].portrait_feature.shape[0]

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.profiles]

    def feature_matrix(self) -> np.ndarray:
        return np.stack([p.portrait_feature for p in self.profiles])


@dataclass(frozen=True)
class FaceDetection:
    frame_index: int
    bbox: tuple[float, float, float, float]  # x0, y0, x1, y1
    feature: np.ndarray  # unit L2 norm
    detector_confidence: float


@dataclass(frozen=True)
class FaceMatch:
    frame_index: int
    character_index: int
    bbox: tuple[float, float, float, float]
    score: float


# --------------------------------------------------------------------------
# Ports


class FaceEmbedder:
    """Port: one feature per portrait image, or None when no face is found."""

    def embed(self, portrait: str) -> np.ndarray | None:
        raise NotImplementedError


class PrecomputedEmbedder(FaceEmbedder):
    """File/dict-backed embedder stub: portrait path -> feature (or None)."""

    def __init__(self, features: dict[str, object]):
        self.features = features

    def embed(self, portrait):
        value = self.features.get(portrait)
        if value is None:
            return None
        return np.asarray(value, dtype=np.float64)


class FaceDetector:
    """Port: raw detections for one frame.

    Implementations return a list of dicts with keys ``bbox`` (x0,y0,x1,y1),
    ``feature`` (any-norm vector) and ``confidence`` (0..1).
    """

    def detect(self, frame, frame_index: int) -> list[dict]:
        raise NotImplementedError


class StubFaceDetector(FaceDetector):
    """Reads precomputed detections from a JSON-lines file.

    Each line: ``{"frame_index": int, "bbox": [x0,y0,x1,y1],
    "feature": [...], "confidence": float}``.  ``frame_index`` refers to
    the clip's frame sequence.
    """

    def __init__(self, path: str | Path):
        self.by_frame: dict[int, list[dict]] = {}
        with open(path, encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                row = json.loads(line)
                self.by_frame.setdefault(int(row["frame_index"]), []).append(row)

    def detect(self, frame, frame_index):
        return list(self.by_frame.get(frame_index, []))


class HttpFaceService(FaceDetector, FaceEmbedder):
    """Client for an external face service.

    POST ``{base_url}/detect`` with a base64 JPEG frame returns
    ``{"detections": [{bbox, feature, confidence}, ...]}``; POST
    ``{base_url}/embed`` with a portrait returns ``{"feature": [...]}``
    (null feature means no face).
    """

    def __init__(self, base_url: str, timeout: float = 60.0):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout

    def _post(self, route: str, payload: dict) -> dict:
        import requests

        resp = requests.post(
            f"{self.base_url}{route}", json=payload, timeout=self.timeout
        )
        if not 200 <= resp.status_code < 300:
            raise DetectionError(
                f"face service {route} returned HTTP {resp.status_code}"
            )
        return resp.json()

    def detect(self, frame, frame_index):
        import base64

        blob = base64.b64encode(encode_frame(frame)).decode("ascii")
        return self._post("/detect", {"image": blob}).get("detections", [])

    def embed(self, portrait):
        from PIL import Image

        with Image.open(portrait) as img:
            import base64

            blob = base64.b64encode(encode_frame(img)).decode("ascii")
        feature = self._post("/embed", {"image": blob}).get("feature")
        return None if feature is None else np.asarray(feature, dtype=np.float64)


# --------------------------------------------------------------------------
# Operations


def ingest_bank(
    manifest: str | Path,
    embedder: FaceEmbedder | None = None,
    capacity: int = DEFAULT_BANK_CAPACITY,
    title_id: str = "",
) -> CharacterBank:
    """Build a CharacterBank from a manifest file.

    The manifest is a JSON array of ``{name, portrait}`` objects with an
    optional precomputed ``feature``; entries without a feature are sent
    to the embedder port.  Portraits yielding no face are skipped with a
    warning; the result keeps manifest order and is truncated to
    ``capacity`` entries.
    """
    try:
        with open(manifest, encoding="utf-8") as f:
            entries = json.load(f)
        if not isinstance(entries, list):
            raise BankFormatError("manifest must be a JSON array")
    except (OSError, ValueError) as exc:
        raise BankFormatError(f"unreadable manifest {manifest}: {exc}") from exc

    profiles: list[CharacterProfile] = []
    for entry in entries:
        if len(profiles) >= capacity:
            break
        try:
            name = entry["name"]
            portrait = entry.get("portrait", "")
        except (TypeError, KeyError) as exc:
            raise BankFormatError(f"bad manifest entry {entry!r}") from exc
        if not name:
            raise BankFormatError("manifest entry with empty name")
        if "feature" in entry and entry["feature"] is not None:
            raw = np.asarray(entry["feature"], dtype=np.float64)
        elif embedder is not None:
            raw = embedder.embed(portrait)
        else:
            raw = None
        if raw is None:
            logger.warning("no face found for portrait of %r; entry skipped", name)
            continue
        profiles.append(
            CharacterProfile(
                name=name, portrait_feature=_unit(raw), portrait_source=str(portrait)
            )
        )
    if not profiles:
        raise EmptyBankError(f"no usable portraits in manifest {manifest}")
    return CharacterBank(title_id=title_id, profiles=tuple(profiles))


def save_bank(bank: CharacterBank, path: str | Path) -> None:
    doc = {
        "title_id": bank.title_id,
        "profiles": [
            {
                "name": p.name,
                "portrait": p.portrait_source,
                "feature": p.portrait_feature.tolist(),
            }
            for p in bank.profiles
        ],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True)


def load_bank(path: str | Path) -> CharacterBank:
    try:
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
        profiles = tuple(
            CharacterProfile(
                name=row["name"],
                portrait_feature=_unit(row["feature"]),
                portrait_source=row.get("portrait", ""),
            )
            for row in doc["profiles"]
        )
        return CharacterBank(title_id=doc.get("title_id", ""), profiles=profiles)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise BankFormatError(f"unreadable bank file {path}: {exc}") from exc


def detect_faces(
    frame, detector: FaceDetector, frame_index: int = 0
) -> list[FaceDetection]:
    """Run the detection port on one frame; normalize and sort the output.

    Features are L2-normalized regardless of the port's scaling; results
    are ordered by descending detector confidence.  Port failures raise
    DetectionError so callers can skip the frame without aborting a clip.
    """
    try:
        raw = detector.detect(frame, frame_index)
    except DetectionError:
        raise
    except Exception as exc:
        raise DetectionError(f"detector failed on frame {frame_index}: {exc}") from exc
    detections = []
    for row in raw:
        x0, y0, x1, y1 = (float(v) for v in row["bbox"])
        if not (x0 < x1 and y0 < y1):
            raise ContractError(f"degenerate bbox {row['bbox']} on frame {frame_index}")
        detections.append(
            FaceDetection(
                frame_index=frame_index,
                bbox=(x0, y0, x1, y1),
                feature=_unit(row["feature"]),
                detector_confidence=float(row.get("confidence", 1.0)),
            )
        )
    detections.sort(key=lambda d: -d.detector_confidence)
    return detections


def match_frame(
    detections: list[FaceDetection],
    bank: CharacterBank,
    threshold: float = DEFAULT_MATCH_THRESHOLD,
) -> list[FaceMatch]:
    """Assign each detection to its best-matching character, then filter.

    Cosine similarity against every profile; argmax per detection (ties
    break to the lowest character index); matches scoring below
    ``threshold`` are dropped; when several detections map to one
    character only the highest-scoring detection is kept (ties break to
    the earliest detection).  Output keeps detection order and has unique
    characters.
    """
    if not detections:
        return []
    features = np.stack([d.feature for d in detections])
    if features.shape[1] != bank.dim:
        raise ContractError(
            f"feature dimension {features.shape[1]} does not match bank {bank.dim}"
        )
    scores = bank.feature_matrix() @ features.T  # characters x detections
    best_per_char: dict[int, tuple[float, int]] = {}
    for j, det in enumerate(detections):
        i = int(np.argmax(scores[:, j]))
        score = float(scores[i, j])
        if score < threshold:
            continue
        if i not in best_per_char or score > best_per_char[i][0]:
            best_per_char[i] = (score, j)
    kept = sorted((j, i, s) for i, (s, j) in best_per_char.items())
    return [
        FaceMatch(
            frame_index=detections[j].frame_index,
            character_index=i,
            bbox=detections[j].bbox,
            score=s,
        )
        for j, i, s in kept
    ]
