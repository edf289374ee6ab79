"""Narrated-soundtrack alignment and AD extraction.

Pipeline for turning a narrated recording of an episode plus the original
soundtrack into clean AD sentences:

1. Both tracks become log mel-spectrograms; frames overlapping narration
   are masked out of the narrated track.
2. Fixed-length chunks of the narrated track are cross-correlated against
   every offset of the original, giving (t_narrated, t_original) anchor
   pairs at correlation peaks.
3. RANSAC fits one global linear time map through the anchors, absorbing
   both offset and playback-speed mismatch (e.g. 29.97 vs 25 fps).
4. Narrated-transcript sentences are mapped into original-track time and
   filtered three ways: near-duplicate dialogue by word error rate,
   majority-vote speaker selection, and a literal-substring blocklist.

Masked frames are excluded from the correlation sums (not zeroed) so
masking cannot manufacture spurious peaks.
"""

from __future__ import annotations

import importlib.resources
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import signal

from .errors import AlignmentError, ContractError, LowConfidenceError
from .stage2 import ADRecord
from .textnorm import normalize_tokens

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AudioTrack:
    samples: np.ndarray  # mono float
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ContractError("sample_rate must be positive")
        if self.samples.ndim != 1:
            raise ContractError("samples must be mono (1-D)")
        if not np.all(np.isfinite(self.samples)):
            raise ContractError("samples must be finite")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def load_wav(path) -> AudioTrack:
    """Read a WAV file as a mono float track (channels averaged)."""
    from scipy.io import wavfile

    rate, data = wavfile.read(path)
    data = np.asarray(data)
    if data.ndim == 2:
        data = data.mean(axis=1)
    if np.issubdtype(data.dtype, np.integer):
        data = data.astype(np.float64) / float(np.iinfo(data.dtype).max)
    else:
        data = data.astype(np.float64)
    return AudioTrack(samples=data, sample_rate=int(rate))


@dataclass(frozen=True)
class MelParams:
    sample_rate: int = 16000
    n_fft: int = 1024
    hop: int = 512
    n_mels: int = 64
    fmin: float = 0.0
    fmax: float = 8000.0


@dataclass(frozen=True)
class MelSpec:
    """Log-amplitude mel matrix (time x bands) with a per-frame mask.

    ``mask[i]`` true means frame i is excluded from correlation and from
    the per-band normalization statistics.  Frame i is centered at
    ``i * hop`` seconds.
    """

    matrix: np.ndarray
    hop: float  # seconds
    mask: np.ndarray

    def __post_init__(self):
        if self.hop <= 0:
            raise ContractError("hop must be positive")
        if self.matrix.shape[0] != self.mask.shape[0]:
            raise ContractError("mask length must equal frame count")

    @property
    def frame_centers(self) -> np.ndarray:
        return np.arange(self.matrix.shape[0]) * self.hop

    def normalized(self) -> np.ndarray:
        """Per-band zero-mean/unit-variance values over unmasked frames."""
        keep = ~self.mask
        if not keep.any():
            return np.zeros_like(self.matrix)
        mean = self.matrix[keep].mean(axis=0)
        std = self.matrix[keep].std(axis=0)
        std[std < 1e-12] = 1.0
        return (self.matrix - mean) / std


@dataclass(frozen=True)
class TranscriptSegment:
    text: str
    start: float
    end: float
    speaker: str | None = None

    def __post_init__(self):
        if self.end <= self.start:
            raise ContractError("segment end must be after start")
        if not self.text:
            raise ContractError("segment text must be non-empty")

    @property
    def center(self) -> float:
        return (self.start + self.end) / 2.0


@dataclass(frozen=True)
class AnchorPair:
    t_av: float
    t_tv: float
    score: float


@dataclass(frozen=True)
class TimeMap:
    """t_tv = a * t_av + b, with RANSAC consensus diagnostics."""

    a: float
    b: float
    inlier_ratio: float
    residual_rms: float

    def __post_init__(self):
        if self.a <= 0:
            raise ContractError("slope must be positive")

    def apply(self, t: float) -> float:
        return self.a * t + self.b


def _mel_filterbank(params: MelParams) -> np.ndarray:
    """Triangular mel filters (HTK scale) over rfft bins."""

    def to_mel(f):
        return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)

    def from_mel(m):
        return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)

    n_bins = params.n_fft // 2 + 1
    bin_freqs = np.arange(n_bins) * params.sample_rate / params.n_fft
    edges = from_mel(
        np.linspace(to_mel(params.fmin), to_mel(params.fmax), params.n_mels + 2)
    )
    bank = np.zeros((params.n_mels, n_bins))
    for m in range(params.n_mels):
        lo, center, hi = edges[m], edges[m + 1], edges[m + 2]
        up = (bin_freqs - lo) / max(center - lo, 1e-9)
        down = (hi - bin_freqs) / max(hi - center, 1e-9)
        bank[m] = np.clip(np.minimum(up, down), 0.0, None)
    return bank


def mel_spectrogram(audio: AudioTrack, params: MelParams = MelParams()) -> MelSpec:
    """Log(1 + magnitude) mel-spectrogram at a fixed 16 kHz analysis rate.

    The track is resampled to ``params.sample_rate``; frames are centered
    (reflect padding), so a track of N samples yields 1 + N // hop frames
    and frame i sits at ``i * hop`` seconds.  The mask starts all-false.
    """
    x = audio.samples
    if audio.sample_rate != params.sample_rate:
        g = np.gcd(audio.sample_rate, params.sample_rate)
        x = signal.resample_poly(x, params.sample_rate // g, audio.sample_rate // g)
    if len(x) < params.n_fft:
        raise ContractError(
            f"audio too short: {len(x)} samples < one {params.n_fft}-sample window"
        )
    pad = params.n_fft // 2
    x = np.pad(x, pad, mode="reflect")
    frames = np.lib.stride_tricks.sliding_window_view(x, params.n_fft)[:: params.hop]
    window = signal.get_window("hann", params.n_fft, fftbins=True)
    magnitude = np.abs(np.fft.rfft(frames * window, axis=1))
    mel = np.log1p(magnitude @ _mel_filterbank(params).T)
    return MelSpec(
        matrix=mel,
        hop=params.hop / params.sample_rate,
        mask=np.zeros(mel.shape[0], dtype=bool),
    )


def mask_intervals(mel: MelSpec, intervals: list[tuple[float, float]]) -> MelSpec:
    """Mask frames whose center time falls inside any [start, end) interval."""
    mask = mel.mask.copy()
    centers = mel.frame_centers
    for start, end in intervals:
        mask |= (centers >= start) & (centers < end)
    return replace(mel, mask=mask)


def find_anchors(
    mel_av: MelSpec,
    mel_tv: MelSpec,
    chunk: float = 10.0,
    stride: float = 30.0,
    min_score: float = 0.3,
) -> list[AnchorPair]:
    """Correlate narrated-track chunks against every original-track offset.

    Chunks start at multiples of ``stride``; chunks more than half masked
    are skipped.  The score is the Pearson correlation of the flattened
    chunk (unmasked frames only) against the co-located window of the
    original track; the best offset is emitted when its peak reaches
    ``min_score``.
    """
    if abs(mel_av.hop - mel_tv.hop) > 1e-12:
        raise ContractError("mel hops must match")
    if mel_av.matrix.shape[1] != mel_tv.matrix.shape[1]:
        raise ContractError("mel band counts must match")
    hop = mel_av.hop
    n_bands = mel_av.matrix.shape[1]
    chunk_frames = max(1, round(chunk / hop))
    stride_frames = max(1, round(stride / hop))
    av = mel_av.normalized()
    tv = mel_tv.normalized()
    t_av_frames, t_tv_frames = av.shape[0], tv.shape[0]
    if t_tv_frames < chunk_frames or t_av_frames < chunk_frames:
        return []

    tv_sq = tv * tv
    anchors: list[AnchorPair] = []
    for start in range(0, t_av_frames - chunk_frames + 1, stride_frames):
        keep = ~mel_av.mask[start : start + chunk_frames]
        n_keep = int(keep.sum())
        if n_keep * 2 < chunk_frames:
            continue
        chunk_mat = av[start : start + chunk_frames] * keep[:, None]
        n_vals = n_keep * n_bands
        mean = chunk_mat.sum() / n_vals
        centered = (av[start : start + chunk_frames] - mean) * keep[:, None]
        norm_a = float(np.sqrt((centered * centered).sum()))
        if norm_a < 1e-12:
            continue
        weights = np.repeat(keep[:, None].astype(float), n_bands, axis=1)
        num = signal.correlate(tv, centered, mode="valid")[:, 0]
        s1 = signal.correlate(tv, weights, mode="valid")[:, 0]
        s2 = signal.correlate(tv_sq, weights, mode="valid")[:, 0]
        var = np.maximum(s2 - s1 * s1 / n_vals, 0.0)
        den = norm_a * np.sqrt(var)
        scores = np.where(den > 1e-12, num / np.maximum(den, 1e-12), 0.0)
        offset = int(np.argmax(scores))
        peak = float(scores[offset])
        if peak >= min_score:
            center = (chunk_frames - 1) / 2.0
            anchors.append(
                AnchorPair(
                    t_av=(start + center) * hop,
                    t_tv=(offset + center) * hop,
                    score=peak,
                )
            )
    return anchors


def ransac_fit(
    anchors: list[AnchorPair],
    inlier_tol: float = 0.5,
    iterations: int = 1000,
    seed: int = 0,
    min_inlier_ratio: float = 0.2,
) -> TimeMap:
    """Robust linear fit t_tv = a * t_av + b over anchor pairs.

    Classic two-point RANSAC with a least-squares refit on the winning
    consensus set; deterministic for a fixed seed.  Raises
    LowConfidenceError when the best consensus covers fewer than
    ``min_inlier_ratio`` of the anchors (alignment deemed failed).
    """
    if len(anchors) < 2:
        raise ContractError("at least 2 anchors are required")
    x = np.array([p.t_av for p in anchors])
    y = np.array([p.t_tv for p in anchors])
    n = len(anchors)

    rng = np.random.default_rng(seed)
    idx = rng.integers(0, n, size=(iterations, 2))
    x0, x1 = x[idx[:, 0]], x[idx[:, 1]]
    y0, y1 = y[idx[:, 0]], y[idx[:, 1]]
    dx = x1 - x0
    valid = np.abs(dx) > 1e-12
    slopes = np.where(valid, (y1 - y0) / np.where(valid, dx, 1.0), 0.0)
    intercepts = y0 - slopes * x0
    residuals = np.abs(y[None, :] - (slopes[:, None] * x[None, :] + intercepts[:, None]))
    counts = np.where(valid, (residuals <= inlier_tol).sum(axis=1), 0)
    best = int(np.argmax(counts))
    if counts[best] < 2:
        raise AlignmentError("no RANSAC hypothesis reached consensus")
    inliers = residuals[best] <= inlier_tol
    a, b = np.polyfit(x[inliers], y[inliers], 1)
    inlier_ratio = float(counts[best]) / n
    refit_res = y[inliers] - (a * x[inliers] + b)
    residual_rms = float(np.sqrt(np.mean(refit_res**2)))
    if inlier_ratio < min_inlier_ratio:
        raise LowConfidenceError(inlier_ratio, min_inlier_ratio)
    if a <= 0:
        raise AlignmentError(f"non-positive fitted slope {a:.6f}")
    return TimeMap(a=float(a), b=float(b), inlier_ratio=inlier_ratio,
                   residual_rms=residual_rms)


def map_segments(segments: list[TranscriptSegment], tm: TimeMap) -> list[TranscriptSegment]:
    return [
        replace(s, start=tm.apply(s.start), end=tm.apply(s.end)) for s in segments
    ]


# --------------------------------------------------------------------------
# Text filters


def word_error_rate(hyp: str, ref: str) -> float:
    """Word-level Levenshtein distance over the reference length.

    Both sides are lowercased with punctuation stripped first.  An empty
    normalized reference has no defined rate and raises ContractError.
    """
    hyp_words = normalize_tokens(hyp)
    ref_words = normalize_tokens(ref)
    if not ref_words:
        raise ContractError("reference is empty after normalization")
    previous = list(range(len(ref_words) + 1))
    for i, h in enumerate(hyp_words, start=1):
        current = [i]
        for j, r in enumerate(ref_words, start=1):
            current.append(
                min(
                    previous[j] + 1,  # deletion of ref word
                    current[j - 1] + 1,  # insertion
                    previous[j - 1] + (h != r),  # substitution / match
                )
            )
        previous = current
    return previous[-1] / len(ref_words)


def filter_text_match(
    av: list[TranscriptSegment],
    tv: list[TranscriptSegment],
    delta_t: float = 3.0,
    wer_threshold: float = 0.4,
) -> list[TranscriptSegment]:
    """Drop narrated-track sentences that duplicate co-located dialogue.

    A segment is dropped when any original-track segment whose center is
    within ``delta_t`` of its own center matches with WER below the
    threshold.  ``av`` must already be mapped into original-track time.
    """
    tv_centers = np.array([s.center for s in tv]) if tv else np.empty(0)
    kept = []
    for seg in av:
        matched = False
        if len(tv_centers):
            near = np.nonzero(np.abs(tv_centers - seg.center) <= delta_t)[0]
            for j in near:
                if not normalize_tokens(tv[j].text):
                    continue
                if word_error_rate(seg.text, tv[j].text) < wer_threshold:
                    matched = True
                    break
        if not matched:
            kept.append(seg)
    return kept


def majority_speaker(segments: list[TranscriptSegment]) -> str:
    """Speaker with the most segments; ties by duration, then name."""
    if not segments:
        raise ContractError("no segments to vote over")
    counts: dict[str, int] = {}
    durations: dict[str, float] = {}
    for seg in segments:
        if seg.speaker is None:
            raise ContractError("segment without speaker label")
        counts[seg.speaker] = counts.get(seg.speaker, 0) + 1
        durations[seg.speaker] = durations.get(seg.speaker, 0.0) + (seg.end - seg.start)
    return min(counts, key=lambda s: (-counts[s], -durations[s], s))


def filter_diarization(segments: list[TranscriptSegment]) -> list[TranscriptSegment]:
    """Keep only the majority-vote speaker's segments (the AD narrator)."""
    if not segments:
        return []
    winner = majority_speaker(segments)
    return [s for s in segments if s.speaker == winner]


def default_blocklist() -> list[str]:
    """Shipped list of literals that never occur in true AD sentences.

    One literal per line; trailing whitespace is significant ("I " only
    matches the pronoun followed by a space), so lines are split on
    newlines only.
    """
    text = importlib.resources.files("adzero.resources").joinpath(
        "blocklist.txt"
    ).read_text(encoding="utf-8")
    return [line for line in text.split("\n") if line]


def filter_rules(
    segments: list[TranscriptSegment], blocklist: list[str] | None = None
) -> list[TranscriptSegment]:
    """Drop segments containing any blocklist string (case-sensitive substring)."""
    if blocklist is None:
        blocklist = default_blocklist()
    return [
        s for s in segments if not any(literal in s.text for literal in blocklist)
    ]


# --------------------------------------------------------------------------
# End-to-end per-title pipeline


@dataclass(frozen=True)
class AlignmentConfig:
    title_id: str = ""
    chunk: float = 10.0
    stride: float = 30.0
    min_anchor_score: float = 0.3
    inlier_tol: float = 0.5
    iterations: int = 1000
    min_inlier_ratio: float = 0.2
    delta_t: float = 3.0
    wer_threshold: float = 0.4
    seed: int = 0
    blocklist: tuple[str, ...] | None = None


@dataclass
class AlignmentReport:
    title_id: str
    anchor_count: int
    a: float
    b: float
    inlier_ratio: float
    residual_rms: float
    removed_counts: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "title_id": self.title_id,
            "anchor_count": self.anchor_count,
            "a": self.a,
            "b": self.b,
            "inlier_ratio": self.inlier_ratio,
            "residual_rms": self.residual_rms,
            "removed_counts": self.removed_counts,
        }


def build_ads(
    av_transcript: list[TranscriptSegment],
    tv_transcript: list[TranscriptSegment],
    av_ad_intervals: list[tuple[float, float]],
    mel_av: MelSpec,
    mel_tv: MelSpec,
    config: AlignmentConfig = AlignmentConfig(),
) -> tuple[list[ADRecord], AlignmentReport]:
    """Align one title and extract its AD sentences.

    Mask narration intervals, correlate for anchors, fit the time map,
    move the narrated transcript into original-track time, then run the
    WER, diarization, and blocklist filters in order.  A low-confidence
    fit aborts the title by raising LowConfidenceError.
    """
    masked = mask_intervals(mel_av, av_ad_intervals)
    anchors = find_anchors(
        masked, mel_tv, config.chunk, config.stride, config.min_anchor_score
    )
    if len(anchors) < 2:
        raise AlignmentError(
            f"only {len(anchors)} correlation anchors found; cannot fit time map"
        )
    tm = ransac_fit(
        anchors,
        inlier_tol=config.inlier_tol,
        iterations=config.iterations,
        seed=config.seed,
        min_inlier_ratio=config.min_inlier_ratio,
    )
    mapped = map_segments(av_transcript, tm)
    after_text = filter_text_match(
        mapped, tv_transcript, config.delta_t, config.wer_threshold
    )
    after_diar = filter_diarization(after_text)
    blocklist = list(config.blocklist) if config.blocklist is not None else None
    after_rules = filter_rules(after_diar, blocklist)
    records = [
        ADRecord(
            clip_id=f"{config.title_id or 'title'}_{i:04d}",
            text=s.text,
            start=s.start,
            end=s.end,
        )
        for i, s in enumerate(after_rules)
    ]
    report = AlignmentReport(
        title_id=config.title_id,
        anchor_count=len(anchors),
        a=tm.a,
        b=tm.b,
        inlier_ratio=tm.inlier_ratio,
        residual_rms=tm.residual_rms,
        removed_counts={
            "text_match": len(mapped) - len(after_text),
            "diarization": len(after_text) - len(after_diar),
            "rules": len(after_diar) - len(after_rules),
        },
    )
    logger.info(
        "title %s: %d anchors, a=%.5f b=%.3f inliers=%.2f; %d ADs",
        config.title_id, len(anchors), tm.a, tm.b, tm.inlier_ratio, len(records),
    )
    return records, report
