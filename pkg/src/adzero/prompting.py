"""Colored identity markers on frames plus the matching in-text string.

Supports every marker strategy: circles, boxes, or no marker; placed
around the face, the body, or both; with character names given in the
text prompt ("Phoebe Buffay (red)") or rendered into the image.  Each
character appearing in a clip gets one stable color, assigned in order
of first appearance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from PIL import Image, ImageDraw, ImageFont

from .characters import FaceMatch, first_name
from .errors import ContractError, GeometryError, PaletteCapacityError


class LabelType(str, Enum):
    CIRCLE = "circle"
    BOX = "box"
    NONE = "none"


class LabelPosition(str, Enum):
    FACE = "face"
    BODY = "body"
    FACE_AND_BODY = "face_and_body"


class TextPosition(str, Enum):
    IN_TEXT = "in_text"
    IN_IMAGE = "in_image"


@dataclass(frozen=True)
class LabelStyle:
    label_type: LabelType = LabelType.CIRCLE
    label_position: LabelPosition = LabelPosition.FACE
    text_position: TextPosition = TextPosition.IN_TEXT


# Named colors a language model can reference back from the prompt.
DEFAULT_PALETTE: tuple[tuple[str, tuple[int, int, int]], ...] = (
    ("red", (255, 0, 0)),
    ("blue", (0, 0, 255)),
    ("green", (0, 255, 0)),
    ("yellow", (255, 255, 0)),
    ("purple", (128, 0, 128)),
    ("orange", (255, 165, 0)),
    ("cyan", (0, 255, 255)),
    ("magenta", (255, 0, 255)),
)

# Ellipse padding: 0.5 comfortably clears the face box (anything above
# sqrt(2)-1 already contains the whole unpadded rectangle).
DEFAULT_PAD_RATIO = 0.5


@dataclass(frozen=True)
class ColorAssignment:
    """Injective character_index -> (color_name, rgb), stable within a clip."""

    colors: dict[int, tuple[str, tuple[int, int, int]]] = field(default_factory=dict)

    def color_name(self, character_index: int) -> str:
        return self.colors[character_index][0]

    def rgb(self, character_index: int) -> tuple[int, int, int]:
        return self.colors[character_index][1]

    @property
    def character_order(self) -> list[int]:
        return list(self.colors)


@dataclass(frozen=True)
class AnnotatedClip:
    frames: list[Image.Image]
    char_text: str
    assignment: ColorAssignment


def assign_colors(
    matches: list[FaceMatch],
    palette: tuple[tuple[str, tuple[int, int, int]], ...] = DEFAULT_PALETTE,
) -> ColorAssignment:
    """Give each matched character a palette color by first appearance.

    First appearance orders by (frame index, bbox left edge); the mapping
    is deterministic and injective.  More characters than palette entries
    raises PaletteCapacityError.
    """
    first_seen: dict[int, tuple[int, float]] = {}
    for m in matches:
        key = (m.frame_index, m.bbox[0])
        if m.character_index not in first_seen or key < first_seen[m.character_index]:
            first_seen[m.character_index] = key
    order = sorted(first_seen, key=lambda c: first_seen[c])
    if len(order) > len(palette):
        raise PaletteCapacityError(
            f"{len(order)} characters exceed the {len(palette)}-color palette"
        )
    return ColorAssignment({c: palette[k] for k, c in enumerate(order)})


def bbox_to_ellipse(
    bbox: tuple[float, float, float, float], pad_ratio: float = DEFAULT_PAD_RATIO
) -> tuple[tuple[float, float], tuple[float, float]]:
    """Rectangle -> (center, semi_axes) of the padded enclosing ellipse."""
    x0, y0, x1, y1 = bbox
    if pad_ratio < 0:
        raise ContractError("pad_ratio must be >= 0")
    if not (x1 > x0 and y1 > y0):
        raise GeometryError(f"degenerate rectangle {bbox}")
    center = ((x0 + x1) / 2.0, (y0 + y1) / 2.0)
    semi = ((x1 - x0) / 2.0 * (1 + pad_ratio), (y1 - y0) / 2.0 * (1 + pad_ratio))
    return center, semi


def _stroke_width(image: Image.Image) -> int:
    return max(2, round(0.004 * image.width))


def _load_font(size: int):
    for path in (
        "/usr/share/fonts/truetype/dejavu/DejaVuSans-Bold.ttf",
        "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf",
    ):
        try:
            return ImageFont.truetype(path, size)
        except OSError:
            continue
    try:
        return ImageFont.load_default(size)
    except TypeError:  # very old Pillow
        return ImageFont.load_default()


def _draw_marker(draw: ImageDraw.ImageDraw, bbox, rgb, label_type: LabelType,
                 width: int, pad_ratio: float) -> None:
    if label_type == LabelType.BOX:
        draw.rectangle(list(bbox), outline=rgb, width=width)
    elif label_type == LabelType.CIRCLE:
        (cx, cy), (sx, sy) = bbox_to_ellipse(bbox, pad_ratio)
        draw.ellipse([cx - sx, cy - sy, cx + sx, cy + sy], outline=rgb, width=width)


def _draw_name_chip(image, draw, bbox, name: str, rgb) -> None:
    # Solid background chip above the face box for legibility; the
    # in-image variant relies on the reader model's OCR.
    size = max(8, round(0.03 * image.height))
    font = _load_font(size)
    text = first_name(name)
    left, top, right, bottom = draw.textbbox((0, 0), text, font=font)
    tw, th = right - left, bottom - top
    pad = max(2, size // 6)
    x = max(0, min(bbox[0], image.width - tw - 2 * pad))
    y = bbox[1] - th - 2 * pad
    if y < 0:
        y = bbox[1]
    draw.rectangle([x, y, x + tw + 2 * pad, y + th + 2 * pad], fill=rgb)
    draw.text((x + pad - left, y + pad - top), text, font=font, fill=(255, 255, 255))


def annotate_clip(
    frames: list[Image.Image],
    matches: list[FaceMatch],
    assignment: ColorAssignment,
    style: LabelStyle,
    names: list[str],
    body_boxes: dict[tuple[int, int], tuple[float, float, float, float]] | None = None,
    pad_ratio: float = DEFAULT_PAD_RATIO,
) -> AnnotatedClip:
    """Apply the marker style to every match and build the prompt string.

    ``names`` maps character_index -> official name.  Body-position styles
    need ``body_boxes`` keyed by (frame_index, character_index) and error
    when a box is missing rather than silently degrading.  Input frames
    are never mutated; with label_type none the output pixels equal the
    input exactly.
    """
    for m in matches:
        if not 0 <= m.frame_index < len(frames):
            raise ContractError(f"match references missing frame {m.frame_index}")
        if m.character_index not in assignment.colors:
            raise ContractError(f"no color assigned to character {m.character_index}")

    out_frames = [f.copy() for f in frames]
    needs_body = style.label_type != LabelType.NONE and style.label_position in (
        LabelPosition.BODY,
        LabelPosition.FACE_AND_BODY,
    )
    needs_face = style.label_position in (
        LabelPosition.FACE,
        LabelPosition.FACE_AND_BODY,
    )
    if style.label_type != LabelType.NONE or style.text_position == TextPosition.IN_IMAGE:
        for m in matches:
            frame = out_frames[m.frame_index]
            draw = ImageDraw.Draw(frame)
            rgb = assignment.rgb(m.character_index)
            width = _stroke_width(frame)
            if style.label_type != LabelType.NONE and needs_face:
                _draw_marker(draw, m.bbox, rgb, style.label_type, width, pad_ratio)
            if needs_body:
                key = (m.frame_index, m.character_index)
                if body_boxes is None or key not in body_boxes:
                    raise ContractError(
                        f"body box missing for frame {m.frame_index}, "
                        f"character {m.character_index}"
                    )
                _draw_marker(
                    draw, body_boxes[key], rgb, style.label_type, width, pad_ratio
                )
            if style.text_position == TextPosition.IN_IMAGE:
                _draw_name_chip(frame, draw, m.bbox, names[m.character_index], rgb)

    if style.text_position == TextPosition.IN_TEXT and assignment.colors:
        char_text = ", ".join(
            f"{names[c]} ({assignment.color_name(c)})"
            for c in assignment.character_order
        )
    else:
        char_text = ""
    return AnnotatedClip(frames=out_frames, char_text=char_text, assignment=assignment)
