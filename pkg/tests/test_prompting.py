from __future__ import annotations

import numpy as np
import pytest
from PIL import Image

from adzero.characters import FaceMatch
from adzero.errors import ContractError, GeometryError, PaletteCapacityError
from adzero.prompting import (
    DEFAULT_PALETTE,
    AnnotatedClip,
    LabelPosition,
    LabelStyle,
    LabelType,
    TextPosition,
    annotate_clip,
    assign_colors,
    bbox_to_ellipse,
)

NAMES = ["Phoebe Buffay", "Joey Tribbiani", "Dr. Ross Geller"]


def match(frame, char, bbox=(20, 20, 40, 40), score=0.9):
    return FaceMatch(frame_index=frame, character_index=char, bbox=bbox, score=score)


def gray_frames(n=2, size=(120, 90)):
    return [Image.new("RGB", size, (128, 128, 128)) for _ in range(n)]


# --------------------------------------------------------------------------
# assign_colors


def test_assign_no_matches():
    assert assign_colors([]).colors == {}


def test_assign_first_appearance_order():
    later = match(3, 0)
    earlier = match(1, 1)
    assignment = assign_colors([later, earlier])
    assert assignment.color_name(1) == "red"
    assert assignment.color_name(0) == "blue"


def test_assign_left_edge_breaks_frame_ties():
    right = match(0, 0, bbox=(50, 0, 70, 20))
    left = match(0, 1, bbox=(5, 0, 25, 20))
    assignment = assign_colors([right, left])
    assert assignment.color_name(1) == "red"


def test_assign_capacity_error():
    matches = [match(0, c, bbox=(c * 10, 0, c * 10 + 5, 5)) for c in range(9)]
    with pytest.raises(PaletteCapacityError):
        assign_colors(matches, DEFAULT_PALETTE)


def test_assign_is_injective_and_stable():
    matches = [match(f, c) for f in range(3) for c in range(4)]
    assignment = assign_colors(matches)
    rgbs = [assignment.rgb(c) for c in assignment.character_order]
    assert len(set(rgbs)) == len(rgbs)
    assert assign_colors(matches).colors == assignment.colors


# --------------------------------------------------------------------------
# bbox_to_ellipse


def test_ellipse_symmetric():
    center, semi = bbox_to_ellipse((0, 0, 10, 10), 0.0)
    assert center == (5, 5) and semi == (5, 5)


def test_ellipse_padded():
    center, semi = bbox_to_ellipse((0, 0, 20, 10), 0.5)
    assert center == (10, 5)
    assert semi == (15, 7.5)


def test_ellipse_degenerate():
    with pytest.raises(GeometryError):
        bbox_to_ellipse((3, 3, 3, 9))


def test_ellipse_contains_unpadded_box_above_critical_pad():
    # (x/a)^2 + (y/b)^2 at the box corner is 2 * (0.5 / (0.5*(1+p)))^2;
    # it drops below 1 exactly when p >= sqrt(2) - 1
    pad = np.sqrt(2) - 1
    (cx, cy), (sx, sy) = bbox_to_ellipse((0, 0, 10, 6), pad)
    corner = ((5 - cx) / sx) ** 2 + ((3 - cy) / sy) ** 2
    assert corner <= 1.0 + 1e-12


# --------------------------------------------------------------------------
# annotate_clip


def test_none_style_keeps_pixels_and_builds_char_text():
    frames = gray_frames()
    style = LabelStyle(LabelType.NONE, LabelPosition.FACE, TextPosition.IN_TEXT)
    clip = annotate_clip(frames, [match(0, 0)], assign_colors([match(0, 0)]),
                         style, NAMES)
    assert clip.char_text == "Phoebe Buffay (red)"
    assert clip.frames[0].tobytes() == frames[0].tobytes()
    assert clip.frames[1].tobytes() == frames[1].tobytes()


def test_circle_draws_assigned_color_outside_box_interior():
    frames = gray_frames(1)
    m = match(0, 0, bbox=(40, 30, 80, 60))
    style = LabelStyle(LabelType.CIRCLE, LabelPosition.FACE, TextPosition.IN_TEXT)
    clip = annotate_clip(frames, [m], assign_colors([m]), style, NAMES)
    pixels = np.asarray(clip.frames[0])
    assert (pixels == np.array([255, 0, 0])).all(axis=-1).any()
    # interior margin of the unpadded bbox stays untouched
    interior = pixels[40:50, 50:70]
    assert (interior == 128).all()
    # input frame untouched
    assert (np.asarray(frames[0]) == 128).all()


def test_box_face_and_body_draws_two_rectangles():
    frames = gray_frames(1)
    m = match(0, 0, bbox=(10, 10, 30, 30))
    style = LabelStyle(LabelType.BOX, LabelPosition.FACE_AND_BODY,
                       TextPosition.IN_TEXT)
    body = {(0, 0): (5.0, 5.0, 60.0, 85.0)}
    clip = annotate_clip(frames, [m], assign_colors([m]), style, NAMES,
                         body_boxes=body)
    pixels = np.asarray(clip.frames[0])
    red = (pixels == np.array([255, 0, 0])).all(axis=-1)
    assert red[10, 20]  # face box top edge
    assert red[85, 30]  # body box bottom edge


def test_body_style_without_boxes_errors():
    frames = gray_frames(1)
    m = match(0, 0)
    style = LabelStyle(LabelType.CIRCLE, LabelPosition.BODY, TextPosition.IN_TEXT)
    with pytest.raises(ContractError):
        annotate_clip(frames, [m], assign_colors([m]), style, NAMES)


def test_in_image_renders_name_and_empties_char_text():
    frames = gray_frames(1)
    m = match(0, 2, bbox=(30, 40, 60, 70))
    style = LabelStyle(LabelType.CIRCLE, LabelPosition.FACE, TextPosition.IN_IMAGE)
    clip = annotate_clip(frames, [m], assign_colors([m]), style, NAMES)
    assert clip.char_text == ""
    assert clip.frames[0].tobytes() != frames[0].tobytes()


def test_match_referencing_missing_frame():
    frames = gray_frames(1)
    m = match(5, 0)
    style = LabelStyle()
    with pytest.raises(ContractError):
        annotate_clip(frames, [m], assign_colors([m]), style, NAMES)


def test_annotation_is_deterministic():
    def run() -> AnnotatedClip:
        frames = gray_frames(2)
        matches = [match(0, 0), match(1, 1, bbox=(50, 20, 90, 60))]
        style = LabelStyle(LabelType.CIRCLE, LabelPosition.FACE,
                           TextPosition.IN_TEXT)
        return annotate_clip(frames, matches, assign_colors(matches), style, NAMES)

    first, second = run(), run()
    assert first.char_text == second.char_text
    assert all(
        a.tobytes() == b.tobytes() for a, b in zip(first.frames, second.frames)
    )


def test_same_character_keeps_color_across_frames():
    matches = [match(0, 1), match(1, 1), match(2, 1)]
    assignment = assign_colors(matches)
    assert assignment.character_order == [1]
    style = LabelStyle(LabelType.CIRCLE, LabelPosition.FACE, TextPosition.IN_TEXT)
    clip = annotate_clip(gray_frames(3), matches, assignment, style, NAMES)
    for frame in clip.frames:
        pixels = np.asarray(frame)
        assert (pixels == np.array([255, 0, 0])).all(axis=-1).any()
