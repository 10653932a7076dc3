"""Stroke annotations: XML parse/emit, negative-segment inference, window
proposals and the class taxonomy.

Annotation XML schema:

    <video name="..." frames="..." fps="...">
      <action begin="..." end="..." move="..." [score="..."]/>
      ...
    </video>

begin/end are base-10 frame indices forming half-open intervals [begin, end);
score, when present, marks a predicted segment. Taxonomy CSV schema: header
``label,type,hand_side``, one row per fine label.
"""

from __future__ import annotations

import csv
import io
import xml.parsers.expat
from dataclasses import dataclass, field
from importlib import resources
from xml.sax.saxutils import quoteattr

from .errors import AnnotationError, TaxonomyError

NONSTROKE_LABEL = "Non-stroke"
STROKE_LABEL = "Stroke"
PROPOSAL_LABEL = "Proposal"

TYPES = ("Defensive", "Offensive", "Service")
HAND_SIDES = ("Forehand", "Backhand")

LEVELS = ("global", "type", "hand", "type_hand")
LEVEL_TITLES = {
    "global": "Global",
    "type_hand": "Type and Hand-Sided",
    "type": "Type",
    "hand": "Hand-Side",
}


@dataclass(frozen=True)
class Segment:
    """Half-open frame interval with a label; score only on predictions."""

    begin: int
    end: int
    label: str
    score: float | None = None

    def __post_init__(self):
        if not (0 <= self.begin < self.end):
            raise AnnotationError(
                f"segment must satisfy 0 <= begin < end, got [{self.begin}, {self.end})"
            )
        if self.score is not None and not (0.0 <= self.score <= 1.0):
            raise AnnotationError(f"score must lie in [0, 1], got {self.score}")

    @property
    def length(self) -> int:
        return self.end - self.begin


@dataclass
class VideoAnnotation:
    video_id: str
    frame_count: int
    fps: float
    segments: list[Segment] = field(default_factory=list)

    def __post_init__(self):
        if self.frame_count < 0:
            raise AnnotationError(f"frame count must be >= 0, got {self.frame_count}")
        if self.fps <= 0:
            raise AnnotationError(f"fps must be > 0, got {self.fps}")
        self.segments = sorted(self.segments, key=lambda s: (s.begin, s.end))
        _validate_segments(self.segments, self.frame_count)

    @property
    def ground_truth(self) -> list[Segment]:
        return [s for s in self.segments if s.score is None]

    @property
    def predictions(self) -> list[Segment]:
        return [s for s in self.segments if s.score is not None]


def _validate_segments(segments: list[Segment], frame_count: int, lines=None):
    def where(i):
        return f" (line {lines[i]})" if lines else ""

    prev_gt = None
    for i, s in enumerate(segments):
        if frame_count > 0 and s.end > frame_count:
            raise AnnotationError(
                f"segment [{s.begin}, {s.end}) exceeds frame count {frame_count}{where(i)}"
            )
        if s.score is None:
            if prev_gt is not None and s.begin < prev_gt.end:
                raise AnnotationError(
                    f"ground-truth segments overlap: [{prev_gt.begin}, {prev_gt.end}) "
                    f"and [{s.begin}, {s.end}){where(i)}"
                )
            prev_gt = s


class _VideoXmlTarget:
    """Expat handlers building one VideoAnnotation, tracking source lines."""

    def __init__(self, parser):
        self.parser = parser
        self.video_attrs = None
        self.actions: list[tuple[dict, int]] = []
        self.depth = 0

    def start(self, tag, attrs):
        line = self.parser.CurrentLineNumber
        self.depth += 1
        if self.depth == 1:
            if tag != "video":
                raise AnnotationError(f"expected <video> root, got <{tag}> (line {line})")
            self.video_attrs = (attrs, line)
        elif self.depth == 2:
            if tag != "action":
                raise AnnotationError(f"unexpected element <{tag}> (line {line})")
            self.actions.append((attrs, line))
        else:
            raise AnnotationError(f"unexpected nested element <{tag}> (line {line})")

    def end(self, tag):
        self.depth -= 1


def _attr_int(attrs, name, line, minimum=None):
    if name not in attrs:
        raise AnnotationError(f"missing attribute {name!r} (line {line})")
    try:
        v = int(attrs[name], 10)
    except ValueError:
        raise AnnotationError(
            f"attribute {name}={attrs[name]!r} is not a base-10 integer (line {line})"
        ) from None
    if minimum is not None and v < minimum:
        raise AnnotationError(f"attribute {name}={v} must be >= {minimum} (line {line})")
    return v


def _attr_float(attrs, name, line):
    try:
        return float(attrs[name])
    except ValueError:
        raise AnnotationError(
            f"attribute {name}={attrs[name]!r} is not a number (line {line})"
        ) from None


def parse_annotations(data: bytes) -> VideoAnnotation:
    """Parse annotation XML; diagnostics carry the offending line number."""
    parser = xml.parsers.expat.ParserCreate()
    target = _VideoXmlTarget(parser)
    parser.StartElementHandler = target.start
    parser.EndElementHandler = target.end
    try:
        parser.Parse(data, True)
    except xml.parsers.expat.ExpatError as e:
        raise AnnotationError(f"malformed XML: {e} (line {e.lineno})") from None
    if target.video_attrs is None:
        raise AnnotationError("no <video> element found")

    vattrs, vline = target.video_attrs
    if "name" not in vattrs:
        raise AnnotationError(f"missing attribute 'name' (line {vline})")
    frame_count = _attr_int(vattrs, "frames", vline, minimum=0)
    fps = _attr_float(vattrs, "fps", vline)

    segments, lines = [], []
    for attrs, line in target.actions:
        begin = _attr_int(attrs, "begin", line, minimum=0)
        end = _attr_int(attrs, "end", line)
        if "move" not in attrs:
            raise AnnotationError(f"missing attribute 'move' (line {line})")
        if begin >= end:
            raise AnnotationError(f"begin {begin} >= end {end} (line {line})")
        score = None
        if "score" in attrs:
            score = _attr_float(attrs, "score", line)
            if not 0.0 <= score <= 1.0:
                raise AnnotationError(f"score {score} outside [0, 1] (line {line})")
        segments.append(Segment(begin, end, attrs["move"], score))
        lines.append(line)

    order = sorted(range(len(segments)), key=lambda i: (segments[i].begin, segments[i].end))
    segments = [segments[i] for i in order]
    lines = [lines[i] for i in order]
    _validate_segments(segments, frame_count, lines)  # line-numbered diagnostics
    return VideoAnnotation(vattrs["name"], frame_count, fps, segments)


def _fmt_fps(fps: float) -> str:
    return str(int(fps)) if float(fps).is_integer() else repr(float(fps))


def render_annotation_xml(video_id: str, segments: list[Segment],
                          frame_count: int, fps: float) -> bytes:
    out = io.StringIO()
    out.write(f"<video name={quoteattr(video_id)} frames=\"{frame_count}\" "
              f"fps=\"{_fmt_fps(fps)}\">\n")
    for s in sorted(segments, key=lambda s: (s.begin, s.end)):
        score = f" score=\"{s.score!r}\"" if s.score is not None else ""
        out.write(f"  <action begin=\"{s.begin}\" end=\"{s.end}\" "
                  f"move={quoteattr(s.label)}{score}/>\n")
    out.write("</video>\n")
    return out.getvalue().encode("utf-8")


def write_predictions(video_id: str, segments: list[Segment],
                      frame_count: int = 0, fps: float = 120.0) -> bytes:
    """Emit predicted segments; parse_annotations(write_predictions(...)) is an
    identity on the segment data. frame_count 0 means unknown."""
    for s in segments:
        if s.score is None:
            raise AnnotationError(f"prediction [{s.begin}, {s.end}) is missing a score")
    return render_annotation_xml(video_id, segments, frame_count, fps)


def infer_negative_segments(ann: VideoAnnotation, block: int = 200) -> list[Segment]:
    """Non-stroke blocks from the gaps between consecutive strokes.

    Only gaps strictly longer than `block` are used and they are tiled from
    the gap start with floor(gap/block) blocks of exactly `block` frames;
    leading/trailing gaps at the video boundaries never produce negatives.
    """
    if block < 1:
        raise AnnotationError(f"block must be >= 1, got {block}")
    strokes = ann.ground_truth
    negatives = []
    for prev, nxt in zip(strokes, strokes[1:]):
        gap = nxt.begin - prev.end
        if gap > block:
            for i in range(gap // block):
                start = prev.end + i * block
                negatives.append(Segment(start, start + block, NONSTROKE_LABEL))
    return negatives


def generate_window_proposals(frame_count: int, length: int = 150,
                              stride: int = 150) -> list[Segment]:
    """Candidate windows [k*stride, k*stride+length) fully inside the video."""
    if length < 1 or stride < 1:
        raise AnnotationError(f"length and stride must be >= 1, got {length}/{stride}")
    proposals = []
    start = 0
    while start + length <= frame_count:
        proposals.append(Segment(start, start + length, PROPOSAL_LABEL))
        start += stride
    return proposals


@dataclass
class Taxonomy:
    """Fine label -> (type, hand side); label order follows the CSV."""

    entries: dict[str, tuple[str, str]]

    @property
    def labels(self) -> list[str]:
        return list(self.entries)

    def class_index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise TaxonomyError(f"unknown label {label!r}") from None


def load_taxonomy(data: bytes) -> Taxonomy:
    reader = csv.reader(io.StringIO(data.decode("utf-8")))
    try:
        header = next(reader)
    except StopIteration:
        raise TaxonomyError("empty taxonomy file") from None
    if header != ["label", "type", "hand_side"]:
        raise TaxonomyError(f"expected header label,type,hand_side, got {','.join(header)}")
    entries: dict[str, tuple[str, str]] = {}
    for row in reader:
        if not row:
            continue
        if len(row) != 3:
            raise TaxonomyError(f"expected 3 columns, got {row}")
        label, typ, hand = row
        if label in entries:
            raise TaxonomyError(f"duplicate fine label {label!r}")
        if typ not in TYPES:
            raise TaxonomyError(f"type {typ!r} for {label!r} not one of {TYPES}")
        if hand not in HAND_SIDES:
            raise TaxonomyError(f"hand side {hand!r} for {label!r} not one of {HAND_SIDES}")
        entries[label] = (typ, hand)
    if not entries:
        raise TaxonomyError("taxonomy defines no labels")
    return Taxonomy(entries)


def default_taxonomy() -> Taxonomy:
    data = resources.files("strokebench").joinpath("data/default_taxonomy.csv").read_bytes()
    return load_taxonomy(data)


def superclass_of(tax: Taxonomy, label: str, level: str) -> str:
    """Map a fine label to its super-label at the given level; global is identity."""
    if level not in LEVELS:
        raise TaxonomyError(f"unknown level {level!r}; know {LEVELS}")
    if label not in tax.entries:
        raise TaxonomyError(f"unknown label {label!r}")
    if level == "global":
        return label
    typ, hand = tax.entries[label]
    if level == "type":
        return typ
    if level == "hand":
        return hand
    return f"{typ} {hand}"
