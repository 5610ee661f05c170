from dataclasses import dataclass
from functools import lru_cache
import json
import os
import re
from pathlib import Path
import numpy as np

import logging

log = logging.getLogger(__name__)

GRAMMAR_FOLDER = Path(os.path.dirname(__file__)) / ".." / "data" / "label_grammars"
TASK_KINDS = ("ave", "avvp", "arig", "avqa")
REASONING_PREFIX = "Reasoning:"
ANSWER_PREFIX = "Answer:"


class LabelParseError(ValueError):
    """
    Raised when a response or label violates its grammar

    :param int position: character offset in the parsed text
    """

    def __init__(self, message: str, position: int = 0):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class TaskKindMismatchError(ValueError):
    """
    Raised when labels of different task kinds are compared
    """


class EmptyMaskError(ValueError):
    """
    Raised when a box is requested for a mask without foreground
    """


@dataclass(frozen=True)
class EventInterval:
    """
    Event with an inclusive interval in whole seconds
    """

    event: str
    start: int
    end: int


@dataclass(frozen=True)
class TransformedLabel:
    """
    Reasoning text and task-typed final label

    The label is an EventInterval (ave), a tuple of EventIntervals (avvp), a
    box tuple (x_left, y_top, x_right, y_bottom) (arig) or a string (avqa).
    """

    task_kind: str
    label: object
    reasoning: str = ""


@lru_cache(maxsize=None)
def load_grammar(task_kind: str) -> dict:
    """
    Label grammar of a task kind, as shipped in data/label_grammars
    """
    if task_kind not in TASK_KINDS:
        raise ValueError(
            f"Unknown task kind '{task_kind}', expected one of {TASK_KINDS}"
        )
    with open(GRAMMAR_FOLDER / f"{task_kind}.json") as json_file:
        grammar = json.load(json_file)
    grammar["compiled"] = re.compile(grammar["label_pattern"])
    return grammar


def _parse_segment(text: str, grammar: dict, task_kind: str, offset: int):
    match = grammar["compiled"].match(text)
    if match is None:
        raise LabelParseError(
            f"'{text}' does not match the {task_kind} label grammar", offset
        )
    if task_kind in ("ave", "avvp"):
        start, end = int(match["start"]), int(match["end"])
        if start > end:
            raise LabelParseError(
                f"Interval start {start} lies after its end {end}",
                offset + match.start("start"),
            )
        return EventInterval(match["event"], start, end)
    if task_kind == "arig":
        box = tuple(int(match[k]) for k in ("x_left", "y_top", "x_right", "y_bottom"))
        if box[0] > box[2] or box[1] > box[3]:
            raise LabelParseError(
                f"Box {list(box)} has its corners swapped", offset
            )
        return box
    return match["answer"]


def parse_label(text: str, task_kind: str, offset: int = 0):
    """
    Parses a final label under the grammar of its task kind

    :param str text: label text
    :param str task_kind: ave, avvp, arig or avqa
    :param int offset: position of the label in a larger text, for errors
    :return: typed label
    """
    grammar = load_grammar(task_kind)
    if text is None or not text.strip():
        raise LabelParseError(f"Empty {task_kind} label", offset)
    separator = grammar["segment_separator"]
    if separator is None:
        lead = len(text) - len(text.lstrip())
        return _parse_segment(text.strip(), grammar, task_kind, offset + lead)

    segments = []
    position = offset
    for part in text.split(separator):
        lead = len(part) - len(part.lstrip())
        segments.append(
            _parse_segment(part.strip(), grammar, task_kind, position + lead)
        )
        position += len(part) + len(separator)
    return tuple(segments)


def format_label(task_kind: str, label) -> str:
    """
    Text form of a typed label; inverse of :func:`parse_label`
    """
    grammar = load_grammar(task_kind)
    template = grammar["label_format"]
    if task_kind == "ave":
        return template.format(event=label.event, start=label.start, end=label.end)
    if task_kind == "avvp":
        return f"{grammar['segment_separator']} ".join(
            template.format(event=s.event, start=s.start, end=s.end) for s in label
        )
    if task_kind == "arig":
        x_left, y_top, x_right, y_bottom = (int(v) for v in label)
        return template.format(
            x_left=x_left, y_top=y_top, x_right=x_right, y_bottom=y_bottom
        )
    return template.format(answer=label)


def format_response(transformed: TransformedLabel) -> str:
    """
    Response text with reasoning and answer line
    """
    answer = format_label(transformed.task_kind, transformed.label)
    return (
        f"{REASONING_PREFIX} {transformed.reasoning}\n{ANSWER_PREFIX} {answer}"
    )


def parse_response(text: str, task_kind: str) -> TransformedLabel:
    """
    Extracts reasoning and final label from an annotation response

    The response holds an optional 'Reasoning:' part and a line starting with
    'Answer:'; the last such line carries the label.

    :param str text: response text
    :param str task_kind: ave, avvp, arig or avqa
    :return: reasoning and typed label
    :rtype: TransformedLabel
    """
    if text is None or not text.strip():
        raise LabelParseError("Empty response", 0)
    answer_at = -1
    for match in re.finditer(rf"^{ANSWER_PREFIX}", text, flags=re.MULTILINE):
        answer_at = match.start()
    if answer_at < 0:
        raise LabelParseError(f"Response has no '{ANSWER_PREFIX}' line", len(text))

    line_end = text.find("\n", answer_at)
    line_end = len(text) if line_end < 0 else line_end
    label_start = answer_at + len(ANSWER_PREFIX)
    label = parse_label(text[label_start:line_end], task_kind, label_start)

    reasoning = text[:answer_at].strip()
    if reasoning.startswith(REASONING_PREFIX):
        reasoning = reasoning[len(REASONING_PREFIX) :].strip()
    return TransformedLabel(task_kind=task_kind, label=label, reasoning=reasoning)


@dataclass
class ConsistencyReport:
    """
    Result of a label comparison

    :param bool consistent: labels agree after normalization
    :param list diffs: dicts with field, expected and got
    """

    consistent: bool
    diffs: list

    def __bool__(self):
        return self.consistent


def _normalize_name(name: str) -> str:
    return " ".join(name.split()).casefold()


def _compare_interval(a: EventInterval, b: EventInterval, prefix: str) -> list:
    diffs = []
    if _normalize_name(a.event) != _normalize_name(b.event):
        diffs.append({"field": f"{prefix}event", "expected": b.event, "got": a.event})
    if (a.start, a.end) != (b.start, b.end):
        diffs.append(
            {
                "field": f"{prefix}interval",
                "expected": [b.start, b.end],
                "got": [a.start, a.end],
            }
        )
    return diffs


def validate_consistency(
    transformed: TransformedLabel, original: TransformedLabel
) -> ConsistencyReport:
    """
    Checks that a transformed label keeps the original label

    Event names and free answers are compared case-folded with collapsed
    whitespace, intervals and boxes exactly. Segment lists of avvp labels are
    compared in order of their normalized sort key.

    :param TransformedLabel transformed: parsed annotation
    :param TransformedLabel original: parsed original label
    :return: verdict and differences
    :rtype: ConsistencyReport
    """
    if transformed.task_kind != original.task_kind:
        raise TaskKindMismatchError(
            f"Cannot compare a '{transformed.task_kind}' label with a "
            f"'{original.task_kind}' label"
        )
    kind = transformed.task_kind
    got, expected = transformed.label, original.label
    diffs = []
    if kind == "ave":
        diffs = _compare_interval(got, expected, "")
    elif kind == "avvp":

        def key(s):
            return (_normalize_name(s.event), s.start, s.end)

        got, expected = sorted(got, key=key), sorted(expected, key=key)
        if len(got) != len(expected):
            diffs.append(
                {"field": "segments", "expected": len(expected), "got": len(got)}
            )
        else:
            for i, (a, b) in enumerate(zip(got, expected)):
                diffs.extend(_compare_interval(a, b, f"segments.{i}."))
    elif kind == "arig":
        if tuple(got) != tuple(expected):
            diffs.append({"field": "box", "expected": list(expected), "got": list(got)})
    elif _normalize_name(got) != _normalize_name(expected):
        diffs.append({"field": "answer", "expected": expected, "got": got})
    return ConsistencyReport(consistent=not diffs, diffs=diffs)


def mask_to_bbox(mask: np.ndarray) -> list:
    """
    Tightest pixel-inclusive box [x_left, y_top, x_right, y_bottom] around the
    foreground of a binary mask

    :param np.ndarray mask: [H x W], nonzero entries are foreground
    :return: box
    :rtype: list
    """
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"Expected a [H x W] mask, got shape {mask.shape}")
    rows, cols = np.nonzero(mask)
    if rows.size == 0:
        raise EmptyMaskError(f"Mask of shape {mask.shape} has no foreground pixel")
    return [int(cols.min()), int(rows.min()), int(cols.max()), int(rows.max())]
