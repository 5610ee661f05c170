from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, asdict, field
import json
from pathlib import Path

from .clients import AnnotationClient
from .labels import (
    LabelParseError,
    TransformedLabel,
    parse_label,
    parse_response,
    format_label,
    validate_consistency,
)
from .templates import PromptTemplate, build_prompt

import logging

log = logging.getLogger(__name__)

REASON_PARSE = "parse"
REASON_CONSISTENCY = "consistency"


@dataclass
class AnnotationRecord:
    """
    One instance on its way through the annotation pipeline

    :param str id: instance id
    :param str task_kind: ave, avvp, arig or avqa
    :param str media_ref: reference of the media file
    :param str original_label: plain label in the grammar of the task kind
    :param str prompt: rendered prompt
    :param str response: response of the annotation client
    :param dict transformed: reasoning and label of an accepted response
    :param bool accepted: verdict of the filter
    :param str reason: rejection reason, parse or consistency
    :param str detail: description of the rejection
    :param dict slots: further slot values of the prompt (e.g. question)
    """

    id: str
    task_kind: str
    media_ref: str
    original_label: str
    prompt: str = ""
    response: str = ""
    transformed: dict = None
    accepted: bool = None
    reason: str = None
    detail: str = None
    slots: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict):
        return cls(**data)


def annotate_batch(
    records: list,
    template: PromptTemplate,
    client: AnnotationClient,
    max_workers: int = 4,
) -> list:
    """
    Renders the prompt of every record and collects the client responses

    Requests run concurrently; the records keep their order.

    :param list records: AnnotationRecords
    :param PromptTemplate template: prompt template of the task kind
    :param AnnotationClient client: annotation service
    :param int max_workers: concurrent requests
    :return: the records with prompt and response filled
    :rtype: list
    """
    for record in records:
        if record.task_kind != template.task_kind:
            raise ValueError(
                f"Record '{record.id}' is of kind '{record.task_kind}', the "
                f"template of kind '{template.task_kind}'"
            )
        instance = dict(record.slots)
        instance["media_ref"] = record.media_ref
        instance["original_label"] = record.original_label
        record.prompt = build_prompt(template, instance)

    with ThreadPoolExecutor(max_workers=max_workers) as executor:
        responses = list(executor.map(client.send, [r.prompt for r in records]))
    for record, response in zip(records, responses):
        record.response = response
    log.info(f"Annotated {len(records)} '{template.task_kind}' records")
    return records


def check_record(record: AnnotationRecord) -> AnnotationRecord:
    """
    Parses the response of a record and compares it with the original label

    Sets ``accepted``, ``reason``, ``detail`` and, when parsing succeeds,
    ``transformed``.
    """
    record.transformed = None
    try:
        transformed = parse_response(record.response, record.task_kind)
    except LabelParseError as error:
        record.accepted, record.reason, record.detail = False, REASON_PARSE, str(error)
        return record
    record.transformed = {
        "reasoning": transformed.reasoning,
        "label": format_label(record.task_kind, transformed.label),
    }
    try:
        original = parse_label(record.original_label, record.task_kind)
    except LabelParseError as error:
        record.accepted, record.reason = False, REASON_PARSE
        record.detail = f"original label: {error}"
        return record

    report = validate_consistency(
        transformed, TransformedLabel(record.task_kind, original)
    )
    if report.consistent:
        record.accepted, record.reason, record.detail = True, None, None
    else:
        record.accepted, record.reason = False, REASON_CONSISTENCY
        record.detail = json.dumps(report.diffs, sort_keys=True)
    return record


def filter_batch(records: list) -> tuple:
    """
    Splits annotated records into accepted and rejected ones

    Records whose response or original label violates the grammar are rejected
    with reason "parse", records whose label changed with reason "consistency".

    :param list records: annotated AnnotationRecords
    :return: accepted and rejected records
    :rtype: tuple
    """
    accepted, rejected = [], []
    for record in records:
        check_record(record)
        (accepted if record.accepted else rejected).append(record)
    log.info(f"Accepted {len(accepted)} and rejected {len(rejected)} records")
    return accepted, rejected


def write_records(records: list, file_path: Path | str) -> Path:
    """
    Writes records as json lines
    """
    file_path = Path(file_path)
    with open(file_path, "w") as f:
        for record in records:
            f.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
    return file_path


def read_records(file_path: Path | str) -> list:
    records = []
    with open(file_path) as f:
        for line in f:
            if line.strip():
                records.append(AnnotationRecord.from_dict(json.loads(line)))
    return records


def export_rejected(rejected: list, file_path: Path | str) -> Path:
    """
    Writes rejected records for manual correction of their responses
    """
    log.info(f"Exporting {len(rejected)} rejected records to {file_path}")
    return write_records(rejected, file_path)


def import_corrections(file_path: Path | str) -> tuple:
    """
    Reads manually corrected records and filters them again

    :param Path, str file_path: json lines written by :func:`export_rejected`,
        with corrected responses
    :return: accepted and still rejected records
    :rtype: tuple
    """
    return filter_batch(read_records(file_path))
