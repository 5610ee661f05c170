from dataclasses import dataclass, field
import json
import os
from pathlib import Path

import logging

log = logging.getLogger(__name__)

TEMPLATE_FOLDER = Path(os.path.dirname(__file__)) / ".." / "data" / "prompt_templates"


class TemplateRenderingError(KeyError):
    """
    Raised when an instance slot of a prompt template is missing or empty
    """

    def __init__(self, slot: str, message: str = None):
        super().__init__(message or f"Slot '{slot}' of the prompt is not filled")
        self.slot = slot


@dataclass(frozen=True)
class PromptTemplate:
    """
    Few-shot prompt that turns a plain label into a reasoning process

    :param str task_kind: ave, avvp, arig or avqa
    :param str instance: format string of the instance block
    :param tuple slots: names the instance block needs
    :param tuple exemplars: dicts with ``description``, ``output`` and every slot
        but media_ref
    :param str instruction: text in front of the exemplars
    :param int version: template version
    """

    task_kind: str
    instance: str
    slots: tuple = ("media_ref", "original_label")
    exemplars: tuple = field(default_factory=tuple)
    instruction: str = ""
    version: int = 1

    @classmethod
    def from_dict(cls, data: dict):
        return cls(
            task_kind=data["task_kind"],
            instance=data["instance"],
            slots=tuple(data.get("slots", ("media_ref", "original_label"))),
            exemplars=tuple(data.get("exemplars", ())),
            instruction=data.get("instruction", ""),
            version=int(data.get("version", 1)),
        )


def load_template(name: str | Path) -> PromptTemplate:
    """
    Loads a shipped template by task kind ("ave") or a template json by path
    """
    path = Path(name)
    if not path.suffix:
        path = TEMPLATE_FOLDER / f"{name}.json"
    if not path.exists():
        raise FileNotFoundError(f"Prompt template {path} does not exist")
    with open(path) as json_file:
        return PromptTemplate.from_dict(json.load(json_file))


def _fill(text: str, values: dict, slots) -> str:
    for slot in slots:
        if values.get(slot) is None or str(values.get(slot)) == "":
            raise TemplateRenderingError(slot)
    try:
        return text.format_map({k: str(v) for k, v in values.items()})
    except KeyError as error:
        raise TemplateRenderingError(error.args[0]) from None


def build_prompt(template: PromptTemplate, instance: dict) -> str:
    """
    Renders instruction, exemplars and the instance block of a template

    Blocks are separated by a blank line and the prompt ends with a newline.
    An exemplar is rendered with the instance block, its description taking the
    place of the media reference, followed by its output.

    :param PromptTemplate template: prompt template
    :param dict instance: slot values of the instance
    :return: prompt text
    :rtype: str
    """
    blocks = [template.instruction] if template.instruction else []
    exemplar_slots = [s for s in template.slots if s != "media_ref"]
    for i, exemplar in enumerate(template.exemplars, start=1):
        values = dict(exemplar)
        values["media_ref"] = exemplar.get("description")
        try:
            body = _fill(template.instance, values, ["media_ref"] + exemplar_slots)
        except TemplateRenderingError as error:
            raise TemplateRenderingError(
                error.slot, f"Exemplar {i} lacks slot '{error.slot}'"
            ) from None
        blocks.append(f"Example {i}:\n{body}\n{exemplar['output']}")
    blocks.append(_fill(template.instance, instance, template.slots))
    return "\n\n".join(blocks) + "\n"
