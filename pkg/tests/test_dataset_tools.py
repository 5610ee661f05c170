import json

import pytest
import numpy as np

from ialora_hub.dataset_tools import (
    PromptTemplate,
    TemplateRenderingError,
    EventInterval,
    TransformedLabel,
    LabelParseError,
    TaskKindMismatchError,
    EmptyMaskError,
    AnnotationRecord,
    OfflineStubClient,
    HttpAnnotationClient,
    build_prompt,
    load_template,
    parse_label,
    parse_response,
    format_label,
    format_response,
    validate_consistency,
    mask_to_bbox,
    annotate_batch,
    filter_batch,
    export_rejected,
    import_corrections,
    read_records,
)

EVENT_WORDS = ["Dog", "barking", "Race car", "church bell", "Guitar", "baby cry"]


def _random_label(kind: str, rng):
    def interval():
        start = int(rng.integers(0, 10))
        end = start + int(rng.integers(0, 10 - start + 1))
        words = rng.choice(EVENT_WORDS, size=int(rng.integers(1, 3)))
        return EventInterval(", ".join(words), start, end)

    if kind == "ave":
        return interval()
    if kind == "avvp":
        return tuple(interval() for _ in range(int(rng.integers(1, 4))))
    if kind == "arig":
        xs = sorted(int(v) for v in rng.integers(0, 224, 2))
        ys = sorted(int(v) for v in rng.integers(0, 224, 2))
        return (xs[0], ys[0], xs[1], ys[1])
    words = rng.choice(["yes", "no", "two", "the violin", "left"], size=2)
    return " ".join(words)


def _ave_records(n: int) -> list:
    return [
        AnnotationRecord(
            id=f"clip_{i:04d}",
            task_kind="ave",
            media_ref=f"clip_{i:04d}.mp4",
            original_label=f"Dog, barking, [{i % 5},{i % 5 + 3}]",
        )
        for i in range(n)
    ]


@pytest.mark.dataset_tools
def test_prompt_matches_golden_file(request):
    prompt = build_prompt(
        load_template("ave"),
        {"media_ref": "clip_0001.mp4", "original_label": "Dog, barking, [2,7]"},
    )
    golden = request.config.golden_folder_path / "ave_prompt.txt"
    assert prompt == golden.read_text()


@pytest.mark.dataset_tools
@pytest.mark.parametrize("kind", ["ave", "avvp", "arig", "avqa"])
def test_shipped_templates_render(kind):
    template = load_template(kind)
    assert template.task_kind == kind
    instance = {slot: f"value of {slot}" for slot in template.slots}
    first = build_prompt(template, instance)
    assert first == build_prompt(template, instance)
    assert first.endswith("\n")
    assert "Example 1:" in first


@pytest.mark.dataset_tools
def test_template_errors():
    template = load_template("ave")
    with pytest.raises(TemplateRenderingError) as error:
        build_prompt(template, {"media_ref": "clip.mp4"})
    assert error.value.slot == "original_label"
    with pytest.raises(TemplateRenderingError):
        build_prompt(template, {"media_ref": "", "original_label": "Dog, [0,1]"})

    broken = PromptTemplate(
        task_kind="ave",
        instance="Media: {media_ref}\nOriginal label: {original_label}",
        exemplars=({"description": "A dog", "output": "Answer: Dog, [0,1]"},),
    )
    with pytest.raises(TemplateRenderingError, match="Exemplar 1"):
        build_prompt(broken, {"media_ref": "a", "original_label": "b"})
    with pytest.raises(FileNotFoundError):
        load_template("captioning")


@pytest.mark.dataset_tools
def test_parse_labels():
    assert parse_label("Dog, barking, [2,7]", "ave") == EventInterval(
        "Dog, barking", 2, 7
    )
    assert parse_label("Dog, [0,3]; Car, [4, 9]", "avvp") == (
        EventInterval("Dog", 0, 3),
        EventInterval("Car", 4, 9),
    )
    assert parse_label("[1, 2,3 , 4]", "arig") == (1, 2, 3, 4)
    assert parse_label("  the violin ", "avqa") == "the violin"
    with pytest.raises(ValueError):
        parse_label("Dog, [0,1]", "captioning")


@pytest.mark.dataset_tools
@pytest.mark.parametrize(
    "text, kind, position",
    [
        ("Dog, [5,3]", "ave", 6),
        ("Dog, [0,3]; Car [4,9]", "avvp", 12),
        ("[3, 0, 1, 2]", "arig", 0),
        ("[1, 2, 3]", "arig", 0),
        ("   ", "avqa", 0),
    ],
)
def test_parse_errors_carry_positions(text, kind, position):
    with pytest.raises(LabelParseError) as error:
        parse_label(text, kind)
    assert error.value.position == position


@pytest.mark.dataset_tools
def test_parse_response():
    parsed = parse_response("Reasoning: A dog barks.\nAnswer: Dog, [1,2]", "ave")
    assert parsed.reasoning == "A dog barks."
    assert parsed.label == EventInterval("Dog", 1, 2)

    # The last answer line carries the label
    parsed = parse_response("Answer: no\nAnswer: yes", "avqa")
    assert parsed.label == "yes"

    text = "Reasoning: nothing to see"
    with pytest.raises(LabelParseError) as error:
        parse_response(text, "ave")
    assert error.value.position == len(text)
    with pytest.raises(LabelParseError) as error:
        parse_response("Answer: Dog, [5,3]", "ave")
    assert error.value.position == 14
    with pytest.raises(LabelParseError):
        parse_response("", "ave")


@pytest.mark.dataset_tools
@pytest.mark.parametrize("kind", ["ave", "avvp", "arig", "avqa"])
def test_format_parse_round_trip(kind):
    rng = np.random.default_rng(0)
    for _ in range(1000):
        label = _random_label(kind, rng)
        assert parse_label(format_label(kind, label), kind) == label
    transformed = TransformedLabel(kind, label, reasoning="Both streams agree.")
    assert parse_response(format_response(transformed), kind) == transformed


@pytest.mark.dataset_tools
def test_mask_to_bbox_all_boxes():
    size = 16
    for x_left in range(size):
        for x_right in range(x_left, size):
            for y_top in range(size):
                for y_bottom in range(y_top, size):
                    mask = np.zeros((size, size), dtype=bool)
                    mask[y_top : y_bottom + 1, x_left : x_right + 1] = True
                    box = [x_left, y_top, x_right, y_bottom]
                    assert mask_to_bbox(mask) == box


@pytest.mark.dataset_tools
def test_mask_to_bbox_errors():
    with pytest.raises(EmptyMaskError):
        mask_to_bbox(np.zeros((4, 4)))
    with pytest.raises(ValueError):
        mask_to_bbox(np.ones(4))
    mask = np.zeros((5, 5))
    mask[1, 3] = mask[4, 0] = 1
    assert mask_to_bbox(mask) == [0, 1, 3, 4]


@pytest.mark.dataset_tools
def test_validate_consistency():
    def ave(text):
        return TransformedLabel("ave", parse_label(text, "ave"))

    assert validate_consistency(ave("dog  BARKING, [1,2]"), ave("Dog barking, [1,2]"))
    report = validate_consistency(ave("Cat, [1,3]"), ave("Dog, [1,2]"))
    assert not report
    assert {d["field"] for d in report.diffs} == {"event", "interval"}
    assert report.diffs[1] == {"field": "interval", "expected": [1, 2], "got": [1, 3]}

    def avvp(text):
        return TransformedLabel("avvp", parse_label(text, "avvp"))

    assert validate_consistency(
        avvp("Car, [4,9]; Dog, [0,3]"), avvp("Dog, [0,3]; Car, [4,9]")
    )
    report = validate_consistency(avvp("Dog, [0,3]"), avvp("Dog, [0,3]; Car, [4,9]"))
    assert report.diffs == [{"field": "segments", "expected": 2, "got": 1}]

    box = validate_consistency(
        TransformedLabel("arig", (0, 0, 2, 2)), TransformedLabel("arig", (0, 0, 2, 3))
    )
    assert box.diffs[0]["field"] == "box"
    assert validate_consistency(
        TransformedLabel("avqa", "The  Violin"), TransformedLabel("avqa", "the violin")
    )
    with pytest.raises(TaskKindMismatchError):
        validate_consistency(ave("Dog, [1,2]"), TransformedLabel("avqa", "dog"))


@pytest.mark.dataset_tools
def test_stub_client_is_deterministic():
    prompt = build_prompt(
        load_template("ave"), {"media_ref": "a.mp4", "original_label": "Dog, [1,2]"}
    )
    client = OfflineStubClient(corruption_rate=0.5)
    assert client.send(prompt) == OfflineStubClient(corruption_rate=0.5).send(prompt)
    assert OfflineStubClient().send(prompt).endswith("Answer: Dog, [1,2]")
    assert "Answer:" not in OfflineStubClient().send("no label here")
    with pytest.raises(ValueError):
        OfflineStubClient(corruption_rate=1.5)
    with pytest.raises(ValueError):
        OfflineStubClient(rate_limit=0.0)


@pytest.mark.dataset_tools
def test_clean_pipeline_accepts_everything():
    records = annotate_batch(
        _ave_records(12), load_template("ave"), OfflineStubClient()
    )
    accepted, rejected = filter_batch(records)
    assert len(accepted) == 12 and not rejected
    assert [r.id for r in accepted] == [f"clip_{i:04d}" for i in range(12)]
    assert accepted[0].transformed["label"] == "Dog, barking, [0,3]"
    assert accepted[0].transformed["reasoning"].startswith("The audio")


@pytest.mark.dataset_tools
def test_corrupted_pipeline_and_corrections(request):
    template = load_template("ave")
    client = OfflineStubClient(corruption_rate=0.5)
    records = annotate_batch(_ave_records(40), template, client, max_workers=3)
    accepted, rejected = filter_batch(records)
    assert len(accepted) + len(rejected) == 40
    assert accepted and rejected
    assert all(r.reason in ("parse", "consistency") for r in rejected)
    assert all(r.accepted for r in accepted)

    # The stub answers the same prompts the same way
    again = annotate_batch(_ave_records(40), template, client)
    assert [r.response for r in again] == [r.response for r in records]

    path = export_rejected(rejected, request.config.data_folder_path / "rejected.jsonl")
    corrected = read_records(path)
    for record in corrected:
        original = parse_label(record.original_label, "ave")
        record.response = format_response(
            TransformedLabel("ave", original, reasoning="Checked by hand.")
        )
    with open(path, "w") as f:
        for record in corrected:
            f.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")

    fixed, still_rejected = import_corrections(path)
    assert len(fixed) == len(rejected) and not still_rejected


@pytest.mark.dataset_tools
def test_record_kind_must_match_template():
    records = _ave_records(1)
    records[0].task_kind = "avqa"
    with pytest.raises(ValueError):
        annotate_batch(records, load_template("ave"), OfflineStubClient())


@pytest.mark.dataset_tools
def test_http_client(monkeypatch):
    monkeypatch.delenv("IALORA_ANNOTATION_ENDPOINT", raising=False)
    with pytest.raises(ValueError):
        HttpAnnotationClient.from_environment()

    monkeypatch.setenv("IALORA_ANNOTATION_ENDPOINT", "http://localhost:1/annotate")
    monkeypatch.setenv("IALORA_ANNOTATION_API_KEY", "secret")
    client = HttpAnnotationClient.from_environment(timeout=2.0)
    sent = {}

    class Response:
        status_code = 200

        def raise_for_status(self):
            pass

        def json(self):
            return {"response": "Answer: yes"}

    def post(url, json, headers, timeout):
        sent.update(url=url, json=json, headers=headers, timeout=timeout)
        return Response()

    monkeypatch.setattr(client.session, "post", post)
    assert client.send("Question?") == "Answer: yes"
    assert sent == {
        "url": "http://localhost:1/annotate",
        "json": {"prompt": "Question?"},
        "headers": {"Authorization": "Bearer secret"},
        "timeout": 2.0,
    }
