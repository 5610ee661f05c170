from .templates import (
    PromptTemplate,
    TemplateRenderingError,
    build_prompt,
    load_template,
)
from .labels import (
    TASK_KINDS,
    EventInterval,
    TransformedLabel,
    ConsistencyReport,
    LabelParseError,
    TaskKindMismatchError,
    EmptyMaskError,
    load_grammar,
    parse_label,
    parse_response,
    format_label,
    format_response,
    validate_consistency,
    mask_to_bbox,
)
from .clients import AnnotationClient, OfflineStubClient, HttpAnnotationClient
from .filtering import (
    AnnotationRecord,
    annotate_batch,
    check_record,
    filter_batch,
    write_records,
    read_records,
    export_rejected,
    import_corrections,
)
