from .ia_lora import (
    IALoraConfig,
    IALoraLinear,
    route,
    ia_lora_forward,
    ia_lora_layers,
    drop_heads,
    reset_heads,
    set_bypass,
    standard_lora_forward,
)
from .router_trace import (
    RouterTrace,
    TraceRecord,
    collect_trace,
    enable_tracing,
    AGGREGATIONS,
)
