from .evaluate import (
    PRIMARY_METRIC,
    FAMILY_METRICS,
    evaluate,
    primary_metrics,
    answer_number,
    answer_box,
)
from .router_analysis import (
    RouterAnalysis,
    StatisticsUndefinedError,
    analyze_router,
    scatter_coordinates,
)
from .head_drop import (
    NO_DROP,
    head_drop_experiment,
    head_drop_summary,
    primary_drop_table,
)
