from .task_generation import (
    TaskDataConfig,
    ModalityFeatures,
    TaskSample,
    visual_features,
    audio_features,
    rasterize_box,
    box_quadrant,
    gen_temporal,
    gen_spatial,
    gen_reasoning,
    gen_segmentation,
    build_segmentation_sample,
    generate_suite,
    family_seeds,
    GENERATORS,
)
from .suites import save_suite, load_suite, sample_from_arrays
