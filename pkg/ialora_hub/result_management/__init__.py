from .utilities import create_unique_folder_name, create_save_folder, to_builtin
from .save_results import (
    CHECKPOINT_FORMAT,
    CHECKPOINT_VERSION,
    write_checkpoint,
    write_json,
    write_table,
    write_traces,
    write_mask_pgm,
    write_scatter_svg,
)
from .read_results import (
    print_h5_tree,
    read_checkpoint,
    load_checkpoint_into,
    read_json,
    read_trace_records,
    read_traces,
)
