from .vocabulary import Vocabulary, TASK_FAMILIES, N_MASK_TOKENS, MASK_GROUP_SIZE
from .compressor import QueryCompressor, compress, compress_frames, assemble_input
from .transformer import (
    ToyTransformerLM,
    TransformerBlock,
    MaskTokenExtractionError,
    forward_lm,
    greedy_decode,
    decode_with_states,
    extract_mask_embeddings,
    sinusoidal_positions,
)
