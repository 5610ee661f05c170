from dataclasses import dataclass

TASK_FAMILIES = ("temporal", "spatial", "reasoning", "segmentation")

SPECIAL_TOKENS = ("<PAD>", "<BOS>", "<EOS>", "<ANS>")
REASONING_MARKERS = ("<TIME>", "<QUAD>")
N_MASK_TOKENS = 6
MASK_GROUP_SIZE = 3


@dataclass(frozen=True)
class Vocabulary:
    """
    Symbol table of the toy language model

    Layout (ids in this order):

    - special tokens PAD, BOS, EOS, ANS
    - one task token per family
    - reasoning markers TIME and QUAD
    - number tokens N0 ... N{n_numbers - 1}
    - 6 contiguous mask tokens, group 0 = first three (coarse scale), group 1 =
      last three (fine scale)

    :param int n_numbers: number of number tokens, at least the grid size
    """

    n_numbers: int = 8

    def __post_init__(self):
        if self.n_numbers < 1:
            raise ValueError(f"n_numbers must be positive, got {self.n_numbers}")
        if len(self.symbols) > 64:
            raise ValueError(
                f"Vocabulary holds {len(self.symbols)} symbols, at most 64 allowed"
            )

    @property
    def symbols(self) -> tuple:
        return (
            SPECIAL_TOKENS
            + tuple(f"<TASK_{f.upper()}>" for f in TASK_FAMILIES)
            + REASONING_MARKERS
            + tuple(f"N{i}" for i in range(self.n_numbers))
            + tuple(f"<MASK_{i}>" for i in range(N_MASK_TOKENS))
        )

    def __len__(self):
        return len(self.symbols)

    def id_of(self, symbol: str) -> int:
        try:
            return self.symbols.index(symbol)
        except ValueError:
            raise KeyError(f"Symbol '{symbol}' is not in the vocabulary")

    def symbol_of(self, token_id: int) -> str:
        if token_id < 0 or token_id >= len(self):
            raise KeyError(f"Token id {token_id} is not in the vocabulary")
        return self.symbols[token_id]

    def decode(self, token_ids) -> list:
        return [self.symbol_of(int(t)) for t in token_ids]

    @property
    def pad(self) -> int:
        return 0

    @property
    def bos(self) -> int:
        return 1

    @property
    def eos(self) -> int:
        return 2

    @property
    def ans(self) -> int:
        return 3

    def task(self, family: str) -> int:
        if family not in TASK_FAMILIES:
            raise KeyError(
                f"Unknown task family '{family}', choose one of {TASK_FAMILIES}"
            )
        return len(SPECIAL_TOKENS) + TASK_FAMILIES.index(family)

    @property
    def time_marker(self) -> int:
        return len(SPECIAL_TOKENS) + len(TASK_FAMILIES)

    @property
    def quad_marker(self) -> int:
        return self.time_marker + 1

    @property
    def first_number(self) -> int:
        return self.quad_marker + 1

    def number(self, value: int) -> int:
        if value < 0 or value >= self.n_numbers:
            raise ValueError(
                f"Number {value} has no token (0 ... {self.n_numbers - 1})"
            )
        return self.first_number + int(value)

    def value_of(self, token_id: int) -> int:
        """
        Inverse of :func:`number`; returns None for non-number tokens
        """
        offset = int(token_id) - self.first_number
        if 0 <= offset < self.n_numbers:
            return offset
        return None

    @property
    def mask_ids(self) -> tuple:
        first = self.first_number + self.n_numbers
        return tuple(range(first, first + N_MASK_TOKENS))

    @property
    def mask_groups(self) -> tuple:
        ids = self.mask_ids
        return (ids[:MASK_GROUP_SIZE], ids[MASK_GROUP_SIZE:])
