"""Exception types shared across the pipeline."""


class TeaError(Exception):
    """Base class for data errors raised by the pipeline."""


class LexError(TeaError):
    def __init__(self, position: int, char: str = "", line: int | None = None):
        self.position = position
        self.char = char
        self.line = line
        where = f"line {line}, " if line is not None else ""
        super().__init__(f"{where}unexpected character {char!r} at byte {position}")


class ParseError(TeaError):
    def __init__(self, index: int, expected: set[str] | frozenset[str], found: str | None = None):
        self.index = index
        self.expected = frozenset(expected)
        self.found = found
        got = "end of input" if found is None else repr(found)
        super().__init__(f"token {index}: expected one of {sorted(self.expected)}, got {got}")


class AlignmentError(TeaError):
    pass


class InvalidBudget(TeaError):
    pass


class DimensionError(TeaError):
    pass


class NonFiniteLoss(TeaError):
    def __init__(self, step: int, value: float):
        self.step = step
        self.value = value
        super().__init__(f"non-finite loss {value} at step {step}")


class LineCountMismatch(TeaError):
    pass


class FormatError(TeaError):
    """A serialized artifact (model, vocab, dump, checkpoint) is malformed."""
