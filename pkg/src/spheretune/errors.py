"""Exception hierarchy shared by all spheretune modules.

Three families matter to the CLI exit-code mapping: validation errors
(bad inputs, bad specs), file-format errors (EMBD parsing), and numerical
failures (non-finite losses, failed gradient checks).
"""


class SpheretuneError(Exception):
    """Base class for all spheretune errors."""


class ValidationError(SpheretuneError):
    """Input violates a documented precondition."""


class NonFiniteInput(ValidationError):
    """An input array contains NaN or Inf entries."""


class DimMismatch(ValidationError):
    """Operands disagree on embedding dimension."""


class InvalidSpec(ValidationError):
    """A configuration or spec object is self-inconsistent."""


class OutOfRange(ValidationError):
    """A scalar argument lies outside its documented domain."""


class LabelOutOfRange(ValidationError):
    """A class label is outside [0, C)."""


class InsufficientSamples(ValidationError):
    """A class has too few samples for the requested episode."""

    def __init__(self, class_index: int, have: int, need: int):
        self.class_index = class_index
        self.have = have
        self.need = need
        super().__init__(
            f"class {class_index} has {have} samples, needs at least {need}"
        )


class DegenerateMean(ValidationError):
    """Mean resultant length is numerically zero (balanced antipodal data)."""


class DegenerateFusion(ValidationError):
    """Weighted field directions cancel exactly; fusion is undefined."""


class DegenerateTarget(ValidationError):
    """A dynamic target resultant has near-zero norm."""


class DegeneratePrompt(ValidationError):
    """A prompt row has near-zero norm and cannot be normalized."""


class NumericalError(SpheretuneError):
    """A computation produced non-finite or out-of-tolerance results."""


class NonFiniteLoss(NumericalError):
    """Training loss became NaN/Inf; carries the offending step index."""

    def __init__(self, step: int, value: float):
        self.step = step
        self.value = value
        super().__init__(f"non-finite loss {value!r} at step {step}")


class EmbdFormatError(SpheretuneError):
    """Base for EMBD file-format violations; carries the byte offset."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (byte offset {offset})")


class BadMagic(EmbdFormatError):
    pass


class BadVersion(EmbdFormatError):
    pass


class TruncatedPayload(EmbdFormatError):
    pass


class CrcMismatch(EmbdFormatError):
    pass
