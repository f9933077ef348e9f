"""Exception types shared across the package."""


class FewcapError(Exception):
    """Base class; ``kind`` is the short machine-readable tag used by the CLI."""

    kind = "error"


class ShapeError(FewcapError, ValueError):
    kind = "shape"


class ConfigError(FewcapError, ValueError):
    kind = "config"


class InputError(FewcapError, ValueError):
    kind = "input"


class ContractError(FewcapError, RuntimeError):
    kind = "contract"


class ConstraintError(FewcapError, ValueError):
    """An edit would break the lexical constraint."""

    kind = "constraint"


class OverflowEdit(ConstraintError):
    kind = "overflow"


class FormatError(FewcapError, ValueError):
    """Malformed binary or text artifact. ``offset`` is a byte offset when known."""

    kind = "parse"

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset
