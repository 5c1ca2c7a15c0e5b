"""Exception types shared across the package."""


class GcadError(Exception):
    """Base class for all package errors."""


class ShapeError(GcadError, ValueError):
    """Operand shapes are not conformable for an op."""

    def __init__(self, op, *shapes):
        self.op = op
        self.shapes = shapes
        desc = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {desc}")


class DataError(GcadError):
    """A dataset on disk is malformed or violates a graph invariant."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class OneClassGraphError(GcadError):
    """A graph lacks one of the two label classes; callers should skip it."""


class DivergenceError(GcadError):
    """Training produced a non-finite loss or gradient."""
