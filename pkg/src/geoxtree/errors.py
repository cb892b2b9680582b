"""Exception hierarchy.

Every error carries an ``exit_code`` so the command-line layer can map it to
a process status without a lookup table.
"""


class GeoTreeError(Exception):
    exit_code = 5


class ConfigError(GeoTreeError):
    exit_code = 2


class ParameterError(ConfigError):
    pass


class SchemaError(ConfigError):
    pass


class DataError(GeoTreeError):
    exit_code = 3

    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class ShapeError(DataError):
    pass


class FormatError(DataError):
    def __init__(self, message, path=""):
        self.path = path
        if path:
            message = f"{message} at {path}"
        super().__init__(message)


class NumericError(GeoTreeError):
    exit_code = 4


class DegenerateColumnError(NumericError):
    def __init__(self, column):
        self.column = column
        super().__init__(f"column {column!r} has zero variance")


class ZeroVarianceError(NumericError):
    pass


class SingularFitError(NumericError):
    def __init__(self, message, anchor=None):
        self.anchor = anchor
        super().__init__(message)


class DegenerateGeometryError(NumericError):
    pass
