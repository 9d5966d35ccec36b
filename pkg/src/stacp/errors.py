"""Exception types mapped to CLI exit codes."""


class StacpError(Exception):
    exit_code = 1


class ConfigError(StacpError, ValueError):
    exit_code = 1


class DataError(StacpError, ValueError):
    exit_code = 2


class NumericError(StacpError, ArithmeticError):
    exit_code = 3
