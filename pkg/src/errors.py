#!/usr/bin/env python3
"""
Exception hierarchy for the Lewis game laboratory.

Library code raises these; the CLI maps them to exit codes.
"""


class LewisLabError(Exception):
    """Base class for every error the laboratory raises on purpose"""

    exit_code = 2


class ParameterError(LewisLabError):
    exit_code = 2


class DistributionError(LewisLabError):
    exit_code = 2


class DegenerateVectorError(LewisLabError):
    """Zero-norm vector where a direction is required"""

    exit_code = 2

    def __init__(self, message: str, item: int = None):
        super().__init__(message)
        self.item = item


class UndefinedCorrelationError(LewisLabError):
    exit_code = 2


class ConfigError(LewisLabError):
    exit_code = 2


class FormatError(LewisLabError):
    """Malformed LFS1 / LGCK / CSV / PGM input"""

    exit_code = 3

    def __init__(self, message: str, row: int = None):
        super().__init__(message)
        self.row = row


class DatasetError(LewisLabError):
    exit_code = 2


class DimensionMismatchError(LewisLabError):
    exit_code = 5


class GuardExceededError(LewisLabError):
    exit_code = 2


class GroupingError(LewisLabError):
    exit_code = 2


class AllSeedsFailedError(LewisLabError):
    exit_code = 4
