#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Errors Module

Exception types shared by every part of the package. The command-line entry
point maps them onto exit codes (see main.EXIT_CODES).
"""


class MEGError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(MEGError, ValueError):
    """Invalid configuration, shape mismatch or unusable hyperparameters."""


class ScopeError(ConfigurationError):
    """A diagnostic-only operation was asked to run outside its scope."""


class MissingArtifactError(ConfigurationError, FileNotFoundError):
    """A referenced file (config, checkpoint, dataset) does not exist."""

    def __init__(self, what, path):
        self.path = str(path)
        super().__init__(f"{what} not found: {self.path}")


class NumericFault(MEGError, ArithmeticError):
    """
    A computation produced non-finite values.

    Attributes:
        row (int or None): Index of the first offending batch row, if known.
        dump (object): Optional payload (e.g. chain positions) for diagnostics.
    """

    def __init__(self, message, row=None, dump=None):
        self.row = row
        self.dump = dump
        if row is not None:
            message = f"{message} (first offending row: {row})"
        super().__init__(message)


class ProtocolError(MEGError, ValueError):
    """An evaluation protocol precondition was violated."""


class IntegrityError(MEGError, IOError):
    """A persisted artifact is truncated, corrupted or fails its hash check."""


class UnsupportedVersionError(IntegrityError):
    """A persisted artifact was written by an unsupported format version."""


class IngestionError(MEGError, IOError):
    """Source data is missing or too malformed to ingest."""


class VerificationFailure(MEGError):
    """One or more verification suites failed."""
