#!/usr/bin/env python3
# License: MIT
# Date: 18 October 2026


class MmRiskException(Exception):
    """
    Base exception class for recording mmrisk specific errors
    """
    pass


class ShapeError(MmRiskException):
    """
    Dimension or length mismatch between two operands, message names both shapes
    """
    pass


class ConfigurationError(MmRiskException):
    """
    Invalid configuration: unknown keys, out-of-range values, inconsistent model inputs
    """
    pass


class SchemaError(MmRiskException):
    """
    Input file does not follow the documented clinical CSV / reports JSONL schema
    """
    pass


class IntegrityError(MmRiskException):
    """
    Input data violates a uniqueness constraint (e.g. duplicate patient id)
    """
    pass


class ContractViolation(MmRiskException):
    """
    Backward pass called with a stale, mismatched or missing forward cache
    """
    pass


class UndefinedMetricError(MmRiskException):
    """
    Metric cannot be computed for the given input (e.g. AUC with a single class)
    """
    pass


class NonFiniteError(MmRiskException):
    """
    NaN or Inf encountered where a finite value is required
    """
    pass


class CheckpointError(MmRiskException):
    """
    Checkpoint file is corrupted, truncated or of an unsupported version
    """
    pass
