#!/usr/bin/env python3
"""
Error Handling for the Boundary-Integral Engine

Domain exception hierarchy (each class owns a distinct process exit code) and the
ErrorHandler that records failures and logs them as JSON records.
"""

import json
import logging
import threading
import traceback
import uuid
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from typing import Any, Dict, List, Optional

logger = logging.getLogger(__name__)


class ErrorSeverity(Enum):
    """Error severity levels"""
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"
    CRITICAL = "critical"


EXIT_OK = 0
EXIT_USAGE = 64
EXIT_INTERNAL = 70


class MetasurfaceError(Exception):
    """Base class for every failure the engine reports to its caller."""

    exit_code: int = EXIT_INTERNAL
    severity: ErrorSeverity = ErrorSeverity.MEDIUM

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_dict(self) -> Dict[str, Any]:
        record = {
            "error": type(self).__name__,
            "message": self.message,
            "exit_code": self.exit_code,
        }
        for key, value in self.details.items():
            record[key] = _jsonable(value)
        return record


# Geometry and lattice

class GeometryOutOfCell(MetasurfaceError):
    """Particle touches the reflective plane or leaves the reference cell."""
    exit_code = 1


class DegenerateLattice(MetasurfaceError):
    exit_code = 5


class ParseError(MetasurfaceError):
    exit_code = 7


class OpenSurface(MetasurfaceError):
    exit_code = 8


# Green's functions

class SlowConvergence(MetasurfaceError):
    """Spectral series requested too close to the source plane."""
    exit_code = 2


class RayleighAnomaly(MetasurfaceError):
    """A diffraction order other than the specular one is propagating."""
    exit_code = 3
    severity = ErrorSeverity.HIGH


class SourcePointSingularity(MetasurfaceError):
    exit_code = 4


class FitIllConditioned(MetasurfaceError):
    exit_code = 6


class InvalidIncidence(MetasurfaceError):
    exit_code = 15


# Boundary operators

class AssemblyFailure(MetasurfaceError):
    exit_code = 9
    severity = ErrorSeverity.HIGH


class WrongKind(MetasurfaceError):
    exit_code = 10


class MetricNotPSD(MetasurfaceError):
    exit_code = 11
    severity = ErrorSeverity.HIGH


class NearResonance(MetasurfaceError):
    """Contrast parameter within the guard distance of the (negated) NP spectrum."""
    exit_code = 12

    def __init__(self, message: str, distance: float, **details: Any):
        super().__init__(message, distance=distance, **details)
        self.distance = distance


class TooCloseToSurface(MetasurfaceError):
    exit_code = 14


# Materials

class DegenerateContrast(MetasurfaceError):
    exit_code = 13


class MaterialOutOfRange(MetasurfaceError):
    exit_code = 16


# Configuration and validation

class ConfigError(MetasurfaceError):
    exit_code = 17


class ValidationFailed(MetasurfaceError):
    exit_code = 18


def exit_code_table() -> List[Dict[str, Any]]:
    """Every domain error with its exit code, sorted by code (used by `--help`)."""
    rows = [{"error": cls.__name__, "exit_code": cls.exit_code} for cls in _all_subclasses(MetasurfaceError)]
    rows.sort(key=lambda row: row["exit_code"])
    return rows


def _all_subclasses(cls) -> List[type]:
    found = []
    for sub in cls.__subclasses__():
        found.append(sub)
        found.extend(_all_subclasses(sub))
    return found


def _jsonable(value: Any) -> Any:
    if isinstance(value, complex):
        return [value.real, value.imag]
    if hasattr(value, "tolist"):
        return _jsonable(value.tolist())
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    return str(value)


@dataclass
class ErrorContext:
    """Context information for an error"""
    error_id: str
    timestamp: datetime
    error_type: str
    error_message: str
    stack_trace: str
    severity: ErrorSeverity
    component: str
    operation: str
    exit_code: int
    context_data: Dict[str, Any] = field(default_factory=dict)


class ErrorHandler:
    """Records domain failures and logs them with a level chosen by severity"""

    def __init__(self):
        self.error_registry: Dict[str, ErrorContext] = {}
        self.lock = threading.Lock()

    def handle_error(self, error: Exception, context: Optional[Dict[str, Any]] = None) -> ErrorContext:
        """Register an error and log it as a JSON record"""
        context = context or {}
        error_context = ErrorContext(
            error_id=str(uuid.uuid4()),
            timestamp=datetime.now(),
            error_type=type(error).__name__,
            error_message=str(error),
            stack_trace=traceback.format_exc(),
            severity=self._determine_severity(error),
            component=context.get('component', 'unknown'),
            operation=context.get('operation', 'unknown'),
            exit_code=getattr(error, 'exit_code', EXIT_INTERNAL),
            context_data=context,
        )

        with self.lock:
            self.error_registry[error_context.error_id] = error_context

        self._log_error(error_context, error)
        return error_context

    def _determine_severity(self, error: Exception) -> ErrorSeverity:
        if isinstance(error, MetasurfaceError):
            return error.severity
        if isinstance(error, (MemoryError, KeyboardInterrupt)):
            return ErrorSeverity.CRITICAL
        return ErrorSeverity.HIGH

    def _log_error(self, context: ErrorContext, error: Exception):
        log_data = {
            "error_id": context.error_id,
            "error_type": context.error_type,
            "message": context.error_message,
            "component": context.component,
            "operation": context.operation,
            "severity": context.severity.value,
            "exit_code": context.exit_code,
        }
        if isinstance(error, MetasurfaceError) and error.details:
            log_data["details"] = _jsonable(error.details)

        if context.severity == ErrorSeverity.CRITICAL:
            logger.critical(f"Critical error: {json.dumps(log_data)}")
        elif context.severity == ErrorSeverity.HIGH:
            logger.error(f"High severity error: {json.dumps(log_data)}")
        elif context.severity == ErrorSeverity.MEDIUM:
            logger.warning(f"Medium severity error: {json.dumps(log_data)}")
        else:
            logger.info(f"Low severity error: {json.dumps(log_data)}")

    def get_error_statistics(self) -> Dict[str, Any]:
        """Counts of recorded errors by severity, component and type"""
        stats: Dict[str, Any] = {
            "total_errors": len(self.error_registry),
            "by_severity": {},
            "by_component": {},
            "by_error_type": {},
        }
        for error in self.error_registry.values():
            for bucket, key in (("by_severity", error.severity.value),
                                ("by_component", error.component),
                                ("by_error_type", error.error_type)):
                stats[bucket][key] = stats[bucket].get(key, 0) + 1
        return stats


# Global error handler instance
_global_error_handler = ErrorHandler()


def get_error_handler() -> ErrorHandler:
    """Get the global error handler instance"""
    return _global_error_handler
