"""
Tracing and Monitoring Module

Timing spans around operator assembly, eigensolves, sweeps and validation checks.
"""

import json
import logging
import threading
import time
import uuid
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Any, Dict, Iterator, List, Optional


@dataclass
class SpanStats:
    """Running count, total and maximum duration of one operation"""
    count: int = 0
    total_ms: float = 0.0
    max_ms: float = 0.0

    def add(self, duration_ms: float):
        self.count += 1
        self.total_ms += duration_ms
        self.max_ms = max(self.max_ms, duration_ms)


class TracingManager:
    """Logs span start/finish records and keeps per-operation timing statistics"""

    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self.logger = logging.getLogger(__name__)
        self._local = threading.local()
        self._lock = threading.Lock()
        self._stats: Dict[str, SpanStats] = {}

    def _stack(self) -> List[str]:
        if not hasattr(self._local, "stack"):
            self._local.stack = []
        return self._local.stack

    @contextmanager
    def span(self, operation: str, **tags: Any) -> Iterator[Optional[str]]:
        """Time the enclosed block; nested spans record their parent"""
        if not self.enabled:
            yield None
            return

        stack = self._stack()
        span_id = str(uuid.uuid4())
        parent = stack[-1] if stack else None
        trace_data = {
            "span_id": span_id,
            "parent_span_id": parent,
            "operation_name": operation,
            "tags": tags,
        }
        self.logger.info(f"span_started: {json.dumps(trace_data, default=str)}")

        stack.append(span_id)
        start = time.perf_counter()
        status = "ok"
        try:
            yield span_id
        except Exception:
            status = "error"
            raise
        finally:
            duration_ms = (time.perf_counter() - start) * 1000.0
            stack.pop()
            with self._lock:
                self._stats.setdefault(operation, SpanStats()).add(duration_ms)
            self.logger.info(f"span_finished: {json.dumps({'span_id': span_id, 'operation_name': operation, 'duration_ms': round(duration_ms, 3), 'status': status})}")

    def stats(self, operation: str) -> Optional[SpanStats]:
        with self._lock:
            current = self._stats.get(operation)
            return None if current is None else SpanStats(current.count, current.total_ms, current.max_ms)

    def get_performance_report(self) -> Dict[str, Any]:
        """Count, total and maximum duration per traced operation"""
        with self._lock:
            return {
                "metrics": {
                    op: {
                        "count": s.count,
                        "total_ms": round(s.total_ms, 3),
                        "max_ms": round(s.max_ms, 3),
                    }
                    for op, s in self._stats.items()
                }
            }


_global_tracer = TracingManager()


def get_tracer() -> TracingManager:
    """Process-wide tracer used by the numerical modules"""
    return _global_tracer
