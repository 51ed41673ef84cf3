"""
Lightweight run tracing.

The `Tracer` class records a sequence of run events (ingestion summaries,
training epochs, comparison rows) and writes them to a JSONL file under
`{trace_dir}/{task_id}.jsonl`.  This makes it easy to inspect a training run
or diff two comparison runs later.

Example usage:

>>> tracer = Tracer(task_id="example", trace_dir="traces")
>>> tracer.log(role="trainer", sender="mstem", content="epoch 1", metadata={"val_mse": 0.4})
>>> tracer.finalize()
'traces/example.jsonl'
"""

from __future__ import annotations

import json
import os
import threading
import uuid
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional

DEFAULT_TRACE_DIR = "traces"


class Tracer:
    """Record events in a run and persist them as JSON lines."""

    def __init__(self, task_id: Optional[str] = None, trace_dir: Optional[str] = None) -> None:
        self.task_id = task_id or uuid.uuid4().hex
        self.events: List[Dict[str, Any]] = []
        self.trace_dir = trace_dir or os.getenv("EVCS_RUN_TRACE_DIR", DEFAULT_TRACE_DIR)
        self._lock = threading.Lock()

    def log(
        self,
        *,
        role: str,
        sender: str,
        content: str,
        metadata: Optional[Dict[str, Any]] = None,
    ) -> None:
        """Append an event to the current trace."""
        event = {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "role": role,
            "sender": sender,
            "content": content,
            **(metadata or {}),
        }
        # comparison jobs may log from worker threads
        with self._lock:
            self.events.append(event)

    def finalize(self) -> str:
        """Persist the trace to disk and return the path to the file."""
        os.makedirs(self.trace_dir, exist_ok=True)
        path = os.path.join(self.trace_dir, f"{self.task_id}.jsonl")
        with self._lock:
            with open(path, "a", encoding="utf-8") as f:
                for event in self.events:
                    f.write(json.dumps(event, default=str) + "\n")
            # Reset events to prevent duplicate writes
            self.events = []
        return path
