import json
from pathlib import Path

from utils.tracing import Tracer


def test_finalize_writes_jsonl(tmp_path):
    tracer = Tracer(task_id="run", trace_dir=str(tmp_path))
    tracer.log(role="trainer", sender="mstem", content="epoch 1", metadata={"val_mse": 0.25})
    tracer.log(role="worker", sender="hi", content="horizon 6: ok")
    path = tracer.finalize()
    assert path.endswith("run.jsonl")
    events = [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines()]
    assert [e["sender"] for e in events] == ["mstem", "hi"]
    assert events[0]["val_mse"] == 0.25
    assert "timestamp" in events[1]
    assert tracer.events == []


def test_trace_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("EVCS_RUN_TRACE_DIR", str(tmp_path / "env"))
    tracer = Tracer()
    assert tracer.trace_dir == str(tmp_path / "env")
    assert len(tracer.task_id) == 32
