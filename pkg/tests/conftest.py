import json

import pytest


@pytest.fixture
def write_jsonl(tmp_path):
    """Write a list of dicts as a line-delimited file and return the path."""

    def _write(rows, name="data.jsonl"):
        path = tmp_path / name
        path.write_text("\n".join(json.dumps(r) for r in rows) + "\n" if rows else "")
        return path

    return _write


def qa_row(i, task="avqa", qtype="Counting", answer="one", **extra):
    row = {
        "id": f"q{i}",
        "task": task,
        "question_type": qtype,
        "question": f"how many instruments in clip {i}?",
        "answer": answer,
    }
    row.update(extra)
    return row
