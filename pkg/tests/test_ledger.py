import json

from src.core.errors import DomainError
from src.core.run_ledger import RunLedger, latest_ledger_file, read_events_for_replay


def test_ledger_round_trip(tmp_path):
    ledger = RunLedger(str(tmp_path))
    ledger.log_start("qfim", {"s": [0.1], "q": [0.3]})
    ledger.log_finish("qfim", ["out.csv"], [], 0.5)
    ledger.log_start("simulate", {"reps": 3})
    ledger.log_finish("simulate", ["sim.json"], ["unconverged"], 1.0)
    ledger.log_failure("adaptive", DomainError("ADAPTIVE: no light"))
    ledger.close()

    events = read_events_for_replay(str(tmp_path))
    assert [e["event_type"] for e in events] == ["RUN_START", "RUN_COMPLETE", "RUN_START", "RUN_FLAGGED", "RUN_FAILED"]
    assert events[1]["context"]["outputs"] == ["out.csv"]
    assert events[3]["outcome"] == "flagged"
    assert events[4]["context"] == {"error": "DomainError", "message": "ADAPTIVE: no light"}


def test_unreadable_lines_are_skipped(tmp_path):
    ledger = RunLedger(str(tmp_path))
    ledger.log_start("qfim", {})
    ledger.close()
    with open(ledger.path, "a") as f:
        f.write("2026-01-01 00:00:00,000 - {not json\n")
        f.write("no separator here\n")
    assert len(read_events_for_replay(str(tmp_path))) == 1


def test_latest_file_is_chosen(tmp_path):
    (tmp_path / "runs_20200101.log").write_text(
        "t - " + json.dumps({"event_type": "RUN_START", "command": "old"}) + "\n"
    )
    (tmp_path / "runs_29991231.log").write_text(
        "t - " + json.dumps({"event_type": "RUN_START", "command": "new"}) + "\n"
    )
    assert latest_ledger_file(str(tmp_path)).endswith("runs_29991231.log")
    assert read_events_for_replay(str(tmp_path))[0]["command"] == "new"


def test_empty_directory(tmp_path):
    assert latest_ledger_file(str(tmp_path)) is None
    assert read_events_for_replay(str(tmp_path)) == []
