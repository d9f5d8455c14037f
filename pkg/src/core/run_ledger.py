import glob
import json
import logging
import os
from datetime import datetime
from typing import Any, Dict, List, Optional

logger = logging.getLogger(__name__)


class RunLedger:
    """
    Append-only record of command-line runs:
    - One JSON object per line, prefixed by the logging timestamp
    - One file per day (runs_YYYYMMDD.log)
    - Replayable: the latest file parses back into dictionaries
    - Never touches the data files a run produces
    """
    def __init__(self, log_dir: str = "./logs"):
        self.log_dir = log_dir
        os.makedirs(self.log_dir, exist_ok=True)
        self.path = os.path.join(self.log_dir, f"runs_{datetime.now().strftime('%Y%m%d')}.log")

        # one logger per ledger file, so several ledgers can coexist in one process (tests)
        self.logger = logging.getLogger(f"superres.ledger.{os.path.abspath(self.path)}")
        self.logger.setLevel(logging.INFO)
        self.logger.propagate = False
        if not self.logger.handlers:
            fh = logging.FileHandler(self.path)
            fh.setFormatter(logging.Formatter('%(asctime)s - %(message)s'))
            self.logger.addHandler(fh)

    def log_event(self, event_type: str, command: str, context: Dict[str, Any], outcome: Optional[str] = None):
        entry = {
            "timestamp": datetime.now().isoformat(),
            "event_type": event_type,
            "command": command,
            "outcome": outcome,
            "context": context,
        }
        self.logger.info(json.dumps(entry, default=str))
        logger.debug(f"LEDGER: {event_type} for '{command}' ({outcome})")

    def log_start(self, command: str, config: Dict[str, Any]):
        self.log_event("RUN_START", command, context={"config": config})

    def log_finish(self, command: str, outputs: List[str], flags: List[str], seconds: float):
        event = "RUN_FLAGGED" if flags else "RUN_COMPLETE"
        self.log_event(event, command, context={"outputs": outputs, "flags": flags, "seconds": round(seconds, 3)},
                       outcome="flagged" if flags else "ok")

    def log_failure(self, command: str, error: BaseException):
        self.log_event("RUN_FAILED", command, context={"error": type(error).__name__, "message": str(error)},
                       outcome="failed")

    def close(self):
        for handler in list(self.logger.handlers):
            handler.close()
            self.logger.removeHandler(handler)


def latest_ledger_file(log_dir: str) -> Optional[str]:
    files = sorted(glob.glob(os.path.join(log_dir, "runs_*.log")))
    return files[-1] if files else None


def read_events_for_replay(log_dir: str) -> List[Dict[str, Any]]:
    """Parse the most recent ledger file back into event dictionaries; malformed lines are skipped."""
    events = []
    latest = latest_ledger_file(log_dir)
    if latest is None:
        return events
    with open(latest, "r") as f:
        for line in f:
            # split off the logging timestamp prefix before JSON parsing
            if " - " not in line:
                continue
            try:
                events.append(json.loads(line.split(" - ", 1)[1]))
            except json.JSONDecodeError:
                logger.warning(f"LEDGER: skipped unreadable line in {latest}")
    return events
