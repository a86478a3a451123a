import json
import os
import threading
from datetime import datetime
from typing import Any, Dict


def write_json_atomic(path: str, data: Any) -> None:
    """Write `data` as sorted, indented JSON; readers see the old file or the new one."""
    tmp_path = f"{path}.tmp"
    with open(tmp_path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp_path, path)


class RunLog:
    """Stage state and event history of one run, kept next to its outputs.

    `state.json` holds the latest stage, status and counters and is rewritten
    on every change; `history.log` gets one timestamped line per event and is
    only ever appended to, so repeated runs into one directory accumulate.
    """

    def __init__(self, out_dir: str):
        self.out_dir = os.path.abspath(out_dir)
        os.makedirs(self.out_dir, exist_ok=True)
        self.state: Dict[str, Any] = {}
        self._lock = threading.RLock()

    @property
    def state_path(self) -> str:
        return os.path.join(self.out_dir, "state.json")

    @property
    def history_path(self) -> str:
        return os.path.join(self.out_dir, "history.log")

    def stage(self, name: str, status: str, **counters: Any) -> None:
        with self._lock:
            self.state["stage"] = name
            self.state["status"] = status
            if counters:
                self.state.setdefault("counters", {}).update(counters)
            write_json_atomic(self.state_path, self.state)
            detail = " ".join(f"{k}={v}" for k, v in counters.items())
            self.event(f"{name} {status}" + (f" {detail}" if detail else ""))

    def finish(self, status: str) -> None:
        with self._lock:
            self.state["status"] = status
            write_json_atomic(self.state_path, self.state)
            self.event(f"run {status}")

    def event(self, message: str) -> None:
        line = f"[{datetime.now().isoformat()}] {message}\n"
        with self._lock:
            with open(self.history_path, "a", encoding="utf-8") as f:
                f.write(line)
