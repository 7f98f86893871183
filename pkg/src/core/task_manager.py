# /src/core/task_manager.py
import logging
import time
from typing import Any, Dict, List, Optional

from .errors import InvariantError

logger = logging.getLogger(__name__)

# Stage DAG: stage -> upstream stages.
STAGE_UPSTREAM: Dict[str, List[str]] = {
    "ingest": [],
    "relations": ["ingest"],
    "forest": ["relations"],
    "mine": ["forest"],
    "regions": ["mine"],
    "longterm": ["ingest"],
    "report": ["mine", "regions", "longterm"],
}
STAGE_ORDER: List[str] = ["ingest", "relations", "forest", "mine", "regions", "longterm", "report"]


def plan_stages(targets: List[str]) -> List[str]:
    """Targets plus everything upstream of them, in execution order."""
    needed = set()
    pending = list(targets)
    while pending:
        stage = pending.pop()
        if stage not in STAGE_UPSTREAM:
            raise InvariantError(f"Unknown pipeline stage: {stage}")
        if stage in needed:
            continue
        needed.add(stage)
        pending.extend(STAGE_UPSTREAM[stage])
    return [s for s in STAGE_ORDER if s in needed]


class StageManager:
    """Tracks the stages of one pipeline run, their status, timing and outcome."""

    def __init__(self, targets: List[str]):
        self.stages: List[Dict[str, Any]] = []
        for name in plan_stages(targets):
            self.stages.append({
                "name": name,
                "status": "pending",  # pending, in_progress, done, cached, failed
                "result": None,
                "error": None,
                "started": None,
                "wall_time": None,
            })
        logger.info(f"StageManager initialized with stages: {', '.join(s['name'] for s in self.stages)}")

    def _find(self, name: str) -> Dict[str, Any]:
        for stage in self.stages:
            if stage["name"] == name:
                return stage
        raise InvariantError(f"Stage '{name}' is not part of this run")

    def get_next_stage(self) -> Optional[Dict[str, Any]]:
        """First pending stage whose upstream stages all finished; marks it in_progress."""
        finished = {s["name"] for s in self.stages if s["status"] in ("done", "cached")}
        for stage in self.stages:
            if stage["status"] != "pending":
                continue
            upstream = [u for u in STAGE_UPSTREAM[stage["name"]] if any(s["name"] == u for s in self.stages)]
            if all(u in finished for u in upstream):
                stage["status"] = "in_progress"
                stage["started"] = time.perf_counter()
                logger.info(f"Starting stage '{stage['name']}'")
                return stage
            break
        return None

    def update_stage_status(self, name: str, status: str, result: Any = None, error: Optional[str] = None):
        stage = self._find(name)
        if stage["started"] is not None:
            stage["wall_time"] = time.perf_counter() - stage["started"]
        if stage["status"] != status:
            logger.info(f"Stage '{name}' status '{stage['status']}' -> '{status}'")
        stage["status"] = status
        stage["result"] = result
        stage["error"] = error
        if error:
            logger.error(f"Stage '{name}' failed: {error}")

    def is_complete(self) -> bool:
        return all(s["status"] in ("done", "cached") for s in self.stages)

    def summary(self) -> List[Dict[str, Any]]:
        return [
            {"stage": s["name"], "status": s["status"], "wall_time": s["wall_time"], "error": s["error"]}
            for s in self.stages
        ]
