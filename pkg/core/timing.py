"""
Wall-clock stage timing.
"""

import logging
import time
from contextlib import contextmanager
from typing import Dict, Iterator

logger = logging.getLogger(__name__)

# stage names used by the pipeline and the bench report
NETWORK = "network"
SUPERVOXEL = "supervoxel"
CLUSTERING = "clustering"


class StageTimer:
    def __init__(self) -> None:
        self.durations: Dict[str, float] = {}

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            elapsed = time.perf_counter() - start
            self.durations[name] = self.durations.get(name, 0.0) + elapsed
            logger.debug("Stage %s took %.3fs", name, elapsed)

    @property
    def total(self) -> float:
        return sum(self.durations.values())

    def as_dict(self) -> Dict[str, float]:
        return dict(self.durations)
