"""
Platform abstraction for hardware profiling.

Reads static and dynamic resource figures of the hosting machine through
psutil. Values that cannot be read are reported as 0 and logged; profiling
never raises.
"""
import logging
import platform
import threading
import time
from typing import Optional

import psutil

from app.clock import now_ms
from app.fabric.schemas import DynamicStats, StaticProfile

logger = logging.getLogger(__name__)

CPU_WINDOW_S = 0.5


class Profiler:
    """Static profile (memoized) plus dynamic sampler for one host."""

    def __init__(self, storage_path: str = "."):
        self.storage_path = storage_path
        self._lock = threading.Lock()
        self._static: Optional[StaticProfile] = None
        self._last_sampled_at = 0
        self._window_started = 0.0
        self._cpu_percent = 0.0

    def read_static(self) -> StaticProfile:
        with self._lock:
            if self._static is None:
                self._static = self._read_static()
                # Prime psutil's cpu counter so the first window has a baseline.
                psutil.cpu_percent(interval=None)
                self._window_started = time.monotonic()
            return self._static

    def _read_static(self) -> StaticProfile:
        cpu_count = psutil.cpu_count(logical=True) or 1

        frequency = 0
        try:
            freq = psutil.cpu_freq()
            if freq is not None and freq.max:
                frequency = int(freq.max)
            elif freq is not None and freq.current:
                frequency = int(freq.current)
        except Exception as e:
            logger.warning(f"CPU frequency unreadable, reporting 0: {e}")

        total_memory = max(1, psutil.virtual_memory().total // (1024 * 1024))

        storage = 0
        try:
            storage = psutil.disk_usage(self.storage_path).total // (1024 * 1024)
        except Exception as e:
            logger.warning(f"Storage size unreadable for {self.storage_path}, reporting 0: {e}")

        return StaticProfile(
            cpu_count=cpu_count,
            cpu_frequency_mhz=frequency,
            total_memory_mb=int(total_memory),
            total_storage_mb=int(storage),
            os_name=f"{platform.system()} {platform.release()}".strip(),
        )

    def sample_dynamic(self) -> DynamicStats:
        """
        Take a fresh sample. CPU usage is averaged over windows of at least
        CPU_WINDOW_S; a sample requested inside an open window reuses the last
        completed figure instead of blocking.
        """
        static = self.read_static()
        with self._lock:
            elapsed = time.monotonic() - self._window_started
            if elapsed >= CPU_WINDOW_S:
                self._cpu_percent = min(100.0, max(0.0, float(psutil.cpu_percent(interval=None))))
                self._window_started = time.monotonic()

            available_memory = 0
            try:
                available_memory = psutil.virtual_memory().available // (1024 * 1024)
            except Exception as e:
                logger.warning(f"Available memory unreadable, reporting 0: {e}")

            available_storage = 0
            try:
                available_storage = psutil.disk_usage(self.storage_path).free // (1024 * 1024)
            except Exception as e:
                logger.warning(f"Free storage unreadable, reporting 0: {e}")

            sampled_at = max(now_ms(), self._last_sampled_at)
            self._last_sampled_at = sampled_at

            return DynamicStats(
                cpu_usage_percent=self._cpu_percent,
                available_memory_mb=int(min(available_memory, static.total_memory_mb)),
                available_storage_mb=int(available_storage),
                sampled_at=sampled_at,
            )
