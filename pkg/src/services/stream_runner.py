"""Stream replay with live adaptation.

Rows are assessed in chunks (uncertainty, routing and reconstruction error are
row-independent) and then decided one at a time, since every decision moves the
threshold. An offline update is trained on a worker thread while scoring goes on
with the old bundle; the new bundle is swapped in before the instance at
``trigger + 1 + update_lag``, so a replay with the same inputs and seed always
swaps at the same place.
"""
import copy
import json
import time
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, TextIO

import numpy as np
from loguru import logger
from pydantic import BaseModel

from ..analysis.thresholds import Decision, DetectorKind, ThresholdState, Verdict
from ..config.settings import Settings
from ..exceptions import DriftwatchError, InvalidInputError
from .bundle import ModelBundle
from .bundle_store import RunnerCheckpoint, load_checkpoint, rows_to_array, save_checkpoint
from .registry import RunRegistry
from .scoring import (
    UpdateBuffer,
    UpdateMonitor,
    assess,
    decide,
    new_threshold_state,
    run_offline_update,
    swap_bundle,
)

Updater = Callable[[ModelBundle, np.ndarray, Settings], ModelBundle]


@dataclass
class PendingUpdate:
    future: Future
    trigger_index: int
    swap_at: int
    reason: str
    data: np.ndarray


class RunSummary(BaseModel):
    instances: int
    first_index: Optional[int] = None
    last_index: Optional[int] = None
    flagged: int = 0
    dynamic: int = 0
    final_version: int
    updates_succeeded: int = 0
    updates_failed: int = 0
    evidence_clamps: int = 0
    exponent_clamps: int = 0
    seconds: float = 0.0

    @property
    def throughput(self) -> float:
        return self.instances / self.seconds if self.seconds > 0 else float("inf")


class StreamRunner:
    """Single consumer of one stream.

    Args:
        bundle: Trained bundle that scores the first instances
        settings: Runtime settings
        sink: Text stream receiving one JSON verdict per line
        checkpoint_dir: Where periodic checkpoints go (``settings.checkpoint_every``)
        registry: Run registry for version history
        updater: Builds the next bundle from retained instances
        keep_verdicts: Keep emitted verdicts in :attr:`verdicts`
    """

    def __init__(
        self,
        bundle: ModelBundle,
        settings: Settings,
        sink: Optional[TextIO] = None,
        checkpoint_dir: Optional[Path] = None,
        registry: Optional[RunRegistry] = None,
        updater: Updater = run_offline_update,
        keep_verdicts: bool = True,
        state: Optional[ThresholdState] = None,
        monitor: Optional[UpdateMonitor] = None,
        checkpoint: Optional[RunnerCheckpoint] = None,
    ):
        self.bundle = bundle
        self.settings = settings
        self.sink = sink
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
        self.registry = registry or RunRegistry("")
        self.updater = updater
        self.keep_verdicts = keep_verdicts
        self.state = state or new_threshold_state(bundle, settings)
        self.monitor = monitor or UpdateMonitor.from_settings(settings, bundle.mu_e)
        self.buffer = UpdateBuffer(settings.update_buffer_size)
        self.next_index = bundle.historical_count
        self.pending: Optional[PendingUpdate] = None
        self.verdicts: List[Verdict] = []
        self.evidence_clamps = 0
        self.updates_succeeded = 0
        self.updates_failed = 0
        self._executor = ThreadPoolExecutor(max_workers=1, thread_name_prefix="driftwatch-update")
        self._log = logger.bind(component="pipeline")
        self._fresh = checkpoint is None
        if checkpoint is not None:
            self._restore(checkpoint)

    @classmethod
    def resume(cls, checkpoint_dir: Path, settings: Settings, **kwargs) -> "StreamRunner":
        """Continue a run from the checkpoint in ``checkpoint_dir``."""
        bundle, state, monitor, checkpoint = load_checkpoint(checkpoint_dir)
        kwargs.setdefault("checkpoint_dir", checkpoint_dir)
        runner = cls(bundle, settings, state=state, monitor=monitor, checkpoint=checkpoint, **kwargs)
        runner._log.info("resuming at index {} with model v{}", runner.next_index, bundle.version)
        return runner

    def _restore(self, checkpoint: RunnerCheckpoint) -> None:
        dim = self.bundle.input_dim
        self.next_index = checkpoint.next_index
        self.buffer = UpdateBuffer(checkpoint.buffer_capacity)
        for row in rows_to_array(checkpoint.buffer, dim):
            self.buffer.push(row)
        self.evidence_clamps = checkpoint.evidence_clamps
        self.updates_succeeded = checkpoint.updates_succeeded
        self.updates_failed = checkpoint.updates_failed
        if checkpoint.pending_trigger is not None:
            self._submit(
                checkpoint.pending_trigger,
                checkpoint.pending_reason or "mass",
                rows_to_array(checkpoint.pending_data, dim),
            )

    def _submit(self, trigger_index: int, reason: str, data: np.ndarray) -> None:
        swap_at = trigger_index + 1 + self.settings.update_lag
        future = self._executor.submit(self.updater, copy.deepcopy(self.bundle), data, self.settings)
        self.pending = PendingUpdate(future, trigger_index, swap_at, reason, data)
        self._log.bind(model_version=self.bundle.version).info(
            "offline update triggered at {} ({}), swap due at {}", trigger_index, reason, swap_at
        )

    def _resolve_pending(self) -> None:
        pending, self.pending = self.pending, None
        next_version = self.bundle.version + 1
        try:
            new = pending.future.result()
        except Exception as e:
            self.updates_failed += 1
            self.monitor.backoff_until = pending.swap_at + self.settings.window_size
            self._log.bind(model_version=self.bundle.version).opt(exception=not isinstance(e, DriftwatchError)).error(
                "offline update to v{} failed, keeping v{}: {}", next_version, self.bundle.version, e
            )
            self.registry.record_version(next_version, "failed", pending.reason, pending.trigger_index, str(e))
            return
        self.bundle = new
        swap_bundle(new, self.state, self.monitor)
        self.updates_succeeded += 1
        self._log.bind(model_version=new.version).info("swapped in model v{} at index {}", new.version, pending.swap_at)
        self.registry.record_version(
            new.version,
            "succeeded",
            pending.reason,
            pending.trigger_index,
            mu_t=new.mu_t,
            bootstrap_threshold=new.bootstrap_threshold,
        )

    def _checkpoint(self) -> None:
        pending = self.pending
        save_checkpoint(
            self.checkpoint_dir,
            self.bundle,
            self.state,
            self.monitor,
            RunnerCheckpoint(
                next_index=self.next_index,
                buffer=self.buffer.snapshot().tolist(),
                buffer_capacity=self.buffer.capacity,
                pending_trigger=pending.trigger_index if pending else None,
                pending_swap_at=pending.swap_at if pending else None,
                pending_reason=pending.reason if pending else None,
                pending_data=pending.data.tolist() if pending else [],
                evidence_clamps=self.evidence_clamps,
                updates_succeeded=self.updates_succeeded,
                updates_failed=self.updates_failed,
            ),
            self.settings.resolved(),
        )
        if self.sink is not None:
            self.sink.flush()

    def _emit(self, verdict: Verdict) -> None:
        if self.sink is not None:
            self.sink.write(json.dumps(verdict.to_record()) + "\n")
        if self.keep_verdicts:
            self.verdicts.append(verdict)

    def _chunk_end(self, i: int, n: int) -> int:
        end = min(n, (i // self.settings.chunk_size + 1) * self.settings.chunk_size)
        if self.pending is not None and self.pending.swap_at > i:
            end = min(end, self.pending.swap_at)
        return end

    def run(self, instances: np.ndarray, start: Optional[int] = None) -> RunSummary:
        """Score ``instances[start:]`` in order.

        Args:
            instances: The whole stream ``(n, d)``; verdict indices are positions in it
            start: First index to score; defaults to the bundle's historical count
                (or the checkpointed position when resuming)

        Returns:
            Counters for the scored range
        """
        x = np.asarray(instances, dtype=np.float64)
        if x.ndim != 2:
            raise InvalidInputError(f"Stream must be a 2-D matrix, got shape {x.shape}")
        self.bundle.check_dim(x.shape[1])
        n = x.shape[0]
        i = self.next_index if start is None else start
        if self._fresh:
            self._fresh = False
            self.registry.record_version(
                self.bundle.version,
                "succeeded",
                "initial",
                i,
                mu_t=self.bundle.mu_t,
                bootstrap_threshold=self.bundle.bootstrap_threshold,
            )
        summary = RunSummary(instances=0, first_index=i if i < n else None, final_version=self.bundle.version)
        clamps_before = self.state.exponent_clamps
        began = time.perf_counter()
        try:
            while i < n:
                if self.pending is not None and i >= self.pending.swap_at:
                    self._resolve_pending()
                end = self._chunk_end(i, n)
                assessment = assess(self.bundle, x[i:end], self.settings)
                self.evidence_clamps += assessment.clamped
                j = i
                for row in range(end - i):
                    j = i + row
                    verdict, trigger = decide(self.bundle, self.state, self.monitor, assessment, row, j, self.settings)
                    self._emit(verdict)
                    summary.instances += 1
                    if verdict.decision is Decision.ANOMALY:
                        summary.flagged += 1
                    else:
                        self.buffer.push(x[j])
                    if verdict.detector is DetectorKind.DYNAMIC:
                        summary.dynamic += 1
                    self.next_index = j + 1
                    started = trigger and self.pending is None
                    if started:
                        reason = "t_max" if self.monitor.delta_t > self.monitor.t_max else "mass"
                        self._submit(j, reason, self.buffer.snapshot())
                    if self.checkpoint_dir is not None and self.settings.checkpoint_every:
                        if self.next_index % self.settings.checkpoint_every == 0:
                            self._checkpoint()
                    if started:
                        break
                i = j + 1
            if self.pending is not None:
                self._resolve_pending()
        finally:
            summary.seconds = time.perf_counter() - began
        if self.checkpoint_dir is not None and self.settings.checkpoint_every:
            self._checkpoint()

        summary.last_index = self.next_index - 1 if summary.instances else None
        summary.final_version = self.bundle.version
        summary.updates_succeeded = self.updates_succeeded
        summary.updates_failed = self.updates_failed
        summary.evidence_clamps = self.evidence_clamps
        summary.exponent_clamps = self.state.exponent_clamps - clamps_before
        if summary.evidence_clamps:
            self._log.warning("{} evidence logits were clamped during the run", summary.evidence_clamps)
        if summary.exponent_clamps:
            self._log.warning("{} score exponents were clamped during the run", summary.exponent_clamps)
        self._log.bind(model_version=self.bundle.version).info(
            "scored {} instances ({} flagged, {} dynamic, {} updates, {} failed) at {:.0f} inst/s",
            summary.instances,
            summary.flagged,
            summary.dynamic,
            summary.updates_succeeded,
            summary.updates_failed,
            summary.throughput,
        )
        return summary

    def close(self) -> None:
        self._executor.shutdown(wait=True)

    def __enter__(self) -> "StreamRunner":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def replay(
    bundle: ModelBundle,
    instances: np.ndarray,
    settings: Settings,
    start: Optional[int] = None,
    sink: Optional[TextIO] = None,
    updater: Updater = run_offline_update,
) -> List[Verdict]:
    """Score a stream end to end and return its verdicts."""
    with StreamRunner(bundle, settings, sink=sink, updater=updater) as runner:
        runner.run(instances, start=start)
        return runner.verdicts
