"""Execution strategies for ensemble stream processing.

Three modes share one contract: test-then-train per instance, one
PredictionEvent per consumed instance emitted in stream order, and a
deterministic final model for a fixed seed.

  sequential         one loop, learners trained in index order
  parallel_instance  persistent worker processes train the learners of each
                     instance concurrently, with a barrier per instance
  mini_batch         instances are buffered to size L and each worker first
                     classifies its whole buffer against the model state from
                     the batch start, then trains through it

Workers are OS processes (created once per run, learners assigned round
robin) because tree training is pure Python and threads would serialize on
the interpreter lock. Learner-level determinism makes the scheduling
invisible: every learner consumes its own RNG stream in stream order no
matter where it runs. Idle time is spent in blocking reads, never spinning.
"""

from __future__ import annotations

import multiprocessing as mp
import queue as queue_mod
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator

from .data import Instance, StreamRecord
from .ensembles import Ensemble, aggregate_votes, decide_global_reset

SEQUENTIAL = "sequential"
PARALLEL_INSTANCE = "parallel_instance"
MINI_BATCH = "mini_batch"

MODES = (SEQUENTIAL, PARALLEL_INSTANCE, MINI_BATCH)

CLASSIFY = "classify"
TRAIN = "train"

_END = object()
_TIMED_OUT = object()


@dataclass(frozen=True)
class ExecutorConfig:
    """Execution mode plus batching/threading/timeout knobs.

    mini_batch with batch_size=1 is the B1 configuration. classify_parallel
    mirrors the option of running the classification pass per worker; with
    process-owned models classification always happens where the model lives,
    so the flag is recorded for run metadata only (prediction is pure and its
    result is schedule-independent).
    """

    mode: str = SEQUENTIAL
    batch_size: int = 1
    num_threads: int = 1
    timeout: float | None = None
    classify_parallel: bool | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown executor mode {self.mode!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.num_threads < 1:
            raise ValueError("num_threads must be >= 1")
        if self.timeout is not None and self.timeout < 0:
            raise ValueError("timeout must be non-negative")

    def resolved_classify_parallel(self, m: int) -> bool:
        if self.classify_parallel is not None:
            return self.classify_parallel
        return m >= 8


@dataclass(slots=True)
class PredictionEvent:
    seq: int
    predicted_class: int
    true_class: int
    emitted_at: int


@dataclass
class RunSummary:
    instances: int = 0
    wall_seconds: float = 0.0
    cpu_seconds: dict = field(default_factory=dict)
    digest: str = ""
    resets: int = 0
    reset_log: list = field(default_factory=list)  # (seq, learner index)
    batches: int = 0

    @property
    def ips(self) -> float:
        return self.instances / self.wall_seconds if self.wall_seconds > 0 else 0.0


class RdTrace:
    """Model-touch trace for locality analysis.

    Entries are (phase, learner id). Parallel touches are recorded in their
    canonical serialized order (learner index within each phase), which is the
    order the work would take on one core.
    """

    def __init__(self):
        self.entries: list[tuple[str, int]] = []

    def record(self, phase: str, unit_id: int) -> None:
        self.entries.append((phase, unit_id))

    def ids(self, phase: str | None = None) -> list[int]:
        if phase is None:
            return [uid for _, uid in self.entries]
        return [uid for ph, uid in self.entries if ph == phase]


Sink = Callable[[PredictionEvent, StreamRecord], None]


# -- record sources -------------------------------------------------------------


class IterSource:
    """Pulls records from an in-memory iterator; deadline checked per pull."""

    def __init__(self, records: Iterable[StreamRecord]):
        self._it = iter(records)

    def next(self, deadline: float | None):
        if deadline is not None and time.monotonic() >= deadline:
            return _TIMED_OUT
        try:
            return next(self._it)
        except StopIteration:
            return _END


class QueueSource:
    """Blocking pop from a bounded queue fed by a reader thread.

    The blocking get is what lets the executor sleep while waiting for input;
    a run timeout is honored by capping the wait at the remaining time.
    """

    def __init__(self, q: "queue_mod.Queue"):
        self._q = q

    def next(self, deadline: float | None):
        if deadline is None:
            item = self._q.get()
        else:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                return _TIMED_OUT
            try:
                item = self._q.get(timeout=remaining)
            except queue_mod.Empty:
                return _TIMED_OUT
        if item is None:
            return _END
        if isinstance(item, Exception):
            raise item
        return item


def records_from_instances(instances: Iterable[Instance],
                           start_seq: int = 0) -> Iterator[StreamRecord]:
    """Wrap bare instances as stream records stamped at pull time (offline mode)."""
    seq = start_seq
    for inst in instances:
        now = time.time_ns()
        yield StreamRecord(seq, inst, now, now)
        seq += 1


def _as_source(stream) -> "IterSource | QueueSource":
    if isinstance(stream, (IterSource, QueueSource)):
        return stream
    if isinstance(stream, queue_mod.Queue):
        return QueueSource(stream)
    return IterSource(stream)


# -- sequential --------------------------------------------------------------------


def run_sequential(ensemble: Ensemble, stream, sink: Sink | None = None,
                   config: ExecutorConfig | None = None,
                   trace: RdTrace | None = None) -> RunSummary:
    config = config or ExecutorConfig(mode=SEQUENTIAL)
    source = _as_source(stream)
    summary = RunSummary()
    start = time.monotonic()
    deadline = start + config.timeout if config.timeout is not None else None
    cpu_classify = 0.0
    cpu_train = 0.0
    units = ensemble.units
    n_classes = ensemble.n_classes

    while True:
        record = source.next(deadline)
        if record is _END or record is _TIMED_OUT:
            break
        inst = record.instance

        t0 = time.process_time()
        per_unit = [u.classify(inst) for u in units]
        if trace is not None:
            for u in units:
                trace.record(CLASSIFY, u.index)
        _, predicted = aggregate_votes(per_unit, n_classes)
        t1 = time.process_time()

        if sink is not None:
            sink(PredictionEvent(record.seq, predicted, inst.class_index,
                                 time.time_ns()), record)

        fired = []
        estimates = []
        for u in units:
            did_reset, unit_fired, estimate = u.train_one(inst)
            if trace is not None:
                trace.record(TRAIN, u.index)
            if did_reset:
                summary.reset_log.append((record.seq, u.index))
            fired.append(unit_fired)
            estimates.append(estimate)
        target = decide_global_reset(fired, estimates)
        if target is not None:
            units[target].reset()
            summary.reset_log.append((record.seq, target))
        t2 = time.process_time()

        cpu_classify += t1 - t0
        cpu_train += t2 - t1
        summary.instances += 1
        summary.batches += 1

    summary.wall_seconds = time.monotonic() - start
    summary.cpu_seconds = {"classify": cpu_classify, "train": cpu_train}
    summary.resets = len(summary.reset_log)
    summary.digest = ensemble.digest()
    return summary


# -- worker pool -----------------------------------------------------------------


def _worker_main(conn, units):
    """Owns a fixed subset of learners for the whole run.

    Protocol (all messages via the duplex pipe, worker blocks between them):
      ("proc", [(seq, values, class), ...]) ->
          ("votes", [(uid, [vote vector per instance]), ...],
                    [(uid, fired, estimate), ...], [(seq, uid), ...])
      ("reset", uid) -> ("ok",)
      ("fin",) -> ("units", [(uid, unit), ...], cpu dict)  then exits
    """
    cpu_classify = 0.0
    cpu_train = 0.0
    try:
        while True:
            msg = conn.recv()
            tag = msg[0]
            if tag == "proc":
                batch = msg[1]
                instances = [Instance(vals, cls) for _, vals, cls in batch]
                seqs = [seq for seq, _, _ in batch]
                t0 = time.process_time()
                # Every learner classifies the whole buffer before any learner
                # trains on it, so votes reflect the batch-start model state.
                votes = [(unit.index, [unit.classify(inst) for inst in instances])
                         for unit in units]
                t1 = time.process_time()
                obad = []
                resets = []
                for unit in units:
                    fired_any = False
                    estimate = 0.0
                    for seq, inst in zip(seqs, instances):
                        did_reset, unit_fired, estimate = unit.train_one(inst)
                        fired_any = fired_any or unit_fired
                        if did_reset:
                            resets.append((seq, unit.index))
                    obad.append((unit.index, fired_any, estimate))
                t2 = time.process_time()
                cpu_classify += t1 - t0
                cpu_train += t2 - t1
                conn.send(("votes", votes, obad, resets))
            elif tag == "reset":
                uid = msg[1]
                for unit in units:
                    if unit.index == uid:
                        unit.reset()
                        break
                conn.send(("ok",))
            elif tag == "fin":
                conn.send(("units", [(u.index, u) for u in units],
                           {"classify": cpu_classify, "train": cpu_train}))
                return
            else:
                return
    except (EOFError, KeyboardInterrupt):
        return


class _WorkerPool:
    """Forked worker processes, each holding a round-robin slice of learners."""

    def __init__(self, ensemble: Ensemble, num_workers: int):
        ctx = mp.get_context("fork")
        m = ensemble.size
        num_workers = max(1, min(num_workers, m))
        self.ensemble = ensemble
        self.owner = [i % num_workers for i in range(m)]
        self.conns = []
        self.procs = []
        for w in range(num_workers):
            parent, child = ctx.Pipe()
            slice_units = [u for u in ensemble.units if u.index % num_workers == w]
            proc = ctx.Process(target=_worker_main, args=(child, slice_units),
                               daemon=True)
            proc.start()
            child.close()
            self.conns.append(parent)
            self.procs.append(proc)

    def dispatch(self, payload) -> None:
        for conn in self.conns:
            conn.send(("proc", payload))

    def collect(self):
        """Gather the replies for the oldest dispatched batch (FIFO per pipe)."""
        votes_by_uid: dict[int, list[list[float]]] = {}
        fired = [False] * self.ensemble.size
        estimates = [0.0] * self.ensemble.size
        resets: list[tuple[int, int]] = []
        for conn in self.conns:
            _, votes, obad, worker_resets = conn.recv()
            for uid, vote_rows in votes:
                votes_by_uid[uid] = vote_rows
            for uid, unit_fired, estimate in obad:
                fired[uid] = unit_fired
                estimates[uid] = estimate
            resets.extend(worker_resets)
        resets.sort()
        return votes_by_uid, fired, estimates, resets

    def reset_unit(self, uid: int) -> None:
        conn = self.conns[self.owner[uid]]
        conn.send(("reset", uid))
        conn.recv()

    def finalize(self) -> dict:
        cpu = {"classify": 0.0, "train": 0.0}
        for conn in self.conns:
            conn.send(("fin",))
        for conn in self.conns:
            _, pairs, worker_cpu = conn.recv()
            for uid, unit in pairs:
                self.ensemble.units[uid] = unit
            cpu["classify"] += worker_cpu["classify"]
            cpu["train"] += worker_cpu["train"]
        self.close()
        return cpu

    def close(self) -> None:
        for conn in self.conns:
            try:
                conn.close()
            except OSError:
                pass
        for proc in self.procs:
            proc.join(timeout=5)
            if proc.is_alive():
                proc.terminate()
                proc.join(timeout=5)


# -- parallel / mini-batch ------------------------------------------------------------


def _pipeline_depth(ensemble: Ensemble, batch_size: int) -> int:
    # The globally coordinated algorithm needs a full barrier per batch: the
    # replacement decision can change a learner before the next batch. All
    # other algorithms are learner-local, so a few batches may be in flight
    # without changing any per-learner training sequence, vote, or reset. The
    # window is kept small (and disabled for large batches) so outstanding
    # pipe traffic can never fill both directions of a worker pipe.
    if ensemble.config.algorithm == "obadwin":
        return 1
    if batch_size > 50:
        return 1
    return 4


def _run_pooled(ensemble: Ensemble, stream, sink: Sink | None,
                config: ExecutorConfig, trace: RdTrace | None,
                batch_size: int) -> RunSummary:
    source = _as_source(stream)
    summary = RunSummary()
    n_classes = ensemble.n_classes
    m = ensemble.size
    pool = _WorkerPool(ensemble, config.num_threads)
    depth = _pipeline_depth(ensemble, batch_size)
    in_flight: list[list[StreamRecord]] = []
    start = time.monotonic()
    deadline = start + config.timeout if config.timeout is not None else None
    cpu_master_start = time.process_time()

    def collect_and_emit() -> None:
        batch = in_flight.pop(0)
        votes_by_uid, fired, estimates, resets = pool.collect()
        if trace is not None:
            for phase in (CLASSIFY, TRAIN):
                for uid in range(m):
                    for _ in batch:
                        trace.record(phase, uid)
        for idx, record in enumerate(batch):
            per_unit = [votes_by_uid[uid][idx] for uid in range(m)]
            _, predicted = aggregate_votes(per_unit, n_classes)
            if sink is not None:
                sink(PredictionEvent(record.seq, predicted,
                                     record.instance.class_index,
                                     time.time_ns()), record)
        summary.reset_log.extend(resets)
        target = decide_global_reset(fired, estimates)
        if target is not None:
            pool.reset_unit(target)
            summary.reset_log.append((batch[-1].seq, target))
        summary.instances += len(batch)
        summary.batches += 1

    def dispatch(batch: list[StreamRecord]) -> None:
        if len(in_flight) >= depth:
            collect_and_emit()
        pool.dispatch([(r.seq, r.instance.values, r.instance.class_index)
                       for r in batch])
        in_flight.append(batch)

    try:
        batch: list[StreamRecord] = []
        while True:
            record = source.next(deadline)
            if record is _END or record is _TIMED_OUT:
                # A timeout treats the partial buffer as a complete batch.
                if batch:
                    dispatch(batch)
                break
            batch.append(record)
            if len(batch) >= batch_size:
                dispatch(batch)
                batch = []
        while in_flight:
            collect_and_emit()
        cpu = pool.finalize()
    except BaseException:
        pool.close()
        raise

    summary.wall_seconds = time.monotonic() - start
    cpu["master"] = time.process_time() - cpu_master_start
    summary.cpu_seconds = cpu
    summary.resets = len(summary.reset_log)
    summary.digest = ensemble.digest()
    return summary


def run_parallel_instance(ensemble: Ensemble, stream, sink: Sink | None = None,
                          config: ExecutorConfig | None = None,
                          trace: RdTrace | None = None) -> RunSummary:
    config = config or ExecutorConfig(mode=PARALLEL_INSTANCE)
    return _run_pooled(ensemble, stream, sink, config, trace, batch_size=1)


def run_minibatch(ensemble: Ensemble, stream, sink: Sink | None = None,
                  config: ExecutorConfig | None = None,
                  trace: RdTrace | None = None) -> RunSummary:
    config = config or ExecutorConfig(mode=MINI_BATCH)
    return _run_pooled(ensemble, stream, sink, config, trace,
                       batch_size=config.batch_size)


def run(ensemble: Ensemble, stream, sink: Sink | None = None,
        config: ExecutorConfig | None = None,
        trace: RdTrace | None = None) -> RunSummary:
    """Run the configured executor over a stream of records."""
    config = config or ExecutorConfig()
    if config.mode == SEQUENTIAL:
        return run_sequential(ensemble, stream, sink, config, trace)
    if config.mode == PARALLEL_INSTANCE:
        return run_parallel_instance(ensemble, stream, sink, config, trace)
    return run_minibatch(ensemble, stream, sink, config, trace)
