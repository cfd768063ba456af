"""Virtual-time execution engine.

One discrete-event kernel drives both workload recording and trace replay so
the two cannot drift apart semantically. Threads advance on private virtual
clocks; they interact only through locks, ordering constraints attached to a
transformed trace, and (for the memory-serializing policy) a global
read/write turnstile. Scheduling is deterministic given a seed: the only
random draws are tie-breaks between lock attempts at identical virtual times.

Replay policies:

    orig  first-come-first-served lock grants, seeded tie-breaks (models the
          recording scheduler; the recorder itself runs under this policy)
    elsc  per-lock grant order pinned to the recorded acquisition order
    sync  per-lock grant order pinned to a round-robin over thread ids
    mem   elsc plus full serialization of READ/WRITE in the order the
          recording executed them (reconstructed via an elsc pre-pass)

Spin waits burn COMPUTE/READ cost and therefore count as busy time; ``wait``
only accumulates while a thread is blocked on a grant, an ordering
constraint, or the memory turnstile, so busy + wait = completion holds
exactly for every thread.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .errors import (
    DeadlockError,
    OrderUnsatisfiableError,
    UnboundRegisterError,
)
from .model import (
    AUX_PREFIX,
    Site,
    Trace,
    TraceEvent,
    extract_critical_sections,
    validate_trace,
)
from .workload import (
    Compute,
    If,
    Lock,
    Loop,
    Marker,
    Read,
    Unlock,
    WorkloadProgram,
    Write,
)

__all__ = ["POLICIES", "ReplayResult", "record", "replay", "replay_many", "capture_context"]

POLICIES = ("orig", "elsc", "sync", "mem")

_READY, _BLOCK_LOCK, _BLOCK_ORDER, _BLOCK_MEM, _DONE = range(5)

_MAX_STEPS = 5_000_000  # safety valve against zero-cost livelock in inputs


@dataclass
class _SectionRT:
    """Runtime view of one critical section (original or transformed)."""

    id: int
    tid: int
    lock: str
    site: Site
    acq_ord: int
    start: int  # event index span [start, end) in the owning thread
    end: int
    lockset: list[str]
    guards: dict[str, int]
    removed: bool
    # filled during the run
    attempt: int | None = None
    t_start: int | None = None
    t_end: int | None = None
    effective: list[str] | None = None


@dataclass
class ReplayResult:
    policy: str
    seed: int | None
    makespan: int
    per_thread: dict[int, dict[str, int]]  # tid -> completion/busy/wait
    final_memory: dict[str, int]
    final_registers: dict[int, dict[str, int]]
    lock_order: dict[str, list[tuple[int, int]]]  # realized grant order per lock
    completion_order: dict[str, list[int]]  # realized section completions per lock
    section_times: dict[int, dict[str, int]]  # sid -> attempt/start/end
    timestamps: dict[str, int]  # "c<sid>.time1" / "c<sid>.time2"
    aux_acquisitions: int = 0
    snapshots: dict[int, tuple[dict, dict]] | None = None

    def label(self, name: str) -> int:
        from .errors import MissingLabelError

        if name not in self.timestamps:
            raise MissingLabelError(f"replay produced no timing label {name!r}")
        return self.timestamps[name]

    def to_json(self) -> dict:
        return {
            "policy": self.policy,
            "seed": self.seed,
            "makespan": self.makespan,
            "per_thread": {str(t): dict(v) for t, v in sorted(self.per_thread.items())},
            "final_memory": dict(sorted(self.final_memory.items())),
            "lock_order": {k: [list(p) for p in v]
                           for k, v in sorted(self.lock_order.items())},
            "completion_order": {k: list(v)
                                 for k, v in sorted(self.completion_order.items())},
            "section_times": {str(s): dict(v)
                              for s, v in sorted(self.section_times.items())},
            "timestamps": dict(sorted(self.timestamps.items())),
            "aux_acquisitions": self.aux_acquisitions,
        }


def _cmp(lhs: int, op: str, rhs: int) -> bool:
    return {
        "==": lhs == rhs, "!=": lhs != rhs,
        "<": lhs < rhs, "<=": lhs <= rhs,
        ">": lhs > rhs, ">=": lhs >= rhs,
    }[op]


def eval_valexpr(vx: tuple | None, regs: dict[str, int]) -> int:
    if vx is None:
        return 0

    def operand(v):
        if isinstance(v, int):
            return v
        if v not in regs:
            raise UnboundRegisterError(f"register {v!r} has no value at this point")
        return regs[v]

    if vx[0] == "const":
        return vx[1]
    op, a, b = vx
    if op == "copy":
        return operand(a)
    if op == "add":
        return operand(a) + operand(b)
    return operand(a) - operand(b)


def _walk_body(body: list, regs: dict[str, int]):
    for st in body:
        if isinstance(st, Compute):
            yield ("compute", st.cost)
        elif isinstance(st, Lock):
            yield ("acq", st.lock, st.site, None)
        elif isinstance(st, Unlock):
            yield ("rel", st.lock)
        elif isinstance(st, Read):
            yield ("read", st.addr, st.reg, 1)
        elif isinstance(st, Write):
            yield ("write", st.addr, st.valexpr, 1)
        elif isinstance(st, Marker):
            yield ("marker", st.name)
        elif isinstance(st, If):
            if st.reg not in regs:
                raise UnboundRegisterError(f"register {st.reg!r} read before any load")
            branch = st.then if _cmp(regs[st.reg], st.cmp, st.rhs) else st.els
            yield from _walk_body(branch, regs)
        elif isinstance(st, Loop):
            for _ in range(st.count):
                yield from _walk_body(st.body, regs)


def _walk_events(events: list[TraceEvent]):
    for e in events:
        if e.kind == "LOCK_ACQ":
            yield ("acq", e.lock, e.site, (e.tid, e.seq))
        elif e.kind == "LOCK_REL":
            yield ("rel", e.lock)
        elif e.kind == "READ":
            yield ("read", e.addr, e.reg, e.cost)
        elif e.kind == "WRITE":
            yield ("write", e.addr, e.valexpr, e.cost)
        elif e.kind == "COMPUTE":
            yield ("compute", e.cost)
        else:  # THREAD_START / THREAD_END / MARKER: position-preserving no-ops
            yield ("noop",)


class _ThreadState:
    __slots__ = ("tid", "gen", "status", "clock", "busy", "wait", "block_start",
                 "block_info", "pending", "regs", "idx", "steps")

    def __init__(self, tid: int, gen):
        self.tid = tid
        self.gen = gen
        self.status = _READY
        self.clock = 0
        self.busy = 0
        self.wait = 0
        self.block_start = 0
        self.block_info: tuple | None = None
        self.pending: tuple | None = None
        self.regs: dict[str, int] = {}
        self.idx = 0  # next event index (replay mode)
        self.steps = 0


class _LockState:
    __slots__ = ("holder", "waiters", "order", "cursor")

    def __init__(self, order: list | None):
        self.holder: int | None = None
        self.waiters: list[tuple[int, int]] = []  # (attempt_time, tid)
        self.order = order  # list of [key, alive] pairs, or None for FCFS
        self.cursor = 0

    def next_key(self):
        while self.order is not None and self.cursor < len(self.order):
            key, alive = self.order[self.cursor]
            if alive:
                return key
            self.cursor += 1
        return None


class _Kernel:
    def __init__(self, *, mode: str, policy: str, seed: int | None,
                 memory: dict[str, int], capture: bool = False,
                 dynamic: bool = True):
        self.mode = mode  # "record" | "replay"
        self.policy = policy
        self.rng = random.Random(seed)
        self.seed = seed
        self.memory = dict(memory)
        self.capture = capture
        self.dynamic = dynamic
        self.threads: dict[int, _ThreadState] = {}
        self.locks: dict[str, _LockState] = {}
        self.sections: dict[int, _SectionRT] = {}
        self.constraints: dict[str, list[int]] = {}
        self.pred_of: dict[int, int | None] = {}
        self.completed: set[int] = set()
        self.order_waiters: dict[int, list[int]] = {}  # pred sid -> [tids]
        self.start_at: dict[tuple[int, int], list[int]] = {}
        self.gate_at: dict[tuple[int, int], list[int]] = {}
        self.complete_at: dict[tuple[int, int], list[int]] = {}
        self.acq_to_sid: dict[tuple[int, int], int] = {}
        self.skip_idx: dict[int, set[int]] = {}
        self.memorder: list[tuple[int, int]] | None = None
        self.memrank: dict[tuple[int, int], int] = {}
        self.memcursor = 0
        self.mem_free_at = 0
        self.mem_waiters: list[int] = []
        # outputs
        self.lock_order: dict[str, list[tuple[int, int]]] = {}
        self.completion_order: dict[str, list[int]] = {}
        self.aux_acquisitions = 0
        self.snapshots: dict[int, tuple[dict, dict]] = {}
        self.recorded: dict[int, list[TraceEvent]] = {}
        self.acq_counter: dict[str, int] = {}

    # --- setup -------------------------------------------------------------

    def set_sections(self, sections: list[_SectionRT], constraints: dict[str, list[int]]):
        for sec in sections:
            self.sections[sec.id] = sec
            pos = (sec.tid, sec.start)
            self.start_at.setdefault(pos, []).append(sec.id)
            if sec.end > sec.start:
                self.gate_at.setdefault((sec.tid, sec.end - 1), []).append(sec.id)
                self.complete_at.setdefault((sec.tid, sec.end - 1), []).append(sec.id)
            n_acq = len(sec.lockset)
            for i in range(n_acq):
                self.acq_to_sid[(sec.tid, sec.start + i)] = sec.id
        self.constraints = {k: list(v) for k, v in constraints.items()}
        for ids in self.constraints.values():
            prev = None
            for sid in ids:
                self.pred_of[sid] = prev
                prev = sid

    def set_lock_order(self, lock: str, keys: list[tuple[int, int]]):
        self.locks[lock] = _LockState([[k, True] for k in keys])

    def set_memorder(self, keys: list[tuple[int, int]]):
        self.memorder = list(keys)
        self.memrank = {k: i for i, k in enumerate(keys)}

    def lock_state(self, lock: str) -> _LockState:
        if lock not in self.locks:
            self.locks[lock] = _LockState(None)
        return self.locks[lock]

    # --- recording helpers ---------------------------------------------------

    def _emit(self, tid: int, kind: str, **kw):
        if self.mode != "record":
            return
        evs = self.recorded[tid]
        evs.append(TraceEvent(tid=tid, seq=len(evs), kind=kind, **kw))

    # --- main loop -----------------------------------------------------------

    def run(self):
        threads = self.threads
        while True:
            ready = [th for th in threads.values() if th.status == _READY]
            if not ready:
                if all(th.status == _DONE for th in threads.values()):
                    break
                self._stall()
            t = min(th.clock for th in ready)
            batch = [th for th in ready if th.clock == t]
            for th in batch:
                self._step(th, t)
            self._resolve_grants(t)

    # --- stepping --------------------------------------------------------------

    def _step(self, th: _ThreadState, t: int):
        th.steps += 1
        if th.steps > _MAX_STEPS:
            raise OrderUnsatisfiableError(
                f"thread {th.tid} exceeded {_MAX_STEPS} steps; livelocked input?")
        if th.pending is not None:
            act = th.pending
            th.pending = None
            # checkpoints were already passed before we blocked
            if not self._dispatch(th, t, act, recheck=True):
                return
            self._after_exec(th, t)
            return
        # section checkpoints keyed on the index of the action about to run
        if self.mode == "replay" and not self._checkpoints(th, t):
            return
        try:
            act = next(th.gen)
        except StopIteration:
            self._finish(th, t)
            return
        if not self._dispatch(th, t, act, recheck=False):
            return
        self._after_exec(th, t)

    def _checkpoints(self, th: _ThreadState, t: int) -> bool:
        """Apply section-start and empty-section logic at th.idx.
        Returns False if the thread blocked."""
        pos = (th.tid, th.idx)
        for sid in self.start_at.get(pos, []):
            sec = self.sections[sid]
            if sec.effective is not None:
                continue  # already processed
            eff = list(sec.lockset)
            if self.dynamic and sec.guards:
                dropped = {aux for aux, src in sec.guards.items() if src in self.completed}
                if dropped:
                    eff = [l for l in eff if l not in dropped]
                    skips = self.skip_idx.setdefault(th.tid, set())
                    for i, lock in enumerate(sec.lockset):
                        if lock in dropped:
                            skips.add(sec.start + i)  # the ACQ event
                    # matching releases sit at the bundle tail in reverse order
                    n = len(sec.lockset)
                    for i, lock in enumerate(reversed(sec.lockset)):
                        if lock in dropped:
                            skips.add(sec.end - n + i)
                    for lock in sorted(dropped):
                        self._forfeit(lock, sec)
            sec.effective = eff
            if not eff:
                # no acquisition will mark the start; it begins right here
                if self._gate_blocked(th, t, sid):
                    sec.effective = None  # re-evaluate after wake (cheap)
                    return False
                sec.attempt = t
                sec.t_start = t
                if self.capture:
                    self.snapshots[sid] = (dict(self.memory), dict(th.regs))
                if sec.end == sec.start:
                    self._mark_complete(sid, t)
        # completion gate for the section's final event
        for sid in self.gate_at.get(pos, []):
            sec = self.sections[sid]
            if sid in self.completed:
                continue
            if self._gate_blocked(th, t, sid):
                return False
        return True

    def _gate_blocked(self, th: _ThreadState, t: int, sid: int) -> bool:
        pred = self.pred_of.get(sid)
        if pred is not None and pred not in self.completed:
            th.status = _BLOCK_ORDER
            th.block_start = t
            th.block_info = ("order", sid, pred)
            self.order_waiters.setdefault(pred, []).append(th.tid)
            return True
        return False

    def _forfeit(self, lock: str, sec: _SectionRT):
        ls = self.locks.get(lock)
        if ls is None or ls.order is None:
            return
        for entry in ls.order[ls.cursor:]:
            key, alive = entry
            if alive and self.acq_to_sid.get(key) == sec.id:
                entry[1] = False
                break

    def _dispatch(self, th: _ThreadState, t: int, act: tuple, *, recheck: bool) -> bool:
        """Execute one action; False means the thread blocked (action pending)."""
        kind = act[0]
        if kind == "noop":
            return True
        if kind == "compute":
            cost = act[1]
            th.busy += cost
            th.clock = t + cost
            self._emit(th.tid, "COMPUTE", cost=cost)
            return True
        if kind == "acq":
            _, lock, site, key = act
            if self.mode == "replay" and th.idx in self.skip_idx.get(th.tid, set()):
                return True  # pruned by the dynamic locking strategy
            rt_sid = self.acq_to_sid.get((th.tid, th.idx))
            if rt_sid is not None:
                sec = self.sections[rt_sid]
                if sec.attempt is None:
                    sec.attempt = t
            ls = self.lock_state(lock)
            ls.waiters.append((t, th.tid))
            th.status = _BLOCK_LOCK
            th.block_start = t
            th.block_info = ("lock", lock, site, key)
            return False
        if kind == "rel":
            lock = act[1]
            if self.mode == "replay" and th.idx in self.skip_idx.get(th.tid, set()):
                return True
            ls = self.lock_state(lock)
            ls.holder = None
            self._emit(th.tid, "LOCK_REL", lock=lock)
            return True
        if kind == "read":
            _, addr, reg, cost = act
            if not self._mem_admit(th, t, act):
                return False
            t = th.clock  # may have slept on the turnstile
            val = self.memory.get(addr, 0)
            th.regs[reg] = val
            th.busy += cost
            th.clock = t + cost
            self._emit(th.tid, "READ", addr=addr, reg=reg, cost=cost)
            self._mem_done(th)
            return True
        if kind == "write":
            _, addr, valexpr, cost = act
            if not self._mem_admit(th, t, act):
                return False
            t = th.clock
            self.memory[addr] = eval_valexpr(valexpr, th.regs)
            th.busy += cost
            th.clock = t + cost
            self._emit(th.tid, "WRITE", addr=addr, valexpr=valexpr, cost=cost)
            self._mem_done(th)
            return True
        if kind == "marker":
            self._emit(th.tid, "MARKER", addr=act[1])
            return True
        raise AssertionError(f"unknown action {act!r}")

    # --- memory turnstile (mem policy) --------------------------------------

    def _mem_admit(self, th: _ThreadState, t: int, act: tuple) -> bool:
        if self.memorder is None or self.mode != "replay":
            return True
        key = (th.tid, th.idx)
        rank = self.memrank.get(key)
        if rank is None:
            return True
        if rank != self.memcursor:
            th.status = _BLOCK_MEM
            th.block_start = t
            th.block_info = ("mem", rank)
            th.pending = act
            self.mem_waiters.append(th.tid)
            return False
        if self.mem_free_at > t:
            # predecessor still executing: sleep until the turnstile frees
            th.wait += self.mem_free_at - t
            th.clock = self.mem_free_at
        return True

    def _mem_done(self, th: _ThreadState):
        if self.memorder is None or self.mode != "replay":
            return
        rank = self.memrank.get((th.tid, th.idx))
        if rank is None:
            return
        self.memcursor = rank + 1
        self.mem_free_at = th.clock
        for tid in self.mem_waiters[:]:
            waiter = self.threads[tid]
            if waiter.block_info and waiter.block_info[1] == self.memcursor:
                self.mem_waiters.remove(tid)
                waiter.status = _READY
                waiter.wait += max(th.clock, waiter.clock) - waiter.block_start
                waiter.clock = max(th.clock, waiter.clock)
                waiter.block_info = None

    # --- section completion --------------------------------------------------

    def _after_exec(self, th: _ThreadState, t: int):
        if self.mode != "replay":
            return
        pos = (th.tid, th.idx)
        for sid in self.complete_at.get(pos, []):
            if sid not in self.completed:
                self._mark_complete(sid, th.clock)
        th.idx += 1

    def _mark_complete(self, sid: int, when: int):
        self.completed.add(sid)
        sec = self.sections[sid]
        sec.t_end = when
        self.completion_order.setdefault(sec.lock, []).append(sid)
        for tid in self.order_waiters.pop(sid, []):
            th = self.threads[tid]
            if th.status == _BLOCK_ORDER:
                th.status = _READY
                resume = max(th.clock, when)
                th.wait += resume - th.block_start
                th.clock = resume
                th.block_info = None

    def _finish(self, th: _ThreadState, t: int):
        th.status = _DONE
        self._emit(th.tid, "THREAD_END")

    # --- lock grants ---------------------------------------------------------

    def _resolve_grants(self, t: int):
        for lock in sorted(self.locks):
            ls = self.locks[lock]
            if ls.holder is not None or not ls.waiters:
                continue
            if ls.order is None:
                best = min(at for at, _ in ls.waiters)
                cands = [w for w in ls.waiters if w[0] == best]
                chosen = cands[0] if len(cands) == 1 else cands[self.rng.randrange(len(cands))]
            else:
                head = ls.next_key()
                if head is None:
                    continue
                chosen = None
                for at, tid in ls.waiters:
                    th = self.threads[tid]
                    if th.block_info and th.block_info[0] == "lock" and th.block_info[3] == head:
                        chosen = (at, tid)
                        break
                if chosen is None:
                    continue
                ls.cursor += 1
            ls.waiters.remove(chosen)
            self._grant(lock, ls, chosen, t)

    def _grant(self, lock: str, ls: _LockState, chosen: tuple[int, int], t: int):
        attempt_at, tid = chosen
        th = self.threads[tid]
        _, _, site, key = th.block_info
        ls.holder = tid
        th.status = _READY
        th.wait += t - th.block_start
        th.clock = t
        th.block_info = None
        if lock.startswith(AUX_PREFIX):
            self.aux_acquisitions += 1
        if self.mode == "record":
            n = self.acq_counter.get(lock, 0)
            self.acq_counter[lock] = n + 1
            seq = len(self.recorded[tid])
            self._emit(tid, "LOCK_ACQ", lock=lock, acq_ord=n, site=site)
            self.lock_order.setdefault(lock, []).append((tid, seq))
        else:
            self.lock_order.setdefault(lock, []).append(key)
            sid = self.acq_to_sid.get(key)
            if sid is not None:
                sec = self.sections[sid]
                if sec.t_start is None:
                    sec.t_start = t
                    if self.capture:
                        self.snapshots[sid] = (dict(self.memory), dict(th.regs))
            th.idx += 1  # the grant consumed this LOCK_ACQ event

    # --- stall analysis --------------------------------------------------------

    def _stall(self):
        blocked = {th.tid: th for th in self.threads.values() if th.status != _DONE}
        edges: dict[int, tuple[int, str]] = {}
        descriptions = []
        for tid, th in sorted(blocked.items()):
            info = th.block_info
            if info is None:
                continue
            if info[0] == "lock":
                lock = info[1]
                ls = self.locks[lock]
                if ls.holder is not None:
                    edges[tid] = (ls.holder, f"thread {tid} waits for lock {lock} held by thread {ls.holder}")
                else:
                    head = ls.next_key()
                    if head is not None:
                        edges[tid] = (head[0], f"thread {tid} waits for lock {lock} reserved for thread {head[0]}")
                    else:
                        descriptions.append(f"thread {tid} waits for lock {lock} with an exhausted grant order")
            elif info[0] == "order":
                _, sid, pred = info
                owner = self.sections[pred].tid
                edges[tid] = (owner, f"thread {tid} waits for section {pred} (thread {owner}) to complete")
            elif info[0] == "mem":
                key = self.memorder[self.memcursor] if self.memcursor < len(self.memorder) else None
                if key is not None:
                    edges[tid] = (key[0], f"thread {tid} waits for memory turn {self.memcursor} (thread {key[0]})")
        # look for a cycle in the wait-for graph
        cycle = None
        for start in edges:
            seen: list[int] = []
            cur = start
            while cur in edges and cur not in seen:
                seen.append(cur)
                cur = edges[cur][0]
            if cur in seen:
                cycle = seen[seen.index(cur):] + [cur]
                break
        lines = [msg for _, msg in edges.values()] + descriptions
        detail = "; ".join(lines) if lines else "threads blocked with no progress possible"
        pure_lock_cycle = cycle is not None and all(
            self.threads[tid].block_info and self.threads[tid].block_info[0] == "lock"
            for tid in cycle[:-1])
        if self.mode == "record" or pure_lock_cycle:
            raise DeadlockError(f"deadlock: {detail}", cycle=cycle or [])
        raise OrderUnsatisfiableError(f"replay order cannot be realized: {detail}",
                                      cycle=cycle or [])

    # --- results ----------------------------------------------------------------

    def result(self, policy: str) -> ReplayResult:
        per_thread = {
            th.tid: {"completion": th.clock, "busy": th.busy, "wait": th.wait}
            for th in self.threads.values()
        }
        makespan = max((th.clock for th in self.threads.values()), default=0)
        section_times = {
            sid: {"attempt": sec.attempt, "start": sec.t_start, "end": sec.t_end}
            for sid, sec in self.sections.items()
        }
        timestamps: dict[str, int] = {}
        by_tid: dict[int, list[_SectionRT]] = {}
        for sec in self.sections.values():
            if sec.t_start is not None and sec.t_end is not None:
                by_tid.setdefault(sec.tid, []).append(sec)
        for tid, secs in by_tid.items():
            completion = per_thread[tid]["completion"]
            for sec in secs:
                prev_ends = [s.t_end for s in secs if s.id != sec.id and s.t_end <= sec.t_start]
                next_starts = [s.t_start for s in secs if s.id != sec.id and s.t_start >= sec.t_end]
                timestamps[f"c{sec.id}.time1"] = max(prev_ends) if prev_ends else 0
                timestamps[f"c{sec.id}.time2"] = min(next_starts) if next_starts else completion
        return ReplayResult(
            policy=policy,
            seed=self.seed,
            makespan=makespan,
            per_thread=per_thread,
            final_memory=dict(self.memory),
            final_registers={th.tid: dict(th.regs) for th in self.threads.values()},
            lock_order=dict(self.lock_order),
            completion_order=dict(self.completion_order),
            section_times=section_times,
            timestamps=timestamps,
            aux_acquisitions=self.aux_acquisitions,
            snapshots=self.snapshots if self.capture else None,
        )


# --- public API ------------------------------------------------------------------


def record(program: WorkloadProgram, seed: int = 0) -> tuple[Trace, ReplayResult]:
    """Execute a workload under the recording scheduler; return the trace and
    the run's timing. The trace embeds the initial memory image so replays
    start from the same state."""
    kernel = _Kernel(mode="record", policy="orig", seed=seed, memory=program.memory)
    for tid, body in enumerate(program.threads):
        th = _ThreadState(tid, None)
        kernel.threads[tid] = th
        th.gen = _walk_body(body, th.regs)
        kernel.recorded[tid] = [TraceEvent(tid=tid, seq=0, kind="THREAD_START")]
    kernel.run()
    trace = Trace(threads=kernel.recorded, initial_memory=dict(program.memory))
    validate_trace(trace)
    return trace, kernel.result("orig")


def _sections_runtime(trace: Trace) -> tuple[list[_SectionRT], dict[str, list[int]]]:
    if trace.transform is not None:
        rts = [
            _SectionRT(
                id=s.id, tid=s.tid, lock=s.lock, site=s.site, acq_ord=s.acq_ord,
                start=s.start, end=s.end, lockset=list(s.lockset),
                guards=dict(s.guards), removed=s.removed)
            for s in trace.transform.sections
        ]
        return rts, trace.transform.constraints
    rts = []
    for cs in extract_critical_sections(trace):
        rts.append(_SectionRT(
            id=cs.id, tid=cs.tid, lock=cs.lock, site=cs.site, acq_ord=cs.acq_ord,
            start=cs.span[0], end=cs.span[1] + 1, lockset=[cs.lock], guards={},
            removed=False))
    return rts, {}


def _round_robin_order(trace: Trace, lock: str) -> list[tuple[int, int]]:
    queues: dict[int, list[tuple[int, int]]] = {}
    for tid in trace.tids:
        for e in trace.threads[tid]:
            if e.kind == "LOCK_ACQ" and e.lock == lock:
                queues.setdefault(tid, []).append((tid, e.seq))
    order: list[tuple[int, int]] = []
    tids = sorted(queues)
    while any(queues[t] for t in tids):
        for t in tids:
            if queues[t]:
                order.append(queues[t].pop(0))
    return order


def _make_kernel(trace: Trace, policy: str, seed: int | None, *,
                 capture: bool, dynamic: bool,
                 memorder: list[tuple[int, int]] | None = None) -> _Kernel:
    kernel = _Kernel(mode="replay", policy=policy, seed=seed,
                     memory=trace.initial_memory, capture=capture, dynamic=dynamic)
    for tid in trace.tids:
        th = _ThreadState(tid, None)
        kernel.threads[tid] = th
        th.gen = _walk_events(trace.threads[tid])
    sections, constraints = _sections_runtime(trace)
    kernel.set_sections(sections, constraints)
    orders = trace.lock_orders()
    if policy in ("elsc", "mem"):
        for lock, keys in orders.items():
            kernel.set_lock_order(lock, keys)
    elif policy == "sync":
        for lock in orders:
            kernel.set_lock_order(lock, _round_robin_order(trace, lock))
    if policy == "mem":
        kernel.set_memorder(memorder or [])
    return kernel


def _memory_order(trace: Trace) -> list[tuple[int, int]]:
    """Global READ/WRITE order of the recorded execution, reconstructed via an
    order-pinned replay (which reproduces the recording's timing exactly)."""
    kernel = _make_kernel(trace, "elsc", None, capture=False, dynamic=True)
    starts: list[tuple[int, int, int]] = []
    orig_dispatch = kernel._dispatch

    def logged(th, t, act, *, recheck):
        if act[0] in ("read", "write"):
            idx = th.idx
            ok = orig_dispatch(th, t, act, recheck=recheck)
            if ok:
                starts.append((th.clock - act[3], th.tid, idx))
            return ok
        return orig_dispatch(th, t, act, recheck=recheck)

    kernel._dispatch = logged
    kernel.run()
    starts.sort()
    return [(tid, idx) for _, tid, idx in starts]


def replay(trace: Trace, policy: str = "elsc", seed: int | None = 0, *,
           capture: bool = False, dynamic: bool = True) -> ReplayResult:
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}; expected one of {POLICIES}")
    memorder = _memory_order(trace) if policy == "mem" else None
    kernel = _make_kernel(trace, policy, seed, capture=capture, dynamic=dynamic,
                          memorder=memorder)
    kernel.run()
    return kernel.result(policy)


def replay_many(trace: Trace, policy: str, seeds: list[int], **kw) -> list[ReplayResult]:
    return [replay(trace, policy, seed=s, **kw) for s in seeds]


def capture_context(trace: Trace) -> ReplayResult:
    """Order-pinned replay that snapshots memory and registers at every
    section start; detection's re-execution check feeds on this."""
    return replay(trace, "elsc", seed=0, capture=True)
