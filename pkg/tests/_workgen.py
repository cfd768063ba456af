"""Seeded workload generators for randomized suites.

`conflict_free` emits programs whose cross-thread shared accesses are always
guarded by the one lock that owns the cell, so any schedule-preserving
rewrite must reproduce the recorded final memory. `with_injected_conflict`
plants an unguarded cross-thread write-write conflict ("bomb") arranged so
the recorded schedule and the lock-free schedule commit the writes in
opposite orders — a rewrite that drops the locks must diverge and the race
check must name the planted address.
"""

from __future__ import annotations

import random

LOCK_POOL = ("alpha", "beta", "gamma")


def conflict_free(seed: int) -> str:
    rng = random.Random(seed)
    n_threads = rng.randint(2, 4)
    n_locks = rng.randint(1, min(2, len(LOCK_POOL)))
    locks = list(LOCK_POOL[:n_locks])
    # each lock owns its own cells; sections on that lock touch only those
    cells = {lk: [f"{lk}_c{i}" for i in range(rng.randint(1, 2))] for lk in locks}

    lines = []
    for lk in locks:
        for cell in cells[lk]:
            lines.append(f"memory {cell} = {rng.randint(0, 3)};")
    lines.append("")

    site = 100
    for t in range(n_threads):
        body = [f"  compute {rng.randint(1, 4)};"]
        for _ in range(rng.randint(1, 3)):
            lk = rng.choice(locks)
            own = cells[lk]
            site += 1
            body.append(f"  lock {lk} @{site};")
            reg_loaded = False
            for _ in range(rng.randint(1, 3)):
                cell = rng.choice(own)
                op = rng.random()
                if op < 0.45:
                    body.append(f"  read {cell} -> r1;")
                    reg_loaded = True
                elif op < 0.75 and reg_loaded:
                    body.append(f"  write {cell} = r1 add {rng.randint(1, 3)};")
                else:
                    body.append(f"  write {cell} = {rng.randint(0, 9)};")
            body.append(f"  unlock {lk};")
            body.append(f"  compute {rng.randint(1, 3)};")
        # thread-private scratch cell, unguarded on purpose: only this thread
        # touches it, so it can never race
        priv = f"t{t}_scratch"
        lines.append(f"memory {priv} = 0;")
        lines.append("thread {")
        lines.append(f"  write {priv} = {rng.randint(1, 9)};")
        lines.extend(body)
        lines.append(f"  read {priv} -> r9;")
        lines.append("}")
        lines.append("")
    return "\n".join(lines)


def with_injected_conflict(seed: int) -> tuple[str, str]:
    """Two threads, one guarded flag peek each, and an unguarded write to a
    shared cell right after. Timings force: recorded order A-write then
    B-write, lock-free order B-write then A-write. Returns (source, addr)."""
    rng = random.Random(seed)
    a0 = rng.randint(1, 3)
    a1 = rng.randint(3, 6)
    b0 = a0 + 1  # B arrives while A holds the lock
    addr = rng.choice(("bomb", "tail_cell", "last_write"))
    va, vb = 111 + seed % 100, 555 + seed % 100
    src = f"""
memory flag = 0;
memory {addr} = 0;

thread {{
  compute {a0};
  lock m @1;
  read flag -> r1;
  compute {a1};
  unlock m;
  write {addr} = {va};
}}

thread {{
  compute {b0};
  lock m @2;
  read flag -> r1;
  unlock m;
  write {addr} = {vb};
}}
"""
    return src, addr
