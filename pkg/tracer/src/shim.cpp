// liblocktrace: an LD_PRELOAD shim over the pthread mutex API.
//
// Interposes pthread_mutex_lock/trylock/timedlock/unlock, appends one event
// per successful call to a per-thread buffer (no cross-thread synchronization
// on the hot path), and on process exit writes the whole run as a trace file
// in the same JSONL format the analysis pipeline records natively:
//
//   {"v":1,"capabilities":["no_memory_events"],"source":"..."}
//   {"tid":0,"seq":0,"kind":"THREAD_START","cost":0}
//   {"tid":0,"seq":1,"kind":"COMPUTE","cost":12}
//   {"tid":0,"seq":2,"kind":"LOCK_ACQ","lock":"m1a2b3c4d","acq_ord":0,
//    "site":{"id":123,"lo":0,"hi":0},"cost":0}
//   ...
//
// Fidelity boundary: memory accesses are not observable at the lock-API
// boundary, so traces carry the `no_memory_events` capability and the
// detector reports every pair as UNKNOWN rather than guessing. Timestamps
// quantize to 1 cost unit per microsecond, floor-rounded (noted in the
// header's `source` field). Wait time inside a contended lock call is NOT
// synthesized as work: the gap fed into COMPUTE events runs from the previous
// call's completion to the next call's *attempt*, and the replay engine
// re-derives waiting from the recorded grant order.
//
// Lock names hash the runtime mutex address, call sites hash the caller's
// return address; both are stable within a run only (ASLR makes cross-run
// fusion of shim traces meaningless, and we don't pretend otherwise).
//
// Threads must be joined before exit for their events to be flushed safely.

#include <dlfcn.h>
#include <pthread.h>
#include <time.h>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <vector>

namespace {

using lock_fn = int (*)(pthread_mutex_t *);
using timedlock_fn = int (*)(pthread_mutex_t *, const struct timespec *);

lock_fn g_real_lock = nullptr;
lock_fn g_real_trylock = nullptr;
lock_fn g_real_unlock = nullptr;
timedlock_fn g_real_timedlock = nullptr;

void resolve_real() {
  // benign if raced: every thread writes the same values
  if (!g_real_lock)
    g_real_lock = (lock_fn)dlsym(RTLD_NEXT, "pthread_mutex_lock");
  if (!g_real_trylock)
    g_real_trylock = (lock_fn)dlsym(RTLD_NEXT, "pthread_mutex_trylock");
  if (!g_real_timedlock)
    g_real_timedlock = (timedlock_fn)dlsym(RTLD_NEXT, "pthread_mutex_timedlock");
  if (!g_real_unlock)
    g_real_unlock = (lock_fn)dlsym(RTLD_NEXT, "pthread_mutex_unlock");
}

uint64_t now_ns() {
  struct timespec ts;
  clock_gettime(CLOCK_MONOTONIC, &ts);
  return (uint64_t)ts.tv_sec * 1000000000ull + (uint64_t)ts.tv_nsec;
}

enum Kind : uint8_t { ACQ = 0, REL = 1 };

struct ShimEvent {
  uint8_t kind;
  uintptr_t lock_addr;
  uintptr_t ret_addr;
  uint64_t t_attempt;  // before the real call
  uint64_t t_done;     // after it returned

  // filled at flush time
  int acq_ord = -1;
};

struct ThreadBuf {
  std::vector<ShimEvent> events;
  uint64_t end_ns = 0;  // stamped when the owning thread exits
};

struct Registry {
  std::mutex mu;
  std::vector<std::shared_ptr<ThreadBuf>> bufs;
};

Registry &registry() {
  static Registry *r = new Registry();  // leaked on purpose: alive at exit
  return *r;
}

thread_local bool t_in_shim = false;

// Owns the calling thread's buffer; the destructor stamps the thread's end
// time so trailing off-lock work still shows up as a COMPUTE event.
struct ThreadHandle {
  std::shared_ptr<ThreadBuf> buf;

  ThreadHandle() : buf(std::make_shared<ThreadBuf>()) {
    Registry &r = registry();
    std::lock_guard<std::mutex> g(r.mu);  // passes through: t_in_shim is set
    r.bufs.push_back(buf);
  }
  ~ThreadHandle() { buf->end_ns = now_ns(); }
};

ThreadBuf &thread_buf() {
  static thread_local ThreadHandle handle;
  return *handle.buf;
}

void record(uint8_t kind, pthread_mutex_t *m, uintptr_t ret, uint64_t t0,
            uint64_t t1) {
  ShimEvent ev;
  ev.kind = kind;
  ev.lock_addr = (uintptr_t)m;
  ev.ret_addr = ret;
  ev.t_attempt = t0;
  ev.t_done = t1;
  thread_buf().events.push_back(ev);
}

uint32_t fnv1a(uint64_t v) {
  uint32_t h = 2166136261u;
  for (int i = 0; i < 8; i++) {
    h ^= (uint8_t)(v >> (8 * i));
    h *= 16777619u;
  }
  return h;
}

// ---- flush: serialize every buffer into one canonical trace file ----------

void flush_all() {
  t_in_shim = true;  // nothing the writer does below should be traced

  std::vector<std::shared_ptr<ThreadBuf>> bufs;
  {
    Registry &r = registry();
    std::lock_guard<std::mutex> g(r.mu);
    bufs = r.bufs;
  }
  std::vector<ThreadBuf *> live;
  for (auto &b : bufs)
    if (!b->events.empty()) live.push_back(b.get());
  // dense tids in order of first activity (stable: registration order ties)
  std::stable_sort(live.begin(), live.end(), [](ThreadBuf *a, ThreadBuf *b) {
    return a->events.front().t_attempt < b->events.front().t_attempt;
  });

  // name locks by hashed address, probing past within-run collisions so two
  // distinct mutexes can never merge into one (that would unbalance the trace)
  std::map<uintptr_t, std::string> lock_names;
  std::set<std::string> taken;
  auto lock_name = [&](uintptr_t addr) -> const std::string & {
    auto it = lock_names.find(addr);
    if (it != lock_names.end()) return it->second;
    uint32_t h = fnv1a(addr);
    char buf[16];
    snprintf(buf, sizeof buf, "m%08x", h);
    std::string name = buf;
    while (taken.count(name)) {
      h = h * 16777619u + 1;
      snprintf(buf, sizeof buf, "m%08x", h);
      name = buf;
    }
    taken.insert(name);
    return lock_names.emplace(addr, name).first->second;
  };

  // grant order per lock: every acquisition, globally, by completion time
  std::map<std::string, std::vector<ShimEvent *>> acqs;
  for (ThreadBuf *tb : live)
    for (ShimEvent &ev : tb->events)
      if (ev.kind == ACQ) acqs[lock_name(ev.lock_addr)].push_back(&ev);
  for (auto &entry : acqs) {
    std::sort(entry.second.begin(), entry.second.end(),
              [](ShimEvent *a, ShimEvent *b) { return a->t_done < b->t_done; });
    int ord = 0;
    for (ShimEvent *ev : entry.second) ev->acq_ord = ord++;
  }

  uint64_t base = ~0ull;
  for (ThreadBuf *tb : live)
    base = std::min(base, tb->events.front().t_attempt);

  const char *path = getenv("LOCKTRACE_OUT");
  if (!path || !*path) path = "locktrace.jsonl";
  FILE *out = fopen(path, "w");
  if (!out) {
    fprintf(stderr, "locktrace: cannot write %s\n", path);
    return;
  }

  fprintf(out,
          "{\"v\":1,\"capabilities\":[\"no_memory_events\"],"
          "\"source\":\"locktrace shim; 1 cost unit = 1 microsecond, "
          "floor-quantized\"}\n");

  int tid = 0;
  for (ThreadBuf *tb : live) {
    int seq = 0;
    fprintf(out, "{\"tid\":%d,\"seq\":%d,\"kind\":\"THREAD_START\",\"cost\":0}\n",
            tid, seq++);
    uint64_t prev_done = base;
    for (const ShimEvent &ev : tb->events) {
      uint64_t gap_us =
          ev.t_attempt > prev_done ? (ev.t_attempt - prev_done) / 1000 : 0;
      if (gap_us >= 1)
        fprintf(out,
                "{\"tid\":%d,\"seq\":%d,\"kind\":\"COMPUTE\",\"cost\":%llu}\n",
                tid, seq++, (unsigned long long)gap_us);
      const std::string &lk = lock_name(ev.lock_addr);
      if (ev.kind == ACQ) {
        uint32_t site = fnv1a(ev.ret_addr) & 0x7fffffffu;
        fprintf(out,
                "{\"tid\":%d,\"seq\":%d,\"kind\":\"LOCK_ACQ\",\"lock\":\"%s\","
                "\"acq_ord\":%d,\"site\":{\"id\":%u,\"lo\":0,\"hi\":0},"
                "\"cost\":0}\n",
                tid, seq++, lk.c_str(), ev.acq_ord, site);
      } else {
        fprintf(out,
                "{\"tid\":%d,\"seq\":%d,\"kind\":\"LOCK_REL\",\"lock\":\"%s\","
                "\"cost\":0}\n",
                tid, seq++, lk.c_str());
      }
      prev_done = ev.t_done;
    }
    if (tb->end_ns > prev_done) {
      uint64_t tail_us = (tb->end_ns - prev_done) / 1000;
      if (tail_us >= 1)
        fprintf(out,
                "{\"tid\":%d,\"seq\":%d,\"kind\":\"COMPUTE\",\"cost\":%llu}\n",
                tid, seq++, (unsigned long long)tail_us);
    }
    fprintf(out, "{\"tid\":%d,\"seq\":%d,\"kind\":\"THREAD_END\",\"cost\":0}\n",
            tid, seq);
    tid++;
  }
  fclose(out);
}

__attribute__((constructor)) void init() {
  t_in_shim = true;
  resolve_real();
  atexit(flush_all);
  t_in_shim = false;
}

}  // namespace

extern "C" {

int pthread_mutex_lock(pthread_mutex_t *m) {
  resolve_real();
  if (t_in_shim) return g_real_lock(m);
  t_in_shim = true;
  uint64_t t0 = now_ns();
  int rc = g_real_lock(m);
  uint64_t t1 = now_ns();
  if (rc == 0)
    record(ACQ, m, (uintptr_t)__builtin_return_address(0), t0, t1);
  t_in_shim = false;
  return rc;
}

int pthread_mutex_trylock(pthread_mutex_t *m) {
  resolve_real();
  if (t_in_shim) return g_real_trylock(m);
  t_in_shim = true;
  uint64_t t0 = now_ns();
  int rc = g_real_trylock(m);
  uint64_t t1 = now_ns();
  if (rc == 0)
    record(ACQ, m, (uintptr_t)__builtin_return_address(0), t0, t1);
  t_in_shim = false;
  return rc;
}

int pthread_mutex_timedlock(pthread_mutex_t *m, const struct timespec *abs) {
  resolve_real();
  if (t_in_shim) return g_real_timedlock(m, abs);
  t_in_shim = true;
  uint64_t t0 = now_ns();
  int rc = g_real_timedlock(m, abs);
  uint64_t t1 = now_ns();
  if (rc == 0)
    record(ACQ, m, (uintptr_t)__builtin_return_address(0), t0, t1);
  t_in_shim = false;
  return rc;
}

int pthread_mutex_unlock(pthread_mutex_t *m) {
  resolve_real();
  if (t_in_shim) return g_real_unlock(m);
  t_in_shim = true;
  uint64_t t0 = now_ns();
  int rc = g_real_unlock(m);
  uint64_t t1 = now_ns();
  if (rc == 0)
    record(REL, m, (uintptr_t)__builtin_return_address(0), t0, t1);
  t_in_shim = false;
  return rc;
}

}  // extern "C"
