/* Two workers hammer one shared mutex: exactly 100 critical sections each,
 * a few of them slow enough to guarantee real contention windows. Exits 0
 * only if the shared counter proves all sections ran. */

#include <pthread.h>
#include <stdio.h>
#include <unistd.h>

#define SECTIONS_PER_THREAD 100

static pthread_mutex_t mu = PTHREAD_MUTEX_INITIALIZER;
static long shared_counter = 0;

static void spin(long n) {
  for (volatile long i = 0; i < n; i++) {
  }
}

static void *worker(void *arg) {
  long id = (long)arg;
  for (int i = 0; i < SECTIONS_PER_THREAD; i++) {
    pthread_mutex_lock(&mu);
    shared_counter++;
    if (i % 25 == 12)
      usleep(200); /* long hold: the other thread piles up behind us */
    pthread_mutex_unlock(&mu);
    spin(800 + 37 * id);
    if (i % 10 == id)
      usleep(50);
  }
  return NULL;
}

int main(void) {
  pthread_t a, b;
  pthread_create(&a, NULL, worker, (void *)0L);
  pthread_create(&b, NULL, worker, (void *)1L);
  pthread_join(a, NULL);
  pthread_join(b, NULL);
  printf("counter=%ld\n", shared_counter);
  return shared_counter == 2 * SECTIONS_PER_THREAD ? 0 : 1;
}
