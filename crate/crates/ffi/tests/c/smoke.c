#include <stdio.h>
#include <string.h>

#include "vspan.h"

#define CHECK(cond)                                                        \
  do {                                                                     \
    if (!(cond)) {                                                         \
      const char *e = vspan_last_error();                                  \
      fprintf(stderr, "%s:%d: %s (%s)\n", __FILE__, __LINE__, #cond,       \
              e ? e : "no error");                                         \
      return 1;                                                            \
    }                                                                      \
  } while (0)

int main(int argc, char **argv) {
  CHECK(argc == 2);
  const char *dir = argv[1];
  CHECK(vspan_simulate("promise_loop", 7, dir) == VSPAN_STATUS_OK);

  /* Userspace alone is enough to rebuild spans, just without syscalls. */
  char us[4096];
  snprintf(us, sizeof us, "%s/userspace.jsonl", dir);
  const char *paths[] = {us};

  VspanAnalysis *a = NULL;
  CHECK(vspan_analyze_files(paths, NULL, 1, true, &a) == VSPAN_STATUS_OK);
  size_t n = vspan_analysis_span_count(a);
  CHECK(n > 0);

  VspanSpanInfo info;
  CHECK(vspan_analysis_span(a, 0, &info) == VSPAN_STATUS_OK);
  CHECK(info.t_ns <= info.l_ns);

  char *folded = NULL;
  CHECK(vspan_analysis_export(a, "folded", &folded) == VSPAN_STATUS_OK);
  CHECK(strchr(folded, ';') != NULL);
  vspan_string_free(folded);

  CHECK(vspan_analysis_export(a, "svg", &folded) == VSPAN_STATUS_INVALID_INPUT);
  CHECK(vspan_last_error() != NULL);

  vspan_analysis_free(a);
  printf("spans=%zu\n", n);
  return 0;
}
