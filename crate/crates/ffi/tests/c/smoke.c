#include <math.h>
#include <stdio.h>
#include <stdlib.h>

#include "graphmtl.h"

#define CHECK(call)                                                              \
  do {                                                                           \
    GmtlStatus s_ = (call);                                                      \
    if (s_ != GMTL_STATUS_OK) {                                                  \
      const char *msg = gmtl_last_error_message();                               \
      fprintf(stderr, "%s failed (%d): %s\n", #call, (int)s_, msg ? msg : "?"); \
      return 1;                                                                  \
    }                                                                            \
  } while (0)

int main(void) {
  GmtlWorldSpec spec = gmtl_world_spec_default();
  spec.d = 4;
  spec.m = 6;
  spec.clusters = 2;
  spec.n = 12;
  spec.dev_size = 20;
  spec.test_size = 20;
  spec.knn = 3;
  spec.seed = 5;

  GmtlWorld *world = NULL;
  CHECK(gmtl_world_generate(spec, &world));

  GmtlConfig *cfg = NULL;
  CHECK(gmtl_config_parse("algorithm = bsr_acc\nhp.eta = 0.1\nhp.tau = 0.5\nsolver.rounds = 40\n", &cfg));

  GmtlRun *run = NULL;
  CHECK(gmtl_run(cfg, world, &run));
  size_t rows = gmtl_run_row_count(run);
  GmtlTraceRow last;
  CHECK(gmtl_run_row(run, rows - 1, &last));

  double w[24];
  CHECK(gmtl_run_predictors(run, w, 24));

  if (gmtl_run_row(run, rows, &last) != GMTL_STATUS_INVALID_ARGUMENT) return 2;
  if (gmtl_last_error_message() == NULL) return 3;

  printf("rows=%zu comm=%llu objective=%.6f\n", rows, (unsigned long long)last.comm_rounds, last.erm_objective);
  gmtl_run_free(run);
  gmtl_config_free(cfg);
  gmtl_world_free(world);
  return isfinite(last.erm_objective) ? 0 : 4;
}
