#include <math.h>
#include <stdio.h>
#include "asynczo.h"

#define CHECK(expr) do { AzoStatus s_ = (expr); if (s_ != AZO_STATUS_OK) { \
    fprintf(stderr, "%s -> %d: %s\n", #expr, (int)s_, azo_last_error_message()); return 1; } } while (0)

int main(void) {
    size_t dims[2] = {1, 1};
    double a[4] = {1, 0, 0, 1}, b[2] = {0, 0};
    AzoObjective *q = NULL;
    CHECK(azo_quadratic_new(dims, 2, a, b, 0.0, &q));

    double x[2] = {1.0, 2.0}, g[2], v;
    CHECK(azo_objective_value(q, x, 2, &v));
    CHECK(azo_objective_gradient(q, x, 2, g));
    if (fabs(v - 2.5) > 1e-15 || g[0] != 1.0 || g[1] != 2.0) return 2;

    AzoRunOptions opts = azo_run_options_default();
    opts.budget_queries = 2000;
    AzoRunStats stats;
    CHECK(azo_run(q, &opts, x, 2, &stats));
    if (stats.queries != 2000 || !(stats.final_loss < 2.5)) return 3;

    if (azo_objective_value(q, x, 3, &v) != AZO_STATUS_LAYOUT) return 4;
    if (azo_last_error_message() == NULL) return 5;
    azo_objective_free(q);
    printf("ok %g\n", stats.final_loss);
    return 0;
}
