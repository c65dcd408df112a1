#include <math.h>
#include <stdio.h>
#include "scralign.h"

int main(void) {
    const double a[3] = {0.0, 0.0, 0.0};
    const double b[3] = {1.0, 0.0, 0.0};
    ScraCloud *ca = NULL, *cb = NULL;
    if (scra_cloud_new(a, 1, &ca) != SCRA_STATUS_OK) return 1;
    if (scra_cloud_new(b, 1, &cb) != SCRA_STATUS_OK) return 2;
    double d = -1.0;
    if (scra_chamfer(ca, cb, 0.0, &d) != SCRA_STATUS_OK || d != 2.0) return 3;
    if (scra_chamfer(ca, NULL, 0.0, &d) != SCRA_STATUS_NULL_POINTER) return 4;
    if (scra_last_error() == NULL) return 5;
    ScraTestTimeOptions opts = scra_test_time_defaults();
    if (opts.steps != 500 || opts.restarts != 1) return 6;
    printf("chamfer %g; last error: %s\n", d, scra_last_error());
    scra_cloud_free(ca);
    scra_cloud_free(cb);
    return 0;
}
