#include <math.h>
#include <stdio.h>
#include "ifpp.h"

int main(void) {
    IfppModel *model = NULL;
    IfppBoundary *b = NULL;
    IfppCurve *p = NULL;
    IfppGrid grid = {0.02, 2e-3, 1e-4};
    double v = 0.0;

    if (ifpp_model_brownian(0.0, 1.0, 1.0, &model) != IFPP_STATUS_OK) return 1;
    if (ifpp_boundary_constant(0.0, 1.0, &b) != IFPP_STATUS_OK) return 2;
    if (ifpp_direct_solve(model, b, 6, grid, &p) != IFPP_STATUS_OK) return 3;
    if (ifpp_curve_eval(p, 1.0, &v) != IFPP_STATUS_OK) return 4;
    if (!(v > 0.6 && v < 0.75)) return 5;
    if (ifpp_model_brownian(0.0, 1.0, 1.0, NULL) != IFPP_STATUS_NULL_POINTER) return 6;
    if (ifpp_last_error() == NULL) return 7;
    printf("p(1) = %.6f\n", v);
    ifpp_curve_free(p);
    ifpp_boundary_free(b);
    ifpp_model_free(model);
    return 0;
}
