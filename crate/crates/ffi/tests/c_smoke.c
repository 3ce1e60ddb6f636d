#include <stdio.h>
#include <math.h>
#include "hevc_energy.h"

int main(void) {
    double t = 0.0;
    if (he_t_critical(0.99, 9, &t) != HE_STATUS_OK || fabs(t - 2.821) > 0.01) return 1;
    if (he_t_critical(2.0, 9, &t) != HE_STATUS_INVALID_ARGUMENT) return 2;
    char msg[256];
    if (he_last_error(msg, sizeof msg) == 0) return 3;

    HeDataset *ds = NULL;
    if (he_dataset_synth("SM", 0.0, 7, &ds) != HE_STATUS_OK) return 4;
    size_t n = 0;
    he_dataset_len(ds, &n);
    if (n != 792) return 5;
    HeModel *m = NULL;
    if (he_fit(ds, "sm", NULL, 0, &m) != HE_STATUS_OK) return 6;
    char *json = NULL;
    if (he_model_to_json(m, &json) != HE_STATUS_OK) return 7;
    he_string_free(json);
    he_model_free(m);
    he_dataset_free(ds);
    printf("ok\n");
    return 0;
}
