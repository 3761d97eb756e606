#include <stdio.h>
#include "amlstm.h"

int main(void) {
    AmDataset *ds = NULL;
    size_t n = 0, c = 0;
    printf("amlstm %s\n", am_version());
    if (am_dataset_generate("samples_per_class=6\nseed=2", &ds) != AM_STATUS_OK) {
        fprintf(stderr, "%s\n", am_last_error_message());
        return 1;
    }
    am_dataset_info(ds, &n, &c);
    printf("records %zu classes %zu\n", n, c);
    am_dataset_free(ds);

    ds = NULL;
    if (am_dataset_generate("noise_sigma=-1", &ds) != AM_STATUS_CONFIG || ds != NULL) {
        return 2;
    }
    printf("config error: %s\n", am_last_error_message());
    return 0;
}
