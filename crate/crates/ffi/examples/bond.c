/* Prices the defaultable bond of configs/bond.cfg through the C API. */
#include <stdio.h>
#include <stdlib.h>
#include "defaultlab.h"

static char *slurp(const char *path) {
    FILE *f = fopen(path, "rb");
    if (!f) return NULL;
    fseek(f, 0, SEEK_END);
    long n = ftell(f);
    rewind(f);
    char *buf = malloc((size_t)n + 1);
    if (buf && fread(buf, 1, (size_t)n, f) != (size_t)n) { free(buf); buf = NULL; }
    if (buf) buf[n] = 0;
    fclose(f);
    return buf;
}

int main(int argc, char **argv) {
    char *text = slurp(argc > 1 ? argv[1] : "configs/bond.cfg");
    if (!text) { fprintf(stderr, "cannot read config\n"); return 2; }
    DlModel *model = NULL;
    DlStatus st = dl_model_new(text, &model);
    free(text);
    if (st != DL_STATUS_OK) {
        char msg[512];
        dl_last_error_message(msg, sizeof msg);
        fprintf(stderr, "error %d: %s\n", (int)st, msg);
        return 2;
    }
    double price = 0.0, se = 0.0;
    st = dl_indifference_price(model, DL_SOLVER_MODE_ODE, &price, &se);
    if (st == DL_STATUS_OK) printf("defaultlab %s price %.10f\n", dl_version(), price);
    dl_model_free(model);
    return st == DL_STATUS_OK ? 0 : 1;
}
