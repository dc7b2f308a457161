#include <math.h>
#include <stdio.h>
#include "chrono_dce.h"

int main(void) {
    double x[4] = {1.0, 2.0, 0.5, -1.0};
    double d[4], back[4], loss = 0.0;
    if (cdce_dct2(x, 4, d) != CDCE_STATUS_OK) return 1;
    if (cdce_idct2(d, 4, back) != CDCE_STATUS_OK) return 2;
    for (int i = 0; i < 4; i++)
        if (fabs(back[i] - x[i]) > 1e-12) return 3;
    if (cdce_crl_loss(x, 4, &loss) != CDCE_STATUS_OK || loss != 3.0) return 4;
    if (cdce_crl_loss(NULL, 4, &loss) != CDCE_STATUS_NULL_POINTER) return 5;
    if (cdce_last_error() == NULL) return 6;

    double coords[3 * 4 * 2 * 1];
    for (int i = 0; i < 24; i++) coords[i] = 0.1 * i;
    CdceSequence *seq = NULL;
    if (cdce_sequence_new(coords, 3, 4, 2, 1, 4, 1, &seq) != CDCE_STATUS_OK) return 7;
    size_t need = 0;
    if (cdce_dce_encode(seq, 2, true, NULL, 0, &need) != CDCE_STATUS_BUFFER_TOO_SMALL || need != 72) return 8;
    double enc[72];
    if (cdce_dce_encode(seq, 2, true, enc, 72, &need) != CDCE_STATUS_OK) return 9;
    if (enc[0] != coords[0] || enc[24] != coords[0]) return 10;
    cdce_sequence_free(seq);

    CdceModel *model = NULL;
    if (cdce_model_load("/nonexistent.json", &model) != CDCE_STATUS_IO || model != NULL) return 11;
    printf("ok\n");
    return 0;
}
