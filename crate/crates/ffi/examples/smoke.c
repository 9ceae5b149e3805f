/* Build: cargo build -p pcnlab-ffi --release
 *        cc -Icrates/ffi/include crates/ffi/examples/smoke.c \
 *           target/release/libpcnlab_ffi.a -lpthread -ldl -lm -o smoke */
#include <stdio.h>
#include "pcnlab.h"

int main(void) {
    PcnGraphHandle *g = NULL;
    PcnRoundSummary s;
    if (pcn_graph_generate(200, 6, 42, &g) != PCN_STATUS_OK) {
        fprintf(stderr, "generate: %s\n", pcn_last_error_message());
        return 1;
    }
    if (pcn_run_round(g, PCN_STRATEGY_MIN_PAY, 100000000, 0.3, 1, &s) != PCN_STATUS_OK) {
        fprintf(stderr, "round: %s\n", pcn_last_error_message());
        pcn_graph_free(g);
        return 1;
    }
    printf("pcnlab %s: locked %llu sat over %llu paths, mean PCR %.3f, mean SPCR %.3f\n",
           pcn_version(), (unsigned long long)s.locked_payment,
           (unsigned long long)s.path_count, s.mean_pcr, s.mean_spcr);
    pcn_graph_free(g);
    return 0;
}
