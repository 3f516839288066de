/* Minimal embedding demo for the coarsim C API.
 *
 * Build (from the workspace root, after `cargo build --release -p coarsim-capi`):
 *
 *   cc crates/capi/examples/demo.c \
 *      -Icrates/capi/include -Ltarget/release -lcoarsim_capi -lm -o demo
 *   LD_LIBRARY_PATH=target/release ./demo scenes/rod_swing.toml
 */
#include <stdio.h>
#include <stdlib.h>

#include "coarsim.h"

int main(int argc, char **argv) {
    if (argc != 2) {
        fprintf(stderr, "usage: %s <scene.toml>\n", argv[0]);
        return 2;
    }

    CoarsimSim *sim = NULL;
    if (coarsim_sim_create(argv[1], &sim) != CoarsimOk) {
        char msg[512];
        coarsim_last_error(NULL, msg, sizeof msg);
        fprintf(stderr, "create failed: %s\n", msg);
        return 1;
    }

    size_t n = coarsim_sim_vertex_count(sim);
    uint64_t frames = coarsim_sim_configured_frames(sim);
    printf("version %s, %zu vertices, %llu frames\n", coarsim_version(), n,
           (unsigned long long)frames);

    double *xyz = malloc(sizeof(double) * 3 * n);
    for (uint64_t f = 1; f <= frames; ++f) {
        if (coarsim_sim_step(sim) != CoarsimOk) {
            char msg[512];
            coarsim_last_error(sim, msg, sizeof msg);
            fprintf(stderr, "step %llu failed: %s\n", (unsigned long long)f, msg);
            free(xyz);
            coarsim_sim_destroy(sim);
            return 1;
        }
        CoarsimStepStats stats;
        coarsim_sim_last_stats(sim, &stats);
        coarsim_sim_positions(sim, xyz, 3 * n);
        printf("t=%.3f newton=%llu active=%.3f first_vertex=(%.4f %.4f %.4f)\n",
               coarsim_sim_time(sim), (unsigned long long)stats.newton_iters,
               stats.active_ratio_mean, xyz[0], xyz[1], xyz[2]);
    }

    free(xyz);
    coarsim_sim_destroy(sim);
    return 0;
}
