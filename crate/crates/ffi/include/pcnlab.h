#ifndef PCNLAB_H
#define PCNLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum PcnStatus {
  PCN_STATUS_OK = 0,
  PCN_STATUS_NULL_POINTER = 1,
  PCN_STATUS_INVALID_ARGUMENT = 2,
  PCN_STATUS_UNKNOWN_NODE = 3,
  PCN_STATUS_DUPLICATE_NODE = 4,
  PCN_STATUS_DUPLICATE_CHANNEL = 5,
  PCN_STATUS_NO_SUCH_CHANNEL = 6,
  PCN_STATUS_INSUFFICIENT_BALANCE = 7,
  PCN_STATUS_GRAPH_ERROR = 8,
  PCN_STATUS_PLANNER_ERROR = 9,
  PCN_STATUS_METRICS_ERROR = 10,
  PCN_STATUS_GENERATION_FAILED = 11,
  PCN_STATUS_INVALID_JSON = 12,
  PCN_STATUS_PANIC = 99,
} PcnStatus;

typedef enum PcnStrategy {
  PCN_STRATEGY_MIN_PAY = 0,
  PCN_STRATEGY_SPCR_MAX = 1,
  PCN_STRATEGY_RANDOM = 2,
  PCN_STRATEGY_GENERAL = 3,
} PcnStrategy;

/**
 * Opaque graph handle, plus the Sybil pairs attacks run between.
 */
typedef struct PcnGraphHandle PcnGraphHandle;

/**
 * Metrics of one attack round.
 */
typedef struct PcnRoundSummary {
  uint64_t locked_payment;
  double mean_pcr;
  double mean_spcr;
  double mean_deviation;
  double gamma;
  uint64_t path_count;
  uint64_t unusable_paths;
  /**
   * Percent of paths per PCR bin: [0,25), [25,50), [50,75), [75,100].
   */
  double pcr_histogram[4];
} PcnRoundSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. The pointer
 * stays valid until the next call into the library on this thread.
 */
const char *pcn_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pcn_version(void);

/**
 * New empty graph. Never returns NULL.
 */
struct PcnGraphHandle *pcn_graph_new(void);

/**
 * Releases a graph; NULL is ignored.
 *
 * # Safety
 * `h` must come from this library and not be used afterwards.
 */
void pcn_graph_free(struct PcnGraphHandle *h);

/**
 * Generates a calibrated topology with `pair_count` Sybil pairs attached,
 * using the default generator settings otherwise.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum PcnStatus pcn_graph_generate(uint32_t honest_node_count,
                                  uint32_t pair_count,
                                  uint64_t seed,
                                  struct PcnGraphHandle **out);

/**
 * # Safety
 * `h` must be a valid handle.
 */
enum PcnStatus pcn_graph_add_node(struct PcnGraphHandle *h, uint32_t id);

/**
 * Opens a channel funded with `fund_xy` on `x`'s side and `fund_yx` on `y`'s.
 *
 * # Safety
 * `h` must be a valid handle.
 */
enum PcnStatus pcn_graph_open_channel(struct PcnGraphHandle *h,
                                      uint32_t x,
                                      uint32_t y,
                                      uint64_t fund_xy,
                                      uint64_t fund_yx);

/**
 * Registers an attacking (sender, receiver) pair; both become Sybils.
 *
 * # Safety
 * `h` must be a valid handle.
 */
enum PcnStatus pcn_graph_add_attack_pair(struct PcnGraphHandle *h,
                                         uint32_t sender,
                                         uint32_t receiver);

/**
 * Funds `from` can currently send to `to` over their channel.
 *
 * # Safety
 * `h` and `out` must be valid pointers.
 */
enum PcnStatus pcn_graph_balance(const struct PcnGraphHandle *h,
                                 uint32_t from,
                                 uint32_t to,
                                 uint64_t *out);

/**
 * # Safety
 * `h` and the output pointers must be valid.
 */
enum PcnStatus pcn_graph_counts(const struct PcnGraphHandle *h,
                                uint64_t *nodes,
                                uint64_t *channels,
                                uint64_t *attack_pairs);

/**
 * Serializes the graph to JSON; free the result with `pcn_string_free`.
 *
 * # Safety
 * `h` and `out` must be valid pointers.
 */
enum PcnStatus pcn_graph_to_json(const struct PcnGraphHandle *h, char **out);

/**
 * Parses a graph produced by `pcn_graph_to_json` or the `gen` command.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PcnStatus pcn_graph_from_json(const char *json, struct PcnGraphHandle **out);

/**
 * Releases a string returned by the library; NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void pcn_string_free(char *s);

/**
 * Path congestion ratio of `alpha` over the given channel balances.
 *
 * # Safety
 * `balances` must point to `len` values and `out` must be valid.
 */
enum PcnStatus pcn_metrics_pcr(uint64_t alpha,
                               const uint64_t *balances_ptr,
                               size_t len,
                               double *out);

/**
 * Scaled path congestion ratio for a path of `length` channels.
 *
 * # Safety
 * `balances` must point to `len` values and `out` must be valid.
 */
enum PcnStatus pcn_metrics_spcr(uint64_t alpha,
                                const uint64_t *balances_ptr,
                                size_t len,
                                size_t length,
                                size_t l_max,
                                double *out);

/**
 * Runs one attack round with every registered sender spending up to
 * `budget`, scores it against `threshold`, then lets all HTLCs expire so
 * the graph returns to its previous balances. `strategy` is a
 * `PcnStrategy` value.
 *
 * # Safety
 * `h` and `out` must be valid pointers.
 */
enum PcnStatus pcn_run_round(struct PcnGraphHandle *h,
                             uint32_t strategy,
                             uint64_t budget,
                             double threshold,
                             uint64_t seed,
                             struct PcnRoundSummary *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PCNLAB_H */
