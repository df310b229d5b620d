#ifndef BEAMSWEEP_H
#define BEAMSWEEP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BsStatus {
  BS_STATUS_OK = 0,
  BS_STATUS_INVALID_ARGUMENT = 1,
  BS_STATUS_NULL_POINTER = 2,
  BS_STATUS_DOMAIN = 3,
  BS_STATUS_BUDGET_EXHAUSTED = 4,
  BS_STATUS_CONFIG = 5,
  BS_STATUS_INTERNAL = 6,
} BsStatus;

// Opaque campaign report handle.
typedef struct BsCampaign BsCampaign;

// Opaque codebook handle.
typedef struct BsCodebook BsCodebook;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread; empty if none.
const char *bs_last_error_message(void);

// Build a codebook with the averaged-steering design over
// `[theta_min_deg, theta_max_deg]`, `m` antennas at half-wavelength spacing.
//
// # Safety
// `out` must be a valid pointer.
enum BsStatus bs_codebook_new(uint32_t h_levels,
                              double theta_min_deg,
                              double theta_max_deg,
                              size_t m_antennas,
                              double gain_db,
                              struct BsCodebook **out);

// # Safety
// `cb` must come from `bs_codebook_new` and not be used afterwards.
void bs_codebook_free(struct BsCodebook *cb);

// # Safety
// Pointers must be valid.
enum BsStatus bs_codebook_num_vectors(const struct BsCodebook *cb, size_t *out);

// Pointing angle of vertex `(level, index)` in radians.
//
// # Safety
// Pointers must be valid.
enum BsStatus bs_codebook_pointing_angle(const struct BsCodebook *cb,
                                         uint32_t level,
                                         uint32_t index,
                                         double *out);

// One policy run against a single static path at `aoa_rad`. Uses the
// default operating point (`B = C = 0.1`) with the given `epsilon`, `delta`
// and pruning vector `p_dec`.
//
// # Safety
// Pointers must be valid.
enum BsStatus bs_run_sse(const struct BsCodebook *cb,
                         uint64_t p_dec,
                         double epsilon,
                         double delta,
                         double snr_db,
                         double aoa_rad,
                         uint64_t seed,
                         uint32_t *out_leaf,
                         uint64_t *out_samples);

// # Safety
// `out` must be valid.
enum BsStatus bs_predict_level_samples(double h_eps,
                                       size_t s_size,
                                       double delta,
                                       size_t n_total,
                                       uint64_t *out);

// # Safety
// `out` must be valid.
enum BsStatus bs_lambert_w0(double x, double *out);

// # Safety
// Pointers must be valid.
enum BsStatus bs_wilson_interval(double p_hat,
                                 size_t l,
                                 double confidence,
                                 double *out_lo,
                                 double *out_hi);

// Run a campaign described by a TOML configuration string (same keys as the
// command-line tool). `threads = 0` uses every core.
//
// # Safety
// `config_toml` must be a NUL-terminated string; `out` must be valid.
enum BsStatus bs_campaign_run(const char *config_toml, size_t threads, struct BsCampaign **out);

// # Safety
// `c` must come from `bs_campaign_run` and not be used afterwards.
void bs_campaign_free(struct BsCampaign *c);

// # Safety
// Pointers must be valid.
enum BsStatus bs_campaign_num_sims(const struct BsCampaign *c, size_t *out);

// Fraction of runs returning a correct leaf.
//
// # Safety
// Pointers must be valid.
enum BsStatus bs_campaign_p_hat(const struct BsCampaign *c, double *out);

// Mean total samples per run.
//
// # Safety
// Pointers must be valid.
enum BsStatus bs_campaign_t_hat(const struct BsCampaign *c, double *out);

// # Safety
// Pointers must be valid.
enum BsStatus bs_campaign_wilson(const struct BsCampaign *c, double *out_lo, double *out_hi);

// 1 if the interval reached the target width, 0 if `max_sims` ended the run.
//
// # Safety
// Pointers must be valid.
enum BsStatus bs_campaign_converged(const struct BsCampaign *c, int32_t *out);

// Length of the records CSV including the trailing NUL.
//
// # Safety
// `c` must be valid. `buf` may be null to query the size; otherwise it must
// hold `cap` bytes.
enum BsStatus bs_campaign_records_csv(const struct BsCampaign *c,
                                      char *buf,
                                      size_t cap,
                                      size_t *out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BEAMSWEEP_H */
