#ifndef HEALTHTOKEN_H
#define HEALTHTOKEN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Signature algorithm selector.
 */
typedef enum HtScheme {
  HT_SCHEME_P256 = 0,
  HT_SCHEME_P521 = 1,
} HtScheme;

/**
 * Result codes.
 */
typedef enum HtStatus {
  HT_STATUS_OK = 0,
  HT_STATUS_NULL_ARGUMENT = 1,
  HT_STATUS_INVALID_ARGUMENT = 2,
  HT_STATUS_BUFFER_TOO_SMALL = 3,
  HT_STATUS_MALFORMED = 4,
  HT_STATUS_UNTRUSTED_ISSUER = 5,
  HT_STATUS_INVALID_SIGNATURE = 6,
  HT_STATUS_UNKNOWN_POLICY = 7,
  HT_STATUS_VALUE_OUT_OF_RANGE = 8,
  HT_STATUS_EXPIRED = 9,
  HT_STATUS_RATE_LIMITED = 10,
  HT_STATUS_STALE_EPOCH = 11,
  HT_STATUS_EMPTY = 12,
  HT_STATUS_INTERNAL = 13,
} HtStatus;

/**
 * Issuer signing key.
 */
typedef struct HtIssuerKey HtIssuerKey;

/**
 * Per-epoch TID usage counts.
 */
typedef struct HtLedger HtLedger;

/**
 * Mechanism parameters.
 */
typedef struct HtPolicy HtPolicy;

/**
 * Heavy-hitter counter table.
 */
typedef struct HtSketch HtSketch;

/**
 * Per-level response counts for one policy.
 */
typedef struct HtTally HtTally;

/**
 * Trusted issuer keys together with the known policies.
 */
typedef struct HtVerifier HtVerifier;

/**
 * Fields of a successfully verified token.
 */
typedef struct HtVerified {
  uint8_t policy_id[16];
  uint8_t token_value;
  uint8_t issuer_key_id[8];
  uint64_t issued_at;
  uint8_t tid_hash[16];
} HtVerified;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the last error message of this thread into `buf`.
 */
enum HtStatus ht_last_error(char *buf, size_t len, size_t *written);

/**
 * Create a policy from a 16-byte `id`. `epsilon` accepts `log(a)`, `log(a/b)`, a decimal or
 * `inf`.
 */
enum HtStatus ht_policy_new(const uint8_t *id,
                            uint16_t k,
                            const char *epsilon,
                            uint64_t epoch_seconds,
                            uint32_t rate_limit,
                            uint8_t sketch_bits,
                            double tau,
                            struct HtPolicy **out);

void ht_policy_free(struct HtPolicy *policy);

/**
 * Randomize a true status with OS randomness.
 */
enum HtStatus ht_randomize(const struct HtPolicy *policy, uint8_t truth, uint8_t *out_value);

/**
 * Debias `k` response counts into `k` frequency estimates.
 */
enum HtStatus ht_debias(const struct HtPolicy *policy,
                        const uint64_t *counts,
                        size_t k,
                        double *out_freq);

enum HtStatus ht_issuer_key_generate(enum HtScheme scheme, struct HtIssuerKey **out);

/**
 * Load a PKCS#8 PEM secret key.
 */
enum HtStatus ht_issuer_key_from_pem(const char *pem, struct HtIssuerKey **out);

/**
 * Write the SPKI PEM public key.
 */
enum HtStatus ht_issuer_key_public_pem(const struct HtIssuerKey *key,
                                       char *buf,
                                       size_t len,
                                       size_t *written);

void ht_issuer_key_free(struct HtIssuerKey *key);

/**
 * Randomize `truth`, sign, and write the token text form.
 */
enum HtStatus ht_issue(const struct HtIssuerKey *key,
                       const struct HtPolicy *policy,
                       uint8_t truth,
                       uint64_t now,
                       char *buf,
                       size_t len,
                       size_t *written);

enum HtStatus ht_verifier_new(struct HtVerifier **out);

/**
 * Trust an issuer given its SPKI PEM public key.
 */
enum HtStatus ht_verifier_add_key_pem(struct HtVerifier *verifier, const char *pem);

/**
 * Register a copy of `policy`.
 */
enum HtStatus ht_verifier_add_policy(struct HtVerifier *verifier, const struct HtPolicy *policy);

/**
 * Verify a token text form at time `now`.
 */
enum HtStatus ht_verify_text(const struct HtVerifier *verifier,
                             const char *text,
                             uint64_t now,
                             struct HtVerified *out);

void ht_verifier_free(struct HtVerifier *verifier);

enum HtStatus ht_tally_new(const struct HtPolicy *policy, struct HtTally **out);

/**
 * Count one verified token value observed at time `at`.
 */
enum HtStatus ht_tally_record(struct HtTally *tally, uint8_t value, uint64_t at);

/**
 * Debias the tally. `out_freq` must hold `k` values.
 */
enum HtStatus ht_tally_aggregate(const struct HtTally *tally,
                                 const struct HtPolicy *policy,
                                 double *out_freq,
                                 double *out_expected_risk,
                                 double *out_risk_sum);

enum HtStatus ht_tally_n(const struct HtTally *tally, uint64_t *out);

void ht_tally_free(struct HtTally *tally);

enum HtStatus ht_ledger_new(const struct HtPolicy *policy, struct HtLedger **out);

/**
 * Record one use of a 16-byte TID hash. Returns `HT_STATUS_RATE_LIMITED` once the
 * per-epoch limit is exhausted.
 */
enum HtStatus ht_ledger_check(struct HtLedger *ledger,
                              const uint8_t *tid_hash,
                              uint64_t now,
                              uint32_t *out_uses);

void ht_ledger_free(struct HtLedger *ledger);

/**
 * Provider side: the report bit for a token under challenge `r`.
 */
enum HtStatus ht_report_bit(const char *text, uint8_t bits, uint32_t r, uint8_t *out_bit);

enum HtStatus ht_sketch_new(uint8_t bits, struct HtSketch **out);

/**
 * Fold one report (challenge `r`, answer `bit`) into the counters.
 */
enum HtStatus ht_sketch_apply(struct HtSketch *sketch, uint32_t r, uint8_t bit);

/**
 * Values whose counter exceeds `tau` times the report count, ascending.
 * `*count` receives the number of values even when `cap` is too small.
 */
enum HtStatus ht_sketch_publish(const struct HtSketch *sketch,
                                double tau,
                                uint32_t *out,
                                size_t cap,
                                size_t *count);

void ht_sketch_free(struct HtSketch *sketch);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HEALTHTOKEN_H */
