/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef BILEX_H
#define BILEX_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Language of a text passed to the tokenizer.
 */
typedef enum BilexLang {
  BILEX_LANG_L1 = 1,
  BILEX_LANG_L2 = 2,
} BilexLang;

/**
 * Result code of every fallible call.
 */
typedef enum BilexStatus {
  BILEX_STATUS_OK = 0,
  BILEX_STATUS_NULL_ARGUMENT = 1,
  BILEX_STATUS_INVALID_UTF8 = 2,
  BILEX_STATUS_INVALID_ARGUMENT = 3,
  BILEX_STATUS_IO = 4,
  BILEX_STATUS_FORMAT = 5,
  BILEX_STATUS_TOKENIZER = 6,
  BILEX_STATUS_MODEL = 7,
  BILEX_STATUS_STATS = 8,
  BILEX_STATUS_NUMERICAL = 9,
  BILEX_STATUS_BUFFER_TOO_SMALL = 10,
  BILEX_STATUS_INTERNAL = 11,
} BilexStatus;

/**
 * A model checkpoint loaded from disk.
 */
typedef struct BilexModel BilexModel;

/**
 * A condition vocabulary loaded from its JSON file.
 */
typedef struct BilexTokenizer BilexTokenizer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *bilex_version(void);

/**
 * Copies the last error message of the calling thread, NUL-terminated and
 * truncated to `cap` bytes. Returns the untruncated length without the NUL.
 *
 * # Safety
 * `buf` must be null or point to `cap` writable bytes.
 */
size_t bilex_last_error_message(char *buf, size_t cap);

/**
 * Loads a vocabulary written by the `tokenize` stage.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum BilexStatus bilex_tokenizer_load(const char *path, struct BilexTokenizer **out);

/**
 * # Safety
 * `tok` must be null or a handle from [`bilex_tokenizer_load`] not yet freed.
 */
void bilex_tokenizer_free(struct BilexTokenizer *tok);

/**
 * Number of token ids, or 0 for a null handle.
 *
 * # Safety
 * `tok` must be null or a live handle.
 */
size_t bilex_tokenizer_vocab_size(const struct BilexTokenizer *tok);

/**
 * Id of the end-of-text token, or `u32::MAX` for a null handle.
 *
 * # Safety
 * `tok` must be null or a live handle.
 */
uint32_t bilex_tokenizer_end_of_text(const struct BilexTokenizer *tok);

/**
 * Encodes UTF-8 `text` as `lang`. With a short buffer the call fails with
 * `BufferTooSmall` and `out_len` holds the needed length.
 *
 * # Safety
 * `tok` must be live, `text` NUL-terminated, `ids` null or `cap` writable
 * elements, `out_len` valid.
 */
enum BilexStatus bilex_tokenizer_encode(const struct BilexTokenizer *tok,
                                        const char *text,
                                        enum BilexLang lang,
                                        uint32_t *ids,
                                        size_t cap,
                                        size_t *out_len);

/**
 * Decodes ids to UTF-8 bytes (not NUL-terminated). Sizing works as in
 * [`bilex_tokenizer_encode`].
 *
 * # Safety
 * `ids` must point to `n` elements, `buf` be null or `cap` writable bytes,
 * `out_len` valid.
 */
enum BilexStatus bilex_tokenizer_decode(const struct BilexTokenizer *tok,
                                        const uint32_t *ids,
                                        size_t n,
                                        uint8_t *buf,
                                        size_t cap,
                                        size_t *out_len);

/**
 * Loads a checkpoint written by the `train` stage.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum BilexStatus bilex_model_load(const char *path, struct BilexModel **out);

/**
 * # Safety
 * `model` must be null or a handle from [`bilex_model_load`] not yet freed.
 */
void bilex_model_free(struct BilexModel *model);

/**
 * # Safety
 * `model` must be null or a live handle.
 */
size_t bilex_model_vocab_size(const struct BilexModel *model);

/**
 * # Safety
 * `model` must be null or a live handle.
 */
size_t bilex_model_context_length(const struct BilexModel *model);

/**
 * Surprisal in bits of `target` after the `n` context ids.
 *
 * # Safety
 * `ids` must point to `n` elements and `out_bits` be valid.
 */
enum BilexStatus bilex_model_surprisal(const struct BilexModel *model,
                                       const uint32_t *ids,
                                       size_t n,
                                       uint32_t target,
                                       double *out_bits);

/**
 * Mean next-token cross-entropy (nats) over one sequence.
 *
 * # Safety
 * `ids` must point to `n` elements and `out_loss` be valid.
 */
enum BilexStatus bilex_model_loss(const struct BilexModel *model,
                                  const uint32_t *ids,
                                  size_t n,
                                  double *out_loss);

/**
 * Upper-tail probability of a chi-square statistic, as used by the
 * likelihood-ratio test.
 *
 * # Safety
 * `out_p` must be valid.
 */
enum BilexStatus bilex_chi2_p_value(double chi2, uint32_t df, double *out_p);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BILEX_H */
