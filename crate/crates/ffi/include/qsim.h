#ifndef QSIM_H
#define QSIM_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum QsimStatus {
  QSIM_STATUS_OK = 0,
  QSIM_STATUS_NULL_POINTER = 1,
  QSIM_STATUS_INVALID_ARGUMENT = 2,
  QSIM_STATUS_IO = 3,
  QSIM_STATUS_DATA = 4,
  QSIM_STATUS_NUMERICAL = 5,
  QSIM_STATUS_BUFFER_TOO_SMALL = 6,
  QSIM_STATUS_PANIC = 7,
} QsimStatus;

/**
 * BM25 index over a question corpus.
 */
typedef struct QsimBm25 QsimBm25;

/**
 * Word-embedding table.
 */
typedef struct QsimEmbeddings QsimEmbeddings;

/**
 * Trained question encoder.
 */
typedef struct QsimEncoder QsimEncoder;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next qsim call on the same thread.
 */
const char *qsim_last_error(void);

/**
 * Library version as a static string.
 */
const char *qsim_version(void);

/**
 * Loads a word2vec-format text embedding file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum QsimStatus qsim_embeddings_load(const char *path, struct QsimEmbeddings **out);

/**
 * # Safety
 * `emb` must come from [`qsim_embeddings_load`] and not be used afterwards.
 */
void qsim_embeddings_free(struct QsimEmbeddings *emb);

/**
 * Vector dimension, or 0 for a null handle.
 *
 * # Safety
 * `emb` must be null or a live handle.
 */
size_t qsim_embeddings_dim(const struct QsimEmbeddings *emb);

/**
 * Loads an encoder checkpoint written by training or pre-training.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum QsimStatus qsim_encoder_load(const char *path, struct QsimEncoder **out);

/**
 * # Safety
 * `enc` must come from [`qsim_encoder_load`] and not be used afterwards.
 */
void qsim_encoder_free(struct QsimEncoder *enc);

/**
 * Length of the vectors the encoder produces, or 0 for a null handle.
 *
 * # Safety
 * `enc` must be null or a live handle.
 */
size_t qsim_encoder_output_dim(const struct QsimEncoder *enc);

/**
 * Encodes a question from its title and body text. `*out_len` receives the
 * vector length; if `cap` is smaller, nothing is written and
 * `BufferTooSmall` is returned.
 *
 * # Safety
 * Handles must be live, strings NUL-terminated, and `out` must hold `cap`
 * doubles.
 */
enum QsimStatus qsim_encoder_encode(const struct QsimEncoder *enc,
                                    const struct QsimEmbeddings *emb,
                                    const char *title,
                                    const char *body,
                                    bool use_body,
                                    double *out,
                                    size_t cap,
                                    size_t *out_len);

/**
 * Cosine similarity of two nonzero vectors of length `len`.
 *
 * # Safety
 * `a` and `b` must hold `len` doubles; `out` must be writable.
 */
enum QsimStatus qsim_cosine(const double *a, const double *b, size_t len, double *out);

/**
 * Builds a BM25 index over the titles and bodies of a corpus file.
 *
 * # Safety
 * `corpus_path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum QsimStatus qsim_bm25_build(const char *corpus_path,
                                double k1,
                                double b,
                                struct QsimBm25 **out);

/**
 * Loads an index saved by [`qsim_bm25_save`] or the command line.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum QsimStatus qsim_bm25_load(const char *path, struct QsimBm25 **out);

/**
 * # Safety
 * `index` must be a live handle and `path` a NUL-terminated string.
 */
enum QsimStatus qsim_bm25_save(const struct QsimBm25 *index, const char *path);

/**
 * # Safety
 * `index` must come from this library and not be used afterwards.
 */
void qsim_bm25_free(struct QsimBm25 *index);

/**
 * Number of indexed documents, or 0 for a null handle.
 *
 * # Safety
 * `index` must be null or a live handle.
 */
size_t qsim_bm25_num_docs(const struct QsimBm25 *index);

/**
 * BM25 score of one indexed document for a whitespace-tokenized query.
 *
 * # Safety
 * `index` must be live, `query` NUL-terminated, `out` writable.
 */
enum QsimStatus qsim_bm25_score(const struct QsimBm25 *index,
                                const char *query,
                                uint64_t doc,
                                double *out);

/**
 * The `k` best documents, score descending and ties by ascending id.
 * `exclude` points at an id to leave out, or is null. `*out_len` receives
 * how many entries were written to `ids` and `scores`, each holding `k`.
 *
 * # Safety
 * `index` must be live, `query` NUL-terminated, `ids` and `scores` must hold
 * `k` elements, `out_len` must be writable.
 */
enum QsimStatus qsim_bm25_top_k(const struct QsimBm25 *index,
                                const char *query,
                                const uint64_t *exclude,
                                size_t k,
                                uint64_t *ids,
                                double *scores,
                                size_t *out_len);

/**
 * Average precision, in [0, 1], of one ranked list of 0/1 relevance labels.
 *
 * # Safety
 * `labels` must hold `len` bytes and `out` must be writable.
 */
enum QsimStatus qsim_average_precision(const uint8_t *rel, size_t len, double *out);

/**
 * Reciprocal rank of the first relevant label.
 *
 * # Safety
 * `labels` must hold `len` bytes and `out` must be writable.
 */
enum QsimStatus qsim_reciprocal_rank(const uint8_t *rel, size_t len, double *out);

/**
 * Relevant labels among the first `n`, divided by `n`; 0 when `n` is 0.
 *
 * # Safety
 * `labels` must hold `len` bytes and `out` must be writable.
 */
enum QsimStatus qsim_precision_at(const uint8_t *rel, size_t len, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QSIM_H */
