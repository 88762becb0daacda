#ifndef LOOPFLOW_H
#define LOOPFLOW_H

/* Generated by cbindgen from the loopflow-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status code returned by every fallible entry point.
typedef enum LfStatus {
  // Success.
  LF_STATUS_OK = 0,
  // A required pointer argument was null.
  LF_STATUS_NULL_ARGUMENT = 1,
  // A string argument was not valid UTF-8.
  LF_STATUS_INVALID_UTF8 = 2,
  // Input text could not be parsed (PDB records, a selection, or
  // configuration syntax).
  LF_STATUS_PARSE = 3,
  // Arguments were well-formed but invalid together (selection names an
  // absent chain, configuration value out of range, mismatched
  // structures, bad checkpoint).
  LF_STATUS_INVALID = 4,
  // A numerical routine hit degenerate geometry (collinear atoms,
  // rotation log near pi, coincident atoms, time guard).
  LF_STATUS_NUMERIC = 5,
  // A file could not be read or written.
  LF_STATUS_IO = 6,
  // A panic was caught at the C boundary; treat the handles involved
  // as poisoned.
  LF_STATUS_INTERNAL = 7,
} LfStatus;

// Model parameters for the refinement network (opaque).
typedef struct LfModel LfModel;

// An ordered set of protein backbone chains (opaque).
typedef struct LfStructure LfStructure;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string; do not free.
const char *lf_version(void);

// Message for the most recent failure on the calling thread (empty string
// if nothing failed yet).  Valid until the next failing call on the same
// thread; do not free.
const char *lf_last_error(void);

// Parses PDB text (ATOM/TER records, N/CA/C/O backbone) into a structure
// handle.
//
// # Safety
// `pdb_text` must be a NUL-terminated string; `out` must be a valid
// destination for the handle.
enum LfStatus lf_structure_from_pdb(const char *pdb_text, struct LfStructure **out);

// Renders a structure as PDB text.  The returned string is owned by the
// caller; release it with [`lf_string_free`].
//
// # Safety
// `structure` must be a live handle; `out` must be a valid destination.
enum LfStatus lf_structure_to_pdb(const struct LfStructure *structure, char **out);

// Number of residues across all chains of the structure.
//
// # Safety
// `structure` must be a live handle; `out` must be a valid destination.
enum LfStatus lf_structure_residue_count(const struct LfStructure *structure, size_t *out);

// Releases a structure handle.  Null is a no-op.
//
// # Safety
// `structure` must be null or a handle produced by this library that has
// not been freed yet.
void lf_structure_free(struct LfStructure *structure);

// Releases a string returned by this library.  Null is a no-op.
//
// # Safety
// `s` must be null or a string produced by this library that has not
// been freed yet.
void lf_string_free(char *s);

// Initializes fresh model parameters.  `config` selects `seed`, `hidden`
// and `head_hidden` (null for defaults).
//
// # Safety
// `config` must be null or NUL-terminated; `out` must be a valid
// destination for the handle.
enum LfStatus lf_model_init(const char *config, struct LfModel **out);

// Loads model parameters from a checkpoint file written by the CLI
// `train` command (or by another binding).
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be a valid
// destination for the handle.
enum LfStatus lf_model_load(const char *path, struct LfModel **out);

// Writes model parameters to a checkpoint file readable by
// [`lf_model_load`] and the CLI.
//
// # Safety
// `model` must be a live handle; `path` must be a NUL-terminated string.
enum LfStatus lf_model_save(const struct LfModel *model, const char *path);

// Releases a model handle.  Null is a no-op.
//
// # Safety
// `model` must be null or a handle produced by this library that has not
// been freed yet.
void lf_model_free(struct LfModel *model);

// Refines the selected loop residues of `prior` with the model and
// energy-guided flow sampler; context residues are untouched.
// `selections` is comma-separated `chain:start-end`; `config` carries the
// sampler tunables (`steps`, `beta`, `zeta`, ...; null for defaults).
//
// # Safety
// `model` and `prior` must be live handles, the strings NUL-terminated
// (config nullable), and `out` a valid destination for the new handle.
enum LfStatus lf_refine(const struct LfModel *model,
                        const struct LfStructure *prior,
                        const char *selections,
                        const char *config,
                        struct LfStructure **out);

// Backbone RMSD (N, CA, C, O; no superposition) between two structures
// over the selected residues.
//
// # Safety
// `a` and `b` must be live handles, `selections` NUL-terminated, and
// `out` a valid destination.
enum LfStatus lf_rmsd(const struct LfStructure *a,
                      const struct LfStructure *b,
                      const char *selections,
                      double *out);

// Perturbs the selected residues of `target` into a synthetic prior
// (Gaussian position noise, tangent-Gaussian rotation noise).  `config`
// selects `sigma_x`, `sigma_r` and `seed` (null for defaults).
//
// # Safety
// `target` must be a live handle, the strings NUL-terminated (config
// nullable), and `out` a valid destination for the new handle.
enum LfStatus lf_synth_prior(const struct LfStructure *target,
                             const char *selections,
                             const char *config,
                             struct LfStructure **out);

// Total guidance energy of the structure restricted to the selected
// residues (harmonic backbone-geometry terms).  `config` selects the
// term weights `omega` (null for defaults).
//
// # Safety
// `structure` must be a live handle, the strings NUL-terminated (config
// nullable), and `out` a valid destination.
enum LfStatus lf_guidance_energy(const struct LfStructure *structure,
                                 const char *selections,
                                 const char *config,
                                 double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LOOPFLOW_H */
