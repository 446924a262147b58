/* C interface to the variational Monte Carlo engine.
 *
 * Maintained by hand alongside crates/ffi/src/lib.rs; the Rust tests in
 * crates/ffi/tests/capi.rs exercise every declaration below.
 */

#ifndef VMC_H
#define VMC_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes returned by every fallible call. */
#define VMC_OK 0
#define VMC_ERR_INVALID_ARGUMENT 1
#define VMC_ERR_CONFIG 2
#define VMC_ERR_NUMERIC 3
#define VMC_ERR_IO 4
#define VMC_ERR_PANIC 5

/* Opaque engine handle. */
typedef struct VmcEngine VmcEngine;

typedef struct VmcEnergyStats {
  double mean;       /* hartree */
  double variance;   /* hartree^2 */
  double std_error;  /* hartree */
  uint64_t n_samples;
} VmcEnergyStats;

/* Library version as a static NUL-terminated string. */
const char *vmc_version(void);

/* Copies the calling thread's last error message into buf (truncated,
 * always NUL-terminated). Returns the full message length. */
size_t vmc_last_error(char *buf, size_t len);

/* Creates an engine from a TOML run configuration string. On success *out
 * owns the engine and must be released with vmc_engine_free. */
int32_t vmc_engine_new(const char *config_toml, VmcEngine **out);

/* Releases an engine; NULL is a no-op. */
void vmc_engine_free(VmcEngine *engine);

/* Runs supervised orbital pretraining (no-op when disabled in the config). */
int32_t vmc_engine_pretrain(VmcEngine *engine);

/* Advances the optimization by n_steps. If out_energy is non-NULL it
 * receives the mean energy over the geometry walkers at the last step. */
int32_t vmc_engine_train(VmcEngine *engine, uint64_t n_steps, double *out_energy);

/* Evaluates the model at one geometry-template parameter value (for the
 * diatomic template: the bond length in bohr). */
int32_t vmc_engine_evaluate(const VmcEngine *engine, double param,
                            uint64_t n_samples, uint64_t seed,
                            VmcEnergyStats *out);

/* Checkpointing. vmc_engine_load creates a new engine in *out. */
int32_t vmc_engine_save(const VmcEngine *engine, const char *path);
int32_t vmc_engine_load(const char *path, VmcEngine **out);

/* Current optimization step (0 for NULL). */
uint64_t vmc_engine_step(const VmcEngine *engine);

#ifdef __cplusplus
}
#endif

#endif /* VMC_H */
