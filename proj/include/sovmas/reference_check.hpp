// Gradient check of the full joint objective (all three task losses) on a
// fixed tiny reference configuration. Shared by the gradcheck CLI command,
// the python module, and the acceptance suite.

#ifndef SOVMAS_REFERENCE_CHECK_HPP
#define SOVMAS_REFERENCE_CHECK_HPP

namespace sovmas {

// `precision_bits` is 32 or 64. Returns the worst relative error between
// reverse-mode and central-difference gradients over a sampled subset of
// entries per parameter.
double reference_joint_grad_check(int precision_bits, double eps = 0.0,
                                  int max_entries_per_tensor = 64);

// Default tolerance for the given precision (1e-3 for 32-bit, 1e-5 for 64).
double reference_grad_tolerance(int precision_bits);

}  // namespace sovmas

#endif  // SOVMAS_REFERENCE_CHECK_HPP
