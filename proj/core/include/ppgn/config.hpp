#pragma once

// Build-time scalar selection. The default build uses 32-bit floats; the
// gradient-check build compiles the same sources with PPGN_SCALAR_DOUBLE so
// that central differences resolve to the required precision. Each variant
// lives in its own inline namespace so both can be linked into one binary.

#if defined(PPGN_SCALAR_DOUBLE)
#define PPGN_ABI_NAMESPACE f64
#else
#define PPGN_ABI_NAMESPACE f32
#endif

#define PPGN_NAMESPACE_BEGIN \
  namespace ppgn {           \
  inline namespace PPGN_ABI_NAMESPACE {
#define PPGN_NAMESPACE_END \
  }                        \
  }

PPGN_NAMESPACE_BEGIN

#if defined(PPGN_SCALAR_DOUBLE)
using Scalar = double;
#else
using Scalar = float;
#endif

PPGN_NAMESPACE_END
