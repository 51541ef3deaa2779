#pragma once

// Scalar type for parameters and activations. The core library is built twice:
// with ICODEC_REAL_F64 (gradient verification) and without (training and
// inference). Each build lives in its own inline namespace.

#if defined(ICODEC_REAL_F64)
#define ICODEC_PRECISION_NS f64
#else
#define ICODEC_PRECISION_NS f32
#endif

#define ICODEC_CORE_BEGIN \
    namespace icodec {    \
    inline namespace ICODEC_PRECISION_NS {
#define ICODEC_CORE_END \
    }                   \
    }

ICODEC_CORE_BEGIN
#if defined(ICODEC_REAL_F64)
using Real = double;
inline constexpr const char* kRealName = "f64";
#else
using Real = float;
inline constexpr const char* kRealName = "f32";
#endif
ICODEC_CORE_END
