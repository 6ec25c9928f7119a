#pragma once

// Scalar type of every tensor, float unless the build says otherwise. Each
// precision gets its own inline namespace so a float and a double build of
// the library can be linked into one program.
#ifndef ELEGANT_REAL
#define ELEGANT_REAL float
#endif
#ifndef ELEGANT_ABI
#define ELEGANT_ABI f32
#endif
