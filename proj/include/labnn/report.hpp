#pragma once

#include <string>

#include "labnn/tensor.hpp"

namespace labnn {

// Round-trip decimal formatting of a value at 32-bit precision (%.9g of the
// float), used for every numeric CSV field.
std::string fmt_real(double v);

std::string fmt_int(int64_t v);

// ASCII PGM (P2). Binary maps use -1 -> 0, +1 -> 255.
void write_pgm(const std::string& path, const BitTensor& b, int64_t n, int64_t c);

// Real maps are linearly scaled to 0..255 over their own range.
template <typename T>
void write_pgm_real(const std::string& path, const Tensor<T>& t, int64_t n, int64_t c);

void write_text_file(const std::string& path, const std::string& content);

}  // namespace labnn
