#pragma once

#include <string>

#include "dvqa/tensor.hpp"

namespace dvqa {

// Binary PGM (P5, maxval 255). Values are clamped to [0,1] and quantized as
// round(255*v); read_pgm returns a 1xHxW tensor with values byte/255.
void write_pgm(const std::string& path, const Tensor& img);
Tensor read_pgm(const std::string& path);

// Debug dump: first line is the shape (comma separated), then the values
// row-major, one line per leading-extent slice.
void dump_csv(const std::string& path, const Tensor& t);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace dvqa
