#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dvqa::text {

std::string lowercase(std::string s);

// Lowercase, separate punctuation into standalone tokens, split on whitespace.
std::vector<std::string> tokenize(const std::string& s);

std::string join(const std::vector<std::string>& toks, const std::string& sep = " ");

// Deterministic summation: recursive pairwise reduction in index order.
double pairwise_sum(const double* v, size_t n);
double pairwise_sum(const std::vector<double>& v);

// FNV-1a over a byte buffer; used for config hashes and payload checksums.
uint64_t fnv1a(const void* data, size_t n, uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace dvqa::text
