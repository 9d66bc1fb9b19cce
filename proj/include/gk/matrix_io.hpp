#pragma once

#include <string>
#include <vector>

#include "gk/linalg.hpp"

namespace gk {

// CSV (no header) or binary "GKMX" v1. Reading sniffs the magic bytes;
// writing picks binary for .bin/.gkmx extensions.
Mat read_matrix(const std::string& path);
void write_matrix(const std::string& path, const Mat& A);
void write_matrix_csv(const std::string& path, const Mat& A);
void write_matrix_binary(const std::string& path, const Mat& A);

// One value per line.
std::vector<double> read_reals(const std::string& path);
void write_reals(const std::string& path, const std::vector<double>& v);
std::vector<long> read_integers(const std::string& path);
void write_integers(const std::string& path, const std::vector<long>& v);

}  // namespace gk
