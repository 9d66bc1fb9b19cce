#include "gk/matrix_io.hpp"

#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "gk/errors.hpp"

namespace gk {

namespace {

constexpr char kMagic[4] = {'G', 'K', 'M', 'X'};
constexpr unsigned char kVersion = 0x01;

bool ends_with(const std::string& s, const std::string& suf) {
    return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

std::uint64_t read_u64_le(std::istream& in) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) throw InputError("truncated binary header");
    std::uint64_t v = 0;
    for (int k = 7; k >= 0; --k) v = (v << 8) | b[k];
    return v;
}

void write_u64_le(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int k = 0; k < 8; ++k) b[k] = static_cast<unsigned char>((v >> (8 * k)) & 0xff);
    out.write(reinterpret_cast<const char*>(b), 8);
}

double parse_real(const std::string& tok, const std::string& path, std::size_t line) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(tok, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    std::size_t k = used;
    while (k < tok.size() && std::isspace(static_cast<unsigned char>(tok[k]))) ++k;
    if (used == 0 || k != tok.size())
        throw InputError(path + ":" + std::to_string(line) + ": bad number '" + tok + "'");
    return v;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

Mat read_binary(std::istream& in, const std::string& path) {
    char magic[4];
    in.read(magic, 4);
    char ver = 0;
    in.read(&ver, 1);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) throw InputError(path + ": bad magic");
    if (static_cast<unsigned char>(ver) != kVersion)
        throw InputError(path + ": unsupported version " + std::to_string(static_cast<unsigned char>(ver)));
    const std::uint64_t rows = read_u64_le(in), cols = read_u64_le(in);
    if (rows > (1ULL << 31) || cols > (1ULL << 31)) throw InputError(path + ": absurd dimensions");
    Mat A(static_cast<Index>(rows), static_cast<Index>(cols));
    for (std::uint64_t i = 0; i < rows; ++i) {
        for (std::uint64_t j = 0; j < cols; ++j) {
            const std::uint64_t bits = read_u64_le(in);
            double v;
            std::memcpy(&v, &bits, 8);
            A(static_cast<Index>(i), static_cast<Index>(j)) = v;
        }
    }
    return A;
}

Mat read_csv(std::istream& in, const std::string& path) {
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string tok;
        while (std::getline(ss, tok, ',')) row.push_back(parse_real(trim(tok), path, lineno));
        if (!rows.empty() && row.size() != rows.front().size())
            throw InputError(path + ":" + std::to_string(lineno) + ": ragged row");
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw InputError(path + ": empty matrix");
    Mat A(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j)
            A(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
    return A;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path);
    return in;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write " + path);
    return out;
}

}  // namespace

Mat read_matrix(const std::string& path) {
    auto in = open_in(path);
    char head[4] = {0, 0, 0, 0};
    in.read(head, 4);
    const bool binary = in.gcount() == 4 && std::memcmp(head, kMagic, 4) == 0;
    in.clear();
    in.seekg(0);
    Mat A = binary ? read_binary(in, path) : read_csv(in, path);
    if (!A.allFinite()) throw InputError(path + ": nonfinite entries");
    return A;
}

void write_matrix_csv(const std::string& path, const Mat& A) {
    auto out = open_out(path);
    out << std::setprecision(17);
    for (Index i = 0; i < A.rows(); ++i) {
        for (Index j = 0; j < A.cols(); ++j) {
            if (j) out << ',';
            out << A(i, j);
        }
        out << '\n';
    }
}

void write_matrix_binary(const std::string& path, const Mat& A) {
    auto out = open_out(path);
    out.write(kMagic, 4);
    out.put(static_cast<char>(kVersion));
    write_u64_le(out, static_cast<std::uint64_t>(A.rows()));
    write_u64_le(out, static_cast<std::uint64_t>(A.cols()));
    for (Index i = 0; i < A.rows(); ++i) {
        for (Index j = 0; j < A.cols(); ++j) {
            std::uint64_t bits;
            const double v = A(i, j);
            std::memcpy(&bits, &v, 8);
            write_u64_le(out, bits);
        }
    }
}

void write_matrix(const std::string& path, const Mat& A) {
    if (ends_with(path, ".bin") || ends_with(path, ".gkmx"))
        write_matrix_binary(path, A);
    else
        write_matrix_csv(path, A);
}

std::vector<double> read_reals(const std::string& path) {
    auto in = open_in(path);
    std::vector<double> v;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty()) continue;
        v.push_back(parse_real(t, path, lineno));
    }
    return v;
}

void write_reals(const std::string& path, const std::vector<double>& v) {
    auto out = open_out(path);
    out << std::setprecision(17);
    for (double x : v) out << x << '\n';
}

std::vector<long> read_integers(const std::string& path) {
    auto in = open_in(path);
    std::vector<long> v;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty()) continue;
        std::size_t used = 0;
        long x = 0;
        try {
            x = std::stol(t, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != t.size())
            throw InputError(path + ":" + std::to_string(lineno) + ": bad integer '" + t + "'");
        v.push_back(x);
    }
    return v;
}

void write_integers(const std::string& path, const std::vector<long>& v) {
    auto out = open_out(path);
    for (long x : v) out << x << '\n';
}

}  // namespace gk
