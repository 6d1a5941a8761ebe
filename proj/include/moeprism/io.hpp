#pragma once

#include <array>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "moeprism/activation.hpp"
#include "moeprism/error.hpp"
#include "moeprism/expert.hpp"

namespace moeprism {

enum class MatrixFormat { binary, csv };

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
    const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                                static_cast<char>((v >> 16) & 0xff),
                                static_cast<char>((v >> 24) & 0xff)};
    out.write(b.data(), 4);
}

inline void put_f32(std::ostream& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

inline std::uint32_t get_u32(std::istream& in, const std::string& what) {
    std::array<unsigned char, 4> b{};
    if (!in.read(reinterpret_cast<char*>(b.data()), 4)) {
        throw ValidationError("truncated file while reading " + what);
    }
    return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
           static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

inline float get_f32(std::istream& in, const std::string& what) {
    return std::bit_cast<float>(get_u32(in, what));
}

inline std::ofstream open_out(const std::filesystem::path& path, std::ios::openmode mode) {
    std::ofstream out(path, mode);
    if (!out) throw IoError("cannot write " + path.string());
    return out;
}

inline std::ifstream open_in(const std::filesystem::path& path, std::ios::openmode mode) {
    std::ifstream in(path, mode);
    if (!in) throw IoError("cannot open " + path.string());
    return in;
}

inline void expect_magic(std::istream& in, const char* magic, const std::string& path) {
    std::array<char, 4> got{};
    if (!in.read(got.data(), 4) || std::memcmp(got.data(), magic, 4) != 0) {
        throw ValidationError(path + " does not start with the '" + magic + "' magic");
    }
}

// Shortest round-trip decimal form; keeps text outputs byte-reproducible.
inline std::string format_double(double v) {
    std::array<char, 32> buf{};
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), res.ptr);
}

inline std::string format_float(float v) {
    std::array<char, 32> buf{};
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), res.ptr);
}

// Plain numeric CSV, no header: returns raw values (no magnitude applied).
struct RawMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> data;
};

inline RawMatrix read_csv_matrix(const std::filesystem::path& path) {
    std::ifstream in = open_in(path, std::ios::in);
    RawMatrix m;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<float> row;
        std::size_t pos = 0;
        while (pos <= line.size()) {
            std::size_t comma = line.find(',', pos);
            if (comma == std::string::npos) comma = line.size();
            const std::string field = line.substr(pos, comma - pos);
            try {
                std::size_t used = 0;
                const float v = std::stof(field, &used);
                while (used < field.size() && std::isspace(static_cast<unsigned char>(field[used]))) {
                    ++used;
                }
                if (used != field.size()) throw std::invalid_argument(field);
                row.push_back(v);
            } catch (const std::exception&) {
                throw ValidationError(path.string() + ":" + std::to_string(lineno) +
                                      ": cannot parse '" + field + "' as a number");
            }
            pos = comma + 1;
            if (comma == line.size()) break;
        }
        if (m.cols == 0) {
            m.cols = row.size();
        } else if (row.size() != m.cols) {
            throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": row has " +
                                  std::to_string(row.size()) + " values, expected " +
                                  std::to_string(m.cols));
        }
        m.data.insert(m.data.end(), row.begin(), row.end());
        ++m.rows;
    }
    if (m.rows == 0) throw ValidationError(path.string() + " holds no numeric rows");
    return m;
}

inline void write_csv_matrix(const std::filesystem::path& path, std::size_t rows,
                             std::size_t cols, const std::vector<float>& data) {
    std::ofstream out = open_out(path, std::ios::out | std::ios::trunc);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            if (c) out << ',';
            out << format_float(data[r * cols + c]);
        }
        out << '\n';
    }
    if (!out) throw IoError("failed while writing " + path.string());
}

}  // namespace detail

// Activation matrix container: magic "MPAM", u32 version=1, u32 rows,
// u32 cols, then rows*cols little-endian f32, row-major.
inline void save_activation_matrix(const ActivationMatrix& m, const std::filesystem::path& path) {
    validate(m);
    std::ofstream out = detail::open_out(path, std::ios::binary | std::ios::trunc);
    out.write("MPAM", 4);
    detail::put_u32(out, 1);
    detail::put_u32(out, static_cast<std::uint32_t>(m.rows));
    detail::put_u32(out, static_cast<std::uint32_t>(m.cols));
    for (float v : m.data) detail::put_f32(out, v);
    if (!out) throw IoError("failed while writing " + path.string());
}

// Magnitudes are taken on load; a signed dump is rectified here. Non-finite
// entries are rejected with their location.
inline ActivationMatrix load_activation_matrix(const std::filesystem::path& path,
                                               MatrixFormat format) {
    ActivationMatrix m;
    if (format == MatrixFormat::csv) {
        const auto raw = detail::read_csv_matrix(path);
        m.rows = raw.rows;
        m.cols = raw.cols;
        m.data = raw.data;
    } else {
        std::ifstream in = detail::open_in(path, std::ios::binary);
        detail::expect_magic(in, "MPAM", path.string());
        const std::uint32_t version = detail::get_u32(in, "version");
        if (version != 1) {
            throw ValidationError(path.string() + " has unsupported version " +
                                  std::to_string(version));
        }
        m.rows = detail::get_u32(in, "rows");
        m.cols = detail::get_u32(in, "cols");
        if (m.rows < 1 || m.cols < 1) {
            throw ValidationError(path.string() + " declares an empty matrix");
        }
        m.data.resize(m.rows * m.cols);
        for (std::size_t i = 0; i < m.data.size(); ++i) {
            m.data[i] = detail::get_f32(in, "matrix data");
        }
        char extra = 0;
        if (in.read(&extra, 1)) {
            throw ValidationError(path.string() + " holds more data than " +
                                  std::to_string(m.rows) + "x" + std::to_string(m.cols) +
                                  " declares");
        }
    }
    for (std::size_t i = 0; i < m.data.size(); ++i) {
        if (!std::isfinite(m.data[i])) {
            throw ValidationError(path.string() + ": non-finite value at row " +
                                  std::to_string(i / m.cols) + ", col " +
                                  std::to_string(i % m.cols));
        }
        m.data[i] = std::fabs(m.data[i]);
    }
    validate(m);
    return m;
}

inline MatrixFormat matrix_format_for(const std::filesystem::path& path) {
    return path.extension() == ".csv" ? MatrixFormat::csv : MatrixFormat::binary;
}

// Toy expert container: magic "MPEX", u32 version=1, u32 d_model, u32 d_ff,
// then w_gate, w_up, w_down as little-endian f32 in declaration order.
inline void save_toy_expert(const ToyExpert& e, const std::filesystem::path& path) {
    validate(e);
    std::ofstream out = detail::open_out(path, std::ios::binary | std::ios::trunc);
    out.write("MPEX", 4);
    detail::put_u32(out, 1);
    detail::put_u32(out, static_cast<std::uint32_t>(e.d_model));
    detail::put_u32(out, static_cast<std::uint32_t>(e.d_ff));
    for (const auto* w : {&e.w_gate, &e.w_up, &e.w_down}) {
        for (float v : *w) detail::put_f32(out, v);
    }
    if (!out) throw IoError("failed while writing " + path.string());
}

inline ToyExpert load_toy_expert(const std::filesystem::path& path) {
    std::ifstream in = detail::open_in(path, std::ios::binary);
    detail::expect_magic(in, "MPEX", path.string());
    const std::uint32_t version = detail::get_u32(in, "version");
    if (version != 1) {
        throw ValidationError(path.string() + " has unsupported version " +
                              std::to_string(version));
    }
    ToyExpert e;
    e.d_model = detail::get_u32(in, "d_model");
    e.d_ff = detail::get_u32(in, "d_ff");
    if (e.d_model < 1 || e.d_ff < 1) {
        throw ValidationError(path.string() + " declares empty expert dimensions");
    }
    e.w_gate.resize(e.d_model * e.d_ff);
    e.w_up.resize(e.d_model * e.d_ff);
    e.w_down.resize(e.d_ff * e.d_model);
    for (auto* w : {&e.w_gate, &e.w_up, &e.w_down}) {
        for (auto& v : *w) v = detail::get_f32(in, "expert weights");
    }
    char extra = 0;
    if (in.read(&extra, 1)) {
        throw ValidationError(path.string() + " holds more data than its header declares");
    }
    validate(e);
    return e;
}

}  // namespace moeprism
