#include "iclstm/common.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace iclstm {

std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) {
    // splitmix64 applied to root + golden-ratio-spaced stream index.
    std::uint64_t z = root + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

void Box::validate() const {
    if (lo.size() != hi.size()) throw DimensionError("box bounds differ in length");
    if (lo.size() == 0) throw InvalidArgumentError("box is empty");
    if (!lo.allFinite() || !hi.allFinite()) throw InvalidArgumentError("box bounds must be finite");
    if ((lo.array() > hi.array()).any()) throw InvalidArgumentError("box has lo > hi");
}

bool Box::contains(const Eigen::VectorXd& x, double slack) const {
    if (x.size() != lo.size()) throw DimensionError("box/point dimension mismatch");
    return (x.array() >= lo.array() - slack).all() && (x.array() <= hi.array() + slack).all();
}

Box expand_box(const Box& b) {
    b.validate();
    Box e;
    e.lo.resize(2 * b.dim());
    e.hi.resize(2 * b.dim());
    e.lo << b.lo, -b.hi;
    e.hi << b.hi, -b.lo;
    return e;
}

void require_finite(const Eigen::MatrixXd& m, const std::string& what) {
    if (!m.allFinite())
        throw NumericError("non-finite values in " + what);
}

void require_finite(const Eigen::VectorXd& v, const std::string& what) {
    if (!v.allFinite())
        throw NumericError("non-finite values in " + what);
}

std::string format_double(double v) {
    // Try increasing precision until the string parses back exactly.
    char buf[40];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v)
            return buf;
    }
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows) {
    std::ostringstream out;
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (i) out << ',';
        out << header[i];
    }
    out << '\n';
    for (const auto& row : rows) {
        if (row.size() != header.size())
            throw InvalidArgumentError("csv row width does not match header");
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out << ',';
            out << format_double(row[i]);
        }
        out << '\n';
    }
    write_text_file(path, out.str());
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const Eigen::MatrixXd& rows) {
    if (rows.size() > 0 && static_cast<std::size_t>(rows.cols()) != header.size())
        throw InvalidArgumentError("csv row width does not match header");
    std::ostringstream out;
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (i) out << ',';
        out << header[i];
    }
    out << '\n';
    for (Eigen::Index r = 0; r < rows.rows(); ++r) {
        for (Eigen::Index c = 0; c < rows.cols(); ++c) {
            if (c) out << ',';
            out << format_double(rows(r, c));
        }
        out << '\n';
    }
    write_text_file(path, out.str());
}

void write_csv_text(const std::string& path, const std::vector<std::vector<std::string>>& rows) {
    std::ostringstream out;
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out << ',';
            out << row[i];
        }
        out << '\n';
    }
    write_text_file(path, out.str());
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open for reading: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot open for writing: " + path);
    out << content;
    if (!out)
        throw IoError("write failed: " + path);
}

namespace bin {

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

void put_matrix(std::ostream& os, const Eigen::MatrixXd& m) {
    std::vector<double> buf(static_cast<std::size_t>(m.size()));
    std::size_t k = 0;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) buf[k++] = m(i, j);
    }
    os.write(reinterpret_cast<const char*>(buf.data()),
             static_cast<std::streamsize>(buf.size() * sizeof(double)));
}

Eigen::MatrixXd get_matrix(std::istream& is, Eigen::Index rows, Eigen::Index cols,
                           const std::string& context) {
    if (rows < 0 || cols < 0) throw IoError(context + ": negative block shape");
    std::vector<double> buf(static_cast<std::size_t>(rows * cols));
    is.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(double)));
    if (!is) throw IoError(context + ": truncated tensor block");
    Eigen::MatrixXd m(rows, cols);
    std::size_t k = 0;
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = buf[k++];
    }
    return m;
}

}  // namespace bin

}  // namespace iclstm
