#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace iclstm {

// All library errors derive from Error so callers can catch one base type.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape or width mismatch between parameters, inputs, or datasets.
struct DimensionError : Error {
    using Error::Error;
};

// A value outside its documented domain (bad bounds, negative count, bad enum string).
struct InvalidArgumentError : Error {
    using Error::Error;
};

// Non-finite intermediates, diverging training, failed Newton/eigen iterations.
struct NumericError : Error {
    using Error::Error;
};

// Malformed, truncated, or unwritable files.
struct IoError : Error {
    using Error::Error;
};

// Unknown keys or unparsable values in a config file / CLI option.
struct ConfigError : Error {
    using Error::Error;
};

// Time-major batched sequence: seq[t] is a (batch x width) matrix.
using BatchSeq = std::vector<Eigen::MatrixXd>;

// Axis-aligned box, used for sampling domains and probe regions.
struct Box {
    Eigen::VectorXd lo, hi;

    Eigen::Index dim() const { return lo.size(); }
    // Throws unless lo/hi are finite, same length, and lo <= hi.
    void validate() const;
    bool contains(const Eigen::VectorXd& x, double slack = 0.0) const;
};

// Box for the expanded vector [x, -x] when x ranges over `b`.
Box expand_box(const Box& b);

// splitmix64 step; used to derive independent child seeds from one root seed
// so that e.g. data generation and weight init never share a stream.
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream);

inline std::mt19937_64 make_rng(std::uint64_t root, std::uint64_t stream) {
    return std::mt19937_64(derive_seed(root, stream));
}

// Throws NumericError naming `what` if any entry is NaN/Inf.
void require_finite(const Eigen::MatrixXd& m, const std::string& what);
void require_finite(const Eigen::VectorXd& v, const std::string& what);

// Shortest decimal string that round-trips a double (%.17g trimmed via re-parse).
std::string format_double(double v);

// Writes rows as CSV with a header line. Every cell is rendered with
// format_double for bitwise-stable output across runs.
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows);
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const Eigen::MatrixXd& rows);

// Writes a CSV with free-form string cells (first row is the header).
void write_csv_text(const std::string& path, const std::vector<std::vector<std::string>>& rows);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

// Little-endian binary primitives shared by the model and dataset file formats.
namespace bin {
void put_u32(std::ostream& os, std::uint32_t v);
std::uint32_t get_u32(std::istream& is);
// Row-major f64 block, shape supplied by the caller (headers carry it).
void put_matrix(std::ostream& os, const Eigen::MatrixXd& m);
Eigen::MatrixXd get_matrix(std::istream& is, Eigen::Index rows, Eigen::Index cols,
                           const std::string& context);
}  // namespace bin

}  // namespace iclstm
