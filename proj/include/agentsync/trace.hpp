#pragma once

#include <charconv>
#include <cstddef>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "agentsync/errors.hpp"

namespace agentsync {

/// Shortest decimal string that parses back to exactly v. Keeps text output
/// byte-stable across runs.
inline std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

/// Row-major table of sampled signals with named columns.
class Trace {
public:
    explicit Trace(std::vector<std::string> columns) : columns_(std::move(columns)) {
        if (columns_.empty()) throw ConfigError("a trace needs at least one column");
    }

    void append_row(std::span<const double> row) {
        if (row.size() != columns_.size())
            throw DomainError("trace row width " + std::to_string(row.size()) +
                              " does not match " + std::to_string(columns_.size()) + " columns");
        data_.insert(data_.end(), row.begin(), row.end());
    }

    std::size_t rows() const { return columns_.empty() ? 0 : data_.size() / columns_.size(); }
    std::size_t cols() const { return columns_.size(); }
    const std::vector<std::string>& columns() const { return columns_; }
    const std::vector<double>& data() const { return data_; }

    double value(std::size_t row, std::size_t col) const {
        if (row >= rows() || col >= cols()) throw DomainError("trace index out of range");
        return data_[row * cols() + col];
    }

    std::size_t column_index(const std::string& name) const {
        for (std::size_t c = 0; c < columns_.size(); ++c)
            if (columns_[c] == name) return c;
        throw DomainError("trace has no column named '" + name + "'");
    }

    std::vector<double> column(const std::string& name) const {
        const std::size_t c = column_index(name);
        std::vector<double> out(rows());
        for (std::size_t r = 0; r < out.size(); ++r) out[r] = data_[r * cols() + c];
        return out;
    }

    void write_csv(std::ostream& os) const {
        for (std::size_t c = 0; c < columns_.size(); ++c) {
            if (c) os << ',';
            os << columns_[c];
        }
        os << '\n';
        for (std::size_t r = 0; r < rows(); ++r) {
            for (std::size_t c = 0; c < cols(); ++c) {
                if (c) os << ',';
                os << format_double(data_[r * cols() + c]);
            }
            os << '\n';
        }
    }

private:
    std::vector<std::string> columns_;
    std::vector<double> data_;
};

}  // namespace agentsync
