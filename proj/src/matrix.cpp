#include "twoch/matrix.hpp"

#include <algorithm>
#include <string>

#include "twoch/errors.hpp"

namespace twoch {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
    if (data_.size() != rows * cols) {
        throw DimensionError("matrix " + std::to_string(rows) + "x" + std::to_string(cols) +
                             " given " + std::to_string(data_.size()) + " values");
    }
}

Matrix Matrix::slice_rows(std::size_t begin, std::size_t end) const {
    if (begin > end || end > rows_) {
        throw DimensionError("row slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                             ") out of range for " + std::to_string(rows_) + " rows");
    }
    Matrix out(end - begin, cols_);
    std::copy(data_.begin() + static_cast<std::ptrdiff_t>(begin * cols_),
              data_.begin() + static_cast<std::ptrdiff_t>(end * cols_), out.data_.begin());
    return out;
}

Matrix Matrix::transposed() const {
    Matrix out(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r) {
        for (std::size_t c = 0; c < cols_; ++c) out(c, r) = (*this)(r, c);
    }
    return out;
}

}  // namespace twoch
