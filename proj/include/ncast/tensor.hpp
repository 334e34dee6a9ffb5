#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <vector>

#include "ncast/errors.hpp"

namespace ncast {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) {
        if (d < 0) throw Error("negative tensor dimension");
        n *= d;
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

// Dense row-major tensor. Owns its storage; cheap to move, explicit to copy.
template <typename S>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), S(0)) {}
    Tensor(Shape shape, S fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
    Tensor(Shape shape, std::vector<S> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (static_cast<int64_t>(data_.size()) != shape_numel(shape_))
            throw Error("tensor data size does not match shape " + shape_str(shape_));
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, S v) { return Tensor(std::move(shape), v); }

    const Shape& shape() const { return shape_; }
    int64_t dim(size_t i) const { return shape_.at(i); }
    size_t rank() const { return shape_.size(); }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    S* data() { return data_.data(); }
    const S* data() const { return data_.data(); }
    S& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    const S& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    S& at(std::initializer_list<int64_t> idx) { return data_[offset(idx)]; }
    const S& at(std::initializer_list<int64_t> idx) const { return data_[offset(idx)]; }

    Tensor reshaped(Shape s) const {
        if (shape_numel(s) != numel())
            throw Error("reshape " + shape_str(shape_) + " -> " + shape_str(s) + " changes element count");
        Tensor out = *this;
        out.shape_ = std::move(s);
        return out;
    }

    void fill(S v) { std::fill(data_.begin(), data_.end(), v); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    template <typename T>
    Tensor<T> cast() const {
        Tensor<T> out(shape_);
        for (int64_t i = 0; i < numel(); ++i) out[i] = static_cast<T>(data_[static_cast<size_t>(i)]);
        return out;
    }

    bool all_finite() const {
        for (S v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

private:
    size_t offset(std::initializer_list<int64_t> idx) const {
        if (idx.size() != shape_.size()) throw Error("index rank mismatch for " + shape_str(shape_));
        int64_t off = 0;
        size_t k = 0;
        for (int64_t i : idx) {
            off = off * shape_[k] + i;
            ++k;
        }
        return static_cast<size_t>(off);
    }

    Shape shape_;
    std::vector<S> data_;
};

template <typename S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* what) {
    if (!a.same_shape(b))
        throw Error(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <typename S>
double max_abs_diff(const Tensor<S>& a, const Tensor<S>& b) {
    check_same_shape(a, b, "max_abs_diff");
    double m = 0;
    for (int64_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return m;
}

template <typename S>
bool bit_equal(const Tensor<S>& a, const Tensor<S>& b) {
    if (!a.same_shape(b)) return false;
    return std::equal(a.data(), a.data() + a.numel(), b.data());
}

}  // namespace ncast
