#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace cfrl {

// Dense row-major float tensor. First dimension is the batch in all
// network entry points; everything downstream works on flat spans.
struct Tensor {
    std::vector<int> shape;
    std::vector<float> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(numel(shape), 0.0f) {}
    Tensor(std::vector<int> s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<int64_t>(data.size()) != numel(shape))
            throw std::invalid_argument("tensor data does not match shape");
    }

    static int64_t numel(const std::vector<int>& s) {
        int64_t n = 1;
        for (int d : s) n *= d;
        return n;
    }
    int64_t numel() const { return static_cast<int64_t>(data.size()); }

    float* ptr() { return data.data(); }
    const float* ptr() const { return data.data(); }
};

std::string shape_str(const std::vector<int>& s);

/// Lowest index wins on ties.
int argmax(const std::vector<float>& v);
int argmax(const std::vector<double>& v);

bool all_finite(const std::vector<float>& v);

}  // namespace cfrl
