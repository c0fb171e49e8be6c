#include "cfrl/tensor.hpp"

#include <cmath>

namespace cfrl {

std::string shape_str(const std::vector<int>& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

template <typename T>
static int argmax_impl(const std::vector<T>& v) {
    if (v.empty()) throw std::invalid_argument("argmax of empty vector");
    int best = 0;
    for (int i = 1; i < static_cast<int>(v.size()); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

int argmax(const std::vector<float>& v) { return argmax_impl(v); }
int argmax(const std::vector<double>& v) { return argmax_impl(v); }

bool all_finite(const std::vector<float>& v) {
    for (float x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace cfrl
