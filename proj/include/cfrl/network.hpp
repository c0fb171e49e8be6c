#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cfrl/tensor.hpp"

namespace cfrl {

// The layer set is exactly what the model zoo here needs: valid-padding
// Conv2D and Dense, each with an optional fused ReLU.
enum class LayerKind { Conv2D, Dense };

struct LayerSpec {
    LayerKind kind = LayerKind::Dense;
    int units = 0;   // Conv2D: filter count; Dense: output width
    int kernel = 0;  // Conv2D only
    int stride = 0;  // Conv2D only
    bool relu = false;

    static LayerSpec conv(int filters, int kernel, int stride, bool relu = true) {
        return {LayerKind::Conv2D, filters, kernel, stride, relu};
    }
    static LayerSpec dense(int out, bool relu = false) {
        return {LayerKind::Dense, out, 0, 0, relu};
    }
};

// Geometry of one layer boundary. Dense activations use h=w=1, c=width.
struct LayerDims {
    int h = 1, w = 1, c = 0;
    int flat() const { return h * w * c; }
};

// Scratch buffers for forward/backward. Reusable across calls so training
// loops do not reallocate; contents are owned by the last forward call.
struct Workspace {
    std::vector<Tensor> act;      // act[0] = input, act[i] = output of layer i-1 (post-ReLU)
    std::vector<Tensor> cols;     // im2col buffers per conv layer
    int batch = 0;
};

/// Temperature softmax, exp((v - max v)/tau) / sum, computed in double.
std::vector<double> softmax_t(const std::vector<double>& v, double tau);
std::vector<double> softmax_t(const std::vector<float>& v, double tau);

// Feed-forward network over a flat parameter vector. Forward is pure;
// training mutates `params` through adam_step from a single writer.
class Network {
public:
    Network() = default;

    // He-uniform init scaled by fan-in, deterministic in `seed`.
    static Network make(std::vector<int> input_shape, std::vector<LayerSpec> layers, uint64_t seed);
    // Builds with an existing parameter vector (used by the loader).
    static Network with_params(std::vector<int> input_shape, std::vector<LayerSpec> layers,
                               std::vector<float> params);

    // e.g. "conv(8,k8,s4)+relu|dense(128)+relu|dense(5)"
    std::string descriptor() const;
    static std::vector<LayerSpec> parse_descriptor(const std::string& text);

    const std::vector<int>& input_shape() const { return input_shape_; }
    int input_numel() const { return input_numel_; }
    int output_dim() const { return dims_.back().flat(); }
    int64_t param_count() const { return static_cast<int64_t>(params.size()); }
    const std::vector<LayerSpec>& layers() const { return layers_; }

    std::vector<float> params;

    // Single-sample forward; input length must equal input_numel().
    std::vector<float> forward(const std::vector<float>& input) const;
    // Batched forward, input {B, input...}; returns {B, output_dim}.
    Tensor forward_batch(const Tensor& input) const;
    Tensor forward_batch(const Tensor& input, Workspace& ws) const;

    // Reverse-mode gradients of sum_b upstream_b . output_b. Either output
    // pointer may be null. `upstream` is {B, output_dim} matching `input`.
    void backward(const Tensor& input, const Tensor& upstream,
                  std::vector<float>* grad_params, Tensor* grad_input) const;
    void backward(Workspace& ws, const Tensor& upstream,
                  std::vector<float>* grad_params, Tensor* grad_input) const;

    // Spec-facing conveniences (single upstream vector, single sample).
    std::vector<float> grad_params(const std::vector<float>& input,
                                   const std::vector<float>& upstream) const;
    std::vector<float> grad_input(const std::vector<float>& input,
                                  const std::vector<float>& upstream) const;

private:
    void compute_dims();
    std::vector<int> input_shape_;
    int input_numel_ = 0;
    std::vector<LayerSpec> layers_;
    std::vector<LayerDims> dims_;          // dims_[0] = input, dims_[i] = after layer i-1
    std::vector<int64_t> param_offsets_;   // start of each layer's params
};

// Adam with bias correction. Moments are zero-initialised lazily to the
// parameter length on the first step.
struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t step_count = 0;
    std::vector<float> m, v;

    void step(std::vector<float>& theta, const std::vector<float>& grad);
};

}  // namespace cfrl
