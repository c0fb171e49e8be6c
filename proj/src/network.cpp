#include "cfrl/network.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <random>
#include <sstream>

namespace cfrl {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

std::vector<double> softmax_t(const std::vector<double>& v, double tau) {
    if (tau <= 0.0) throw std::invalid_argument("softmax temperature must be > 0");
    if (v.empty()) throw std::invalid_argument("softmax of empty vector");
    double mx = v[0];
    for (double x : v) {
        if (!std::isfinite(x)) throw std::invalid_argument("softmax input must be finite");
        mx = std::max(mx, x);
    }
    std::vector<double> out(v.size());
    double sum = 0.0;
    for (size_t i = 0; i < v.size(); ++i) {
        out[i] = std::exp((v[i] - mx) / tau);
        sum += out[i];
    }
    for (double& x : out) x /= sum;
    return out;
}

std::vector<double> softmax_t(const std::vector<float>& v, double tau) {
    return softmax_t(std::vector<double>(v.begin(), v.end()), tau);
}

// ---------------------------------------------------------------------------
// construction

static int64_t layer_param_count(const LayerSpec& l, const LayerDims& in) {
    if (l.kind == LayerKind::Conv2D)
        return static_cast<int64_t>(l.kernel) * l.kernel * in.c * l.units + l.units;
    return static_cast<int64_t>(in.flat()) * l.units + l.units;
}

void Network::compute_dims() {
    if (input_shape_.empty()) throw std::invalid_argument("empty network input shape");
    LayerDims d;
    if (input_shape_.size() == 3) {
        d = {input_shape_[0], input_shape_[1], input_shape_[2]};
    } else if (input_shape_.size() == 1) {
        d = {1, 1, input_shape_[0]};
    } else {
        throw std::invalid_argument("input shape must be {h,w,c} or {n}, got " + shape_str(input_shape_));
    }
    input_numel_ = d.flat();
    dims_.clear();
    dims_.push_back(d);
    param_offsets_.clear();
    int64_t off = 0;
    for (const auto& l : layers_) {
        param_offsets_.push_back(off);
        if (l.units <= 0) throw std::invalid_argument("layer width must be positive");
        if (l.kind == LayerKind::Conv2D) {
            if (l.kernel <= 0 || l.stride <= 0)
                throw std::invalid_argument("conv kernel and stride must be positive");
            if (d.h < l.kernel || d.w < l.kernel)
                throw std::invalid_argument("conv kernel " + std::to_string(l.kernel) +
                                            " does not fit input " + std::to_string(d.h) + "x" +
                                            std::to_string(d.w));
            d = {(d.h - l.kernel) / l.stride + 1, (d.w - l.kernel) / l.stride + 1, l.units};
        } else {
            d = {1, 1, l.units};
        }
        off += layer_param_count(l, dims_.back());
        dims_.push_back(d);
    }
    if (layers_.empty()) throw std::invalid_argument("network needs at least one layer");
    params.resize(off, 0.0f);
}

Network Network::make(std::vector<int> input_shape, std::vector<LayerSpec> layers, uint64_t seed) {
    Network net;
    net.input_shape_ = std::move(input_shape);
    net.layers_ = std::move(layers);
    net.compute_dims();
    std::mt19937_64 rng(seed);
    for (size_t i = 0; i < net.layers_.size(); ++i) {
        const auto& l = net.layers_[i];
        const auto& in = net.dims_[i];
        int64_t fan_in = l.kind == LayerKind::Conv2D
                             ? static_cast<int64_t>(l.kernel) * l.kernel * in.c
                             : in.flat();
        float limit = std::sqrt(6.0f / static_cast<float>(fan_in));
        std::uniform_real_distribution<float> dist(-limit, limit);
        int64_t w_count = layer_param_count(l, in) - l.units;  // biases stay zero
        float* w = net.params.data() + net.param_offsets_[i];
        for (int64_t j = 0; j < w_count; ++j) w[j] = dist(rng);
    }
    return net;
}

Network Network::with_params(std::vector<int> input_shape, std::vector<LayerSpec> layers,
                             std::vector<float> params) {
    Network net;
    net.input_shape_ = std::move(input_shape);
    net.layers_ = std::move(layers);
    net.compute_dims();
    if (params.size() != net.params.size())
        throw std::invalid_argument("parameter vector length " + std::to_string(params.size()) +
                                    " does not match architecture (" +
                                    std::to_string(net.params.size()) + ")");
    net.params = std::move(params);
    return net;
}

std::string Network::descriptor() const {
    std::ostringstream out;
    for (size_t i = 0; i < layers_.size(); ++i) {
        const auto& l = layers_[i];
        if (i) out << "|";
        if (l.kind == LayerKind::Conv2D)
            out << "conv(" << l.units << ",k" << l.kernel << ",s" << l.stride << ")";
        else
            out << "dense(" << l.units << ")";
        if (l.relu) out << "+relu";
    }
    return out.str();
}

std::vector<LayerSpec> Network::parse_descriptor(const std::string& text) {
    std::vector<LayerSpec> out;
    std::istringstream in(text);
    std::string part;
    while (std::getline(in, part, '|')) {
        LayerSpec l;
        size_t plus = part.find("+relu");
        l.relu = plus != std::string::npos;
        std::string body = l.relu ? part.substr(0, plus) : part;
        int f = 0, k = 0, s = 0;
        if (std::sscanf(body.c_str(), "conv(%d,k%d,s%d)", &f, &k, &s) == 3) {
            l.kind = LayerKind::Conv2D;
            l.units = f;
            l.kernel = k;
            l.stride = s;
        } else if (std::sscanf(body.c_str(), "dense(%d)", &f) == 1) {
            l.kind = LayerKind::Dense;
            l.units = f;
        } else {
            throw std::invalid_argument("bad layer descriptor: " + part);
        }
        out.push_back(l);
    }
    if (out.empty()) throw std::invalid_argument("empty architecture descriptor");
    return out;
}

// ---------------------------------------------------------------------------
// forward

static void im2col(const float* in, int B, int H, int W, int C, int K, int S,
                   int OH, int OW, float* col) {
    // col: (B*OH*OW) x (K*K*C)
    const int row_len = K * K * C;
    for (int b = 0; b < B; ++b) {
        for (int oy = 0; oy < OH; ++oy) {
            for (int ox = 0; ox < OW; ++ox) {
                float* dst = col + (static_cast<int64_t>((b * OH + oy) * OW + ox)) * row_len;
                for (int ky = 0; ky < K; ++ky) {
                    const float* src = in + ((static_cast<int64_t>(b) * H + (oy * S + ky)) * W +
                                             (ox * S)) * C;
                    std::memcpy(dst, src, sizeof(float) * K * C);
                    dst += K * C;
                }
            }
        }
    }
}

static void col2im(const float* dcol, int B, int H, int W, int C, int K, int S,
                   int OH, int OW, float* din) {
    const int row_len = K * K * C;
    std::fill(din, din + static_cast<int64_t>(B) * H * W * C, 0.0f);
    for (int b = 0; b < B; ++b) {
        for (int oy = 0; oy < OH; ++oy) {
            for (int ox = 0; ox < OW; ++ox) {
                const float* src = dcol + (static_cast<int64_t>((b * OH + oy) * OW + ox)) * row_len;
                for (int ky = 0; ky < K; ++ky) {
                    float* dst = din + ((static_cast<int64_t>(b) * H + (oy * S + ky)) * W +
                                        (ox * S)) * C;
                    for (int i = 0; i < K * C; ++i) dst[i] += src[i];
                    src += K * C;
                }
            }
        }
    }
}

Tensor Network::forward_batch(const Tensor& input) const {
    Workspace ws;
    return forward_batch(input, ws);
}

Tensor Network::forward_batch(const Tensor& input, Workspace& ws) const {
    if (input.shape.empty()) throw std::invalid_argument("empty input tensor");
    int B = input.shape[0];
    if (input.numel() != static_cast<int64_t>(B) * input_numel_)
        throw std::invalid_argument("input shape " + shape_str(input.shape) +
                                    " does not match network input " + shape_str(input_shape_));
    ws.batch = B;
    ws.act.resize(layers_.size() + 1);
    ws.cols.resize(layers_.size());
    ws.act[0] = input;

    for (size_t i = 0; i < layers_.size(); ++i) {
        const auto& l = layers_[i];
        const auto& din = dims_[i];
        const auto& dout = dims_[i + 1];
        const float* theta = params.data() + param_offsets_[i];
        Tensor& out = ws.act[i + 1];
        out.shape = {B, dout.h, dout.w, dout.c};
        out.data.resize(static_cast<int64_t>(B) * dout.flat());

        if (l.kind == LayerKind::Conv2D) {
            const int K = l.kernel, S = l.stride, F = l.units;
            const int row_len = K * K * din.c;
            const int64_t rows = static_cast<int64_t>(B) * dout.h * dout.w;
            Tensor& col = ws.cols[i];
            col.shape = {static_cast<int>(rows), row_len};
            col.data.resize(rows * row_len);
            im2col(ws.act[i].ptr(), B, din.h, din.w, din.c, K, S, dout.h, dout.w, col.ptr());
            CMapMat cm(col.ptr(), rows, row_len);
            CMapMat wm(theta, row_len, F);
            MapMat om(out.ptr(), rows, F);
            om.noalias() = cm * wm;
            Eigen::Map<const Eigen::VectorXf> bias(theta + static_cast<int64_t>(row_len) * F, F);
            om.rowwise() += bias.transpose();
        } else {
            const int N = din.flat(), O = l.units;
            CMapMat im(ws.act[i].ptr(), B, N);
            CMapMat wm(theta, N, O);
            MapMat om(out.ptr(), B, O);
            om.noalias() = im * wm;
            Eigen::Map<const Eigen::VectorXf> bias(theta + static_cast<int64_t>(N) * O, O);
            om.rowwise() += bias.transpose();
        }
        if (l.relu)
            for (float& x : out.data) x = x > 0.0f ? x : 0.0f;
    }
    Tensor result = ws.act.back();
    result.shape = {B, output_dim()};
    return result;
}

std::vector<float> Network::forward(const std::vector<float>& input) const {
    if (static_cast<int>(input.size()) != input_numel_)
        throw std::invalid_argument("input length " + std::to_string(input.size()) +
                                    " does not match network input " + std::to_string(input_numel_));
    Tensor t({1, input_numel_}, input);
    return forward_batch(t).data;
}

// ---------------------------------------------------------------------------
// backward

void Network::backward(const Tensor& input, const Tensor& upstream,
                       std::vector<float>* grad_params, Tensor* grad_input) const {
    Workspace ws;
    forward_batch(input, ws);
    backward(ws, upstream, grad_params, grad_input);
}

void Network::backward(Workspace& ws, const Tensor& upstream,
                       std::vector<float>* grad_params, Tensor* grad_input) const {
    const int B = ws.batch;
    if (upstream.numel() != static_cast<int64_t>(B) * output_dim())
        throw std::invalid_argument("upstream shape " + shape_str(upstream.shape) +
                                    " does not match output dim " + std::to_string(output_dim()));
    if (grad_params) {
        grad_params->assign(params.size(), 0.0f);
    }
    Tensor delta = upstream;  // dL/d(layer output), reshaped as we descend
    const bool need_input_grad = grad_input != nullptr;

    for (int i = static_cast<int>(layers_.size()) - 1; i >= 0; --i) {
        const auto& l = layers_[i];
        const auto& din = dims_[i];
        const auto& dout = dims_[i + 1];
        const float* theta = params.data() + param_offsets_[i];
        const Tensor& post = ws.act[i + 1];

        if (l.relu) {
            for (int64_t j = 0; j < delta.numel(); ++j)
                if (post.data[j] <= 0.0f) delta.data[j] = 0.0f;
        }
        const bool want_din = need_input_grad || i > 0;

        if (l.kind == LayerKind::Conv2D) {
            const int K = l.kernel, F = l.units;
            const int row_len = K * K * din.c;
            const int64_t rows = static_cast<int64_t>(B) * dout.h * dout.w;
            CMapMat dm(delta.ptr(), rows, F);
            if (grad_params) {
                const Tensor& col = ws.cols[i];
                CMapMat cm(col.ptr(), rows, row_len);
                MapMat gw(grad_params->data() + param_offsets_[i], row_len, F);
                gw.noalias() = cm.transpose() * dm;
                Eigen::Map<Eigen::VectorXf> gb(
                    grad_params->data() + param_offsets_[i] + static_cast<int64_t>(row_len) * F, F);
                gb = dm.colwise().sum().transpose();
            }
            if (want_din) {
                CMapMat wm(theta, row_len, F);
                Tensor dcol({static_cast<int>(rows), row_len});
                MapMat dcm(dcol.ptr(), rows, row_len);
                dcm.noalias() = dm * wm.transpose();
                Tensor next({B, din.h, din.w, din.c});
                col2im(dcol.ptr(), B, din.h, din.w, din.c, K, l.stride, dout.h, dout.w, next.ptr());
                delta = std::move(next);
            }
        } else {
            const int N = din.flat(), O = l.units;
            CMapMat dm(delta.ptr(), B, O);
            if (grad_params) {
                CMapMat im(ws.act[i].ptr(), B, N);
                MapMat gw(grad_params->data() + param_offsets_[i], N, O);
                gw.noalias() = im.transpose() * dm;
                Eigen::Map<Eigen::VectorXf> gb(
                    grad_params->data() + param_offsets_[i] + static_cast<int64_t>(N) * O, O);
                gb = dm.colwise().sum().transpose();
            }
            if (want_din) {
                CMapMat wm(theta, N, O);
                Tensor next({B, din.h, din.w, din.c});
                MapMat nm(next.ptr(), B, N);
                nm.noalias() = dm * wm.transpose();
                delta = std::move(next);
            }
        }
    }
    if (grad_input) *grad_input = std::move(delta);
}

std::vector<float> Network::grad_params(const std::vector<float>& input,
                                        const std::vector<float>& upstream) const {
    Tensor in({1, input_numel_}, input);
    Tensor up({1, output_dim()}, upstream);
    std::vector<float> g;
    backward(in, up, &g, nullptr);
    return g;
}

std::vector<float> Network::grad_input(const std::vector<float>& input,
                                       const std::vector<float>& upstream) const {
    Tensor in({1, input_numel_}, input);
    Tensor up({1, output_dim()}, upstream);
    Tensor g;
    backward(in, up, nullptr, &g);
    return g.data;
}

// ---------------------------------------------------------------------------
// Adam

void AdamState::step(std::vector<float>& theta, const std::vector<float>& grad) {
    if (theta.size() != grad.size())
        throw std::invalid_argument("adam: parameter/gradient length mismatch");
    if (!all_finite(grad)) throw std::invalid_argument("adam: non-finite gradient");
    if (m.empty()) {
        m.assign(theta.size(), 0.0f);
        v.assign(theta.size(), 0.0f);
    }
    if (m.size() != theta.size())
        throw std::invalid_argument("adam: moment length does not match parameters");
    ++step_count;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
    for (size_t i = 0; i < theta.size(); ++i) {
        double g = grad[i];
        double mi = beta1 * m[i] + (1.0 - beta1) * g;
        double vi = beta2 * v[i] + (1.0 - beta2) * g * g;
        m[i] = static_cast<float>(mi);
        v[i] = static_cast<float>(vi);
        double mhat = mi / bc1;
        double vhat = vi / bc2;
        theta[i] = static_cast<float>(theta[i] - lr * mhat / (std::sqrt(vhat) + eps));
    }
}

}  // namespace cfrl
