// Copyright (c) 2026 groupseg contributors
// SPDX-License-Identifier: Apache-2.0

#include "groupseg/net.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <utility>

#include "groupseg/errors.hpp"
#include "groupseg/head.hpp"
#include "groupseg/metrics.hpp"
#include "groupseg/parallel.hpp"
#include "groupseg/rng.hpp"

#include "json.hpp"

namespace groupseg {

namespace {

constexpr double kNormEps = 1e-5;  // instance-norm variance floor

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using MapConst = Eigen::Map<const RowMat<T>>;

// cols[(ci*k*k + ky*k + kx) * hw + y*w + x] = in(ci, y+ky-pad, x+kx-pad)
template <typename T>
void im2col(const Tensor<T>& in, int k, std::vector<T>& cols) {
    const int h = in.h, w = in.w, pad = k / 2;
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    cols.assign(static_cast<std::size_t>(in.c) * k * k * hw, T(0));
    for (int ci = 0; ci < in.c; ++ci) {
        const T* src = in.v.data() + static_cast<std::size_t>(ci) * hw;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                T* dst = cols.data() +
                         ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * hw;
                const int y0 = std::max(0, pad - ky), y1 = std::min(h, h + pad - ky);
                const int x0 = std::max(0, pad - kx), x1 = std::min(w, w + pad - kx);
                for (int y = y0; y < y1; ++y) {
                    const int sy = y + ky - pad;
                    std::memcpy(dst + static_cast<std::size_t>(y) * w + x0,
                                src + static_cast<std::size_t>(sy) * w + (x0 + kx - pad),
                                static_cast<std::size_t>(x1 - x0) * sizeof(T));
                }
            }
        }
    }
}

// Transpose of im2col: scatter-add column gradients back into image layout.
template <typename T>
void col2im_add(const std::vector<T>& cols, int k, Tensor<T>& out) {
    const int h = out.h, w = out.w, pad = k / 2;
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    for (int ci = 0; ci < out.c; ++ci) {
        T* dst = out.v.data() + static_cast<std::size_t>(ci) * hw;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const T* src = cols.data() +
                               ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * hw;
                const int y0 = std::max(0, pad - ky), y1 = std::min(h, h + pad - ky);
                const int x0 = std::max(0, pad - kx), x1 = std::min(w, w + pad - kx);
                for (int y = y0; y < y1; ++y) {
                    const int sy = y + ky - pad;
                    T* drow = dst + static_cast<std::size_t>(sy) * w + (x0 + kx - pad);
                    const T* srow = src + static_cast<std::size_t>(y) * w + x0;
                    for (int x = 0; x < x1 - x0; ++x) drow[x] += srow[x];
                }
            }
        }
    }
}

template <typename T>
Tensor<T> conv_forward(const ConvParam<T>& p, const Tensor<T>& x, std::vector<T>& scratch) {
    if (x.c != p.in) {
        throw std::invalid_argument("conv '" + p.name + "' expects " + std::to_string(p.in) +
                                    " input channels, got " + std::to_string(x.c));
    }
    const std::size_t hw = static_cast<std::size_t>(x.h) * x.w;
    Tensor<T> y(p.out, x.h, x.w);
    const T* cols_data = x.v.data();
    if (p.k != 1) {
        im2col(x, p.k, scratch);
        cols_data = scratch.data();
    }
    const Eigen::Index kk = static_cast<Eigen::Index>(p.in) * p.k * p.k;
    MapConst<T> W(p.w.data(), p.out, kk);
    MapConst<T> C(cols_data, kk, static_cast<Eigen::Index>(hw));
    MapMat<T> Y(y.v.data(), p.out, static_cast<Eigen::Index>(hw));
    Y.noalias() = W * C;
    for (int co = 0; co < p.out; ++co) {
        Y.row(co).array() += p.b[static_cast<std::size_t>(co)];
    }
    return y;
}

// dW += dy cols^T; db += rowsum(dy); returns dx = col2im(W^T dy).
template <typename T>
Tensor<T> conv_backward(const ConvParam<T>& p, const Tensor<T>& x, const Tensor<T>& dy,
                        typename GradSet<T>::Entry& g, std::vector<T>& scratch,
                        std::vector<T>& scratch2) {
    const std::size_t hw = static_cast<std::size_t>(x.h) * x.w;
    const Eigen::Index kk = static_cast<Eigen::Index>(p.in) * p.k * p.k;
    const T* cols_data = x.v.data();
    if (p.k != 1) {
        im2col(x, p.k, scratch);
        cols_data = scratch.data();
    }
    MapConst<T> C(cols_data, kk, static_cast<Eigen::Index>(hw));
    MapConst<T> dY(dy.v.data(), p.out, static_cast<Eigen::Index>(hw));
    MapMat<T> dW(g.w.data(), p.out, kk);
    dW.noalias() += dY * C.transpose();
    for (int co = 0; co < p.out; ++co) {
        g.b[static_cast<std::size_t>(co)] += dY.row(co).sum();
    }

    Tensor<T> dx(p.in, x.h, x.w);
    MapConst<T> W(p.w.data(), p.out, kk);
    if (p.k == 1) {
        MapMat<T> dX(dx.v.data(), kk, static_cast<Eigen::Index>(hw));
        dX.noalias() = W.transpose() * dY;
    } else {
        scratch2.assign(static_cast<std::size_t>(kk) * hw, T(0));
        MapMat<T> dC(scratch2.data(), kk, static_cast<Eigen::Index>(hw));
        dC.noalias() = W.transpose() * dY;
        col2im_add(scratch2, p.k, dx);
    }
    return dx;
}

// conv -> instance norm (no affine) -> ReLU; caches only when asked.
template <typename T>
Tensor<T> block_forward(const ConvParam<T>& p, const Tensor<T>& x, BlockCache<T>* cache,
                        std::vector<T>& scratch) {
    Tensor<T> z = conv_forward(p, x, scratch);
    if (cache) {
        cache->conv_in = x;
        cache->inv_std.assign(static_cast<std::size_t>(z.c), T(0));
    }
    const std::size_t hw = z.plane_size();
    for (int c = 0; c < z.c; ++c) {
        T* plane = z.v.data() + static_cast<std::size_t>(c) * hw;
        T mean = T(0);
        for (std::size_t i = 0; i < hw; ++i) mean += plane[i];
        mean /= static_cast<T>(hw);
        T var = T(0);
        for (std::size_t i = 0; i < hw; ++i) {
            const T d = plane[i] - mean;
            var += d * d;
        }
        var /= static_cast<T>(hw);
        const T inv_std = T(1) / std::sqrt(var + static_cast<T>(kNormEps));
        if (cache) cache->inv_std[static_cast<std::size_t>(c)] = inv_std;
        for (std::size_t i = 0; i < hw; ++i) plane[i] = (plane[i] - mean) * inv_std;
    }
    if (cache) cache->normalized = z;  // pre-ReLU
    for (T& v : z.v) v = std::max(T(0), v);
    return z;
}

template <typename T>
Tensor<T> block_backward(const ConvParam<T>& p, const BlockCache<T>& cache, const Tensor<T>& dy,
                         typename GradSet<T>::Entry& g, std::vector<T>& scratch,
                         std::vector<T>& scratch2) {
    const std::size_t hw = static_cast<std::size_t>(dy.h) * dy.w;
    Tensor<T> dz(dy.c, dy.h, dy.w);
    for (int c = 0; c < dy.c; ++c) {
        const T* xhat = cache.normalized.v.data() + static_cast<std::size_t>(c) * hw;
        const T* dyp = dy.v.data() + static_cast<std::size_t>(c) * hw;
        T* dzp = dz.v.data() + static_cast<std::size_t>(c) * hw;
        // ReLU mask first, then the affine-free norm backward:
        //   dz = inv_std * (dxh - mean(dxh) - xhat * mean(dxh . xhat))
        T m1 = T(0), m2 = T(0);
        for (std::size_t i = 0; i < hw; ++i) {
            const T dxh = xhat[i] > T(0) ? dyp[i] : T(0);
            dzp[i] = dxh;
            m1 += dxh;
            m2 += dxh * xhat[i];
        }
        m1 /= static_cast<T>(hw);
        m2 /= static_cast<T>(hw);
        const T inv_std = cache.inv_std[static_cast<std::size_t>(c)];
        for (std::size_t i = 0; i < hw; ++i) {
            dzp[i] = inv_std * (dzp[i] - m1 - xhat[i] * m2);
        }
    }
    return conv_backward(p, cache.conv_in, dz, g, scratch, scratch2);
}

template <typename T>
Tensor<T> maxpool2(const Tensor<T>& x, PoolCache& cache) {
    const int oh = x.h / 2, ow = x.w / 2;
    Tensor<T> y(x.c, oh, ow);
    cache.c = x.c;
    cache.oh = oh;
    cache.ow = ow;
    cache.argmax.assign(static_cast<std::size_t>(x.c) * oh * ow, 0);
    for (int c = 0; c < x.c; ++c) {
        const T* in = x.v.data() + static_cast<std::size_t>(c) * x.h * x.w;
        T* out = y.v.data() + static_cast<std::size_t>(c) * oh * ow;
        std::uint8_t* am = cache.argmax.data() + static_cast<std::size_t>(c) * oh * ow;
        for (int yo = 0; yo < oh; ++yo) {
            for (int xo = 0; xo < ow; ++xo) {
                T best = in[static_cast<std::size_t>(2 * yo) * x.w + 2 * xo];
                std::uint8_t code = 0;
                for (std::uint8_t pos = 1; pos < 4; ++pos) {
                    const T v = in[static_cast<std::size_t>(2 * yo + pos / 2) * x.w + 2 * xo +
                                   pos % 2];
                    if (v > best) {  // ties keep the first position
                        best = v;
                        code = pos;
                    }
                }
                out[static_cast<std::size_t>(yo) * ow + xo] = best;
                am[static_cast<std::size_t>(yo) * ow + xo] = code;
            }
        }
    }
    return y;
}

template <typename T>
Tensor<T> maxpool2_backward(const Tensor<T>& dy, const PoolCache& cache) {
    Tensor<T> dx(cache.c, cache.oh * 2, cache.ow * 2);
    const std::size_t ohw = static_cast<std::size_t>(cache.oh) * cache.ow;
    for (int c = 0; c < cache.c; ++c) {
        const T* dyp = dy.v.data() + static_cast<std::size_t>(c) * ohw;
        const std::uint8_t* am = cache.argmax.data() + static_cast<std::size_t>(c) * ohw;
        T* dxp = dx.v.data() + static_cast<std::size_t>(c) * dx.h * dx.w;
        for (int yo = 0; yo < cache.oh; ++yo) {
            for (int xo = 0; xo < cache.ow; ++xo) {
                const std::size_t i = static_cast<std::size_t>(yo) * cache.ow + xo;
                const std::uint8_t code = am[i];
                dxp[static_cast<std::size_t>(2 * yo + code / 2) * dx.w + 2 * xo + code % 2] +=
                    dyp[i];
            }
        }
    }
    return dx;
}

template <typename T>
Tensor<T> upsample2(const Tensor<T>& x) {
    Tensor<T> y(x.c, x.h * 2, x.w * 2);
    for (int c = 0; c < x.c; ++c) {
        const T* in = x.v.data() + static_cast<std::size_t>(c) * x.h * x.w;
        T* out = y.v.data() + static_cast<std::size_t>(c) * y.h * y.w;
        for (int yo = 0; yo < y.h; ++yo) {
            const T* row = in + static_cast<std::size_t>(yo / 2) * x.w;
            for (int xo = 0; xo < y.w; ++xo) {
                out[static_cast<std::size_t>(yo) * y.w + xo] = row[xo / 2];
            }
        }
    }
    return y;
}

template <typename T>
Tensor<T> upsample2_backward(const Tensor<T>& dy) {
    Tensor<T> dx(dy.c, dy.h / 2, dy.w / 2);
    for (int c = 0; c < dy.c; ++c) {
        const T* in = dy.v.data() + static_cast<std::size_t>(c) * dy.h * dy.w;
        T* out = dx.v.data() + static_cast<std::size_t>(c) * dx.h * dx.w;
        for (int yo = 0; yo < dy.h; ++yo) {
            for (int xo = 0; xo < dy.w; ++xo) {
                out[static_cast<std::size_t>(yo / 2) * dx.w + xo / 2] +=
                    in[static_cast<std::size_t>(yo) * dy.w + xo];
            }
        }
    }
    return dx;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    Tensor<T> y(a.c + b.c, a.h, a.w);
    std::copy(a.v.begin(), a.v.end(), y.v.begin());
    std::copy(b.v.begin(), b.v.end(), y.v.begin() + static_cast<std::ptrdiff_t>(a.v.size()));
    return y;
}

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001B3ull;
    }
    return h;
}

struct ConvShape {
    std::string name;
    int in = 0, out = 0, k = 3;
};

// Single source of truth for layer names and shapes; build_model and the
// checkpoint loader both walk this plan.
std::vector<ConvShape> conv_plan(const ModelConfig& cfg, int head_channels) {
    std::vector<ConvShape> plan;
    const auto width_at = [&](int l) { return cfg.width << l; };
    for (int l = 0; l < cfg.levels; ++l) {
        const int in = l == 0 ? cfg.in_channels : width_at(l - 1);
        plan.push_back({"enc" + std::to_string(l) + "a", in, width_at(l), 3});
        plan.push_back({"enc" + std::to_string(l) + "b", width_at(l), width_at(l), 3});
    }
    for (int l = cfg.levels - 2; l >= 0; --l) {
        plan.push_back({"up" + std::to_string(l), width_at(l + 1), width_at(l), 3});
        plan.push_back({"dec" + std::to_string(l) + "a", 2 * width_at(l), width_at(l), 3});
        plan.push_back({"dec" + std::to_string(l) + "b", width_at(l), width_at(l), 3});
    }
    plan.push_back({"head", cfg.width, head_channels, 1});
    return plan;
}

void validate_model_config(const ModelConfig& c) {
    if (c.in_channels < 1 || c.width < 1 || c.levels < 1) {
        throw ConfigError("model config needs positive in_channels, width, and levels");
    }
}

// --- little-endian checkpoint plumbing ---

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

void put_f32_array(std::vector<std::uint8_t>& out, const std::vector<float>& xs) {
    for (float x : xs) {
        std::uint32_t bits;
        std::memcpy(&bits, &x, 4);
        put_u32(out, bits);
    }
}

struct ByteReader {
    const std::vector<std::uint8_t>& buf;
    std::size_t pos = 0;
    std::string origin;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw FormatError(origin + ": truncated checkpoint");
    }
    std::uint16_t u16() {
        need(2);
        const auto v = static_cast<std::uint16_t>(buf[pos] | (buf[pos + 1] << 8));
        pos += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    void f32_array(std::vector<float>& xs, std::size_t n) {
        xs.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            const std::uint32_t bits = u32();
            std::memcpy(&xs[i], &bits, 4);
        }
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
        pos += n;
        return s;
    }
};

constexpr char kCheckpointMagic[4] = {'G', 'S', 'S', 'M'};
constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

int head_channels_for(HeadMode mode, const GroupSchema& schema) {
    return mode == HeadMode::Flat ? schema.num_categories() : schema.activation_count();
}

template <typename T>
Model<T> build_model(const ModelConfig& config, const GroupSchema& schema, std::uint64_t seed) {
    validate_model_config(config);
    Model<T> m;
    m.config = config;
    m.head_channels = head_channels_for(config.head, schema);
    m.schema_fingerprint = schema.fingerprint();

    Rng rng = Rng::stream(seed, 0);
    for (const ConvShape& s : conv_plan(config, m.head_channels)) {
        ConvParam<T> p;
        p.name = s.name;
        p.in = s.in;
        p.out = s.out;
        p.k = s.k;
        p.w.assign(static_cast<std::size_t>(s.out) * s.in * s.k * s.k, T(0));
        p.b.assign(static_cast<std::size_t>(s.out), T(0));
        if (s.name != "head") {  // head stays zero and consumes no draws
            const double limit = std::sqrt(3.0 / (static_cast<double>(s.in) * s.k * s.k));
            for (T& w : p.w) w = static_cast<T>(rng.uniform(-limit, limit));
        }
        m.convs.push_back(std::move(p));
    }
    return m;
}

template <typename T>
std::size_t parameter_count(const Model<T>& model) {
    std::size_t n = 0;
    for (const auto& c : model.convs) n += c.w.size() + c.b.size();
    return n;
}

template <typename T>
std::uint64_t params_fingerprint(const Model<T>& model) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& c : model.convs) {
        h = fnv1a(h, c.w.data(), c.w.size() * sizeof(T));
        h = fnv1a(h, c.b.data(), c.b.size() * sizeof(T));
    }
    return h;
}

template <typename T>
void GradSet<T>::add(const GradSet& other) {
    if (other.convs.size() != convs.size()) {
        throw std::invalid_argument("gradient sets have different block counts");
    }
    for (std::size_t i = 0; i < convs.size(); ++i) {
        auto& a = convs[i];
        const auto& b = other.convs[i];
        for (std::size_t j = 0; j < a.w.size(); ++j) a.w[j] += b.w[j];
        for (std::size_t j = 0; j < a.b.size(); ++j) a.b[j] += b.b[j];
    }
}

template <typename T>
void GradSet<T>::scale(T s) {
    for (auto& e : convs) {
        for (T& x : e.w) x *= s;
        for (T& x : e.b) x *= s;
    }
}

template <typename T>
bool GradSet<T>::finite() const {
    for (const auto& e : convs) {
        for (T x : e.w) {
            if (!std::isfinite(x)) return false;
        }
        for (T x : e.b) {
            if (!std::isfinite(x)) return false;
        }
    }
    return true;
}

template <typename T>
GradSet<T> zero_grads(const Model<T>& model) {
    GradSet<T> g;
    g.convs.resize(model.convs.size());
    for (std::size_t i = 0; i < model.convs.size(); ++i) {
        g.convs[i].w.assign(model.convs[i].w.size(), T(0));
        g.convs[i].b.assign(model.convs[i].b.size(), T(0));
    }
    return g;
}

template <typename T>
Tensor<T> forward(const Model<T>& model, const Tensor<T>& input, Workspace<T>* ws) {
    const ModelConfig& cfg = model.config;
    const int levels = cfg.levels;
    if (input.c != cfg.in_channels) {
        throw std::invalid_argument("forward expects " + std::to_string(cfg.in_channels) +
                                    " input channels, got " + std::to_string(input.c));
    }
    const int div = 1 << levels;
    if (input.h <= 0 || input.w <= 0 || input.h % div != 0 || input.w % div != 0) {
        throw std::invalid_argument("input " + std::to_string(input.h) + "x" +
                                    std::to_string(input.w) + " is not divisible by 2^levels (" +
                                    std::to_string(div) + ")");
    }
    if (static_cast<int>(model.convs.size()) != 5 * levels - 2) {
        throw std::invalid_argument("model block count does not match its config");
    }

    if (ws) {
        ws->ready = false;
        ws->enc.resize(static_cast<std::size_t>(2 * levels));
        ws->pools.resize(static_cast<std::size_t>(levels - 1));
        ws->up.resize(static_cast<std::size_t>(levels - 1));
        ws->deca.resize(static_cast<std::size_t>(levels - 1));
        ws->decb.resize(static_cast<std::size_t>(levels - 1));
        ws->skip_channels.assign(static_cast<std::size_t>(levels - 1), 0);
    }

    std::vector<T> scratch;
    std::vector<Tensor<T>> skips(static_cast<std::size_t>(levels));
    Tensor<T> x = input;
    for (int l = 0; l < levels; ++l) {
        x = block_forward(model.convs[static_cast<std::size_t>(2 * l)], x,
                          ws ? &ws->enc[static_cast<std::size_t>(2 * l)] : nullptr, scratch);
        x = block_forward(model.convs[static_cast<std::size_t>(2 * l + 1)], x,
                          ws ? &ws->enc[static_cast<std::size_t>(2 * l + 1)] : nullptr, scratch);
        if (l < levels - 1) {
            skips[static_cast<std::size_t>(l)] = x;
            PoolCache local;
            x = maxpool2(x, ws ? ws->pools[static_cast<std::size_t>(l)] : local);
        }
    }

    // Decoder stages run deepest first; stage s works at resolution level
    // levels-2-s.
    for (int l = levels - 2; l >= 0; --l) {
        const std::size_t s = static_cast<std::size_t>(levels - 2 - l);
        const std::size_t base = static_cast<std::size_t>(2 * levels) + 3 * s;
        Tensor<T> u = upsample2(x);
        u = block_forward(model.convs[base], u, ws ? &ws->up[s] : nullptr, scratch);
        const Tensor<T>& skip = skips[static_cast<std::size_t>(l)];
        if (ws) ws->skip_channels[s] = skip.c;
        Tensor<T> cat = concat_channels(skip, u);
        cat = block_forward(model.convs[base + 1], cat, ws ? &ws->deca[s] : nullptr, scratch);
        x = block_forward(model.convs[base + 2], cat, ws ? &ws->decb[s] : nullptr, scratch);
    }

    if (ws) ws->head_in = x;
    Tensor<T> logits = conv_forward(model.convs.back(), x, scratch);
    if (ws) ws->ready = true;
    return logits;
}

template <typename T>
void backward(const Model<T>& model, const Workspace<T>& ws, const Tensor<T>& grad_logits,
              GradSet<T>& grads) {
    if (!ws.ready) throw std::logic_error("backward called without a cached forward pass");
    if (grads.convs.size() != model.convs.size()) {
        throw std::logic_error("gradient set does not match the model");
    }
    if (grad_logits.c != model.head_channels || grad_logits.h != ws.head_in.h ||
        grad_logits.w != ws.head_in.w) {
        throw std::logic_error("upstream gradient shape does not match the cached forward");
    }
    const int levels = model.config.levels;
    const std::size_t head_idx = model.convs.size() - 1;
    std::vector<T> scratch, scratch2;

    Tensor<T> d = conv_backward(model.convs[head_idx], ws.head_in, grad_logits,
                                grads.convs[head_idx], scratch, scratch2);

    // Decoder in reverse (shallowest stage first), banking each skip
    // gradient for the matching encoder level.
    std::vector<Tensor<T>> dskip(static_cast<std::size_t>(levels - 1));
    for (int l = 0; l <= levels - 2; ++l) {
        const std::size_t s = static_cast<std::size_t>(levels - 2 - l);
        const std::size_t base = static_cast<std::size_t>(2 * levels) + 3 * s;
        Tensor<T> dd = block_backward(model.convs[base + 2], ws.decb[s], d,
                                      grads.convs[base + 2], scratch, scratch2);
        Tensor<T> dcat = block_backward(model.convs[base + 1], ws.deca[s], dd,
                                        grads.convs[base + 1], scratch, scratch2);
        const int sc = ws.skip_channels[s];
        Tensor<T> ds(sc, dcat.h, dcat.w);
        Tensor<T> du(dcat.c - sc, dcat.h, dcat.w);
        std::copy(dcat.v.begin(), dcat.v.begin() + static_cast<std::ptrdiff_t>(ds.v.size()),
                  ds.v.begin());
        std::copy(dcat.v.begin() + static_cast<std::ptrdiff_t>(ds.v.size()), dcat.v.end(),
                  du.v.begin());
        dskip[static_cast<std::size_t>(l)] = std::move(ds);
        Tensor<T> dup =
            block_backward(model.convs[base], ws.up[s], du, grads.convs[base], scratch, scratch2);
        d = upsample2_backward(dup);
    }

    for (int l = levels - 1; l >= 0; --l) {
        if (l < levels - 1) {
            Tensor<T> dun = maxpool2_backward(d, ws.pools[static_cast<std::size_t>(l)]);
            const Tensor<T>& extra = dskip[static_cast<std::size_t>(l)];
            for (std::size_t i = 0; i < dun.v.size(); ++i) dun.v[i] += extra.v[i];
            d = std::move(dun);
        }
        d = block_backward(model.convs[static_cast<std::size_t>(2 * l + 1)],
                           ws.enc[static_cast<std::size_t>(2 * l + 1)], d,
                           grads.convs[static_cast<std::size_t>(2 * l + 1)], scratch, scratch2);
        d = block_backward(model.convs[static_cast<std::size_t>(2 * l)],
                           ws.enc[static_cast<std::size_t>(2 * l)], d,
                           grads.convs[static_cast<std::size_t>(2 * l)], scratch, scratch2);
    }
}

double lr_at_epoch(const TrainConfig& config, int epoch) {
    if (config.lr_step_epochs < 1) throw ConfigError("lr_step_epochs must be at least 1");
    if (epoch < 0) throw ConfigError("epoch index must be non-negative");
    return config.lr * std::pow(config.lr_decay, epoch / config.lr_step_epochs);
}

template <typename T>
AdamState<T> zero_adam(const Model<T>& model) {
    AdamState<T> s;
    s.convs.resize(model.convs.size());
    for (std::size_t i = 0; i < model.convs.size(); ++i) {
        s.convs[i].mw.assign(model.convs[i].w.size(), T(0));
        s.convs[i].vw.assign(model.convs[i].w.size(), T(0));
        s.convs[i].mb.assign(model.convs[i].b.size(), T(0));
        s.convs[i].vb.assign(model.convs[i].b.size(), T(0));
    }
    return s;
}

template <typename T>
void adam_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v,
                 std::uint64_t step, T lr, T beta1, T beta2, T eps, T weight_decay) {
    if (param.size() != grad.size() || param.size() != m.size() || param.size() != v.size()) {
        throw std::invalid_argument("adam_update arrays have mismatched sizes");
    }
    if (step == 0) throw std::invalid_argument("adam step index is 1-based");
    const T bc1 =
        T(1) - static_cast<T>(std::pow(static_cast<double>(beta1), static_cast<double>(step)));
    const T bc2 =
        T(1) - static_cast<T>(std::pow(static_cast<double>(beta2), static_cast<double>(step)));
    for (std::size_t i = 0; i < param.size(); ++i) {
        const T g = grad[i];
        m[i] = beta1 * m[i] + (T(1) - beta1) * g;
        v[i] = beta2 * v[i] + (T(1) - beta2) * g * g;
        const T mhat = m[i] / bc1;
        const T vhat = v[i] / bc2;
        param[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * param[i]);
    }
}

template <typename T>
void adam_step(Model<T>& model, const GradSet<T>& grads, AdamState<T>& state,
               const TrainConfig& config, int epoch) {
    if (grads.convs.size() != model.convs.size() || state.convs.size() != model.convs.size()) {
        throw std::logic_error("optimizer state does not match the model");
    }
    if (!grads.finite()) {
        throw DivergenceError("non-finite gradient at epoch " + std::to_string(epoch));
    }
    state.step += 1;
    const T lr = static_cast<T>(lr_at_epoch(config, epoch));
    const T b1 = static_cast<T>(config.beta1);
    const T b2 = static_cast<T>(config.beta2);
    const T eps = static_cast<T>(config.eps);
    const T wd = static_cast<T>(config.weight_decay);
    for (std::size_t i = 0; i < model.convs.size(); ++i) {
        adam_update<T>(std::span<T>(model.convs[i].w), std::span<const T>(grads.convs[i].w),
                       std::span<T>(state.convs[i].mw), std::span<T>(state.convs[i].vw),
                       state.step, lr, b1, b2, eps, wd);
        adam_update<T>(std::span<T>(model.convs[i].b), std::span<const T>(grads.convs[i].b),
                       std::span<T>(state.convs[i].mb), std::span<T>(state.convs[i].vb),
                       state.step, lr, b1, b2, eps, wd);
    }
}

template <typename T>
Tensor<T> input_from_sample(const Sample& sample, float depth_scale) {
    if (!(depth_scale > 0.0f)) {
        throw std::invalid_argument("depth_scale must be positive");
    }
    Tensor<T> in(1, sample.height(), sample.width());
    for (std::size_t i = 0; i < in.v.size(); ++i) {
        in.v[i] = static_cast<T>(sample.depth.v[i] / depth_scale);
    }
    return in;
}

template <typename T>
Tensor<T> infer(const Model<T>& model, const Sample& sample, float depth_scale) {
    return forward(model, input_from_sample<T>(sample, depth_scale));
}

void save_checkpoint(const std::string& path, const Model<float>& model,
                     const AdamState<float>& adam, int epochs_completed) {
    std::vector<std::uint8_t> buf;
    buf.insert(buf.end(), kCheckpointMagic, kCheckpointMagic + 4);
    put_u32(buf, kCheckpointVersion);
    put_u32(buf, model.config.head == HeadMode::Flat ? 0u : 1u);
    put_u32(buf, static_cast<std::uint32_t>(model.config.in_channels));
    put_u32(buf, static_cast<std::uint32_t>(model.config.width));
    put_u32(buf, static_cast<std::uint32_t>(model.config.levels));
    put_u32(buf, static_cast<std::uint32_t>(model.head_channels));
    put_u64(buf, model.schema_fingerprint);
    put_u32(buf, static_cast<std::uint32_t>(epochs_completed));
    put_u64(buf, adam.step);
    put_u32(buf, static_cast<std::uint32_t>(model.convs.size()));
    for (const auto& c : model.convs) {
        put_u16(buf, static_cast<std::uint16_t>(c.name.size()));
        buf.insert(buf.end(), c.name.begin(), c.name.end());
        put_u32(buf, static_cast<std::uint32_t>(c.out));
        put_u32(buf, static_cast<std::uint32_t>(c.in));
        put_u32(buf, static_cast<std::uint32_t>(c.k));
        put_f32_array(buf, c.w);
        put_f32_array(buf, c.b);
    }
    for (const auto& e : adam.convs) {
        put_f32_array(buf, e.mw);
        put_f32_array(buf, e.vw);
        put_f32_array(buf, e.mb);
        put_f32_array(buf, e.vb);
    }

    // tmp + rename keeps the previous checkpoint intact if we die mid-write
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open '" + tmp + "' for writing");
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size()));
        if (!out) throw std::runtime_error("failed writing '" + tmp + "'");
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open checkpoint '" + path + "'");
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
    ByteReader r{buf, 0, path};

    if (r.str(4) != std::string(kCheckpointMagic, 4)) {
        throw FormatError(path + ": not a GSSM checkpoint");
    }
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));
    }
    const std::uint32_t head_mode = r.u32();
    if (head_mode > 1) throw FormatError(path + ": invalid head mode");

    Checkpoint ck;
    ck.model.config.head = head_mode == 0 ? HeadMode::Flat : HeadMode::Grouped;
    ck.model.config.in_channels = static_cast<int>(r.u32());
    ck.model.config.width = static_cast<int>(r.u32());
    ck.model.config.levels = static_cast<int>(r.u32());
    ck.model.head_channels = static_cast<int>(r.u32());
    ck.model.schema_fingerprint = r.u64();
    ck.epochs_completed = static_cast<int>(r.u32());
    ck.adam.step = r.u64();
    if (ck.model.config.in_channels < 1 || ck.model.config.width < 1 ||
        ck.model.config.levels < 1 || ck.model.head_channels < 1) {
        throw FormatError(path + ": invalid model dimensions in header");
    }

    const std::vector<ConvShape> plan = conv_plan(ck.model.config, ck.model.head_channels);
    const std::uint32_t n_convs = r.u32();
    if (n_convs != plan.size()) {
        throw FormatError(path + ": expected " + std::to_string(plan.size()) +
                          " parameter blocks, found " + std::to_string(n_convs));
    }
    for (const ConvShape& s : plan) {
        ConvParam<float> p;
        const std::uint16_t name_len = r.u16();
        p.name = r.str(name_len);
        p.out = static_cast<int>(r.u32());
        p.in = static_cast<int>(r.u32());
        p.k = static_cast<int>(r.u32());
        if (p.name != s.name || p.out != s.out || p.in != s.in || p.k != s.k) {
            throw FormatError(path + ": parameter block '" + p.name +
                              "' does not match the expected layer '" + s.name + "'");
        }
        r.f32_array(p.w, static_cast<std::size_t>(p.out) * p.in * p.k * p.k);
        r.f32_array(p.b, static_cast<std::size_t>(p.out));
        ck.model.convs.push_back(std::move(p));
    }
    ck.adam.convs.resize(ck.model.convs.size());
    for (std::size_t i = 0; i < ck.model.convs.size(); ++i) {
        const std::size_t nw = ck.model.convs[i].w.size();
        const std::size_t nb = ck.model.convs[i].b.size();
        r.f32_array(ck.adam.convs[i].mw, nw);
        r.f32_array(ck.adam.convs[i].vw, nw);
        r.f32_array(ck.adam.convs[i].mb, nb);
        r.f32_array(ck.adam.convs[i].vb, nb);
    }
    if (r.pos != buf.size()) {
        throw FormatError(path + ": trailing bytes after checkpoint payload");
    }
    return ck;
}

TrainResult train(const Dataset& dataset, const ModelConfig& model_config,
                  const TrainConfig& train_config, const std::string& out_dir, bool resume) {
    validate_model_config(model_config);
    if (train_config.epochs < 1) throw ConfigError("epochs must be at least 1");
    if (train_config.batch < 1) throw ConfigError("batch must be at least 1");
    if (train_config.lr_step_epochs < 1) throw ConfigError("lr_step_epochs must be at least 1");
    if (dataset.train.empty()) throw ConfigError("training split is empty");

    const GroupSchema& schema = dataset.schema;
    const int head_channels = head_channels_for(model_config.head, schema);
    const float depth_scale = dataset.depth_scale;

    std::filesystem::create_directories(out_dir);
    const std::string ckpt_path = out_dir + "/checkpoint.gssm";
    const std::string history_path = out_dir + "/history.jsonl";

    Model<float> model;
    AdamState<float> adam;
    int start_epoch = 0;
    if (resume) {
        Checkpoint ck = load_checkpoint(ckpt_path);
        if (ck.model.config.head != model_config.head ||
            ck.model.config.in_channels != model_config.in_channels ||
            ck.model.config.width != model_config.width ||
            ck.model.config.levels != model_config.levels ||
            ck.model.head_channels != head_channels) {
            throw ConfigError("checkpoint '" + ckpt_path +
                              "' was trained with a different model configuration");
        }
        if (ck.model.schema_fingerprint != schema.fingerprint()) {
            throw ConfigError("checkpoint '" + ckpt_path +
                              "' was trained against a different schema (fingerprint mismatch)");
        }
        model = std::move(ck.model);
        adam = std::move(ck.adam);
        start_epoch = ck.epochs_completed;
    } else {
        model = build_model<float>(model_config, schema, train_config.seed);
        adam = zero_adam(model);
    }

    // Inputs and loss targets stay fixed for the whole run; precompute once.
    const std::size_t n_train = dataset.train.size();
    std::vector<Tensor<float>> train_inputs(n_train);
    std::vector<RegionSets> train_regions;
    if (model_config.head == HeadMode::Grouped) train_regions.resize(n_train);
    parallel_for(n_train, train_config.threads, [&](std::size_t i) {
        train_inputs[i] = input_from_sample<float>(dataset.train[i], depth_scale);
        if (model_config.head == HeadMode::Grouped) {
            train_regions[i] = regions_from_sample(dataset.train[i], schema);
        }
    });
    const std::size_t n_test = dataset.test.size();
    std::vector<Tensor<float>> test_inputs(n_test);
    parallel_for(n_test, train_config.threads, [&](std::size_t i) {
        test_inputs[i] = input_from_sample<float>(dataset.test[i], depth_scale);
    });

    std::ofstream history(history_path, resume ? (std::ios::out | std::ios::app) : std::ios::out);
    if (!history) throw std::runtime_error("cannot open '" + history_path + "' for writing");

    TrainResult result;
    const float lambda = static_cast<float>(train_config.lambda);

    for (int epoch = start_epoch; epoch < train_config.epochs; ++epoch) {
        std::vector<std::size_t> order(n_train);
        for (std::size_t i = 0; i < n_train; ++i) order[i] = i;
        Rng shuffle_rng = Rng::stream(train_config.seed, 1 + static_cast<std::uint64_t>(epoch));
        shuffle_rng.shuffle(order);

        std::vector<double> epoch_losses(n_train, 0.0);
        for (std::size_t batch_start = 0; batch_start < n_train;
             batch_start += static_cast<std::size_t>(train_config.batch)) {
            const std::size_t bn = std::min<std::size_t>(
                static_cast<std::size_t>(train_config.batch), n_train - batch_start);
            std::vector<GradSet<float>> slot_grads(bn);
            std::vector<double> slot_loss(bn, 0.0);
            parallel_for(bn, train_config.threads, [&](std::size_t k) {
                const std::size_t idx = order[batch_start + k];
                Workspace<float> ws;
                Tensor<float> logits = forward(model, train_inputs[idx], &ws);
                LossValue<float> lv =
                    model_config.head == HeadMode::Flat
                        ? loss_ce(logits, dataset.train[idx].visible, schema)
                        : loss_grouped(logits, train_regions[idx], schema, lambda);
                slot_grads[k] = zero_grads(model);
                backward(model, ws, lv.grad, slot_grads[k]);
                slot_loss[k] = static_cast<double>(lv.loss);
            });

            // Per-sample gradients merge in slot order, so the batch update
            // is identical for any thread count.
            GradSet<float> total = std::move(slot_grads[0]);
            for (std::size_t k = 1; k < bn; ++k) total.add(slot_grads[k]);
            total.scale(1.0f / static_cast<float>(bn));
            for (std::size_t k = 0; k < bn; ++k) {
                if (!std::isfinite(slot_loss[k])) {
                    throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch));
                }
                epoch_losses[batch_start + k] = slot_loss[k];
            }
            adam_step(model, total, adam, train_config, epoch);
        }

        // Validation: fraction of test pixels whose visible-category argmax
        // is right.
        std::vector<std::uint64_t> slot_correct(n_test, 0);
        parallel_for(n_test, train_config.threads, [&](std::size_t i) {
            Tensor<float> logits = forward(model, test_inputs[i]);
            LabelMap pred = model_config.head == HeadMode::Flat
                                ? derive_vis_from_flat(logits)
                                : derive_vis_from_gss(grouped_softmax(logits, schema), schema);
            std::uint64_t correct = 0;
            const LabelMap& gt = dataset.test[i].visible;
            for (std::size_t px = 0; px < gt.size(); ++px) {
                if (pred[px] == gt[px]) ++correct;
            }
            slot_correct[i] = correct;
        });
        std::uint64_t total_correct = 0, total_pixels = 0;
        for (std::size_t i = 0; i < n_test; ++i) {
            total_correct += slot_correct[i];
            total_pixels += dataset.test[i].visible.size();
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr_at_epoch(train_config, epoch);
        rec.train_loss = pairwise_sum(epoch_losses) / static_cast<double>(n_train);
        rec.val_pa_vis = total_pixels == 0 ? 0.0
                                           : static_cast<double>(total_correct) /
                                                 static_cast<double>(total_pixels);
        result.history.push_back(rec);

        nlohmann::ordered_json line;
        line["epoch"] = rec.epoch;
        line["lr"] = rec.lr;
        line["train_loss"] = rec.train_loss;
        line["val_pa_vis"] = rec.val_pa_vis;
        history << line.dump() << "\n";
        history.flush();

        save_checkpoint(ckpt_path, model, adam, epoch + 1);
    }

    result.model = std::move(model);
    return result;
}

template struct GradSet<float>;
template struct GradSet<double>;

template Model<float> build_model(const ModelConfig&, const GroupSchema&, std::uint64_t);
template Model<double> build_model(const ModelConfig&, const GroupSchema&, std::uint64_t);
template std::size_t parameter_count(const Model<float>&);
template std::size_t parameter_count(const Model<double>&);
template std::uint64_t params_fingerprint(const Model<float>&);
template std::uint64_t params_fingerprint(const Model<double>&);
template GradSet<float> zero_grads(const Model<float>&);
template GradSet<double> zero_grads(const Model<double>&);
template Tensor<float> forward(const Model<float>&, const Tensor<float>&, Workspace<float>*);
template Tensor<double> forward(const Model<double>&, const Tensor<double>&, Workspace<double>*);
template void backward(const Model<float>&, const Workspace<float>&, const Tensor<float>&,
                       GradSet<float>&);
template void backward(const Model<double>&, const Workspace<double>&, const Tensor<double>&,
                       GradSet<double>&);
template AdamState<float> zero_adam(const Model<float>&);
template AdamState<double> zero_adam(const Model<double>&);
template void adam_update(std::span<float>, std::span<const float>, std::span<float>,
                          std::span<float>, std::uint64_t, float, float, float, float, float);
template void adam_update(std::span<double>, std::span<const double>, std::span<double>,
                          std::span<double>, std::uint64_t, double, double, double, double,
                          double);
template void adam_step(Model<float>&, const GradSet<float>&, AdamState<float>&,
                        const TrainConfig&, int);
template void adam_step(Model<double>&, const GradSet<double>&, AdamState<double>&,
                        const TrainConfig&, int);
template Tensor<float> input_from_sample(const Sample&, float);
template Tensor<double> input_from_sample(const Sample&, float);
template Tensor<float> infer(const Model<float>&, const Sample&, float);
template Tensor<double> infer(const Model<double>&, const Sample&, float);

}  // namespace groupseg
