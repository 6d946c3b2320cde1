#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "umesh/dataset.hpp"
#include "umesh/nn/adam.hpp"
#include "umesh/nn/layers.hpp"
#include "umesh/nn/vol.hpp"
#include "umesh/rng.hpp"

namespace umesh::nn {

struct UNetConfig {
    int c = 8;             // first-layer feature count
    int k = 2;             // encoder depth (pooling halvings)
    Index3 dims{0, 0, 0};  // padded grid dims (px, py, pz)

    void validate() const;
    /// Bottleneck feature count c * 2^k.
    int feature_space_size() const { return c << k; }
};

/// Channel plan: encoder stage i (1-based) outputs c*2^(i-1); pooling keeps
/// channels; the two bottleneck convolutions reach c*2^k; each decoder stage
/// halves channels with a transposed convolution, doubles them back via the
/// skip concatenation, and reduces with two convolutions; a final linear
/// 1x1x1 convolution maps to 3 output channels.
template <typename T>
struct UNetModelT {
    UNetConfig cfg;
    double force_scale = 1.0;
    double disp_scale = 1.0;
    std::uint64_t seed = 0;

    std::vector<ConvParam<T>> enc;  // 2 per stage
    ConvParam<T> bott1, bott2;
    std::vector<ConvParam<T>> up;   // 1 transposed conv per decoder stage
    std::vector<ConvParam<T>> dec;  // 2 per stage
    ConvParam<T> final1;
};

using UNetModel = UNetModelT<float>;

/// Applies f to every parameter tensor in the serialization order: encoder
/// stage convs, bottleneck pair, then per decoder stage (tconv, conv, conv),
/// final 1x1x1; weights before biases within a layer.
template <typename M, typename F>
void for_each_tensor(M& m, F&& f) {
    auto layer = [&](auto& p) {
        f(p.w);
        f(p.b);
    };
    for (auto& p : m.enc) layer(p);
    layer(m.bott1);
    layer(m.bott2);
    for (std::size_t j = 0; j < m.up.size(); ++j) {
        layer(m.up[j]);
        layer(m.dec[2 * j]);
        layer(m.dec[2 * j + 1]);
    }
    layer(m.final1);
}

/// Allocates the layer stack for the config (all parameters zero).
template <typename T>
UNetModelT<T> make_unet(const UNetConfig& cfg) {
    cfg.validate();
    UNetModelT<T> m;
    m.cfg = cfg;
    for (int i = 1; i <= cfg.k; ++i) {
        const int cin = i == 1 ? 3 : cfg.c << (i - 2);
        const int cout = cfg.c << (i - 1);
        m.enc.push_back(ConvParam<T>::conv(cin, cout, 3));
        m.enc.push_back(ConvParam<T>::conv(cout, cout, 3));
    }
    const int cbot = cfg.c << cfg.k;
    m.bott1 = ConvParam<T>::conv(cbot / 2, cbot, 3);
    m.bott2 = ConvParam<T>::conv(cbot, cbot, 3);
    for (int j = 1; j <= cfg.k; ++j) {
        const int chi = cfg.c << (cfg.k - j + 1);
        const int clo = cfg.c << (cfg.k - j);
        m.up.push_back(ConvParam<T>::tconv(chi, clo));
        m.dec.push_back(ConvParam<T>::conv(2 * clo, clo, 3));
        m.dec.push_back(ConvParam<T>::conv(clo, clo, 3));
    }
    m.final1 = ConvParam<T>::conv(cfg.c, 3, 1);
    return m;
}

/// He (fan-in) normal initialization for all weights, zero biases. The draw
/// order is fixed, so the parameters depend only on the seed.
template <typename T>
UNetModelT<T> init_unet(const UNetConfig& cfg, std::uint64_t seed) {
    UNetModelT<T> m = make_unet<T>(cfg);
    m.seed = seed;
    Rng rng(seed);
    auto init = [&](auto& p) {
        const int fan_in = p.ks == 2 ? p.ci : p.ci * p.ks * p.ks * p.ks;
        const double stddev = std::sqrt(2.0 / fan_in);
        for (auto& w : p.w) w = static_cast<T>(rng.normal() * stddev);
    };
    for (auto& p : m.enc) init(p);
    init(m.bott1);
    init(m.bott2);
    for (std::size_t j = 0; j < m.up.size(); ++j) {
        init(m.up[j]);
        init(m.dec[2 * j]);
        init(m.dec[2 * j + 1]);
    }
    init(m.final1);
    return m;
}

/// Intermediate activations needed for the exact backward pass.
template <typename T>
struct UNetTape {
    Vol<T> input;
    std::vector<Vol<T>> enc_a;   // post-ReLU first conv, per encoder stage
    std::vector<Vol<T>> enc_b;   // post-ReLU second conv (skip source)
    std::vector<Vol<T>> pooled;  // pooling output, per encoder stage
    std::vector<std::vector<std::size_t>> argmax;
    Vol<T> bott_a, bott_b;
    std::vector<Vol<T>> up_out;  // tconv output, per decoder stage
    std::vector<Vol<T>> cat;     // concatenated skip input
    std::vector<Vol<T>> dec_a;   // post-ReLU first conv
    std::vector<Vol<T>> dec_b;   // post-ReLU second conv
};

/// Raw network application on an already normalized volume. Records the tape
/// when given one.
template <typename T>
Vol<T> unet_apply(const UNetModelT<T>& m, const Vol<T>& input,
                  UNetTape<T>* tape = nullptr) {
    if (input.c != 3 || input.x != m.cfg.dims[0] || input.y != m.cfg.dims[1] ||
        input.z != m.cfg.dims[2])
        throw ConfigError("network input shape does not match the model config");
    const int k = m.cfg.k;
    std::vector<Vol<T>> own;
    std::vector<const Vol<T>*> skip;
    own.reserve(k);
    if (tape) {
        *tape = UNetTape<T>{};
        tape->input = input;
        tape->enc_a.reserve(k);
        tape->enc_b.reserve(k);
        tape->pooled.reserve(k);
        tape->argmax.reserve(k);
        tape->up_out.reserve(k);
        tape->cat.reserve(k);
        tape->dec_a.reserve(k);
        tape->dec_b.reserve(k);
    }
    Vol<T> cur = input;
    for (int i = 0; i < k; ++i) {
        Vol<T> a, b, pooled;
        std::vector<std::size_t> arg;
        conv3d_forward(cur, m.enc[2 * i], a);
        relu_forward(a);
        conv3d_forward(a, m.enc[2 * i + 1], b);
        relu_forward(b);
        maxpool3d_forward(b, pooled, arg);
        if (tape) {
            tape->enc_a.push_back(std::move(a));
            tape->enc_b.push_back(std::move(b));
            skip.push_back(&tape->enc_b.back());
            tape->argmax.push_back(std::move(arg));
            tape->pooled.push_back(pooled);
        } else {
            own.push_back(std::move(b));
            skip.push_back(&own.back());
        }
        cur = std::move(pooled);
    }
    Vol<T> ba, bb;
    conv3d_forward(cur, m.bott1, ba);
    relu_forward(ba);
    conv3d_forward(ba, m.bott2, bb);
    relu_forward(bb);
    if (tape) {
        tape->bott_a = ba;
        tape->bott_b = bb;
    }
    cur = std::move(bb);
    for (int j = 0; j < k; ++j) {
        Vol<T> upv;
        tconv3d_forward(cur, m.up[j], upv);
        const Vol<T>& s = *skip[k - 1 - j];
        if (upv.x != s.x || upv.y != s.y || upv.z != s.z)
            throw ConfigError("skip junction shape mismatch");
        Vol<T> cat = concat_channels(upv, s);
        Vol<T> a, b;
        conv3d_forward(cat, m.dec[2 * j], a);
        relu_forward(a);
        conv3d_forward(a, m.dec[2 * j + 1], b);
        relu_forward(b);
        if (tape) {
            tape->up_out.push_back(std::move(upv));
            tape->cat.push_back(std::move(cat));
            tape->dec_a.push_back(a);
            tape->dec_b.push_back(b);
        }
        cur = std::move(b);
    }
    Vol<T> out;
    conv3d_forward(cur, m.final1, out);
    return out;
}

/// Accumulates parameter gradients into `grads` (a zero model of the same
/// shape, e.g. from make_unet) and optionally returns the input gradient.
template <typename T>
void unet_backward(const UNetModelT<T>& m, const UNetTape<T>& tape,
                   const Vol<T>& grad_out, UNetModelT<T>& grads,
                   Vol<T>* grad_input = nullptr) {
    const int k = m.cfg.k;
    // skip_grads[i] collects the decoder-side gradient flowing into encoder
    // stage i's post-ReLU output
    std::vector<Vol<T>> skip_grads(k);

    Vol<T> g;
    conv3d_backward(tape.dec_b.back(), m.final1, grad_out, g, grads.final1.w,
                    grads.final1.b);
    for (int j = k - 1; j >= 0; --j) {
        relu_backward(tape.dec_b[j], g);
        Vol<T> g_a;
        conv3d_backward(tape.dec_a[j], m.dec[2 * j + 1], g, g_a, grads.dec[2 * j + 1].w,
                        grads.dec[2 * j + 1].b);
        relu_backward(tape.dec_a[j], g_a);
        Vol<T> g_cat;
        conv3d_backward(tape.cat[j], m.dec[2 * j], g_a, g_cat, grads.dec[2 * j].w,
                        grads.dec[2 * j].b);

        // split the concatenation gradient into the tconv and skip halves
        const Vol<T>& upv = tape.up_out[j];
        Vol<T> g_up(upv.c, upv.x, upv.y, upv.z);
        std::copy(g_cat.data.begin(),
                  g_cat.data.begin() + static_cast<std::ptrdiff_t>(g_up.size()),
                  g_up.data.begin());
        Vol<T> g_skip(g_cat.c - upv.c, upv.x, upv.y, upv.z);
        std::copy(g_cat.data.begin() + static_cast<std::ptrdiff_t>(g_up.size()),
                  g_cat.data.end(), g_skip.data.begin());
        skip_grads[k - 1 - j] = std::move(g_skip);

        const Vol<T>& up_in = j == 0 ? tape.bott_b : tape.dec_b[j - 1];
        Vol<T> g_below;
        tconv3d_backward(up_in, m.up[j], g_up, g_below, grads.up[j].w, grads.up[j].b);
        g = std::move(g_below);
    }

    relu_backward(tape.bott_b, g);
    Vol<T> g_ba;
    conv3d_backward(tape.bott_a, m.bott2, g, g_ba, grads.bott2.w, grads.bott2.b);
    relu_backward(tape.bott_a, g_ba);
    Vol<T> g_pool;
    conv3d_backward(tape.pooled.back(), m.bott1, g_ba, g_pool, grads.bott1.w,
                    grads.bott1.b);
    g = std::move(g_pool);

    for (int i = k - 1; i >= 0; --i) {
        Vol<T> g_b(tape.enc_b[i].c, tape.enc_b[i].x, tape.enc_b[i].y, tape.enc_b[i].z);
        maxpool3d_backward(g, tape.argmax[i], g_b);
        const Vol<T>& g_skip = skip_grads[i];
        for (std::size_t e = 0; e < g_b.size(); ++e) g_b.data[e] += g_skip.data[e];
        relu_backward(tape.enc_b[i], g_b);
        Vol<T> g_a;
        conv3d_backward(tape.enc_a[i], m.enc[2 * i + 1], g_b, g_a, grads.enc[2 * i + 1].w,
                        grads.enc[2 * i + 1].b);
        relu_backward(tape.enc_a[i], g_a);
        const Vol<T>& in = i == 0 ? tape.input : tape.pooled[i - 1];
        Vol<T> g_in;
        conv3d_backward(in, m.enc[2 * i], g_a, g_in, grads.enc[2 * i].w,
                        grads.enc[2 * i].b);
        g = std::move(g_in);
    }
    if (grad_input) *grad_input = std::move(g);
}

/// Normalized inference on a force tensor: scales by 1/force_scale, applies
/// the network, rescales by disp_scale. Output shape equals input shape.
FieldTensor unet_forward(const UNetModel& m, const FieldTensor& force);

struct PredictResult {
    FieldTensor displacement;
    double wall_time_ms = 0.0;
};

/// unet_forward plus monotonic-clock timing; entries outside the active
/// voxel mask are zeroed before return.
PredictResult predict(const UNetModel& m, const FieldTensor& force,
                      const std::vector<std::uint8_t>& active_mask);

/// Binary model file: magic UMNN, version, JSON config (c, k, dims,
/// normalization scalars, seed), float32 tensors in for_each_tensor order,
/// SHA-256 trailer over everything before it.
void save_model(const UNetModel& m, const std::string& path);
UNetModel load_model(const std::string& path);

struct TrainConfig {
    int batch_size = 4;
    long iterations = 1;
    AdamConfig adam;
    double lr_final = 0.0;      // > 0: geometric decay from adam.lr to this value
    long lr_decay_start = 0;    // iterations run at adam.lr before decay begins
    std::uint64_t seed = 0;
    long checkpoint_every = 0;  // 0 disables checkpoints
    std::string checkpoint_path;
    bool deterministic = false;  // zero wall times in the trace
};

struct LossPoint {
    long iteration = 0;
    double loss = 0.0;
    double wall_time_s = 0.0;
};

struct TrainResult {
    UNetModel model;
    std::vector<LossPoint> trace;
};

/// Seeded SGD on the train split: uniform-with-replacement batches, masked
/// MSE in normalized units, one Adam step per iteration. Throws
/// ConvergenceError if the loss stops being finite.
TrainResult train(const Dataset& ds, const std::vector<std::uint8_t>& active_mask,
                  const UNetConfig& ucfg, const TrainConfig& tcfg);

/// CSV trace: iteration,loss,wall_time_s.
void write_loss_trace(const std::string& path, const std::vector<LossPoint>& trace);

}  // namespace umesh::nn
