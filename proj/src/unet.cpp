#include "umesh/nn/unet.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"
#include "umesh/binio.hpp"
#include "umesh/digest.hpp"
#include "umesh/errors.hpp"

namespace umesh::nn {

void UNetConfig::validate() const {
    if (c < 1) throw ConfigError("network channels must be >= 1");
    if (k < 1) throw ConfigError("network steps must be >= 1");
    for (int a = 0; a < 3; ++a) {
        if (dims[a] < 1) throw ConfigError("network dims must be positive");
        if (dims[a] % (1 << k) != 0)
            throw ConfigError("network dims must be divisible by 2^k (got " +
                              std::to_string(dims[a]) + " with k=" + std::to_string(k) +
                              ")");
    }
}

FieldTensor unet_forward(const UNetModel& m, const FieldTensor& force) {
    if (force.dims != m.cfg.dims)
        throw ConfigError("force tensor dims do not match the model config");
    Vol<float> in = to_vol<float>(force);
    const float fs = m.force_scale > 0 ? static_cast<float>(1.0 / m.force_scale) : 1.0f;
    for (auto& v : in.data) v *= fs;
    Vol<float> out = unet_apply(m, in);
    const float ds = static_cast<float>(m.disp_scale);
    for (auto& v : out.data) v *= ds;
    return from_vol(out);
}

PredictResult predict(const UNetModel& m, const FieldTensor& force,
                      const std::vector<std::uint8_t>& active_mask) {
    const auto t0 = std::chrono::steady_clock::now();
    PredictResult r;
    r.displacement = unet_forward(m, force);
    const std::size_t nvox = r.displacement.voxels();
    if (active_mask.size() != nvox)
        throw ConfigError("active mask size does not match the padded grid");
    for (int c = 0; c < 3; ++c)
        for (std::size_t v = 0; v < nvox; ++v)
            if (!active_mask[v]) r.displacement.data[c * nvox + v] = 0.0f;
    r.wall_time_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
            .count();
    return r;
}

namespace {

constexpr char kModelMagic[4] = {'U', 'M', 'N', 'N'};
constexpr std::uint32_t kModelVersion = 1;

void put(std::ostream& os, Sha256Stream& h, const void* data, std::size_t len) {
    write_bytes(os, data, len);
    h.update(data, len);
}

struct Cursor {
    const char* p;
    std::size_t left;
    void read(void* dst, std::size_t n, const char* what) {
        if (n > left)
            throw FormatError(std::string("truncated model file while reading ") + what);
        std::memcpy(dst, p, n);
        p += n;
        left -= n;
    }
};

}  // namespace

void save_model(const UNetModel& m, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("cannot write model file: " + path);
    Sha256Stream h;
    put(os, h, kModelMagic, 4);
    put(os, h, &kModelVersion, 4);

    nlohmann::json j;
    j["c"] = m.cfg.c;
    j["k"] = m.cfg.k;
    j["dims"] = m.cfg.dims;
    j["force_scale"] = m.force_scale;
    j["disp_scale"] = m.disp_scale;
    j["seed"] = m.seed;
    const std::string cfg = j.dump();
    const std::uint32_t len = static_cast<std::uint32_t>(cfg.size());
    put(os, h, &len, 4);
    put(os, h, cfg.data(), cfg.size());

    for_each_tensor(m, [&](const std::vector<float>& t) {
        put(os, h, t.data(), t.size() * sizeof(float));
    });
    const Sha256 d = h.finish();
    write_bytes(os, d.data(), d.size());
    os.flush();
    if (!os) throw FormatError("failed writing model file: " + path);
}

UNetModel load_model(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open model file: " + path);
    std::stringstream buf;
    buf << is.rdbuf();
    const std::string bytes = buf.str();
    if (bytes.size() < 44) throw FormatError("truncated model file: " + path);

    Sha256 stored{};
    std::memcpy(stored.data(), bytes.data() + bytes.size() - 32, 32);
    if (sha256(bytes.data(), bytes.size() - 32) != stored)
        throw FormatError("model file digest mismatch: " + path);

    Cursor cur{bytes.data(), bytes.size() - 32};
    char magic[4];
    cur.read(magic, 4, "magic");
    if (std::memcmp(magic, kModelMagic, 4) != 0)
        throw FormatError("bad magic, not a model file: " + path);
    std::uint32_t version = 0;
    cur.read(&version, 4, "version");
    if (version != kModelVersion)
        throw FormatError("unsupported model version " + std::to_string(version));
    std::uint32_t len = 0;
    cur.read(&len, 4, "config length");
    if (len > (1u << 20)) throw FormatError("corrupt model config length");
    std::string cfg_text(len, '\0');
    cur.read(cfg_text.data(), len, "config");

    UNetConfig cfg;
    double fscale = 1.0, dscale = 1.0;
    std::uint64_t seed = 0;
    try {
        const auto j = nlohmann::json::parse(cfg_text);
        cfg.c = j.at("c").get<int>();
        cfg.k = j.at("k").get<int>();
        cfg.dims = j.at("dims").get<Index3>();
        fscale = j.at("force_scale").get<double>();
        dscale = j.at("disp_scale").get<double>();
        seed = j.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("corrupt model config: ") + e.what());
    }

    UNetModel m = make_unet<float>(cfg);
    m.force_scale = fscale;
    m.disp_scale = dscale;
    m.seed = seed;
    for_each_tensor(m, [&](std::vector<float>& t) {
        cur.read(t.data(), t.size() * sizeof(float), "weights");
    });
    if (cur.left != 0) throw FormatError("trailing bytes in model file: " + path);
    return m;
}

TrainResult train(const Dataset& ds, const std::vector<std::uint8_t>& active_mask,
                  const UNetConfig& ucfg, const TrainConfig& tcfg) {
    ucfg.validate();
    if (tcfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (tcfg.iterations < 1) throw ConfigError("iterations must be >= 1");
    if (ds.padded_dims != ucfg.dims)
        throw ConfigError("dataset padded dims do not match the network config");
    const std::size_t nvox =
        static_cast<std::size_t>(ucfg.dims[0]) * ucfg.dims[1] * ucfg.dims[2];
    if (active_mask.size() != nvox)
        throw ConfigError("active mask size does not match the padded grid");

    std::vector<int> train_idx;
    for (std::size_t i = 0; i < ds.samples.size(); ++i)
        if (!ds.samples[i].is_test()) train_idx.push_back(static_cast<int>(i));
    if (train_idx.empty()) throw ConfigError("train split is empty");

    auto [fscale, dscale] = train_normalization_scales(ds);
    if (fscale <= 0) fscale = 1.0;
    if (dscale <= 0) dscale = 1.0;

    TrainResult res;
    res.model = init_unet<float>(ucfg, tcfg.seed);
    res.model.force_scale = fscale;
    res.model.disp_scale = dscale;
    UNetModel grads = make_unet<float>(ucfg);
    UNetModel mstate = make_unet<float>(ucfg);
    UNetModel vstate = make_unet<float>(ucfg);

    // fixed tensor traversal order keeps the whole update deterministic
    std::vector<std::vector<float>*> pt, gt, mt, vt;
    for_each_tensor(res.model, [&](std::vector<float>& t) { pt.push_back(&t); });
    for_each_tensor(grads, [&](std::vector<float>& t) { gt.push_back(&t); });
    for_each_tensor(mstate, [&](std::vector<float>& t) { mt.push_back(&t); });
    for_each_tensor(vstate, [&](std::vector<float>& t) { vt.push_back(&t); });

    if (tcfg.lr_final < 0 || (tcfg.lr_final > 0 && tcfg.lr_final > tcfg.adam.lr))
        throw ConfigError("lr_final must be 0 or in (0, adam.lr]");
    if (tcfg.lr_final > 0 &&
        (tcfg.lr_decay_start < 0 || tcfg.lr_decay_start >= tcfg.iterations))
        throw ConfigError("lr_decay_start must lie in [0, iterations)");

    Rng batch_rng(derive_seed(tcfg.seed, 1));
    res.trace.reserve(static_cast<std::size_t>(tcfg.iterations));
    const auto t0 = std::chrono::steady_clock::now();
    const float fs = static_cast<float>(fscale), dsc = static_cast<float>(dscale);

    for (long it = 1; it <= tcfg.iterations; ++it) {
        for (auto* g : gt) std::fill(g->begin(), g->end(), 0.0f);
        double loss_sum = 0.0;
        for (int b = 0; b < tcfg.batch_size; ++b) {
            const int si = train_idx[batch_rng.uniform_index(train_idx.size())];
            Vol<float> in = to_vol<float>(ds.samples[si].force);
            for (auto& v : in.data) v /= fs;
            Vol<float> target = to_vol<float>(ds.samples[si].displacement);
            for (auto& v : target.data) v /= dsc;

            UNetTape<float> tape;
            Vol<float> out = unet_apply(res.model, in, &tape);
            Vol<float> gout;
            loss_sum += mse_loss(out, target, active_mask, &gout);
            for (auto& g : gout.data) g /= static_cast<float>(tcfg.batch_size);
            unet_backward(res.model, tape, gout, grads);
        }
        const double loss = loss_sum / tcfg.batch_size;
        if (!std::isfinite(loss))
            throw ConvergenceError(
                "training loss became non-finite at iteration " + std::to_string(it),
                loss);
        AdamConfig acfg = tcfg.adam;
        if (tcfg.lr_final > 0 && it > tcfg.lr_decay_start) {
            const double span =
                static_cast<double>(tcfg.iterations - tcfg.lr_decay_start);
            acfg.lr = tcfg.adam.lr * std::pow(tcfg.lr_final / tcfg.adam.lr,
                                              (it - tcfg.lr_decay_start) / span);
        }
        for (std::size_t i = 0; i < pt.size(); ++i)
            adam_step(*pt[i], *gt[i], *mt[i], *vt[i], it, acfg);

        LossPoint p;
        p.iteration = it;
        p.loss = loss;
        p.wall_time_s =
            tcfg.deterministic
                ? 0.0
                : std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                      .count();
        res.trace.push_back(p);

        if (tcfg.checkpoint_every > 0 && !tcfg.checkpoint_path.empty() &&
            it % tcfg.checkpoint_every == 0)
            save_model(res.model, tcfg.checkpoint_path);
    }
    return res;
}

void write_loss_trace(const std::string& path, const std::vector<LossPoint>& trace) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw FormatError("cannot write loss trace: " + path);
    os << "iteration,loss,wall_time_s\n";
    os << std::setprecision(17);
    for (const auto& p : trace)
        os << p.iteration << ',' << p.loss << ',' << p.wall_time_s << '\n';
    if (!os) throw FormatError("failed writing loss trace: " + path);
}

}  // namespace umesh::nn
