#include "vclr/model.hpp"

#include <cmath>
#include <optional>
#include <random>
#include <set>
#include <string>

#include "vclr/error.hpp"
#include "vclr/nd/ops.hpp"

namespace vclr::model {

using nd::Tensor;

void DetectorConfig::validate() const {
    if (canvas <= 0 || patch <= 0 || canvas % patch != 0)
        throw UsageError("detector: canvas " + std::to_string(canvas) + " not divisible by patch " + std::to_string(patch));
    if (dim <= 0 || heads <= 0 || dim % heads != 0)
        throw UsageError("detector: dim " + std::to_string(dim) + " not divisible by heads " + std::to_string(heads));
    if (channels <= 0 || queries <= 0 || mlp_ratio <= 0 || encoder_blocks < 0 || decoder_blocks < 0)
        throw UsageError("detector: sizes must be positive");
}

nlohmann::json to_json(const DetectorConfig& c) {
    return {{"canvas", c.canvas},       {"channels", c.channels},
            {"patch", c.patch},         {"dim", c.dim},
            {"heads", c.heads},         {"encoder_blocks", c.encoder_blocks},
            {"decoder_blocks", c.decoder_blocks}, {"mlp_ratio", c.mlp_ratio},
            {"queries", c.queries}};
}

DetectorConfig detector_config_from_json(const nlohmann::json& j) {
    DetectorConfig c;
    if (!j.is_object()) throw UsageError("model config must be an object");
    for (auto& [k, v] : j.items()) {
        if (!v.is_number_integer()) throw UsageError("model." + k + " must be an integer");
        const int x = v.get<int>();
        if (k == "canvas") c.canvas = x;
        else if (k == "channels") c.channels = x;
        else if (k == "patch") c.patch = x;
        else if (k == "dim") c.dim = x;
        else if (k == "heads") c.heads = x;
        else if (k == "encoder_blocks") c.encoder_blocks = x;
        else if (k == "decoder_blocks") c.decoder_blocks = x;
        else if (k == "mlp_ratio") c.mlp_ratio = x;
        else if (k == "queries") c.queries = x;
        else throw UsageError("unknown key model." + k);
    }
    c.validate();
    return c;
}

namespace {

std::size_t sz(int v) { return static_cast<std::size_t>(v); }

class Initializer {
   public:
    Initializer(nd::ParamStore& store, std::uint64_t seed) : store_(store), rng_(seed) {}

    void weight(const std::string& name, std::size_t in, std::size_t out) {
        std::vector<double> v(in * out);
        for (auto& x : v) x = truncated();
        store_.add(name, Tensor::from({in, out}, std::move(v)));
    }
    void linear(const std::string& name, std::size_t in, std::size_t out) {
        weight(name + ".w", in, out);
        store_.add(name + ".b", Tensor::zeros({out}));
    }
    void norm(const std::string& name, std::size_t d) {
        store_.add(name + ".g", Tensor::full({d}, 1.0));
        store_.add(name + ".b", Tensor::zeros({d}));
    }
    void normal(const std::string& name, nd::Shape shape) {
        std::vector<double> v(nd::numel(shape));
        std::normal_distribution<double> n(0.0, 0.02);
        for (auto& x : v) x = n(rng_);
        store_.add(name, Tensor::from(std::move(shape), std::move(v)));
    }

   private:
    double truncated() {
        std::normal_distribution<double> n(0.0, 1.0);
        double z;
        do z = n(rng_);
        while (std::abs(z) > 2.0);
        return 0.02 * z;
    }

    nd::ParamStore& store_;
    std::mt19937_64 rng_;
};

struct Ctx {
    const nd::ParamStore& p;
    const DetectorConfig& cfg;
    const Tensor& get(const std::string& name) const { return p.get(name); }

    Tensor linear(const Tensor& x, const std::string& name) const {
        return nd::matmul(x, get(name + ".w")) + get(name + ".b");
    }
    Tensor norm(const Tensor& x, const std::string& name) const {
        return nd::layer_norm(x, get(name + ".g"), get(name + ".b"));
    }
    Tensor mlp(const Tensor& x, const std::string& name) const {
        return linear(nd::relu(linear(x, name + ".fc1")), name + ".fc2");
    }

    // Multi-head softmax attention over already projected q [n,d], k and v [m,d].
    Tensor attend(const Tensor& q, const Tensor& k, const Tensor& v) const {
        const std::size_t d = sz(cfg.dim), dh = d / sz(cfg.heads);
        const double s = 1.0 / std::sqrt(static_cast<double>(dh));
        std::vector<Tensor> outs;
        for (std::size_t h = 0; h < sz(cfg.heads); ++h) {
            auto qh = nd::slice(q, 1, h * dh, (h + 1) * dh);
            auto kh = nd::slice(k, 1, h * dh, (h + 1) * dh);
            auto vh = nd::slice(v, 1, h * dh, (h + 1) * dh);
            auto a = nd::softmax(nd::matmul(qh, nd::transpose(kh)) * s, 1);
            outs.push_back(nd::matmul(a, vh));
        }
        return outs.size() == 1 ? outs[0] : nd::concat(outs, 1);
    }

    Tensor self_attention(const Tensor& x, const std::string& name) const {
        const std::size_t d = sz(cfg.dim);
        auto qkv = linear(x, name + ".qkv");
        auto o = attend(nd::slice(qkv, 1, 0, d), nd::slice(qkv, 1, d, 2 * d), nd::slice(qkv, 1, 2 * d, 3 * d));
        return linear(o, name + ".out");
    }

    Tensor cross_attention(const Tensor& x, const Tensor& memory, const std::string& name) const {
        const std::size_t d = sz(cfg.dim);
        auto q = linear(x, name + ".q");
        auto kv = linear(memory, name + ".kv");
        auto o = attend(q, nd::slice(kv, 1, 0, d), nd::slice(kv, 1, d, 2 * d));
        return linear(o, name + ".out");
    }
};

Tensor patchify(const Tensor& image, const DetectorConfig& cfg) {
    const std::size_t C = sz(cfg.canvas), ch = sz(cfg.channels), P = sz(cfg.patch), G = C / P;
    if (image.rank() != 3 || image.dim(0) != C || image.dim(1) != C || image.dim(2) != ch)
        throw ShapeError("forward: image must be [" + std::to_string(C) + "," + std::to_string(C) + "," +
                         std::to_string(ch) + "], got " + nd::shape_str(image.shape()));
    const auto src = image.data();
    const std::size_t row = P * P * ch;
    std::vector<double> out(G * G * row);
    for (std::size_t gy = 0; gy < G; ++gy)
        for (std::size_t gx = 0; gx < G; ++gx) {
            double* dst = out.data() + (gy * G + gx) * row;
            for (std::size_t py = 0; py < P; ++py) {
                const double* s = src.data() + ((gy * P + py) * C + gx * P) * ch;
                std::copy(s, s + P * ch, dst + py * P * ch);
            }
        }
    return Tensor::from({G * G, row}, std::move(out));
}

}  // namespace

nd::ParamStore init_params(const DetectorConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const std::size_t d = sz(cfg.dim), hid = d * sz(cfg.mlp_ratio), T = sz(cfg.tokens());
    const std::size_t pin = sz(cfg.patch) * sz(cfg.patch) * sz(cfg.channels);
    nd::ParamStore s;
    Initializer init(s, seed);
    init.linear("patch", pin, d);
    init.normal("pos", {T, d});
    for (int i = 0; i < cfg.encoder_blocks; ++i) {
        const std::string b = "enc." + std::to_string(i);
        init.norm(b + ".ln1", d);
        init.linear(b + ".attn.qkv", d, 3 * d);
        init.linear(b + ".attn.out", d, d);
        init.norm(b + ".ln2", d);
        init.linear(b + ".mlp.fc1", d, hid);
        init.linear(b + ".mlp.fc2", hid, d);
    }
    init.norm("enc.ln", d);
    init.linear("pixel", d, d);
    init.normal("query", {sz(cfg.queries), d});
    for (int i = 0; i < cfg.decoder_blocks; ++i) {
        const std::string b = "dec." + std::to_string(i);
        init.norm(b + ".ln1", d);
        init.linear(b + ".self.qkv", d, 3 * d);
        init.linear(b + ".self.out", d, d);
        init.norm(b + ".ln2", d);
        init.linear(b + ".cross.q", d, d);
        init.linear(b + ".cross.kv", d, 2 * d);
        init.linear(b + ".cross.out", d, d);
        init.norm(b + ".ln3", d);
        init.linear(b + ".mlp.fc1", d, hid);
        init.linear(b + ".mlp.fc2", hid, d);
    }
    init.norm("dec.ln", d);
    init.linear("head.score", d, 1);
    init.linear("head.box.fc1", d, d);
    init.linear("head.box.fc2", d, 4);
    init.linear("head.proto", d, d);
    return s;
}

std::size_t parameter_count(const DetectorConfig& cfg) {
    const std::size_t d = sz(cfg.dim), hid = d * sz(cfg.mlp_ratio), T = sz(cfg.tokens());
    const std::size_t pin = sz(cfg.patch) * sz(cfg.patch) * sz(cfg.channels);
    auto lin = [](std::size_t i, std::size_t o) { return i * o + o; };
    const std::size_t ln = 2 * d;
    const std::size_t mlp = lin(d, hid) + lin(hid, d);
    const std::size_t enc = 2 * ln + lin(d, 3 * d) + lin(d, d) + mlp;
    const std::size_t dec = 3 * ln + lin(d, 3 * d) + lin(d, d) + lin(d, d) + lin(d, 2 * d) + lin(d, d) + mlp;
    return lin(pin, d) + T * d + sz(cfg.encoder_blocks) * enc + ln + lin(d, d) + sz(cfg.queries) * d +
           sz(cfg.decoder_blocks) * dec + ln + lin(d, 1) + lin(d, d) + lin(d, 4) + lin(d, d);
}

DetectorOutput forward(const Tensor& image, const nd::ParamStore& params, const DetectorConfig& cfg, bool grad) {
    std::optional<nd::NoGradGuard> guard;
    if (!grad) guard.emplace();

    Ctx c{params, cfg};
    const std::size_t d = sz(cfg.dim);
    auto patches = patchify(image, cfg);
    if (params.get("patch.w").dim(0) != patches.dim(1) || params.get("pos").dim(0) != patches.dim(0))
        throw ShapeError("forward: parameters do not fit the detector config");

    auto x = c.linear(patches, "patch") + c.get("pos");
    for (int i = 0; i < cfg.encoder_blocks; ++i) {
        const std::string b = "enc." + std::to_string(i);
        x = x + c.self_attention(c.norm(x, b + ".ln1"), b + ".attn");
        x = x + c.mlp(c.norm(x, b + ".ln2"), b + ".mlp");
    }
    auto memory = c.norm(x, "enc.ln");

    auto q = c.get("query");
    for (int i = 0; i < cfg.decoder_blocks; ++i) {
        const std::string b = "dec." + std::to_string(i);
        q = q + c.self_attention(c.norm(q, b + ".ln1"), b + ".self");
        q = q + c.cross_attention(c.norm(q, b + ".ln2"), memory, b + ".cross");
        q = q + c.mlp(c.norm(q, b + ".ln3"), b + ".mlp");
    }

    DetectorOutput out;
    out.grid = cfg.grid();
    out.canvas = cfg.canvas;
    out.queries = c.norm(q, "dec.ln");
    const std::size_t nq = out.queries.dim(0);
    out.score_logits = nd::reshape(c.linear(out.queries, "head.score"), {nq});
    out.scores = nd::sigmoid(out.score_logits);
    out.boxes = nd::sigmoid(c.mlp(out.queries, "head.box"));
    out.prototypes = c.linear(out.queries, "head.proto");
    out.token_features = c.linear(memory, "pixel");
    // Upsampling is linear, so resampling the token-level similarities equals
    // the dot product with upsampled pixel features.
    auto sim = nd::matmul(out.prototypes, nd::transpose(out.token_features)) * (1.0 / std::sqrt(double(d)));
    const auto G = sz(cfg.grid()), C = sz(cfg.canvas);
    out.mask_logits = nd::resize_bilinear(sim, G, G, C, C);
    return out;
}

setmatch::PredictionSet DetectorOutput::detached() const {
    setmatch::PredictionSet p;
    const std::size_t n = size();
    p.scores.assign(scores.data().begin(), scores.data().end());
    const auto b = boxes.data();
    for (std::size_t i = 0; i < n; ++i) p.boxes.push_back({b[4 * i], b[4 * i + 1], b[4 * i + 2], b[4 * i + 3]});
    p.mask_height = canvas;
    p.mask_width = canvas;
    p.mask_probs.resize(mask_logits.numel());
    const auto m = mask_logits.data();
    for (std::size_t i = 0; i < m.size(); ++i) p.mask_probs[i] = 1.0 / (1.0 + std::exp(-m[i]));
    return p;
}

Tensor render_mask(const DetectorOutput& out, std::size_t query) {
    if (query >= out.size())
        throw DomainError("render_mask: query " + std::to_string(query) + " out of range for " +
                          std::to_string(out.size()) + " queries");
    return nd::reshape(nd::slice(out.mask_logits, 0, query, query + 1), {out.mask_logits.dim(1)});
}

Tensor pixel_features(const DetectorOutput& out) {
    const auto G = sz(out.grid), C = sz(out.canvas);
    return nd::transpose(nd::resize_bilinear(nd::transpose(out.token_features), G, G, C, C));
}

}  // namespace vclr::model
