#include "bitforge/model.hpp"

#include <algorithm>
#include <cmath>

namespace bitforge {
namespace model {

void ModelConfig::validate() const {
    if (vocab_size < 2) fail(ErrorKind::config, "vocab_size must be >= 2");
    if (d_model < 1 || n_layers < 1 || n_heads < 1 || max_seq_len < 1 || ff_mult < 1)
        fail(ErrorKind::config, "model dimensions must be positive");
    if (d_model % n_heads != 0)
        fail(ErrorKind::config, "d_model ", d_model, " not divisible by n_heads ", n_heads);
}

namespace {

Tensor normal_init(Rng& rng, std::vector<int64_t> shape, double stddev) {
    Tensor t(std::move(shape));
    for (auto& v : t.values()) v = rng.normal(0.0, stddev);
    return t;
}

}  // namespace

Model::Model(const ModelConfig& config) : config_(config) {
    config_.validate();
    Rng rng(config_.seed);
    const int64_t d = config_.d_model, v = config_.vocab_size, f = config_.ff_width();
    const double std0 = 0.02;
    // residual-path projections scaled down by 1/sqrt(2*n_layers)
    const double std_res = std0 / std::sqrt(2.0 * static_cast<double>(config_.n_layers));

    auto put = [&](const std::string& name, Tensor t) {
        params_.emplace_back(name, make_tensor(std::move(t)));
    };

    put("wte", normal_init(rng, {v, d}, std0));
    put("wpe", normal_init(rng, {config_.max_seq_len, d}, std0));
    for (int64_t i = 0; i < config_.n_layers; ++i) {
        const std::string p = "layers." + std::to_string(i) + ".";
        put(p + "ln1.g", Tensor::full({d}, 1.0));
        put(p + "ln1.b", Tensor::zeros({d}));
        put(p + "attn.wq", normal_init(rng, {d, d}, std0));
        put(p + "attn.wk", normal_init(rng, {d, d}, std0));
        put(p + "attn.wv", normal_init(rng, {d, d}, std0));
        put(p + "attn.wo", normal_init(rng, {d, d}, std_res));
        put(p + "ln2.g", Tensor::full({d}, 1.0));
        put(p + "ln2.b", Tensor::zeros({d}));
        put(p + "ffn.w1", normal_init(rng, {f, d}, std0));
        put(p + "ffn.w2", normal_init(rng, {d, f}, std_res));
    }
    put("lnf.g", Tensor::full({d}, 1.0));
    put("lnf.b", Tensor::zeros({d}));
    put("head", normal_init(rng, {v, d}, std0));
}

Model Model::from_params(const ModelConfig& config,
                         std::vector<std::pair<std::string, Tensor>> params) {
    Model expected(config);
    if (params.size() != expected.params_.size())
        fail(ErrorKind::data, "parameter count mismatch: got ", params.size(), ", expected ",
             expected.params_.size());
    Model m;
    m.config_ = config;
    for (size_t i = 0; i < params.size(); ++i) {
        auto& [name, t] = params[i];
        const auto& [exp_name, exp_t] = expected.params_[i];
        if (name != exp_name)
            fail(ErrorKind::data, "unexpected parameter '", name, "', expected '", exp_name, "'");
        if (t.shape() != exp_t->shape())
            fail(ErrorKind::data, "parameter '", name, "' has shape ", shape_str(t.shape()),
                 ", expected ", shape_str(exp_t->shape()));
        m.params_.emplace_back(name, make_tensor(std::move(t)));
    }
    return m;
}

Model Model::clone() const {
    Model m;
    m.config_ = config_;
    m.params_.reserve(params_.size());
    for (const auto& [name, t] : params_) {
        Tensor copy(t->shape(), std::vector<double>(t->values().begin(), t->values().end()));
        m.params_.emplace_back(name, make_tensor(std::move(copy)));
    }
    return m;
}

TensorPtr Model::param(const std::string& name) const {
    for (const auto& [n, t] : params_)
        if (n == name) return t;
    fail(ErrorKind::lookup, "unknown parameter '", name, "'");
}

int64_t Model::param_count() const {
    int64_t n = 0;
    for (const auto& [name, t] : params_) n += t->numel();
    return n;
}

std::vector<std::string> Model::quantized_param_names(bool include_head) const {
    std::vector<std::string> names;
    for (int64_t i = 0; i < config_.n_layers; ++i) {
        const std::string p = "layers." + std::to_string(i) + ".";
        for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo", "ffn.w1", "ffn.w2"})
            names.push_back(p + w);
    }
    if (include_head) names.push_back("head");
    return names;
}

bool ActivationTap::wants(const std::string& name) const {
    return std::find(wanted.begin(), wanted.end(), name) != wanted.end();
}

TensorPtr Model::forward(Graph& g, const std::vector<int32_t>& tokens, int64_t batch, int64_t len,
                         const quant::QuantConfig* fq, ActivationTap* tap) const {
    if (batch < 1 || len < 1) fail(ErrorKind::contract, "forward: empty token batch");
    if (static_cast<int64_t>(tokens.size()) != batch * len)
        fail(ErrorKind::shape, "forward: token count ", tokens.size(), " != ", batch, "x", len);
    if (len > config_.max_seq_len)
        fail(ErrorKind::contract, "forward: sequence length ", len, " exceeds max ",
             config_.max_seq_len);
    for (int32_t t : tokens)
        if (t < 0 || t >= config_.vocab_size)
            fail(ErrorKind::data, "forward: token id ", t, " out of range");

    const int64_t d = config_.d_model, h = config_.n_heads, dh = d / h;

    auto maybe_fq = [&](const TensorPtr& w) {
        return fq ? quant::fake_quant_ste(g, w, *fq) : w;
    };
    auto tap_input = [&](const std::string& name, const TensorPtr& x_in) {
        if (!tap || !tap->wants(name)) return;
        auto [rows, cols] = x_in->as_2d();
        tap->captured.emplace_back(
            name, Tensor({rows, cols}, {x_in->values().begin(), x_in->values().end()}));
    };

    std::vector<int32_t> pos(static_cast<size_t>(batch * len));
    for (int64_t b = 0; b < batch; ++b)
        for (int64_t l = 0; l < len; ++l) pos[static_cast<size_t>(b * len + l)] = static_cast<int32_t>(l);

    TensorPtr x = g.add(g.embedding(param("wte"), tokens, {batch, len}),
                        g.embedding(param("wpe"), pos, {batch, len}));

    // additive causal mask, broadcast over [B, H, L, L]
    Tensor mask({len, len});
    for (int64_t i = 0; i < len; ++i)
        for (int64_t j = i + 1; j < len; ++j) mask[i * len + j] = -1e30;
    TensorPtr mask_t = g.leaf(std::move(mask));

    const double attn_scale = 1.0 / std::sqrt(static_cast<double>(dh));

    for (int64_t i = 0; i < config_.n_layers; ++i) {
        const std::string p = "layers." + std::to_string(i) + ".";
        TensorPtr hnorm = g.layer_norm(x, param(p + "ln1.g"), param(p + "ln1.b"));

        auto heads = [&](const char* wname) {
            tap_input(p + wname, hnorm);
            TensorPtr y = g.matmul(hnorm, g.transpose(maybe_fq(param(p + wname))));  // [B,L,D]
            return g.permute(g.reshape(y, {batch, len, h, dh}), {0, 2, 1, 3});       // [B,H,L,dh]
        };
        TensorPtr q = heads("attn.wq");
        TensorPtr k = heads("attn.wk");
        TensorPtr v = heads("attn.wv");

        TensorPtr scores = g.scale(g.matmul(q, g.transpose(k)), attn_scale);  // [B,H,L,L]
        TensorPtr attn = g.softmax(g.add(scores, mask_t));
        TensorPtr ctx = g.matmul(attn, v);                                    // [B,H,L,dh]
        ctx = g.reshape(g.permute(ctx, {0, 2, 1, 3}), {batch, len, d});
        tap_input(p + "attn.wo", ctx);
        x = g.add(x, g.matmul(ctx, g.transpose(maybe_fq(param(p + "attn.wo")))));

        TensorPtr ffin = g.layer_norm(x, param(p + "ln2.g"), param(p + "ln2.b"));
        tap_input(p + "ffn.w1", ffin);
        TensorPtr hidden = g.gelu(g.matmul(ffin, g.transpose(maybe_fq(param(p + "ffn.w1")))));
        tap_input(p + "ffn.w2", hidden);
        x = g.add(x, g.matmul(hidden, g.transpose(maybe_fq(param(p + "ffn.w2")))));
    }

    TensorPtr xf = g.layer_norm(x, param("lnf.g"), param("lnf.b"));
    tap_input("head", xf);
    TensorPtr head = param("head");
    if (fq && fq->quantize_output_head) head = quant::fake_quant_ste(g, head, *fq);
    return g.matmul(xf, g.transpose(head));  // [B,L,V]
}

Model Model::fake_quant_copy(const quant::QuantConfig& config) const {
    Model m = clone();
    for (const std::string& name : quantized_param_names(config.quantize_output_head)) {
        TensorPtr w = m.param(name);
        Tensor dq = quant::dequantize(quant::quantize_tensor(*w, config));
        std::copy(dq.values().begin(), dq.values().end(), w->values().begin());
    }
    return m;
}

void Model::zero_grads() const {
    for (const auto& [name, t] : params_) t->zero_grad();
}

void Model::drop_grads() const {
    for (const auto& [name, t] : params_) t->drop_grad();
}

std::vector<int32_t> sample(const Model& m, const std::vector<int32_t>& prompt, double temperature,
                            int64_t max_new, uint64_t seed) {
    if (prompt.empty()) fail(ErrorKind::contract, "sample: prompt must be non-empty");
    if (temperature < 0.0) fail(ErrorKind::contract, "sample: temperature must be >= 0");

    Rng rng(seed);
    const int64_t v = m.config().vocab_size;
    std::vector<int32_t> context = prompt;
    std::vector<int32_t> out;
    out.reserve(static_cast<size_t>(max_new));

    for (int64_t step = 0; step < max_new; ++step) {
        const int64_t start = std::max<int64_t>(
            0, static_cast<int64_t>(context.size()) - m.config().max_seq_len);
        std::vector<int32_t> window(context.begin() + start, context.end());
        Graph g(false);
        TensorPtr logits = m.forward(g, window, 1, static_cast<int64_t>(window.size()));
        const double* row =
            logits->values().data() + (static_cast<int64_t>(window.size()) - 1) * v;

        int32_t next;
        if (temperature == 0.0) {
            int64_t best = 0;
            for (int64_t j = 1; j < v; ++j)
                if (row[j] > row[best]) best = j;
            next = static_cast<int32_t>(best);
        } else {
            // stable softmax then inverse-CDF draw
            double mx = row[0];
            for (int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
            std::vector<double> p(static_cast<size_t>(v));
            double s = 0.0;
            for (int64_t j = 0; j < v; ++j) {
                p[static_cast<size_t>(j)] = std::exp((row[j] - mx) / temperature);
                s += p[static_cast<size_t>(j)];
            }
            double u = rng.uniform() * s;
            double acc = 0.0;
            next = static_cast<int32_t>(v - 1);
            for (int64_t j = 0; j < v; ++j) {
                acc += p[static_cast<size_t>(j)];
                if (u < acc) {
                    next = static_cast<int32_t>(j);
                    break;
                }
            }
        }
        out.push_back(next);
        context.push_back(next);
    }
    return out;
}

double perplexity(const Model& m, const std::vector<int32_t>& eval_tokens, int64_t window,
                  int64_t batch_windows) {
    if (window < 2) fail(ErrorKind::contract, "perplexity: window must be >= 2");
    window = std::min(window, m.config().max_seq_len);
    const int64_t n = static_cast<int64_t>(eval_tokens.size());
    if (n < 2) fail(ErrorKind::contract, "perplexity: eval set must span at least one window");

    struct Window {
        int64_t off, len;
    };
    std::vector<Window> windows;
    for (int64_t off = 0; off + 1 < n; off += window) {
        int64_t len = std::min(window, n - off);
        if (len >= 2) windows.push_back({off, len});
    }

    double total_nll = 0.0;
    int64_t total_count = 0;
    for (size_t wi = 0; wi < windows.size();) {
        // batch together consecutive windows of equal length
        size_t we = wi;
        while (we < windows.size() && windows[we].len == windows[wi].len &&
               static_cast<int64_t>(we - wi) < batch_windows)
            ++we;
        const int64_t len = windows[wi].len;
        const int64_t b = static_cast<int64_t>(we - wi);
        std::vector<int32_t> input(static_cast<size_t>(b * (len - 1)));
        for (int64_t k = 0; k < b; ++k)
            std::copy_n(eval_tokens.begin() + windows[wi + static_cast<size_t>(k)].off, len - 1,
                        input.begin() + k * (len - 1));
        Graph g(false);
        TensorPtr logits = m.forward(g, input, b, len - 1);
        const int64_t v = m.config().vocab_size;
        auto lv = logits->values();
        for (int64_t k = 0; k < b; ++k) {
            const int64_t off = windows[wi + static_cast<size_t>(k)].off;
            for (int64_t t = 0; t < len - 1; ++t) {
                const double* row = lv.data() + (k * (len - 1) + t) * v;
                double mx = row[0];
                for (int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
                double s = 0.0;
                for (int64_t j = 0; j < v; ++j) s += std::exp(row[j] - mx);
                int32_t target = eval_tokens[static_cast<size_t>(off + t + 1)];
                total_nll += mx + std::log(s) - row[target];
                ++total_count;
            }
        }
        wi = we;
    }
    return std::exp(total_nll / static_cast<double>(total_count));
}

}  // namespace model
}  // namespace bitforge
