#include "bitforge/divergence.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <sstream>

namespace bitforge {
namespace distill {

const char* objective_name(Objective o) {
    switch (o) {
        case Objective::fkl: return "fkl";
        case Objective::rkl: return "rkl";
        case Objective::jsd: return "jsd";
        case Objective::cakld: return "cakld";
    }
    return "?";
}

Objective objective_from_name(const std::string& name) {
    if (name == "fkl") return Objective::fkl;
    if (name == "rkl") return Objective::rkl;
    if (name == "jsd") return Objective::jsd;
    if (name == "cakld") return Objective::cakld;
    fail(ErrorKind::config, "unknown objective '", name, "'");
}

void DivergenceSpec::validate() const {
    if (gamma < 0.0 || gamma > 1.0)
        fail(ErrorKind::contract, "gamma must be in [0,1], got ", gamma);
}

void TokenDistBatch::validate() const {
    if (!student_logits) fail(ErrorKind::contract, "batch: missing student logits");
    if (teacher_logits.shape() != student_logits->shape())
        fail(ErrorKind::shape, "batch: teacher ", shape_str(teacher_logits.shape()),
             " vs student ", shape_str(student_logits->shape()));
    if (teacher_logits.ndim() != 3) fail(ErrorKind::shape, "batch: logits must be [B,L,V]");
    if (loss_mask.ndim() != 2 || loss_mask.dim(0) != teacher_logits.dim(0) ||
        loss_mask.dim(1) != teacher_logits.dim(1))
        fail(ErrorKind::shape, "batch: mask shape must be [B,L]");
}

namespace {

// row-wise stable softmax / log-softmax on plain tensors (teacher side)
void softmax_rows(const Tensor& in, Tensor& probs, Tensor& logprobs) {
    const int64_t v = in.dim(-1);
    const int64_t rows = in.numel() / v;
    auto iv = in.values();
    auto pv = probs.values();
    auto lv = logprobs.values();
    for (int64_t r = 0; r < rows; ++r) {
        const double* row = iv.data() + r * v;
        double mx = row[0];
        for (int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        double s = 0.0;
        for (int64_t j = 0; j < v; ++j) s += std::exp(row[j] - mx);
        const double lse = mx + std::log(s);
        for (int64_t j = 0; j < v; ++j) {
            lv[r * v + j] = row[j] - lse;
            pv[r * v + j] = std::exp(row[j] - lse);
        }
    }
}

double mask_count(const Tensor& mask) {
    double c = 0.0;
    for (double m : mask.values()) c += m;
    if (c <= 0.0) fail(ErrorKind::contract, "divergence: batch has no unmasked positions");
    return c;
}

TensorPtr masked_mean(Graph& g, const TensorPtr& per_pos, const Tensor& mask) {
    const double count = mask_count(mask);
    TensorPtr mask_leaf = g.leaf(Tensor(mask.shape(), {mask.values().begin(), mask.values().end()}));
    return g.scale(g.sum(g.mul(per_pos, mask_leaf)), 1.0 / count);
}

// elementwise log with a floor; keeps JSD total when one side underflows
TensorPtr log_floored(Graph& g, const TensorPtr& a) {
    Tensor out(a->shape());
    auto av = a->values();
    auto ov = out.values();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = std::log(std::max(av[i], 1e-300));
    return g.custom({a}, std::move(out), [](const Graph::Node& node) {
        auto gout = node.output->grad();
        auto av = node.inputs[0]->values();
        auto gin = node.inputs[0]->grad();
        for (size_t i = 0; i < gin.size(); ++i) gin[i] += gout[i] / std::max(av[i], 1e-300);
    });
}

struct TeacherSide {
    TensorPtr probs;
    TensorPtr logprobs;
};

TeacherSide teacher_side(Graph& g, const Tensor& teacher_logits) {
    Tensor p(teacher_logits.shape()), lp(teacher_logits.shape());
    softmax_rows(teacher_logits, p, lp);
    return {g.leaf(std::move(p)), g.leaf(std::move(lp))};
}

}  // namespace

TensorPtr forward_kl(Graph& g, const TokenDistBatch& batch) {
    batch.validate();
    auto t = teacher_side(g, batch.teacher_logits);
    TensorPtr ls_s = g.log_softmax(batch.student_logits);
    TensorPtr per_pos = g.sum_last(g.mul(t.probs, g.sub(t.logprobs, ls_s)));
    return masked_mean(g, per_pos, batch.loss_mask);
}

TensorPtr reverse_kl(Graph& g, const TokenDistBatch& batch) {
    batch.validate();
    auto t = teacher_side(g, batch.teacher_logits);
    TensorPtr p_s = g.softmax(batch.student_logits);
    TensorPtr ls_s = g.log_softmax(batch.student_logits);
    TensorPtr per_pos = g.sum_last(g.mul(p_s, g.sub(ls_s, t.logprobs)));
    return masked_mean(g, per_pos, batch.loss_mask);
}

TensorPtr jsd(Graph& g, const TokenDistBatch& batch) {
    batch.validate();
    auto t = teacher_side(g, batch.teacher_logits);
    TensorPtr p_s = g.softmax(batch.student_logits);
    TensorPtr ls_s = g.log_softmax(batch.student_logits);
    TensorPtr log_m = log_floored(g, g.scale(g.add(t.probs, p_s), 0.5));
    TensorPtr kl_t = g.sum_last(g.mul(t.probs, g.sub(t.logprobs, log_m)));
    TensorPtr kl_s = g.sum_last(g.mul(p_s, g.sub(ls_s, log_m)));
    TensorPtr per_pos = g.scale(g.add(kl_t, kl_s), 0.5);
    return masked_mean(g, per_pos, batch.loss_mask);
}

TensorPtr cakld(Graph& g, const TokenDistBatch& batch, double gamma) {
    if (gamma < 0.0 || gamma > 1.0)
        fail(ErrorKind::contract, "cakld: gamma must be in [0,1], got ", gamma);
    TensorPtr rkl = reverse_kl(g, batch);
    TensorPtr fkl = forward_kl(g, batch);
    return g.add(g.scale(rkl, gamma), g.scale(fkl, 1.0 - gamma));
}

TensorPtr divergence(Graph& g, const TokenDistBatch& batch, const DivergenceSpec& spec) {
    spec.validate();
    switch (spec.kind) {
        case Objective::fkl: return forward_kl(g, batch);
        case Objective::rkl: return reverse_kl(g, batch);
        case Objective::jsd: return jsd(g, batch);
        case Objective::cakld: return cakld(g, batch, spec.gamma);
    }
    fail(ErrorKind::config, "bad objective");
}

double gamma_from_logits(const Tensor& logits, const std::vector<int32_t>& targets,
                         const std::vector<double>& mask) {
    const int64_t v = logits.dim(-1);
    const int64_t rows = logits.numel() / v;
    if (static_cast<int64_t>(targets.size()) != rows || static_cast<int64_t>(mask.size()) != rows)
        fail(ErrorKind::shape, "gamma_from_logits: targets/mask length must be ", rows);
    auto lv = logits.values();
    double sum = 0.0, count = 0.0;
    for (int64_t r = 0; r < rows; ++r) {
        if (mask[static_cast<size_t>(r)] == 0.0) continue;
        const double* row = lv.data() + r * v;
        double mx = row[0];
        for (int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        double s = 0.0;
        for (int64_t j = 0; j < v; ++j) s += std::exp(row[j] - mx);
        const int32_t t = targets[static_cast<size_t>(r)];
        if (t < 0 || t >= v) fail(ErrorKind::data, "gamma_from_logits: target out of range");
        sum += std::exp(row[t] - mx) / s * mask[static_cast<size_t>(r)];
        count += mask[static_cast<size_t>(r)];
    }
    if (count <= 0.0) fail(ErrorKind::contract, "gamma_from_logits: no active positions");
    return sum / count;
}

namespace {

// shared walk over dataset batches: yields teacher logits + batch layout
template <typename Fn>
void for_each_teacher_batch(const model::Model& teacher, const data::Dataset& ds,
                            int64_t batch_size, int64_t max_batches, Fn&& fn) {
    if (ds.empty()) fail(ErrorKind::contract, "empty dataset");
    if (batch_size < 1) fail(ErrorKind::contract, "batch_size must be >= 1");
    const int64_t max_len = teacher.config().max_seq_len;
    int64_t produced = 0;
    for (size_t off = 0; off < ds.records.size(); off += static_cast<size_t>(batch_size)) {
        if (max_batches > 0 && produced >= max_batches) break;
        const size_t end = std::min(ds.records.size(), off + static_cast<size_t>(batch_size));
        data::TokenBatch tb =
            data::make_batch({ds.records.data() + off, end - off}, max_len);
        Graph g(false);
        TensorPtr logits = teacher.forward(g, tb.inputs, tb.batch, tb.len);
        fn(tb, *logits, static_cast<int64_t>(off));
        ++produced;
    }
}

TokenScoreReport score_report(const model::Model& teacher, const data::Dataset& ds,
                              int64_t batch_size, bool as_ce) {
    TokenScoreReport rep;
    double sum = 0.0, sq_sum = 0.0;
    for_each_teacher_batch(
        teacher, ds, batch_size, /*max_batches=*/0,
        [&](const data::TokenBatch& tb, const Tensor& logits, int64_t first_record) {
            const int64_t v = logits.dim(-1);
            auto lv = logits.values();
            for (int64_t r = 0; r < tb.batch; ++r) {
                for (int64_t i = 0; i < tb.len; ++i) {
                    if (tb.mask[static_cast<size_t>(r * tb.len + i)] == 0.0) continue;
                    const double* row = lv.data() + (r * tb.len + i) * v;
                    double mx = row[0];
                    for (int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
                    double s = 0.0;
                    for (int64_t j = 0; j < v; ++j) s += std::exp(row[j] - mx);
                    const int32_t t = tb.targets[static_cast<size_t>(r * tb.len + i)];
                    const double logp = row[t] - mx - std::log(s);
                    const double value = as_ce ? -logp : std::exp(logp);
                    rep.entries.push_back({first_record + r, i, value});
                    sum += value;
                    sq_sum += value * value;
                }
            }
        });
    const double n = static_cast<double>(rep.entries.size());
    if (n > 0.0) {
        rep.mean = sum / n;
        rep.variance = std::max(0.0, sq_sum / n - rep.mean * rep.mean);
    }
    return rep;
}

}  // namespace

double estimate_gamma(const model::Model& teacher, const data::Dataset& ds, int n_batches,
                      int64_t batch_size) {
    if (n_batches < 1) fail(ErrorKind::contract, "estimate_gamma: n_batches must be >= 1");
    double sum = 0.0, count = 0.0;
    for_each_teacher_batch(teacher, ds, batch_size, n_batches,
                           [&](const data::TokenBatch& tb, const Tensor& logits, int64_t) {
                               const int64_t v = logits.dim(-1);
                               auto lv = logits.values();
                               const int64_t rows = tb.batch * tb.len;
                               for (int64_t r = 0; r < rows; ++r) {
                                   const double m = tb.mask[static_cast<size_t>(r)];
                                   if (m == 0.0) continue;
                                   const double* row = lv.data() + r * v;
                                   double mx = row[0];
                                   for (int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
                                   double s = 0.0;
                                   for (int64_t j = 0; j < v; ++j) s += std::exp(row[j] - mx);
                                   const int32_t t = tb.targets[static_cast<size_t>(r)];
                                   sum += std::exp(row[t] - mx) / s * m;
                                   count += m;
                               }
                           });
    if (count <= 0.0) fail(ErrorKind::contract, "estimate_gamma: no response tokens seen");
    return sum / count;
}

TokenScoreReport confidence_report(const model::Model& teacher, const data::Dataset& ds,
                                   int64_t batch_size) {
    return score_report(teacher, ds, batch_size, /*as_ce=*/false);
}

TokenScoreReport per_token_ce_report(const model::Model& teacher, const data::Dataset& ds,
                                     int64_t batch_size) {
    return score_report(teacher, ds, batch_size, /*as_ce=*/true);
}

std::string TokenScoreReport::to_csv(const std::string& value_column) const {
    std::ostringstream os;
    os.precision(17);
    os << "seq_id,position," << value_column << "\n";
    for (const Entry& e : entries) os << e.seq_id << "," << e.position << "," << e.value << "\n";
    return os.str();
}

// --- demo -------------------------------------------------------------------

void GaussianMixture::validate() const {
    if (weights.empty() || weights.size() != means.size() || weights.size() != sigmas.size())
        fail(ErrorKind::contract, "mixture: weights/means/sigmas must be non-empty, equal length");
    double s = 0.0;
    for (double w : weights) {
        if (w < 0.0) fail(ErrorKind::contract, "mixture: negative weight");
        s += w;
    }
    if (std::abs(s - 1.0) > 1e-9) fail(ErrorKind::contract, "mixture: weights must sum to 1");
    for (double sg : sigmas)
        if (sg <= 0.0) fail(ErrorKind::contract, "mixture: sigma must be > 0");
}

double grid_divergence(Objective kind, double gamma, std::span<const double> p,
                       std::span<const double> q) {
    if (p.size() != q.size()) fail(ErrorKind::shape, "grid_divergence: length mismatch");
    auto kl = [](std::span<const double> a, std::span<const double> b) {
        double d = 0.0;
        for (size_t i = 0; i < a.size(); ++i) {
            if (a[i] <= 0.0) continue;
            if (b[i] <= 0.0) return std::numeric_limits<double>::infinity();
            d += a[i] * (std::log(a[i]) - std::log(b[i]));
        }
        return d;
    };
    switch (kind) {
        case Objective::fkl: return kl(p, q);
        case Objective::rkl: return kl(q, p);
        case Objective::jsd: {
            std::vector<double> m(p.size());
            for (size_t i = 0; i < p.size(); ++i) m[i] = 0.5 * (p[i] + q[i]);
            return 0.5 * kl(p, m) + 0.5 * kl(q, m);
        }
        case Objective::cakld: return gamma * kl(q, p) + (1.0 - gamma) * kl(p, q);
    }
    fail(ErrorKind::config, "bad objective");
}

namespace {

constexpr int64_t kDemoGridPoints = 2001;
constexpr double kDemoGridLo = -8.0, kDemoGridHi = 8.0;

struct DemoGrid {
    std::vector<double> x;
    std::vector<double> log_p;  // teacher mixture log density
    std::vector<double> p;      // normalized over the grid
};

DemoGrid demo_grid(const GaussianMixture& mix) {
    DemoGrid grid;
    grid.x.resize(kDemoGridPoints);
    grid.log_p.resize(kDemoGridPoints);
    grid.p.resize(kDemoGridPoints);
    const double step = (kDemoGridHi - kDemoGridLo) / static_cast<double>(kDemoGridPoints - 1);
    double z = 0.0;
    for (int64_t i = 0; i < kDemoGridPoints; ++i) {
        const double x = kDemoGridLo + step * static_cast<double>(i);
        grid.x[static_cast<size_t>(i)] = x;
        // log-sum-exp over components
        double best = -std::numeric_limits<double>::infinity();
        std::vector<double> terms(mix.weights.size());
        for (size_t c = 0; c < mix.weights.size(); ++c) {
            const double d = (x - mix.means[c]) / mix.sigmas[c];
            terms[c] = std::log(mix.weights[c] + 1e-300) - 0.5 * d * d -
                       std::log(mix.sigmas[c] * 2.5066282746310005024);
            best = std::max(best, terms[c]);
        }
        double acc = 0.0;
        for (double t : terms) acc += std::exp(t - best);
        grid.log_p[static_cast<size_t>(i)] = best + std::log(acc);
        grid.p[static_cast<size_t>(i)] = std::exp(grid.log_p[static_cast<size_t>(i)]);
        z += grid.p[static_cast<size_t>(i)];
    }
    for (double& v : grid.p) v /= z;
    return grid;
}

// student grid probabilities for N(mu, sigma^2), normalized
void student_grid(const DemoGrid& grid, double mu, double sigma, std::vector<double>& q,
                  std::vector<double>& log_q) {
    double z = 0.0;
    for (size_t i = 0; i < grid.x.size(); ++i) {
        const double d = (grid.x[i] - mu) / sigma;
        log_q[i] = -0.5 * d * d - std::log(sigma * 2.5066282746310005024);
        q[i] = std::exp(log_q[i]);
        z += q[i];
    }
    const double log_z = std::log(z);
    for (size_t i = 0; i < q.size(); ++i) {
        q[i] /= z;
        log_q[i] -= log_z;
    }
}

// divergence using log-space student densities; KL(p||q) stays finite even
// where q underflows to zero on the grid
double demo_objective(const DemoGrid& grid, Objective kind, double gamma, double mu,
                      double sigma) {
    std::vector<double> q(grid.x.size()), log_q(grid.x.size());
    student_grid(grid, mu, sigma, q, log_q);
    constexpr double log_floor = -745.0;

    auto kl_pq = [&]() {
        double d = 0.0;
        for (size_t i = 0; i < q.size(); ++i) {
            if (grid.p[i] <= 0.0) continue;
            d += grid.p[i] * (std::log(grid.p[i]) - log_q[i]);
        }
        return d;
    };
    auto kl_qp = [&]() {
        double d = 0.0;
        for (size_t i = 0; i < q.size(); ++i) {
            if (q[i] <= 0.0) continue;
            const double lp = grid.p[i] > 0.0 ? std::log(grid.p[i]) : log_floor;
            d += q[i] * (log_q[i] - lp);
        }
        return d;
    };

    switch (kind) {
        case Objective::fkl: return kl_pq();
        case Objective::rkl: return kl_qp();
        case Objective::jsd: {
            double d = 0.0;
            for (size_t i = 0; i < q.size(); ++i) {
                const double m = 0.5 * (grid.p[i] + q[i]);
                if (m <= 0.0) continue;
                const double lm = std::log(m);
                if (grid.p[i] > 0.0) d += 0.5 * grid.p[i] * (std::log(grid.p[i]) - lm);
                if (q[i] > 0.0) d += 0.5 * q[i] * (log_q[i] - lm);
            }
            return d;
        }
        case Objective::cakld: return gamma * kl_qp() + (1.0 - gamma) * kl_pq();
    }
    return 0.0;
}

}  // namespace

DemoResult fit_gaussian_demo(const GaussianMixture& mixture, const DivergenceSpec& spec,
                             double mu0, double sigma0, int64_t steps) {
    mixture.validate();
    spec.validate();
    if (sigma0 <= 0.0) fail(ErrorKind::contract, "demo: sigma0 must be > 0");
    if (steps < 1) fail(ErrorKind::contract, "demo: steps must be >= 1");

    const DemoGrid grid = demo_grid(mixture);
    double mu = mu0, log_sigma = std::log(sigma0);

    // Adam on (mu, log sigma), gradients by central differences
    const double lr = 0.02, beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8, h = 1e-6;
    std::array<double, 2> m{0.0, 0.0}, v{0.0, 0.0};

    DemoResult res;
    res.trajectory.reserve(static_cast<size_t>(steps) + 1);
    double last_finite_mu = mu, last_finite_sigma = std::exp(log_sigma);

    auto objective = [&](double mu_v, double ls_v) {
        return demo_objective(grid, spec.kind, spec.gamma, mu_v, std::exp(ls_v));
    };

    for (int64_t t = 0; t <= steps; ++t) {
        const double sigma = std::exp(log_sigma);
        const double obj = objective(mu, log_sigma);
        if (!std::isfinite(obj) || !std::isfinite(mu) || !std::isfinite(sigma))
            fail(ErrorKind::numeric, "demo: optimization diverged at step ", t,
                 " (last finite mu=", last_finite_mu, ", sigma=", last_finite_sigma, ")");
        last_finite_mu = mu;
        last_finite_sigma = sigma;
        res.trajectory.push_back({t, mu, sigma, obj});
        if (t == steps) break;

        const std::array<double, 2> grad{
            (objective(mu + h, log_sigma) - objective(mu - h, log_sigma)) / (2.0 * h),
            (objective(mu, log_sigma + h) - objective(mu, log_sigma - h)) / (2.0 * h)};
        std::array<double*, 2> param{&mu, &log_sigma};
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t + 1));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t + 1));
        for (int i = 0; i < 2; ++i) {
            m[static_cast<size_t>(i)] = beta1 * m[static_cast<size_t>(i)] + (1.0 - beta1) * grad[static_cast<size_t>(i)];
            v[static_cast<size_t>(i)] = beta2 * v[static_cast<size_t>(i)] +
                                        (1.0 - beta2) * grad[static_cast<size_t>(i)] * grad[static_cast<size_t>(i)];
            *param[static_cast<size_t>(i)] -= lr * (m[static_cast<size_t>(i)] / bc1) /
                                              (std::sqrt(v[static_cast<size_t>(i)] / bc2) + adam_eps);
        }
    }
    res.final_mu = res.trajectory.back().mu;
    res.final_sigma = res.trajectory.back().sigma;
    res.final_divergence = res.trajectory.back().divergence;
    return res;
}

}  // namespace distill
}  // namespace bitforge
