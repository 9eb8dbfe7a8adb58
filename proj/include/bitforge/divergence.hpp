#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bitforge/dataset.hpp"
#include "bitforge/graph.hpp"
#include "bitforge/model.hpp"
#include "bitforge/tensor.hpp"

namespace bitforge {
namespace distill {

enum class Objective { fkl, rkl, jsd, cakld };

const char* objective_name(Objective o);
Objective objective_from_name(const std::string& name);

struct DivergenceSpec {
    Objective kind = Objective::cakld;
    double gamma = 0.5;  // CAKLD blend coefficient; JSD interpolation is fixed at 0.5

    void validate() const;
};

// Teacher side is constant (detached); only student_logits carries gradient.
// loss_mask is 1.0 on response-token positions, 0.0 on prompt and padding.
struct TokenDistBatch {
    Tensor teacher_logits;     // [B, L, V]
    TensorPtr student_logits;  // [B, L, V]
    Tensor loss_mask;          // [B, L]

    void validate() const;
};

// mean over masked positions of sum_c P_T(c) (log P_T(c) - log P_S(c))
TensorPtr forward_kl(Graph& g, const TokenDistBatch& batch);
// roles swapped; gradient flows through both student factors
TensorPtr reverse_kl(Graph& g, const TokenDistBatch& batch);
// 0.5 KL(P_T || M) + 0.5 KL(P_S || M), M = (P_T + P_S) / 2
TensorPtr jsd(Graph& g, const TokenDistBatch& batch);
// gamma * reverse_kl + (1 - gamma) * forward_kl on the same graph
TensorPtr cakld(Graph& g, const TokenDistBatch& batch, double gamma);

TensorPtr divergence(Graph& g, const TokenDistBatch& batch, const DivergenceSpec& spec);

// mean over masked tokens of the probability a row assigns to its realized
// target; the confidence coefficient when the rows come from the teacher
double gamma_from_logits(const Tensor& logits, const std::vector<int32_t>& targets,
                         const std::vector<double>& mask);

// teacher forward passes over the first n_batches batches, no updates
double estimate_gamma(const model::Model& teacher, const data::Dataset& ds, int n_batches = 10,
                      int64_t batch_size = 8);

struct TokenScoreReport {
    // one row per (sequence, response position)
    struct Entry {
        int64_t seq_id;
        int64_t position;
        double value;
    };
    std::vector<Entry> entries;
    double mean = 0.0;
    double variance = 0.0;

    std::string to_csv(const std::string& value_column) const;
};

// per-token teacher probability of each realized response token
TokenScoreReport confidence_report(const model::Model& teacher, const data::Dataset& ds,
                                   int64_t batch_size = 8);
// per-token cross entropy -log p
TokenScoreReport per_token_ce_report(const model::Model& teacher, const data::Dataset& ds,
                                     int64_t batch_size = 8);

// --- Gaussian-mixture fitting demo -----------------------------------------

struct GaussianMixture {
    std::vector<double> weights;  // sums to 1
    std::vector<double> means;
    std::vector<double> sigmas;  // > 0

    void validate() const;
};

// divergence between two discrete distributions on a shared grid
double grid_divergence(Objective kind, double gamma, std::span<const double> p,
                       std::span<const double> q);

struct DemoStep {
    int64_t step;
    double mu;
    double sigma;
    double divergence;
};

struct DemoResult {
    std::vector<DemoStep> trajectory;
    double final_mu = 0.0;
    double final_sigma = 0.0;
    double final_divergence = 0.0;
};

// Gradient-descent fit of a single Gaussian to the mixture under the chosen
// objective, evaluated by quadrature on [-8, 8] with 2001 points.
DemoResult fit_gaussian_demo(const GaussianMixture& mixture, const DivergenceSpec& spec,
                             double mu0 = 1.0, double sigma0 = 1.0, int64_t steps = 2000);

}  // namespace distill
}  // namespace bitforge
