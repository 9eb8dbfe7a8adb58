#pragma once

#include <functional>
#include <vector>

#include "bitforge/tensor.hpp"

namespace bitforge {

// Reverse-mode autodiff over an eagerly recorded tape. Nodes are appended in
// execution order; backward() sweeps them in strict reverse append order and
// accumulates gradients additively into every input's grad slot.
//
// A Graph built with recording=false computes forward values only (teacher
// passes, sampling, evaluation); backward() on it is a contract error.
class Graph {
  public:
    struct Node {
        std::vector<TensorPtr> inputs;
        TensorPtr output;
        std::function<void(const Node&)> backward;
    };

    explicit Graph(bool recording = true) : recording_(recording) {}

    bool recording() const { return recording_; }
    size_t node_count() const { return nodes_.size(); }

    TensorPtr leaf(Tensor t) { return make_tensor(std::move(t)); }

    // elementwise; b may also have a shape that is a suffix of a's (broadcast
    // over the leading axes, e.g. bias add or an additive mask)
    TensorPtr add(const TensorPtr& a, const TensorPtr& b);
    TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
    TensorPtr mul(const TensorPtr& a, const TensorPtr& b);
    TensorPtr scale(const TensorPtr& a, double c);
    TensorPtr log(const TensorPtr& a);
    TensorPtr gelu(const TensorPtr& a);

    // (m,k)x(k,n); batched when both carry equal leading dims; an N-d left
    // operand against a 2-d right operand collapses its leading axes
    TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);

    TensorPtr transpose(const TensorPtr& a);  // swaps the last two axes
    TensorPtr permute(const TensorPtr& a, const std::vector<int64_t>& perm);
    TensorPtr reshape(const TensorPtr& a, std::vector<int64_t> shape);

    // rows of `table` gathered by token id; ids has logical shape id_shape
    TensorPtr embedding(const TensorPtr& table, const std::vector<int32_t>& ids,
                        std::vector<int64_t> id_shape);

    TensorPtr layer_norm(const TensorPtr& x, const TensorPtr& gain, const TensorPtr& bias,
                         double eps = 1e-5);

    TensorPtr softmax(const TensorPtr& a);      // last axis, max-subtracted
    TensorPtr log_softmax(const TensorPtr& a);  // last axis, max-subtracted

    TensorPtr sum(const TensorPtr& a);       // scalar
    TensorPtr mean(const TensorPtr& a);      // scalar
    TensorPtr sum_last(const TensorPtr& a);  // drops the last axis

    // mean over mask-active positions of -log p(target); logits [..., V]
    // flattened to R rows, targets/mask length R
    TensorPtr cross_entropy(const TensorPtr& logits, const std::vector<int32_t>& targets,
                            const std::vector<double>& mask);

    // extension hook: out was computed from inputs outside the graph; backward
    // receives the recorded node
    TensorPtr custom(std::vector<TensorPtr> inputs, Tensor out,
                     std::function<void(const Node&)> backward);

    // d(loss)/d(x) into every tensor reachable from loss; loss must be scalar
    void backward(const TensorPtr& loss);

    void clear() { nodes_.clear(); }

  private:
    TensorPtr record(std::vector<TensorPtr> inputs, Tensor out,
                     std::function<void(const Node&)> backward);

    bool recording_;
    std::vector<Node> nodes_;
};

// Max over all parameter entries of |autodiff - central difference| /
// (|central difference| + 1e-8). `build` must construct the loss from the
// given graph using the live param tensors.
double grad_check(const std::function<TensorPtr(Graph&)>& build,
                  const std::vector<TensorPtr>& params, double eps);

}  // namespace bitforge
