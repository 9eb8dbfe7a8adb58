#include "bitforge/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace bitforge {

namespace {

// accumulating matmul kernels; C is never zeroed here
void mm_nn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (int64_t q = 0; q < k; ++q) {
            double av = arow[q];
            const double* brow = b + q * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m,p] += sum_q A[m,q] * B[p,q]   (B used transposed)
void mm_nt(const double* a, const double* b, double* c, int64_t m, int64_t q, int64_t p) {
    for (int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * q;
        double* crow = c + i * p;
        for (int64_t j = 0; j < p; ++j) {
            const double* brow = b + j * q;
            double acc = 0.0;
            for (int64_t t = 0; t < q; ++t) acc += arow[t] * brow[t];
            crow[j] += acc;
        }
    }
}

// C[k,n] += sum_i A[i,k] * B[i,n]   (A used transposed)
void mm_tn(const double* a, const double* b, double* c, int64_t i_dim, int64_t k, int64_t n) {
    for (int64_t i = 0; i < i_dim; ++i) {
        const double* arow = a + i * k;
        const double* brow = b + i * n;
        for (int64_t q = 0; q < k; ++q) {
            double av = arow[q];
            double* crow = c + q * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

bool is_suffix(const std::vector<int64_t>& small, const std::vector<int64_t>& big) {
    if (small.size() > big.size()) return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

}  // namespace

TensorPtr Graph::record(std::vector<TensorPtr> inputs, Tensor out,
                        std::function<void(const Node&)> backward) {
    TensorPtr out_ptr = make_tensor(std::move(out));
    if (recording_) nodes_.push_back(Node{std::move(inputs), out_ptr, std::move(backward)});
    return out_ptr;
}

TensorPtr Graph::custom(std::vector<TensorPtr> inputs, Tensor out,
                        std::function<void(const Node&)> backward) {
    return record(std::move(inputs), std::move(out), std::move(backward));
}

TensorPtr Graph::add(const TensorPtr& a, const TensorPtr& b) {
    const bool same = a->shape() == b->shape();
    if (!same && !is_suffix(b->shape(), a->shape()))
        fail(ErrorKind::shape, "add: shapes ", shape_str(a->shape()), " and ",
             shape_str(b->shape()), " are not addable");
    Tensor out(a->shape());
    const int64_t n = a->numel(), bn = b->numel();
    auto av = a->values();
    auto bv = b->values();
    auto ov = out.values();
    for (int64_t i = 0; i < n; ++i) ov[i] = av[i] + bv[i % bn];
    return record({a, b}, std::move(out), [n, bn](const Node& node) {
        auto g = node.output->grad();
        auto ga = node.inputs[0]->grad();
        auto gb = node.inputs[1]->grad();
        for (int64_t i = 0; i < n; ++i) {
            ga[i] += g[i];
            gb[i % bn] += g[i];
        }
    });
}

TensorPtr Graph::sub(const TensorPtr& a, const TensorPtr& b) {
    if (a->shape() != b->shape())
        fail(ErrorKind::shape, "sub: shapes ", shape_str(a->shape()), " and ",
             shape_str(b->shape()), " differ");
    Tensor out(a->shape());
    const int64_t n = a->numel();
    auto av = a->values();
    auto bv = b->values();
    auto ov = out.values();
    for (int64_t i = 0; i < n; ++i) ov[i] = av[i] - bv[i];
    return record({a, b}, std::move(out), [n](const Node& node) {
        auto g = node.output->grad();
        auto ga = node.inputs[0]->grad();
        auto gb = node.inputs[1]->grad();
        for (int64_t i = 0; i < n; ++i) {
            ga[i] += g[i];
            gb[i] -= g[i];
        }
    });
}

TensorPtr Graph::mul(const TensorPtr& a, const TensorPtr& b) {
    if (a->shape() != b->shape())
        fail(ErrorKind::shape, "mul: shapes ", shape_str(a->shape()), " and ",
             shape_str(b->shape()), " differ");
    Tensor out(a->shape());
    const int64_t n = a->numel();
    auto av = a->values();
    auto bv = b->values();
    auto ov = out.values();
    for (int64_t i = 0; i < n; ++i) ov[i] = av[i] * bv[i];
    return record({a, b}, std::move(out), [n](const Node& node) {
        auto g = node.output->grad();
        auto av = node.inputs[0]->values();
        auto bv = node.inputs[1]->values();
        auto ga = node.inputs[0]->grad();
        auto gb = node.inputs[1]->grad();
        for (int64_t i = 0; i < n; ++i) {
            ga[i] += g[i] * bv[i];
            gb[i] += g[i] * av[i];
        }
    });
}

TensorPtr Graph::scale(const TensorPtr& a, double c) {
    Tensor out(a->shape());
    const int64_t n = a->numel();
    auto av = a->values();
    auto ov = out.values();
    for (int64_t i = 0; i < n; ++i) ov[i] = av[i] * c;
    return record({a}, std::move(out), [n, c](const Node& node) {
        auto g = node.output->grad();
        auto ga = node.inputs[0]->grad();
        for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * c;
    });
}

TensorPtr Graph::log(const TensorPtr& a) {
    Tensor out(a->shape());
    const int64_t n = a->numel();
    auto av = a->values();
    auto ov = out.values();
    for (int64_t i = 0; i < n; ++i) {
        if (av[i] <= 0.0) fail(ErrorKind::numeric, "log of non-positive value ", av[i]);
        ov[i] = std::log(av[i]);
    }
    return record({a}, std::move(out), [n](const Node& node) {
        auto g = node.output->grad();
        auto av = node.inputs[0]->values();
        auto ga = node.inputs[0]->grad();
        for (int64_t i = 0; i < n; ++i) ga[i] += g[i] / av[i];
    });
}

TensorPtr Graph::gelu(const TensorPtr& a) {
    // exact form x * Phi(x)
    Tensor out(a->shape());
    const int64_t n = a->numel();
    auto av = a->values();
    auto ov = out.values();
    for (int64_t i = 0; i < n; ++i)
        ov[i] = av[i] * 0.5 * (1.0 + std::erf(av[i] * 0.7071067811865475244));
    return record({a}, std::move(out), [n](const Node& node) {
        constexpr double inv_sqrt2 = 0.7071067811865475244;
        constexpr double inv_sqrt2pi = 0.3989422804014326779;
        auto g = node.output->grad();
        auto av = node.inputs[0]->values();
        auto ga = node.inputs[0]->grad();
        for (int64_t i = 0; i < n; ++i) {
            double x = av[i];
            double phi = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
            double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
            ga[i] += g[i] * (phi + x * pdf);
        }
    });
}

TensorPtr Graph::matmul(const TensorPtr& a, const TensorPtr& b) {
    const auto& as = a->shape();
    const auto& bs = b->shape();
    auto mismatch = [&]() {
        fail(ErrorKind::shape, "matmul: incompatible shapes ", shape_str(as), " and ",
             shape_str(bs));
    };
    if (as.size() < 2 || bs.size() < 2) mismatch();

    if (bs.size() == 2) {
        // collapse leading axes of a into rows
        const int64_t k = as.back();
        if (bs[0] != k) mismatch();
        const int64_t rows = a->numel() / k;
        const int64_t n = bs[1];
        std::vector<int64_t> out_shape(as.begin(), as.end() - 1);
        out_shape.push_back(n);
        Tensor out(std::move(out_shape));
        mm_nn(a->values().data(), b->values().data(), out.values().data(), rows, k, n);
        return record({a, b}, std::move(out), [rows, k, n](const Node& node) {
            const double* g = node.output->grad().data();
            const double* av = node.inputs[0]->values().data();
            const double* bv = node.inputs[1]->values().data();
            mm_nt(g, bv, node.inputs[0]->grad().data(), rows, n, k);
            mm_tn(av, g, node.inputs[1]->grad().data(), rows, k, n);
        });
    }

    // batched: identical leading dims
    if (as.size() != bs.size()) mismatch();
    const size_t nd = as.size();
    for (size_t i = 0; i + 2 < nd; ++i)
        if (as[i] != bs[i]) mismatch();
    const int64_t m = as[nd - 2], k = as[nd - 1];
    if (bs[nd - 2] != k) mismatch();
    const int64_t n = bs[nd - 1];
    int64_t batch = 1;
    for (size_t i = 0; i + 2 < nd; ++i) batch *= as[i];

    std::vector<int64_t> out_shape(as.begin(), as.end() - 2);
    out_shape.push_back(m);
    out_shape.push_back(n);
    Tensor out(std::move(out_shape));
    for (int64_t bi = 0; bi < batch; ++bi)
        mm_nn(a->values().data() + bi * m * k, b->values().data() + bi * k * n,
              out.values().data() + bi * m * n, m, k, n);
    return record({a, b}, std::move(out), [batch, m, k, n](const Node& node) {
        const double* g = node.output->grad().data();
        const double* av = node.inputs[0]->values().data();
        const double* bv = node.inputs[1]->values().data();
        double* ga = node.inputs[0]->grad().data();
        double* gb = node.inputs[1]->grad().data();
        for (int64_t bi = 0; bi < batch; ++bi) {
            mm_nt(g + bi * m * n, bv + bi * k * n, ga + bi * m * k, m, n, k);
            mm_tn(av + bi * m * k, g + bi * m * n, gb + bi * k * n, m, k, n);
        }
    });
}

namespace {

std::vector<int64_t> permute_shape(const std::vector<int64_t>& shape,
                                   const std::vector<int64_t>& perm) {
    std::vector<int64_t> out(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) out[i] = shape[static_cast<size_t>(perm[i])];
    return out;
}

void permute_into(const Tensor& src, const std::vector<int64_t>& perm, Tensor& dst_like,
                  std::span<const double> src_vals, std::span<double> dst_vals) {
    const auto& in_shape = src.shape();
    const size_t nd = in_shape.size();
    std::vector<int64_t> in_strides(nd, 1);
    for (size_t i = nd - 1; i > 0; --i) in_strides[i - 1] = in_strides[i] * in_shape[i];
    const auto& out_shape = dst_like.shape();
    std::vector<int64_t> idx(nd, 0);
    const int64_t total = src.numel();
    for (int64_t flat = 0; flat < total; ++flat) {
        int64_t src_off = 0;
        for (size_t i = 0; i < nd; ++i)
            src_off += idx[i] * in_strides[static_cast<size_t>(perm[i])];
        dst_vals[static_cast<size_t>(flat)] = src_vals[static_cast<size_t>(src_off)];
        for (size_t i = nd; i-- > 0;) {
            if (++idx[i] < out_shape[i]) break;
            idx[i] = 0;
        }
    }
}

}  // namespace

TensorPtr Graph::permute(const TensorPtr& a, const std::vector<int64_t>& perm) {
    const size_t nd = a->shape().size();
    if (perm.size() != nd) fail(ErrorKind::shape, "permute: rank mismatch");
    std::vector<bool> seen(nd, false);
    for (int64_t p : perm) {
        if (p < 0 || p >= static_cast<int64_t>(nd) || seen[static_cast<size_t>(p)])
            fail(ErrorKind::shape, "permute: invalid permutation");
        seen[static_cast<size_t>(p)] = true;
    }
    Tensor out(permute_shape(a->shape(), perm));
    permute_into(*a, perm, out, a->values(), out.values());
    std::vector<int64_t> inv(nd);
    for (size_t i = 0; i < nd; ++i) inv[static_cast<size_t>(perm[i])] = static_cast<int64_t>(i);
    return record({a}, std::move(out), [inv](const Node& node) {
        // grad flows back through the inverse permutation
        Tensor tmp(node.inputs[0]->shape());
        permute_into(*node.output, inv, tmp, node.output->grad(), tmp.values());
        auto ga = node.inputs[0]->grad();
        auto tv = tmp.values();
        for (size_t i = 0; i < ga.size(); ++i) ga[i] += tv[i];
    });
}

TensorPtr Graph::transpose(const TensorPtr& a) {
    const size_t nd = a->shape().size();
    if (nd < 2) fail(ErrorKind::shape, "transpose needs rank >= 2, got ", shape_str(a->shape()));
    std::vector<int64_t> perm(nd);
    for (size_t i = 0; i < nd; ++i) perm[i] = static_cast<int64_t>(i);
    std::swap(perm[nd - 1], perm[nd - 2]);
    return permute(a, perm);
}

TensorPtr Graph::reshape(const TensorPtr& a, std::vector<int64_t> shape) {
    if (shape_numel(shape) != a->numel())
        fail(ErrorKind::shape, "reshape: ", shape_str(a->shape()), " to ", shape_str(shape),
             " changes element count");
    Tensor out(std::move(shape), std::vector<double>(a->values().begin(), a->values().end()));
    return record({a}, std::move(out), [](const Node& node) {
        auto g = node.output->grad();
        auto ga = node.inputs[0]->grad();
        for (size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    });
}

TensorPtr Graph::embedding(const TensorPtr& table, const std::vector<int32_t>& ids,
                           std::vector<int64_t> id_shape) {
    if (table->ndim() != 2) fail(ErrorKind::shape, "embedding table must be 2-d");
    const int64_t vocab = table->dim(0), width = table->dim(1);
    if (shape_numel(id_shape) != static_cast<int64_t>(ids.size()))
        fail(ErrorKind::shape, "embedding: id shape does not match id count");
    for (int32_t id : ids)
        if (id < 0 || id >= vocab)
            fail(ErrorKind::data, "embedding: id ", id, " out of range [0, ", vocab, ")");
    std::vector<int64_t> out_shape = std::move(id_shape);
    out_shape.push_back(width);
    Tensor out(std::move(out_shape));
    auto tv = table->values();
    auto ov = out.values();
    for (size_t r = 0; r < ids.size(); ++r)
        std::memcpy(ov.data() + r * width, tv.data() + static_cast<int64_t>(ids[r]) * width,
                    static_cast<size_t>(width) * sizeof(double));
    return record({table}, std::move(out), [ids, width](const Node& node) {
        auto g = node.output->grad();
        auto gt = node.inputs[0]->grad();
        for (size_t r = 0; r < ids.size(); ++r) {
            double* dst = gt.data() + static_cast<int64_t>(ids[r]) * width;
            const double* src = g.data() + r * width;
            for (int64_t j = 0; j < width; ++j) dst[j] += src[j];
        }
    });
}

TensorPtr Graph::layer_norm(const TensorPtr& x, const TensorPtr& gain, const TensorPtr& bias,
                            double eps) {
    const int64_t d = x->dim(-1);
    if (gain->numel() != d || bias->numel() != d)
        fail(ErrorKind::shape, "layer_norm: gain/bias length must equal last extent ", d);
    const int64_t rows = x->numel() / d;
    Tensor out(x->shape());
    auto xv = x->values();
    auto gv = gain->values();
    auto bv = bias->values();
    auto ov = out.values();
    for (int64_t r = 0; r < rows; ++r) {
        const double* row = xv.data() + r * d;
        double mean = 0.0;
        for (int64_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t j = 0; j < d; ++j) {
            double c = row[j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        double inv = 1.0 / std::sqrt(var + eps);
        double* orow = ov.data() + r * d;
        for (int64_t j = 0; j < d; ++j) orow[j] = (row[j] - mean) * inv * gv[j] + bv[j];
    }
    return record({x, gain, bias}, std::move(out), [rows, d, eps](const Node& node) {
        auto g = node.output->grad();
        auto xv = node.inputs[0]->values();
        auto gv = node.inputs[1]->values();
        auto gx = node.inputs[0]->grad();
        auto gg = node.inputs[1]->grad();
        auto gb = node.inputs[2]->grad();
        std::vector<double> xhat(static_cast<size_t>(d));
        for (int64_t r = 0; r < rows; ++r) {
            const double* row = xv.data() + r * d;
            const double* grow = g.data() + r * d;
            double mean = 0.0;
            for (int64_t j = 0; j < d; ++j) mean += row[j];
            mean /= static_cast<double>(d);
            double var = 0.0;
            for (int64_t j = 0; j < d; ++j) {
                double c = row[j] - mean;
                var += c * c;
            }
            var /= static_cast<double>(d);
            double inv = 1.0 / std::sqrt(var + eps);
            double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
            for (int64_t j = 0; j < d; ++j) {
                xhat[static_cast<size_t>(j)] = (row[j] - mean) * inv;
                double dxhat = grow[j] * gv[j];
                sum_dxhat += dxhat;
                sum_dxhat_xhat += dxhat * xhat[static_cast<size_t>(j)];
            }
            double* gxrow = gx.data() + r * d;
            for (int64_t j = 0; j < d; ++j) {
                double dxhat = grow[j] * gv[j];
                gxrow[j] += inv * (dxhat - sum_dxhat / d - xhat[static_cast<size_t>(j)] *
                                                              sum_dxhat_xhat / d);
                gg[j] += grow[j] * xhat[static_cast<size_t>(j)];
                gb[j] += grow[j];
            }
        }
    });
}

TensorPtr Graph::softmax(const TensorPtr& a) {
    const int64_t v = a->dim(-1);
    const int64_t rows = a->numel() / v;
    Tensor out(a->shape());
    auto av = a->values();
    auto ov = out.values();
    for (int64_t r = 0; r < rows; ++r) {
        const double* row = av.data() + r * v;
        double* orow = ov.data() + r * v;
        double mx = row[0];
        for (int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        double s = 0.0;
        for (int64_t j = 0; j < v; ++j) {
            orow[j] = std::exp(row[j] - mx);
            s += orow[j];
        }
        double inv = 1.0 / s;
        for (int64_t j = 0; j < v; ++j) orow[j] *= inv;
    }
    return record({a}, std::move(out), [rows, v](const Node& node) {
        auto g = node.output->grad();
        auto y = node.output->values();
        auto ga = node.inputs[0]->grad();
        for (int64_t r = 0; r < rows; ++r) {
            const double* grow = g.data() + r * v;
            const double* yrow = y.data() + r * v;
            double dot = 0.0;
            for (int64_t j = 0; j < v; ++j) dot += grow[j] * yrow[j];
            double* garow = ga.data() + r * v;
            for (int64_t j = 0; j < v; ++j) garow[j] += yrow[j] * (grow[j] - dot);
        }
    });
}

TensorPtr Graph::log_softmax(const TensorPtr& a) {
    const int64_t v = a->dim(-1);
    const int64_t rows = a->numel() / v;
    Tensor out(a->shape());
    auto av = a->values();
    auto ov = out.values();
    for (int64_t r = 0; r < rows; ++r) {
        const double* row = av.data() + r * v;
        double* orow = ov.data() + r * v;
        double mx = row[0];
        for (int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        double s = 0.0;
        for (int64_t j = 0; j < v; ++j) s += std::exp(row[j] - mx);
        double lse = mx + std::log(s);
        for (int64_t j = 0; j < v; ++j) orow[j] = row[j] - lse;
    }
    return record({a}, std::move(out), [rows, v](const Node& node) {
        auto g = node.output->grad();
        auto y = node.output->values();
        auto ga = node.inputs[0]->grad();
        for (int64_t r = 0; r < rows; ++r) {
            const double* grow = g.data() + r * v;
            const double* yrow = y.data() + r * v;
            double gsum = 0.0;
            for (int64_t j = 0; j < v; ++j) gsum += grow[j];
            double* garow = ga.data() + r * v;
            for (int64_t j = 0; j < v; ++j) garow[j] += grow[j] - std::exp(yrow[j]) * gsum;
        }
    });
}

TensorPtr Graph::sum(const TensorPtr& a) {
    double s = 0.0;
    for (double v : a->values()) s += v;
    return record({a}, Tensor::scalar(s), [](const Node& node) {
        double g = node.output->grad()[0];
        auto ga = node.inputs[0]->grad();
        for (double& x : ga) x += g;
    });
}

TensorPtr Graph::mean(const TensorPtr& a) {
    const double inv_n = 1.0 / static_cast<double>(a->numel());
    double s = 0.0;
    for (double v : a->values()) s += v;
    return record({a}, Tensor::scalar(s * inv_n), [inv_n](const Node& node) {
        double g = node.output->grad()[0] * inv_n;
        auto ga = node.inputs[0]->grad();
        for (double& x : ga) x += g;
    });
}

TensorPtr Graph::sum_last(const TensorPtr& a) {
    if (a->ndim() < 2) fail(ErrorKind::shape, "sum_last needs rank >= 2");
    const int64_t v = a->dim(-1);
    const int64_t rows = a->numel() / v;
    std::vector<int64_t> out_shape(a->shape().begin(), a->shape().end() - 1);
    Tensor out(std::move(out_shape));
    auto av = a->values();
    auto ov = out.values();
    for (int64_t r = 0; r < rows; ++r) {
        double s = 0.0;
        const double* row = av.data() + r * v;
        for (int64_t j = 0; j < v; ++j) s += row[j];
        ov[r] = s;
    }
    return record({a}, std::move(out), [rows, v](const Node& node) {
        auto g = node.output->grad();
        auto ga = node.inputs[0]->grad();
        for (int64_t r = 0; r < rows; ++r) {
            double gr = g[r];
            double* row = ga.data() + r * v;
            for (int64_t j = 0; j < v; ++j) row[j] += gr;
        }
    });
}

TensorPtr Graph::cross_entropy(const TensorPtr& logits, const std::vector<int32_t>& targets,
                               const std::vector<double>& mask) {
    const int64_t v = logits->dim(-1);
    const int64_t rows = logits->numel() / v;
    if (static_cast<int64_t>(targets.size()) != rows ||
        static_cast<int64_t>(mask.size()) != rows)
        fail(ErrorKind::shape, "cross_entropy: targets/mask length must be ", rows);
    double count = 0.0;
    for (double m : mask) count += m;
    if (count <= 0.0) fail(ErrorKind::contract, "cross_entropy: no active positions in mask");
    auto lv = logits->values();
    double total = 0.0;
    for (int64_t r = 0; r < rows; ++r) {
        if (mask[static_cast<size_t>(r)] == 0.0) continue;
        int32_t t = targets[static_cast<size_t>(r)];
        if (t < 0 || t >= v) fail(ErrorKind::data, "cross_entropy: target ", t, " out of range");
        const double* row = lv.data() + r * v;
        double mx = row[0];
        for (int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        double s = 0.0;
        for (int64_t j = 0; j < v; ++j) s += std::exp(row[j] - mx);
        total += (mx + std::log(s) - row[t]) * mask[static_cast<size_t>(r)];
    }
    const double inv_count = 1.0 / count;
    return record({logits}, Tensor::scalar(total * inv_count),
                  [rows, v, targets, mask, inv_count](const Node& node) {
                      double gout = node.output->grad()[0] * inv_count;
                      auto lv = node.inputs[0]->values();
                      auto gl = node.inputs[0]->grad();
                      for (int64_t r = 0; r < rows; ++r) {
                          double m = mask[static_cast<size_t>(r)];
                          if (m == 0.0) continue;
                          const double* row = lv.data() + r * v;
                          double* grow = gl.data() + r * v;
                          double mx = row[0];
                          for (int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
                          double s = 0.0;
                          for (int64_t j = 0; j < v; ++j) s += std::exp(row[j] - mx);
                          double inv_s = 1.0 / s;
                          int32_t t = targets[static_cast<size_t>(r)];
                          for (int64_t j = 0; j < v; ++j) {
                              double p = std::exp(row[j] - mx) * inv_s;
                              grow[j] += gout * m * (p - (j == t ? 1.0 : 0.0));
                          }
                      }
                  });
}

void Graph::backward(const TensorPtr& loss) {
    if (!recording_) fail(ErrorKind::contract, "backward on a non-recording graph");
    if (!loss->is_scalar())
        fail(ErrorKind::contract, "backward: loss must be scalar, got ",
             shape_str(loss->shape()));
    loss->grad()[0] = 1.0;
    for (size_t i = nodes_.size(); i-- > 0;) {
        const Node& node = nodes_[i];
        if (!node.output->has_grad()) continue;  // branch did not reach the loss
        node.backward(node);
    }
}

double grad_check(const std::function<TensorPtr(Graph&)>& build,
                  const std::vector<TensorPtr>& params, double eps) {
    if (eps <= 0.0) fail(ErrorKind::contract, "grad_check: eps must be > 0");

    auto eval = [&]() {
        Graph g(false);
        TensorPtr loss = build(g);
        double v = loss->item();
        if (!std::isfinite(v)) fail(ErrorKind::numeric, "grad_check: non-finite loss ", v);
        return v;
    };

    for (const TensorPtr& p : params) p->zero_grad();
    Graph g;
    TensorPtr loss = build(g);
    if (!std::isfinite(loss->item()))
        fail(ErrorKind::numeric, "grad_check: non-finite loss ", loss->item());
    g.backward(loss);

    std::vector<std::vector<double>> autodiff;
    autodiff.reserve(params.size());
    for (const TensorPtr& p : params) {
        auto gr = p->grad();
        autodiff.emplace_back(gr.begin(), gr.end());
    }

    double worst = 0.0;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = *params[pi];
        for (int64_t i = 0; i < p.numel(); ++i) {
            const double orig = p[i];
            p[i] = orig + eps;
            double up = eval();
            p[i] = orig - eps;
            double down = eval();
            p[i] = orig;
            double fd = (up - down) / (2.0 * eps);
            double rel = std::abs(autodiff[pi][static_cast<size_t>(i)] - fd) /
                         (std::abs(fd) + 1e-8);
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

}  // namespace bitforge
