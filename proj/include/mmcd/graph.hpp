#pragma once

#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

#include "mmcd/param.hpp"
#include "mmcd/tensor.hpp"

namespace mmcd {

// Symmetric sparse matrix in CSR form (graph adjacency).
struct SparseMatrix {
    long rows = 0;
    long cols = 0;
    std::vector<long> rowptr;
    std::vector<long> colidx;
    std::vector<double> vals;
    bool symmetric = false;

    Tensor dense() const;
};

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode tape. One Graph instance per forward pass; ops append nodes
// in topological order, backward() walks them in reverse. Nodes whose inputs
// are all constants or frozen parameters carry no closures, so fully frozen
// subnetworks cost nothing on the backward pass.
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var constant(Tensor v);
    Var param(Parameter& p);

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var x, double s);
    Var add_scalar(Var x, double c);
    Var neg(Var x) { return scale(x, -1.0); }

    Var relu(Var x);
    Var gelu(Var x);
    Var sigmoid(Var x);
    Var softmax_last(Var x);

    Var reshape(Var x, Shape shape);
    Var permute(Var x, const std::vector<int>& perm);
    // out[i] = in[idx[i]]; idx values index the flattened input.
    Var index_map(Var x, std::shared_ptr<std::vector<long>> idx, Shape out_shape);
    Var concat(const std::vector<Var>& xs, int dim);

    // x: (..., K), w: (K, N) -> (..., N)
    Var linear(Var x, Var w);
    // a: (B, M, K), b: (B, K, N) with optional transposes on the last two dims.
    Var bmm(Var a, Var b, bool ta = false, bool tb = false);
    Var conv2d(Var x, Var w, Var b, int stride, int pad);
    Var spmm(std::shared_ptr<SparseMatrix> a, Var x);

    Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
    Var batch_norm2d(Var x, Var gamma, Var beta, Parameter& run_mean, Parameter& run_var,
                     bool training, double momentum = 0.1, double eps = 1e-5);

    Var avg_pool2x2(Var x);
    Var upsample_bilinear(Var x, int factor);
    // a, b: (N, C, H, W) -> (N, 1, H, W) euclidean distance across channels.
    Var channel_l2_distance(Var a, Var b);

    Var sum_all(Var x);
    Var mean_all(Var x);
    // logits: (N, C, H, W), labels: (N, H, W); weighted mean over pixels.
    Var cross_entropy(Var logits, const IntTensor& labels, const std::vector<double>& class_weights);

    void backward(Var root);

    const Tensor& val(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
    bool needs_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].needs_grad; }
    // Gradient of the last backward() root w.r.t. node v (zeros if untouched).
    Tensor grad_of(Var v);

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool needs_grad = false;
        Parameter* leaf = nullptr;
        std::function<void()> back;
    };

    Var make(Tensor value, bool needs_grad, std::function<void()> back = nullptr);
    Tensor& gbuf(int id);
    bool ng(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
    const Tensor& v(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }

    std::vector<Node> nodes_;
    std::unordered_map<const Parameter*, int> leaf_ids_;
};

// Grid graph adjacency over H x W nodes (row-major), 4- or 8-connected,
// with self loops, symmetrically normalized: D^-1/2 (A + I) D^-1/2.
std::shared_ptr<SparseMatrix> grid_adjacency(long h, long w, int connectivity);

}  // namespace mmcd
