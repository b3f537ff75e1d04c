#pragma once

#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "planllm/common.hpp"

namespace planllm {

// A named trainable (or frozen) matrix. Gradients accumulate into `grad`
// across Tape::backward calls until the optimizer zeroes them.
struct Parameter {
    std::string name;
    Mat value;
    Mat grad;

    Parameter() = default;
    Parameter(std::string n, Mat v) : name(std::move(n)), value(std::move(v)) {
        grad = Mat::Zero(value.rows(), value.cols());
    }

    void zero_grad() { grad.setZero(); }
};

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid until Tape::clear().
struct Var {
    Tape* tape = nullptr;
    int id = -1;
    bool valid() const { return tape != nullptr && id >= 0; }
};

// Reverse-mode tape over dense double matrices. Every op appends a node
// whose inputs precede it, so reverse iteration is a topological order.
// Row convention: a "vector" is a 1 x d row; sequences are (tokens x d).
class Tape {
public:
    Var constant(Mat value);
    Var param(Parameter& p);  // one node per Parameter per tape

    Var matmul(Var a, Var b);
    Var matmul_nt(Var a, Var b);  // a * b^T
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul_elem(Var a, Var b);
    Var scale(Var a, double s);
    Var add_rowwise(Var a, Var row);  // broadcast 1 x d row over rows of a
    Var concat_rows(std::span<const Var> parts);
    Var concat_cols(std::span<const Var> parts);
    Var slice_rows(Var a, Eigen::Index start, Eigen::Index count);
    Var tanh(Var a);
    Var gelu(Var a);  // exact erf form
    // Rowwise softmax; `add_mask` entries are added to the logits first
    // (-inf entries produce exactly zero weight).
    Var softmax_rows(Var a, const Mat* add_mask = nullptr);
    Var layer_norm(Var a, Var gain, Var bias, double eps = 1e-6);
    Var mean_rows(Var a);          // (n x d) -> (1 x d)
    Var l2_normalize_rows(Var a);  // throws NumericError on near-zero rows
    Var sum_all(Var a);            // 1 x 1
    Var mean_all(Var a);           // 1 x 1
    Var logsumexp_all(Var a);      // 1 x 1 over every entry
    Var logsumexp_diag(Var a);     // 1 x 1 over the main diagonal (square input)
    Var gather_rows(Var table, std::vector<int> ids);
    // Mean softmax cross-entropy of each row against its target index.
    Var cross_entropy_rows(Var logits, std::vector<int> targets);
    // Mean binary cross-entropy with logits; `logits` n x 1, targets in {0,1}.
    Var bce_with_logits(Var logits, Mat targets);

    const Mat& value(Var v) const { return nodes_[check(v)].value; }
    const Mat& grad(Var v) const { return nodes_[check(v)].grad; }

    // Seeds d(loss)=1 and accumulates gradients into every Parameter
    // reachable from `loss`. `loss` must be 1 x 1.
    void backward(Var loss);

    void clear();
    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Mat value;
        Mat grad;  // empty until touched
        std::function<void(Tape&)> back;
        Parameter* parameter = nullptr;
    };

    std::vector<Node> nodes_;
    std::unordered_map<Parameter*, int> param_nodes_;

    int check(Var v) const;
    Var push(Mat value, std::function<void(Tape&)> back = nullptr);
    Mat& grad_of(int id);
    bool has_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad.size() > 0; }
};

}  // namespace planllm
