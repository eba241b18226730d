#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

namespace ucrn {

// Dense row-major f64 tensor. Values and gradient share one record so every
// handle to a tensor sees the same accumulated gradient.
struct TensorData {
  std::vector<std::size_t> shape;
  std::vector<double> v;
  bool requires_grad = false;
  std::vector<double> grad;  // allocated lazily, same length as v
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorData> d) : d_(std::move(d)) {}

  static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
  static Tensor full(std::vector<std::size_t> shape, double value, bool requires_grad = false);
  static Tensor from(std::vector<std::size_t> shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return d_ != nullptr; }
  const std::vector<std::size_t>& shape() const { return d_->shape; }
  std::size_t rank() const { return d_->shape.size(); }
  std::size_t numel() const { return d_->v.size(); }
  // matrix view: rank-1 tensors count as a single row
  std::size_t rows() const { return rank() == 2 ? d_->shape[0] : 1; }
  std::size_t cols() const { return rank() == 2 ? d_->shape[1] : numel(); }

  double* data() { return d_->v.data(); }
  const double* data() const { return d_->v.data(); }
  std::vector<double>& values() { return d_->v; }
  const std::vector<double>& values() const { return d_->v; }
  double item() const;  // scalar only

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool b) { d_->requires_grad = b; }
  bool has_grad() const { return !d_->grad.empty(); }
  std::vector<double>& grad();             // allocates zeros on first touch
  const std::vector<double>& grad() const; // throws if absent
  void zero_grad();
  void clear_grad() { d_->grad.clear(); }

  TensorData* raw() const { return d_.get(); }
  std::shared_ptr<TensorData> ptr() const { return d_; }

  Tensor detached_copy() const;  // fresh buffer, no grad, requires_grad=false

 private:
  std::shared_ptr<TensorData> d_;
};

std::string shape_str(const std::vector<std::size_t>& s);

// Dynamic tape. Ops record a backward closure per produced tensor; backward()
// replays closures in reverse insertion order exactly once. A graph and the
// tensors it produced belong to one thread; distinct graphs share nothing.
class Graph {
 public:
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor scale(const Tensor& x, double c);
  Tensor add_const(const Tensor& x, double c);
  Tensor add_bias(const Tensor& x, const Tensor& bias);   // bias over trailing dim
  Tensor scale_by(const Tensor& x, const Tensor& s);      // s is a 1-element tensor
  Tensor matmul(const Tensor& a, const Tensor& b);
  Tensor matmul_nt(const Tensor& a, const Tensor& b);     // a * b^T
  Tensor transpose(const Tensor& x);
  Tensor gelu(const Tensor& x);       // exact erf form
  Tensor sigmoid(const Tensor& x);
  Tensor exp(const Tensor& x);
  Tensor clamp_max(const Tensor& x, double cap);
  Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                    double eps = 1e-5);
  Tensor softmax_rows(const Tensor& x);
  Tensor causal_softmax(const Tensor& scores);  // row i attends to columns <= i
  Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& targets);
  Tensor sum(const Tensor& x);
  Tensor mean_rows(const Tensor& x);            // m x n -> 1 x n
  Tensor take_rows(const Tensor& x, const std::vector<int>& idx);
  Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t len);
  Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t len);
  Tensor concat_rows(const std::vector<Tensor>& parts);
  Tensor concat_cols(const std::vector<Tensor>& parts);
  Tensor l2_normalize_rows(const Tensor& x);    // zero row stays zero

  void backward(const Tensor& loss);
  std::size_t size() const { return nodes_.size(); }
  void clear();

 private:
  struct Node {
    std::shared_ptr<TensorData> out;
    std::function<void()> backward;
  };
  std::vector<Node> nodes_;
  std::unordered_map<const TensorData*, std::size_t> node_of_;

  Tensor make(std::vector<std::size_t> shape, bool requires_grad);
  void record(const Tensor& out, std::function<void()> fn);
};

void zero_grads(const std::vector<Tensor>& params);

}  // namespace ucrn
