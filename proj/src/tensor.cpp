#include "ucrn/tensor.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace ucrn {

namespace {

std::size_t shape_numel(const std::vector<std::size_t>& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

// accumulate into grad of t if it participates in differentiation
inline std::vector<double>* grad_buf(TensorData* t) {
  if (!t->requires_grad) return nullptr;
  if (t->grad.empty()) t->grad.assign(t->v.size(), 0.0);
  return &t->grad;
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw std::runtime_error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
}

constexpr double kInvSqrt2 = 0.7071067811865476;
constexpr double kInvSqrt2Pi = 0.3989422804014327;

}  // namespace

std::string shape_str(const std::vector<std::size_t>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
  auto d = std::make_shared<TensorData>();
  d->shape = std::move(shape);
  d->v.assign(shape_numel(d->shape), 0.0);
  d->requires_grad = requires_grad;
  return Tensor(std::move(d));
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (double& x : t.values()) x = value;
  return t;
}

Tensor Tensor::from(std::vector<std::size_t> shape, std::vector<double> values,
                    bool requires_grad) {
  if (shape_numel(shape) != values.size())
    throw std::runtime_error("tensor: " + std::to_string(values.size()) +
                             " values for shape " + shape_str(shape));
  auto d = std::make_shared<TensorData>();
  d->shape = std::move(shape);
  d->v = std::move(values);
  d->requires_grad = requires_grad;
  return Tensor(std::move(d));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

double Tensor::item() const {
  if (numel() != 1) throw std::runtime_error("item: tensor has " + std::to_string(numel()) + " elements");
  return d_->v[0];
}

std::vector<double>& Tensor::grad() {
  if (d_->grad.empty()) d_->grad.assign(d_->v.size(), 0.0);
  return d_->grad;
}

const std::vector<double>& Tensor::grad() const {
  if (d_->grad.empty()) throw std::runtime_error("grad: no gradient accumulated");
  return d_->grad;
}

void Tensor::zero_grad() {
  d_->grad.assign(d_->v.size(), 0.0);
}

Tensor Tensor::detached_copy() const {
  auto d = std::make_shared<TensorData>();
  d->shape = d_->shape;
  d->v = d_->v;
  d->requires_grad = false;
  return Tensor(std::move(d));
}

void zero_grads(const std::vector<Tensor>& params) {
  for (const Tensor& p : params) const_cast<Tensor&>(p).zero_grad();
}

Tensor Graph::make(std::vector<std::size_t> shape, bool requires_grad) {
  return Tensor::zeros(std::move(shape), requires_grad);
}

void Graph::record(const Tensor& out, std::function<void()> fn) {
  node_of_[out.raw()] = nodes_.size();
  nodes_.push_back(Node{out.ptr(), std::move(fn)});
}

void Graph::clear() {
  nodes_.clear();
  node_of_.clear();
}

void Graph::backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw std::runtime_error("backward: loss must be scalar, got " + shape_str(loss.shape()));
  auto it = node_of_.find(loss.raw());
  if (it == node_of_.end())
    throw std::runtime_error("backward: loss was not produced by this graph");
  // op outputs start each pass clean so repeated backward calls through the
  // same graph contribute exactly one gradient each; leaves keep accumulating
  for (std::size_t i = 0; i <= it->second; ++i)
    nodes_[i].out->grad.assign(nodes_[i].out->v.size(), 0.0);
  loss.raw()->grad.assign(1, 1.0);
  for (std::size_t i = it->second + 1; i-- > 0;) {
    nodes_[i].backward();
  }
}

Tensor Graph::add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  Tensor out = make(a.shape(), a.requires_grad() || b.requires_grad());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  if (out.requires_grad()) {
    auto ad = a.ptr(), bd = b.ptr(), od = out.ptr();
    record(out, [ad, bd, od] {
      const auto& g = od->grad;
      if (auto* ga = grad_buf(ad.get()))
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
      if (auto* gb = grad_buf(bd.get()))
        for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i];
    });
  }
  return out;
}

Tensor Graph::sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  Tensor out = make(a.shape(), a.requires_grad() || b.requires_grad());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
  if (out.requires_grad()) {
    auto ad = a.ptr(), bd = b.ptr(), od = out.ptr();
    record(out, [ad, bd, od] {
      const auto& g = od->grad;
      if (auto* ga = grad_buf(ad.get()))
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
      if (auto* gb = grad_buf(bd.get()))
        for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
    });
  }
  return out;
}

Tensor Graph::mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  Tensor out = make(a.shape(), a.requires_grad() || b.requires_grad());
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (out.requires_grad()) {
    auto ad = a.ptr(), bd = b.ptr(), od = out.ptr();
    record(out, [ad, bd, od] {
      const auto& g = od->grad;
      if (auto* ga = grad_buf(ad.get()))
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bd->v[i];
      if (auto* gb = grad_buf(bd.get()))
        for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * ad->v[i];
    });
  }
  return out;
}

Tensor Graph::scale(const Tensor& x, double c) {
  Tensor out = make(x.shape(), x.requires_grad());
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] * c;
  if (out.requires_grad()) {
    auto xd = x.ptr(); auto od = out.ptr();
    record(out, [xd, od, c] {
      if (auto* gx = grad_buf(xd.get()))
        for (std::size_t i = 0; i < od->grad.size(); ++i) (*gx)[i] += od->grad[i] * c;
    });
  }
  return out;
}

Tensor Graph::add_const(const Tensor& x, double c) {
  Tensor out = make(x.shape(), x.requires_grad());
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] + c;
  if (out.requires_grad()) {
    auto xd = x.ptr(); auto od = out.ptr();
    record(out, [xd, od] {
      if (auto* gx = grad_buf(xd.get()))
        for (std::size_t i = 0; i < od->grad.size(); ++i) (*gx)[i] += od->grad[i];
    });
  }
  return out;
}

Tensor Graph::add_bias(const Tensor& x, const Tensor& bias) {
  const std::size_t m = x.rows(), n = x.cols();
  if (bias.numel() != n)
    throw std::runtime_error("add_bias: shape mismatch " + shape_str(x.shape()) + " vs " +
                             shape_str(bias.shape()));
  Tensor out = make(x.shape(), x.requires_grad() || bias.requires_grad());
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c)
      out.data()[r * n + c] = x.data()[r * n + c] + bias.data()[c];
  if (out.requires_grad()) {
    auto xd = x.ptr(), bd = bias.ptr(), od = out.ptr();
    record(out, [xd, bd, od, m, n] {
      const auto& g = od->grad;
      if (auto* gx = grad_buf(xd.get()))
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
      if (auto* gb = grad_buf(bd.get()))
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < n; ++c) (*gb)[c] += g[r * n + c];
    });
  }
  return out;
}

Tensor Graph::scale_by(const Tensor& x, const Tensor& s) {
  if (s.numel() != 1) throw std::runtime_error("scale_by: scale must be 1-element, got " + shape_str(s.shape()));
  Tensor out = make(x.shape(), x.requires_grad() || s.requires_grad());
  const double sv = s.data()[0];
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] * sv;
  if (out.requires_grad()) {
    auto xd = x.ptr(), sd = s.ptr(), od = out.ptr();
    record(out, [xd, sd, od] {
      const auto& g = od->grad;
      const double sv2 = sd->v[0];
      if (auto* gx = grad_buf(xd.get()))
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * sv2;
      if (auto* gs = grad_buf(sd.get())) {
        double acc = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xd->v[i];
        (*gs)[0] += acc;
      }
    });
  }
  return out;
}

Tensor Graph::matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0])
    throw std::runtime_error("matmul: shape mismatch " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor out = make({m, n}, a.requires_grad() || b.requires_grad());
  const double* A = a.data();
  const double* B = b.data();
  double* C = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* Ci = C + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      if (aip == 0.0) continue;
      const double* Bp = B + p * n;
      for (std::size_t j = 0; j < n; ++j) Ci[j] += aip * Bp[j];
    }
  }
  if (out.requires_grad()) {
    auto ad = a.ptr(), bd = b.ptr(), od = out.ptr();
    record(out, [ad, bd, od, m, k, n] {
      const double* G = od->grad.data();
      if (auto* ga = grad_buf(ad.get())) {
        // dA += G * B^T
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            const double* Gi = G + i * n;
            const double* Bp = bd->v.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) acc += Gi[j] * Bp[j];
            (*ga)[i * k + p] += acc;
          }
      }
      if (auto* gb = grad_buf(bd.get())) {
        // dB += A^T * G
        for (std::size_t p = 0; p < k; ++p)
          for (std::size_t i = 0; i < m; ++i) {
            const double aip = ad->v[i * k + p];
            if (aip == 0.0) continue;
            const double* Gi = G + i * n;
            double* gbp = gb->data() + p * n;
            for (std::size_t j = 0; j < n; ++j) gbp[j] += aip * Gi[j];
          }
      }
    });
  }
  return out;
}

Tensor Graph::matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[1])
    throw std::runtime_error("matmul_nt: shape mismatch " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()) + "^T");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  Tensor out = make({m, n}, a.requires_grad() || b.requires_grad());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      const double* Ai = a.data() + i * k;
      const double* Bj = b.data() + j * k;
      for (std::size_t p = 0; p < k; ++p) acc += Ai[p] * Bj[p];
      out.data()[i * n + j] = acc;
    }
  if (out.requires_grad()) {
    auto ad = a.ptr(), bd = b.ptr(), od = out.ptr();
    record(out, [ad, bd, od, m, k, n] {
      const double* G = od->grad.data();
      if (auto* ga = grad_buf(ad.get())) {
        // dA += G * B
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const double g = G[i * n + j];
            if (g == 0.0) continue;
            const double* Bj = bd->v.data() + j * k;
            double* gai = ga->data() + i * k;
            for (std::size_t p = 0; p < k; ++p) gai[p] += g * Bj[p];
          }
      }
      if (auto* gb = grad_buf(bd.get())) {
        // dB += G^T * A
        for (std::size_t j = 0; j < n; ++j)
          for (std::size_t i = 0; i < m; ++i) {
            const double g = G[i * n + j];
            if (g == 0.0) continue;
            const double* Ai = ad->v.data() + i * k;
            double* gbj = gb->data() + j * k;
            for (std::size_t p = 0; p < k; ++p) gbj[p] += g * Ai[p];
          }
      }
    });
  }
  return out;
}

Tensor Graph::transpose(const Tensor& x) {
  if (x.rank() != 2) throw std::runtime_error("transpose: need rank 2, got " + shape_str(x.shape()));
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  Tensor out = make({n, m}, x.requires_grad());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.data()[j * m + i] = x.data()[i * n + j];
  if (out.requires_grad()) {
    auto xd = x.ptr(); auto od = out.ptr();
    record(out, [xd, od, m, n] {
      if (auto* gx = grad_buf(xd.get()))
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) (*gx)[i * n + j] += od->grad[j * m + i];
    });
  }
  return out;
}

Tensor Graph::gelu(const Tensor& x) {
  Tensor out = make(x.shape(), x.requires_grad());
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) {
    const double v = x.data()[i];
    out.data()[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  }
  if (out.requires_grad()) {
    auto xd = x.ptr(); auto od = out.ptr();
    record(out, [xd, od] {
      if (auto* gx = grad_buf(xd.get()))
        for (std::size_t i = 0; i < od->grad.size(); ++i) {
          const double v = xd->v[i];
          const double phi = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
          const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
          (*gx)[i] += od->grad[i] * (phi + v * pdf);
        }
    });
  }
  return out;
}

Tensor Graph::sigmoid(const Tensor& x) {
  Tensor out = make(x.shape(), x.requires_grad());
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = 1.0 / (1.0 + std::exp(-x.data()[i]));
  if (out.requires_grad()) {
    auto xd = x.ptr(); auto od = out.ptr();
    record(out, [xd, od] {
      if (auto* gx = grad_buf(xd.get()))
        for (std::size_t i = 0; i < od->grad.size(); ++i) {
          const double s = od->v[i];
          (*gx)[i] += od->grad[i] * s * (1.0 - s);
        }
    });
  }
  return out;
}

Tensor Graph::exp(const Tensor& x) {
  Tensor out = make(x.shape(), x.requires_grad());
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = std::exp(x.data()[i]);
  if (out.requires_grad()) {
    auto xd = x.ptr(); auto od = out.ptr();
    record(out, [xd, od] {
      if (auto* gx = grad_buf(xd.get()))
        for (std::size_t i = 0; i < od->grad.size(); ++i) (*gx)[i] += od->grad[i] * od->v[i];
    });
  }
  return out;
}

Tensor Graph::clamp_max(const Tensor& x, double cap) {
  Tensor out = make(x.shape(), x.requires_grad());
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] < cap ? x.data()[i] : cap;
  if (out.requires_grad()) {
    auto xd = x.ptr(); auto od = out.ptr();
    record(out, [xd, od, cap] {
      if (auto* gx = grad_buf(xd.get()))
        for (std::size_t i = 0; i < od->grad.size(); ++i)
          if (xd->v[i] < cap) (*gx)[i] += od->grad[i];
    });
  }
  return out;
}

Tensor Graph::layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t m = x.rows(), n = x.cols();
  if (gain.numel() != n || bias.numel() != n)
    throw std::runtime_error("layer_norm: shape mismatch " + shape_str(x.shape()) + " vs gain " +
                             shape_str(gain.shape()));
  Tensor out = make(x.shape(), x.requires_grad() || gain.requires_grad() || bias.requires_grad());
  std::vector<double> inv_sigma(m), norm(m * n);
  for (std::size_t r = 0; r < m; ++r) {
    const double* xr = x.data() + r * n;
    double mean = 0.0;
    for (std::size_t c = 0; c < n; ++c) mean += xr[c];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      const double d = xr[c] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_sigma[r] = is;
    for (std::size_t c = 0; c < n; ++c) {
      const double y = (xr[c] - mean) * is;
      norm[r * n + c] = y;
      out.data()[r * n + c] = y * gain.data()[c] + bias.data()[c];
    }
  }
  if (out.requires_grad()) {
    auto xd = x.ptr(), gd = gain.ptr(), bd = bias.ptr(), od = out.ptr();
    auto is = std::make_shared<std::vector<double>>(std::move(inv_sigma));
    auto nm = std::make_shared<std::vector<double>>(std::move(norm));
    record(out, [xd, gd, bd, od, is, nm, m, n] {
      const auto& g = od->grad;
      auto* gx = grad_buf(xd.get());
      auto* gg = grad_buf(gd.get());
      auto* gb = grad_buf(bd.get());
      for (std::size_t r = 0; r < m; ++r) {
        const double* gr = g.data() + r * n;
        const double* yr = nm->data() + r * n;
        if (gg || gb)
          for (std::size_t c = 0; c < n; ++c) {
            if (gg) (*gg)[c] += gr[c] * yr[c];
            if (gb) (*gb)[c] += gr[c];
          }
        if (gx) {
          double s1 = 0.0, s2 = 0.0;
          for (std::size_t c = 0; c < n; ++c) {
            const double h = gr[c] * gd->v[c];
            s1 += h;
            s2 += h * yr[c];
          }
          s1 /= static_cast<double>(n);
          s2 /= static_cast<double>(n);
          const double isr = (*is)[r];
          for (std::size_t c = 0; c < n; ++c) {
            const double h = gr[c] * gd->v[c];
            (*gx)[r * n + c] += isr * (h - s1 - yr[c] * s2);
          }
        }
      }
    });
  }
  return out;
}

Tensor Graph::softmax_rows(const Tensor& x) {
  const std::size_t m = x.rows(), n = x.cols();
  Tensor out = make(x.shape(), x.requires_grad());
  for (std::size_t r = 0; r < m; ++r) {
    const double* xr = x.data() + r * n;
    double* or_ = out.data() + r * n;
    double mx = xr[0];
    for (std::size_t c = 1; c < n; ++c) mx = std::max(mx, xr[c]);
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      or_[c] = std::exp(xr[c] - mx);
      z += or_[c];
    }
    for (std::size_t c = 0; c < n; ++c) or_[c] /= z;
  }
  if (out.requires_grad()) {
    auto xd = x.ptr(); auto od = out.ptr();
    record(out, [xd, od, m, n] {
      if (auto* gx = grad_buf(xd.get()))
        for (std::size_t r = 0; r < m; ++r) {
          const double* p = od->v.data() + r * n;
          const double* g = od->grad.data() + r * n;
          double dot = 0.0;
          for (std::size_t c = 0; c < n; ++c) dot += p[c] * g[c];
          for (std::size_t c = 0; c < n; ++c) (*gx)[r * n + c] += p[c] * (g[c] - dot);
        }
    });
  }
  return out;
}

Tensor Graph::causal_softmax(const Tensor& scores) {
  if (scores.rank() != 2 || scores.shape()[0] != scores.shape()[1])
    throw std::runtime_error("causal_softmax: need square matrix, got " + shape_str(scores.shape()));
  const std::size_t t = scores.shape()[0];
  Tensor out = make(scores.shape(), scores.requires_grad());
  for (std::size_t r = 0; r < t; ++r) {
    const double* xr = scores.data() + r * t;
    double* or_ = out.data() + r * t;
    double mx = xr[0];
    for (std::size_t c = 1; c <= r; ++c) mx = std::max(mx, xr[c]);
    double z = 0.0;
    for (std::size_t c = 0; c <= r; ++c) {
      or_[c] = std::exp(xr[c] - mx);
      z += or_[c];
    }
    for (std::size_t c = 0; c <= r; ++c) or_[c] /= z;
    for (std::size_t c = r + 1; c < t; ++c) or_[c] = 0.0;
  }
  if (out.requires_grad()) {
    auto xd = scores.ptr(); auto od = out.ptr();
    record(out, [xd, od, t] {
      if (auto* gx = grad_buf(xd.get()))
        for (std::size_t r = 0; r < t; ++r) {
          const double* p = od->v.data() + r * t;
          const double* g = od->grad.data() + r * t;
          double dot = 0.0;
          for (std::size_t c = 0; c <= r; ++c) dot += p[c] * g[c];
          for (std::size_t c = 0; c <= r; ++c) (*gx)[r * t + c] += p[c] * (g[c] - dot);
        }
    });
  }
  return out;
}

Tensor Graph::softmax_cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
  const std::size_t m = logits.rows(), n = logits.cols();
  if (targets.size() != m)
    throw std::runtime_error("cross_entropy: " + std::to_string(targets.size()) +
                             " targets for " + std::to_string(m) + " rows");
  for (int t : targets)
    if (t < 0 || static_cast<std::size_t>(t) >= n)
      throw std::runtime_error("cross_entropy: target " + std::to_string(t) +
                               " out of range [0," + std::to_string(n) + ")");
  Tensor out = make({1}, logits.requires_grad());
  auto probs = std::make_shared<std::vector<double>>(m * n);
  double total = 0.0;
  for (std::size_t r = 0; r < m; ++r) {
    const double* xr = logits.data() + r * n;
    double* pr = probs->data() + r * n;
    double mx = xr[0];
    for (std::size_t c = 1; c < n; ++c) mx = std::max(mx, xr[c]);
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      pr[c] = std::exp(xr[c] - mx);
      z += pr[c];
    }
    for (std::size_t c = 0; c < n; ++c) pr[c] /= z;
    total += std::log(z) - (xr[targets[r]] - mx);
  }
  out.data()[0] = total / static_cast<double>(m);
  if (out.requires_grad()) {
    auto xd = logits.ptr(); auto od = out.ptr();
    auto tg = std::make_shared<std::vector<int>>(targets);
    record(out, [xd, od, probs, tg, m, n] {
      if (auto* gx = grad_buf(xd.get())) {
        const double gl = od->grad[0] / static_cast<double>(m);
        for (std::size_t r = 0; r < m; ++r) {
          const double* pr = probs->data() + r * n;
          double* gr = gx->data() + r * n;
          for (std::size_t c = 0; c < n; ++c) gr[c] += gl * pr[c];
          gr[(*tg)[r]] -= gl;
        }
      }
    });
  }
  return out;
}

Tensor Graph::sum(const Tensor& x) {
  Tensor out = make({1}, x.requires_grad());
  double acc = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) acc += x.data()[i];
  out.data()[0] = acc;
  if (out.requires_grad()) {
    auto xd = x.ptr(); auto od = out.ptr();
    record(out, [xd, od] {
      if (auto* gx = grad_buf(xd.get()))
        for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += od->grad[0];
    });
  }
  return out;
}

Tensor Graph::mean_rows(const Tensor& x) {
  const std::size_t m = x.rows(), n = x.cols();
  if (m == 0) throw std::runtime_error("mean_rows: empty tensor");
  Tensor out = make({1, n}, x.requires_grad());
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out.data()[c] += x.data()[r * n + c];
  for (std::size_t c = 0; c < n; ++c) out.data()[c] /= static_cast<double>(m);
  if (out.requires_grad()) {
    auto xd = x.ptr(); auto od = out.ptr();
    record(out, [xd, od, m, n] {
      if (auto* gx = grad_buf(xd.get())) {
        const double inv = 1.0 / static_cast<double>(m);
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < n; ++c) (*gx)[r * n + c] += od->grad[c] * inv;
      }
    });
  }
  return out;
}

Tensor Graph::take_rows(const Tensor& x, const std::vector<int>& idx) {
  const std::size_t m = x.rows(), n = x.cols();
  for (int i : idx)
    if (i < 0 || static_cast<std::size_t>(i) >= m)
      throw std::runtime_error("take_rows: index " + std::to_string(i) + " out of range [0," +
                               std::to_string(m) + ")");
  Tensor out = make({idx.size(), n}, x.requires_grad());
  for (std::size_t r = 0; r < idx.size(); ++r)
    for (std::size_t c = 0; c < n; ++c)
      out.data()[r * n + c] = x.data()[static_cast<std::size_t>(idx[r]) * n + c];
  if (out.requires_grad()) {
    auto xd = x.ptr(); auto od = out.ptr();
    auto ix = std::make_shared<std::vector<int>>(idx);
    record(out, [xd, od, ix, n] {
      if (auto* gx = grad_buf(xd.get()))
        for (std::size_t r = 0; r < ix->size(); ++r)
          for (std::size_t c = 0; c < n; ++c)
            (*gx)[static_cast<std::size_t>((*ix)[r]) * n + c] += od->grad[r * n + c];
    });
  }
  return out;
}

Tensor Graph::slice_rows(const Tensor& x, std::size_t start, std::size_t len) {
  const std::size_t m = x.rows(), n = x.cols();
  if (start + len > m)
    throw std::runtime_error("slice_rows: [" + std::to_string(start) + "," +
                             std::to_string(start + len) + ") exceeds " + std::to_string(m) + " rows");
  Tensor out = make({len, n}, x.requires_grad());
  for (std::size_t r = 0; r < len; ++r)
    for (std::size_t c = 0; c < n; ++c) out.data()[r * n + c] = x.data()[(start + r) * n + c];
  if (out.requires_grad()) {
    auto xd = x.ptr(); auto od = out.ptr();
    record(out, [xd, od, start, len, n] {
      if (auto* gx = grad_buf(xd.get()))
        for (std::size_t r = 0; r < len; ++r)
          for (std::size_t c = 0; c < n; ++c) (*gx)[(start + r) * n + c] += od->grad[r * n + c];
    });
  }
  return out;
}

Tensor Graph::slice_cols(const Tensor& x, std::size_t start, std::size_t len) {
  const std::size_t m = x.rows(), n = x.cols();
  if (start + len > n)
    throw std::runtime_error("slice_cols: [" + std::to_string(start) + "," +
                             std::to_string(start + len) + ") exceeds " + std::to_string(n) + " cols");
  Tensor out = make({m, len}, x.requires_grad());
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < len; ++c) out.data()[r * len + c] = x.data()[r * n + start + c];
  if (out.requires_grad()) {
    auto xd = x.ptr(); auto od = out.ptr();
    record(out, [xd, od, start, len, m, n] {
      if (auto* gx = grad_buf(xd.get()))
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < len; ++c) (*gx)[r * n + start + c] += od->grad[r * len + c];
    });
  }
  return out;
}

Tensor Graph::concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::runtime_error("concat_rows: no parts");
  const std::size_t n = parts[0].cols();
  std::size_t m = 0;
  bool rg = false;
  for (const Tensor& p : parts) {
    if (p.cols() != n)
      throw std::runtime_error("concat_rows: shape mismatch " + shape_str(parts[0].shape()) +
                               " vs " + shape_str(p.shape()));
    m += p.rows();
    rg = rg || p.requires_grad();
  }
  Tensor out = make({m, n}, rg);
  std::size_t r0 = 0;
  for (const Tensor& p : parts) {
    std::copy(p.data(), p.data() + p.numel(), out.data() + r0 * n);
    r0 += p.rows();
  }
  if (out.requires_grad()) {
    auto od = out.ptr();
    std::vector<std::shared_ptr<TensorData>> pd;
    std::vector<std::size_t> rows;
    for (const Tensor& p : parts) { pd.push_back(p.ptr()); rows.push_back(p.rows()); }
    record(out, [od, pd, rows, n] {
      std::size_t r = 0;
      for (std::size_t k = 0; k < pd.size(); ++k) {
        if (auto* gp = grad_buf(pd[k].get()))
          for (std::size_t i = 0; i < rows[k] * n; ++i) (*gp)[i] += od->grad[r * n + i];
        r += rows[k];
      }
    });
  }
  return out;
}

Tensor Graph::concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::runtime_error("concat_cols: no parts");
  const std::size_t m = parts[0].rows();
  std::size_t n = 0;
  bool rg = false;
  for (const Tensor& p : parts) {
    if (p.rows() != m)
      throw std::runtime_error("concat_cols: shape mismatch " + shape_str(parts[0].shape()) +
                               " vs " + shape_str(p.shape()));
    n += p.cols();
    rg = rg || p.requires_grad();
  }
  Tensor out = make({m, n}, rg);
  std::size_t c0 = 0;
  for (const Tensor& p : parts) {
    const std::size_t pc = p.cols();
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < pc; ++c) out.data()[r * n + c0 + c] = p.data()[r * pc + c];
    c0 += pc;
  }
  if (out.requires_grad()) {
    auto od = out.ptr();
    std::vector<std::shared_ptr<TensorData>> pd;
    std::vector<std::size_t> cols;
    for (const Tensor& p : parts) { pd.push_back(p.ptr()); cols.push_back(p.cols()); }
    record(out, [od, pd, cols, m, n] {
      std::size_t c0i = 0;
      for (std::size_t k = 0; k < pd.size(); ++k) {
        if (auto* gp = grad_buf(pd[k].get()))
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < cols[k]; ++c)
              (*gp)[r * cols[k] + c] += od->grad[r * n + c0i + c];
        c0i += cols[k];
      }
    });
  }
  return out;
}

Tensor Graph::l2_normalize_rows(const Tensor& x) {
  const std::size_t m = x.rows(), n = x.cols();
  Tensor out = make(x.shape(), x.requires_grad());
  auto norms = std::make_shared<std::vector<double>>(m);
  for (std::size_t r = 0; r < m; ++r) {
    const double* xr = x.data() + r * n;
    double nn = 0.0;
    for (std::size_t c = 0; c < n; ++c) nn += xr[c] * xr[c];
    nn = std::sqrt(nn);
    (*norms)[r] = nn;
    if (nn == 0.0) continue;  // zero row maps to zero
    for (std::size_t c = 0; c < n; ++c) out.data()[r * n + c] = xr[c] / nn;
  }
  if (out.requires_grad()) {
    auto xd = x.ptr(); auto od = out.ptr();
    record(out, [xd, od, norms, m, n] {
      if (auto* gx = grad_buf(xd.get()))
        for (std::size_t r = 0; r < m; ++r) {
          const double nn = (*norms)[r];
          if (nn == 0.0) continue;
          const double* y = od->v.data() + r * n;
          const double* g = od->grad.data() + r * n;
          double dot = 0.0;
          for (std::size_t c = 0; c < n; ++c) dot += y[c] * g[c];
          for (std::size_t c = 0; c < n; ++c) (*gx)[r * n + c] += (g[c] - y[c] * dot) / nn;
        }
    });
  }
  return out;
}

}  // namespace ucrn
