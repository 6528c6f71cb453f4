#include "foldcity/nn/autograd.hpp"

#include <cmath>

#include "foldcity/nn/geometry.hpp"
#include "foldcity/parallel.hpp"

namespace foldcity::nn {

template <typename T>
Var Tape<T>::push(Tensor<T> value, bool needs_grad) {
  Node n;
  n.owned = std::move(value);
  n.needs_grad = record_ && needs_grad;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename T>
Var Tape<T>::parameter(const Tensor<T>& value) {
  Node n;
  n.external = &value;
  n.needs_grad = record_;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename T>
Var Tape<T>::constant(Tensor<T> value) {
  return push(std::move(value), false);
}

template <typename T>
const Tensor<T>& Tape<T>::value(Var v) const {
  return nodes_.at(v.id).value();
}

template <typename T>
Tensor<T>& Tape<T>::grad_buffer(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.shape != n.value().shape) n.grad = Tensor<T>(n.value().shape);
  return n.grad;
}

template <typename T>
const Tensor<T>& Tape<T>::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.grad.shape != n.value().shape) {
    const_cast<Node&>(n).grad = Tensor<T>(n.value().shape);
  }
  return n.grad;
}

template <typename T>
void Tape<T>::check_finite(Var v, const std::string& layer) const {
  if (!value(v).all_finite()) throw NumericError("non-finite activation in layer " + layer);
}

template <typename T>
Var Tape<T>::linear(Var x, Var weight, Var bias) {
  const Tensor<T>& xv = value(x);
  const Tensor<T>& w = value(weight);
  const Tensor<T>& b = value(bias);
  const std::size_t n = xv.rows(), in = xv.cols(), out = w.cols();
  if (w.rows() != in || b.size() != out) {
    throw DataError("linear: input " + shape_string(xv.shape) + " incompatible with weight " + shape_string(w.shape) +
                    " and bias " + shape_string(b.shape));
  }
  Tensor<T> y = Tensor<T>::matrix(n, out);
  for (std::size_t i = 0; i < n; ++i) std::copy(b.data.begin(), b.data.end(), y.row(i));
  matmul_acc(xv.data.data(), n, in, w.data.data(), out, y.data.data());
  const bool ng = needs_grad(x) || needs_grad(weight) || needs_grad(bias);
  const Var out_var = push(std::move(y), ng);
  if (ng) {
    nodes_[out_var.id].backward = [this, x, weight, bias, out_var, n, in, out] {
      const Tensor<T>& dy = nodes_[out_var.id].grad;
      if (needs_grad(x)) {
        std::vector<T> wt(in * out);
        transpose(value(weight).data.data(), in, out, wt.data());
        matmul_acc(dy.data.data(), n, out, wt.data(), in, grad_buffer(x).data.data());
      }
      if (needs_grad(weight)) {
        std::vector<T> xt(n * in);
        transpose(value(x).data.data(), n, in, xt.data());
        matmul_acc(xt.data(), in, n, dy.data.data(), out, grad_buffer(weight).data.data());
      }
      if (needs_grad(bias)) {
        T* db = grad_buffer(bias).data.data();
        for (std::size_t i = 0; i < n; ++i) {
          const T* r = dy.row(i);
          for (std::size_t j = 0; j < out; ++j) db[j] += r[j];
        }
      }
    };
  }
  return out_var;
}

template <typename T>
Var Tape<T>::relu(Var x) {
  Tensor<T> y = value(x);
  for (T& v : y.data) v = v > T(0) ? v : T(0);
  const bool ng = needs_grad(x);
  const Var out_var = push(std::move(y), ng);
  if (ng) {
    nodes_[out_var.id].backward = [this, x, out_var] {
      const Tensor<T>& dy = nodes_[out_var.id].grad;
      const Tensor<T>& xv = value(x);
      Tensor<T>& dx = grad_buffer(x);
      for (std::size_t i = 0; i < dx.size(); ++i) {
        if (xv.data[i] > T(0)) dx.data[i] += dy.data[i];
      }
    };
  }
  return out_var;
}

template <typename T>
Var Tape<T>::gather_max(Var x, std::span<const std::uint32_t> groups, std::size_t group_size) {
  const Tensor<T>& xv = value(x);
  const std::size_t c = xv.cols();
  const std::size_t rows = groups.size() / group_size;
  Tensor<T> y = Tensor<T>::matrix(rows, c);
  std::vector<std::uint32_t> arg(rows * c);
  for (std::size_t i = 0; i < rows; ++i) {
    const std::uint32_t* g = groups.data() + i * group_size;
    T* yi = y.row(i);
    std::uint32_t* ai = arg.data() + i * c;
    const T* first = xv.row(g[0]);
    for (std::size_t ch = 0; ch < c; ++ch) {
      yi[ch] = first[ch];
      ai[ch] = g[0];
    }
    for (std::size_t k = 1; k < group_size; ++k) {
      const T* r = xv.row(g[k]);
      for (std::size_t ch = 0; ch < c; ++ch) {
        if (r[ch] > yi[ch]) {
          yi[ch] = r[ch];
          ai[ch] = g[k];
        }
      }
    }
  }
  const bool ng = needs_grad(x);
  const Var out_var = push(std::move(y), ng);
  if (ng) {
    nodes_[out_var.id].backward = [this, x, out_var, arg = std::move(arg), c, rows] {
      const Tensor<T>& dy = nodes_[out_var.id].grad;
      Tensor<T>& dx = grad_buffer(x);
      for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t ch = 0; ch < c; ++ch) dx(arg[i * c + ch], ch) += dy(i, ch);
      }
    };
  }
  return out_var;
}

template <typename T>
Var Tape<T>::segment_max(Var x, std::size_t segment) {
  const Tensor<T>& xv = value(x);
  if (segment == 0 || xv.rows() % segment != 0) throw DataError("segment_max: rows not divisible by segment");
  std::vector<std::uint32_t> groups(xv.rows());
  for (std::size_t i = 0; i < groups.size(); ++i) groups[i] = static_cast<std::uint32_t>(i);
  return gather_max(x, groups, segment);
}

template <typename T>
Var Tape<T>::concat_repeat(Var left, Var right, std::size_t repeat) {
  const Tensor<T>& l = value(left);
  const Tensor<T>& r = value(right);
  if (l.rows() != r.rows() * repeat) throw DataError("concat_repeat: row counts disagree");
  const std::size_t lc = l.cols(), rc = r.cols(), rows = l.rows();
  Tensor<T> y = Tensor<T>::matrix(rows, lc + rc);
  for (std::size_t i = 0; i < rows; ++i) {
    std::copy(l.row(i), l.row(i) + lc, y.row(i));
    std::copy(r.row(i / repeat), r.row(i / repeat) + rc, y.row(i) + lc);
  }
  const bool ng = needs_grad(left) || needs_grad(right);
  const Var out_var = push(std::move(y), ng);
  if (ng) {
    nodes_[out_var.id].backward = [this, left, right, out_var, lc, rc, rows, repeat] {
      const Tensor<T>& dy = nodes_[out_var.id].grad;
      if (needs_grad(left)) {
        Tensor<T>& dl = grad_buffer(left);
        for (std::size_t i = 0; i < rows; ++i) {
          for (std::size_t j = 0; j < lc; ++j) dl(i, j) += dy(i, j);
        }
      }
      if (needs_grad(right)) {
        Tensor<T>& dr = grad_buffer(right);
        for (std::size_t i = 0; i < rows; ++i) {
          T* d = dr.row(i / repeat);
          const T* s = dy.row(i) + lc;
          for (std::size_t j = 0; j < rc; ++j) d[j] += s[j];
        }
      }
    };
  }
  return out_var;
}

template <typename T>
Var Tape<T>::chamfer_loss(Var pred, const Tensor<T>& target_values, std::size_t batch) {
  const Var target = constant(target_values);
  const Tensor<T>& targets = value(target);
  const Tensor<T>& p = value(pred);
  if (batch == 0 || p.cols() != 3 || targets.cols() != 3 || p.rows() % batch || targets.rows() % batch) {
    throw DataError("chamfer_loss: inconsistent batch layout");
  }
  const std::size_t pn = p.rows() / batch, tn = targets.rows() / batch;
  std::vector<ChamferTerms<T>> terms(batch);
  parallel_for(batch, [&](std::size_t b) {
    terms[b] = chamfer_terms<T>(std::span<const T>(targets.data.data() + b * tn * 3, tn * 3),
                                std::span<const T>(p.data.data() + b * pn * 3, pn * 3));
  });
  T sum = 0;
  for (const auto& t : terms) sum += t.value();
  Tensor<T> y({1, 1}, sum / static_cast<T>(batch));
  const bool ng = needs_grad(pred);
  const Var out_var = push(std::move(y), ng);
  if (ng) {
    nodes_[out_var.id].backward = [this, pred, target, out_var, terms = std::move(terms), batch, pn, tn] {
      const T g = nodes_[out_var.id].grad.data[0] / static_cast<T>(batch);
      const Tensor<T>& pv = value(pred);
      const Tensor<T>& targets = value(target);
      Tensor<T>& dp = grad_buffer(pred);
      auto pull = [&](std::size_t prow, std::size_t trow, T scale) {
        const T* pp = pv.row(prow);
        const T* tt = targets.row(trow);
        const T dx = pp[0] - tt[0], dy = pp[1] - tt[1], dz = pp[2] - tt[2];
        const T d = std::sqrt(dx * dx + dy * dy + dz * dz);
        if (d == T(0)) return;
        T* out = dp.row(prow);
        out[0] += scale * dx / d;
        out[1] += scale * dy / d;
        out[2] += scale * dz / d;
      };
      for (std::size_t b = 0; b < batch; ++b) {
        const auto& t = terms[b];
        if (t.a_to_b >= t.b_to_a) {
          const T scale = g / static_cast<T>(tn);
          for (std::size_t i = 0; i < tn; ++i) pull(b * pn + t.nearest_in_b[i], b * tn + i, scale);
        } else {
          const T scale = g / static_cast<T>(pn);
          for (std::size_t j = 0; j < pn; ++j) pull(b * pn + j, b * tn + t.nearest_in_a[j], scale);
        }
      }
    };
  }
  return out_var;
}

template <typename T>
void Tape<T>::backward(Var root) {
  if (value(root).size() != 1) throw DataError("backward needs a scalar root");
  for (Node& n : nodes_) {
    if (n.needs_grad) n.grad = Tensor<T>(n.value().shape);
  }
  grad_buffer(root).data[0] = T(1);
  for (std::size_t i = root.id + 1; i-- > 0;) {
    if (nodes_[i].backward) nodes_[i].backward();
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace foldcity::nn
