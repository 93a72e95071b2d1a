#include "smartsense/tape.hpp"

#include <cmath>
#include <utility>

namespace smartsense {

Tape::Var Tape::push(Matrix value, bool needs_grad,
                     std::function<void(Tape&)> back) {
  Node node;
  node.value = std::move(value);
  node.back = std::move(back);
  node.needs_grad = needs_grad;
  nodes_.push_back(std::move(node));
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

Tape::Var Tape::constant(Matrix value) {
  return push(std::move(value), false, nullptr);
}

Tape::Var Tape::leaf(Matrix value) {
  return push(std::move(value), true, nullptr);
}

Matrix Tape::grad(Var v) const {
  const Node& node = nodes_[v.id];
  if (node.grad.size() == 0) {
    return Matrix::Zero(node.value.rows(), node.value.cols());
  }
  return node.grad;
}

Matrix& Tape::grad_ref(Var v) {
  Node& node = nodes_[v.id];
  if (node.grad.size() == 0) {
    node.grad = Matrix::Zero(node.value.rows(), node.value.cols());
  }
  return node.grad;
}

Tape::Var Tape::matmul(Var a, Var b) {
  Matrix out_value = value(a) * value(b);
  const bool needs = wants(a) || wants(b);
  Var out = push(std::move(out_value), needs, nullptr);
  if (needs) {
    nodes_[out.id].back = [a, b, out](Tape& t) {
      const Matrix& g = t.nodes_[out.id].grad;
      if (t.wants(a)) t.grad_ref(a).noalias() += g * t.value(b).transpose();
      if (t.wants(b)) t.grad_ref(b).noalias() += t.value(a).transpose() * g;
    };
  }
  return out;
}

Tape::Var Tape::add(Var a, Var b) {
  Matrix out_value = value(a) + value(b);
  const bool needs = wants(a) || wants(b);
  Var out = push(std::move(out_value), needs, nullptr);
  if (needs) {
    nodes_[out.id].back = [a, b, out](Tape& t) {
      const Matrix& g = t.nodes_[out.id].grad;
      if (t.wants(a)) t.grad_ref(a) += g;
      if (t.wants(b)) t.grad_ref(b) += g;
    };
  }
  return out;
}

Tape::Var Tape::add_row_broadcast(Var m, Var bias) {
  Matrix out_value = value(m);
  out_value.rowwise() += value(bias).col(0).transpose();
  const bool needs = wants(m) || wants(bias);
  Var out = push(std::move(out_value), needs, nullptr);
  if (needs) {
    nodes_[out.id].back = [m, bias, out](Tape& t) {
      const Matrix& g = t.nodes_[out.id].grad;
      if (t.wants(m)) t.grad_ref(m) += g;
      if (t.wants(bias)) {
        t.grad_ref(bias).col(0) += g.colwise().sum().transpose();
      }
    };
  }
  return out;
}

Tape::Var Tape::transpose(Var a) {
  Matrix out_value = value(a).transpose();
  Var out = push(std::move(out_value), wants(a), nullptr);
  if (wants(a)) {
    nodes_[out.id].back = [a, out](Tape& t) {
      t.grad_ref(a) += t.nodes_[out.id].grad.transpose();
    };
  }
  return out;
}

Tape::Var Tape::scale(Var a, double s) {
  Var out = push(value(a) * s, wants(a), nullptr);
  if (wants(a)) {
    nodes_[out.id].back = [a, out, s](Tape& t) {
      t.grad_ref(a) += t.nodes_[out.id].grad * s;
    };
  }
  return out;
}

Tape::Var Tape::tanh(Var a) {
  Matrix value = this->value(a).array().tanh();
  Var out = push(std::move(value), wants(a), nullptr);
  if (wants(a)) {
    nodes_[out.id].back = [a, out](Tape& t) {
      const Matrix& y = t.value(out);
      t.grad_ref(a).array() +=
          t.nodes_[out.id].grad.array() * (1.0 - y.array().square());
    };
  }
  return out;
}

Tape::Var Tape::relu(Var a) {
  Matrix value = this->value(a).cwiseMax(0.0);
  Var out = push(std::move(value), wants(a), nullptr);
  if (wants(a)) {
    nodes_[out.id].back = [a, out](Tape& t) {
      const Matrix& x = t.value(a);
      t.grad_ref(a).array() +=
          t.nodes_[out.id].grad.array() * (x.array() > 0.0).cast<double>();
    };
  }
  return out;
}

Tape::Var Tape::softplus(Var a) {
  const Matrix& x = value(a);
  Matrix value(x.rows(), x.cols());
  for (Index c = 0; c < x.cols(); ++c) {
    for (Index r = 0; r < x.rows(); ++r) {
      value(r, c) = std::max(x(r, c), 0.0) +
                    std::log1p(std::exp(-std::abs(x(r, c))));
    }
  }
  Var out = push(std::move(value), wants(a), nullptr);
  if (wants(a)) {
    nodes_[out.id].back = [a, out](Tape& t) {
      const Matrix& x = t.value(a);
      Matrix& g = t.grad_ref(a);
      const Matrix& gy = t.nodes_[out.id].grad;
      for (Index c = 0; c < x.cols(); ++c) {
        for (Index r = 0; r < x.rows(); ++r) {
          const double z = x(r, c);
          const double sig =
              z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                       : std::exp(z) / (1.0 + std::exp(z));
          g(r, c) += gy(r, c) * sig;
        }
      }
    };
  }
  return out;
}

Tape::Var Tape::rowwise_dot(Var a, Var b) {
  Matrix value =
      (this->value(a).array() * this->value(b).array()).rowwise().sum();
  const bool needs = wants(a) || wants(b);
  Var out = push(std::move(value), needs, nullptr);
  if (needs) {
    nodes_[out.id].back = [a, b, out](Tape& t) {
      const Matrix& g = t.nodes_[out.id].grad;  // n x 1
      if (t.wants(a)) {
        t.grad_ref(a).array() +=
            t.value(b).array().colwise() * g.col(0).array();
      }
      if (t.wants(b)) {
        t.grad_ref(b).array() +=
            t.value(a).array().colwise() * g.col(0).array();
      }
    };
  }
  return out;
}

Tape::Var Tape::softmax_rows(Var a) {
  const Matrix& x = value(a);
  Matrix value = x;
  for (Index r = 0; r < value.rows(); ++r) {
    auto row = value.row(r);
    row = (row.array() - row.maxCoeff()).exp();
    row /= row.sum();
  }
  Var out = push(std::move(value), wants(a), nullptr);
  if (wants(a)) {
    nodes_[out.id].back = [a, out](Tape& t) {
      const Matrix& y = t.value(out);
      const Matrix& gy = t.nodes_[out.id].grad;
      Matrix& g = t.grad_ref(a);
      for (Index r = 0; r < y.rows(); ++r) {
        const double dot = gy.row(r).dot(y.row(r));
        g.row(r).array() += (gy.row(r).array() - dot) * y.row(r).array();
      }
    };
  }
  return out;
}

Tape::Var Tape::layer_norm(Var a, Var gain, Var bias, double eps) {
  const Matrix& x = value(a);
  const Index n = x.cols();
  // Cache the standardized rows and inverse deviations for backward.
  Matrix xhat(x.rows(), n);
  Vector inv_sd(x.rows());
  for (Index r = 0; r < x.rows(); ++r) {
    const double mu = x.row(r).mean();
    const double var = (x.row(r).array() - mu).square().sum() /
                       static_cast<double>(n);
    inv_sd(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (x.row(r).array() - mu) * inv_sd(r);
  }
  const Eigen::RowVectorXd gain_row = value(gain).col(0).transpose();
  const Eigen::RowVectorXd bias_row = value(bias).col(0).transpose();
  Matrix out_value(x.rows(), n);
  for (Index r = 0; r < x.rows(); ++r) {
    out_value.row(r) = xhat.row(r).cwiseProduct(gain_row) + bias_row;
  }
  const bool needs = wants(a) || wants(gain) || wants(bias);
  Var out = push(std::move(out_value), needs, nullptr);
  if (needs) {
    nodes_[out.id].back = [a, gain, bias, out, xhat = std::move(xhat),
                           inv_sd = std::move(inv_sd)](Tape& t) {
      const Matrix& gy = t.nodes_[out.id].grad;
      const Index n = gy.cols();
      if (t.wants(gain)) {
        t.grad_ref(gain).col(0) +=
            (gy.array() * xhat.array()).colwise().sum().transpose().matrix();
      }
      if (t.wants(bias)) {
        t.grad_ref(bias).col(0) += gy.colwise().sum().transpose();
      }
      if (t.wants(a)) {
        const auto g_row = t.value(gain).col(0).transpose().array();
        Matrix& g = t.grad_ref(a);
        for (Index r = 0; r < gy.rows(); ++r) {
          const Eigen::ArrayXXd gh = gy.row(r).array() * g_row;
          const double mean_gh = gh.sum() / static_cast<double>(n);
          const double mean_ghx =
              (gh * xhat.row(r).array()).sum() / static_cast<double>(n);
          g.row(r).array() +=
              inv_sd(r) * (gh - mean_gh - xhat.row(r).array() * mean_ghx);
        }
      }
    };
  }
  return out;
}

Tape::Var Tape::mask(Var a, Matrix m) {
  Matrix value = this->value(a).cwiseProduct(m);
  Var out = push(std::move(value), wants(a), nullptr);
  if (wants(a)) {
    nodes_[out.id].back = [a, out, m = std::move(m)](Tape& t) {
      t.grad_ref(a) += t.nodes_[out.id].grad.cwiseProduct(m);
    };
  }
  return out;
}

Tape::Var Tape::slice_cols(Var a, Index start, Index count) {
  Matrix value = this->value(a).middleCols(start, count);
  Var out = push(std::move(value), wants(a), nullptr);
  if (wants(a)) {
    nodes_[out.id].back = [a, out, start, count](Tape& t) {
      t.grad_ref(a).middleCols(start, count) += t.nodes_[out.id].grad;
    };
  }
  return out;
}

Tape::Var Tape::concat_cols(const std::vector<Var>& parts) {
  Index cols = 0;
  bool needs = false;
  for (Var p : parts) {
    cols += value(p).cols();
    needs = needs || wants(p);
  }
  Matrix value(this->value(parts.front()).rows(), cols);
  Index at = 0;
  for (Var p : parts) {
    value.middleCols(at, this->value(p).cols()) = this->value(p);
    at += this->value(p).cols();
  }
  Var out = push(std::move(value), needs, nullptr);
  if (needs) {
    nodes_[out.id].back = [parts, out](Tape& t) {
      const Matrix& g = t.nodes_[out.id].grad;
      Index at = 0;
      for (Var p : parts) {
        const Index c = t.value(p).cols();
        if (t.wants(p)) t.grad_ref(p) += g.middleCols(at, c);
        at += c;
      }
    };
  }
  return out;
}

Tape::Var Tape::interleave_rows(const std::vector<Var>& parts) {
  const Index p = static_cast<Index>(parts.size());
  const Index rows = value(parts.front()).rows();
  const Index cols = value(parts.front()).cols();
  bool needs = false;
  Matrix out_value(rows * p, cols);
  for (Index j = 0; j < p; ++j) {
    needs = needs || wants(parts[j]);
    const Matrix& part = value(parts[j]);
    for (Index i = 0; i < rows; ++i) {
      out_value.row(i * p + j) = part.row(i);
    }
  }
  Var out = push(std::move(out_value), needs, nullptr);
  if (needs) {
    nodes_[out.id].back = [parts, out, p](Tape& t) {
      const Matrix& g = t.nodes_[out.id].grad;
      for (Index j = 0; j < p; ++j) {
        if (!t.wants(parts[j])) continue;
        Matrix& gp = t.grad_ref(parts[j]);
        for (Index i = 0; i < gp.rows(); ++i) {
          gp.row(i) += g.row(i * p + j);
        }
      }
    };
  }
  return out;
}

Tape::Var Tape::gather_rows(Var table, std::vector<Index> rows) {
  const Matrix& src = value(table);
  Matrix value(static_cast<Index>(rows.size()), src.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    value.row(static_cast<Index>(i)) = src.row(rows[i]);
  }
  Var out = push(std::move(value), wants(table), nullptr);
  if (wants(table)) {
    nodes_[out.id].back = [table, out, rows = std::move(rows)](Tape& t) {
      const Matrix& g = t.nodes_[out.id].grad;
      Matrix& gt = t.grad_ref(table);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        gt.row(rows[i]) += g.row(static_cast<Index>(i));
      }
    };
  }
  return out;
}

Tape::Var Tape::tile_rows(Var a, Index times) {
  const Matrix& x = value(a);
  Matrix value(x.rows() * times, x.cols());
  for (Index i = 0; i < times; ++i) {
    value.middleRows(i * x.rows(), x.rows()) = x;
  }
  Var out = push(std::move(value), wants(a), nullptr);
  if (wants(a)) {
    nodes_[out.id].back = [a, out, times](Tape& t) {
      const Matrix& g = t.nodes_[out.id].grad;
      Matrix& ga = t.grad_ref(a);
      const Index rows = ga.rows();
      for (Index i = 0; i < times; ++i) {
        ga += g.middleRows(i * rows, rows);
      }
    };
  }
  return out;
}

Tape::Var Tape::repeat_rows(Var a, Index times) {
  const Matrix& x = value(a);
  Matrix out_value(x.rows() * times, x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    for (Index i = 0; i < times; ++i) {
      out_value.row(r * times + i) = x.row(r);
    }
  }
  Var out = push(std::move(out_value), wants(a), nullptr);
  if (wants(a)) {
    nodes_[out.id].back = [a, out, times](Tape& t) {
      const Matrix& g = t.nodes_[out.id].grad;
      Matrix& ga = t.grad_ref(a);
      for (Index r = 0; r < ga.rows(); ++r) {
        ga.row(r) += g.middleRows(r * times, times).colwise().sum();
      }
    };
  }
  return out;
}

Tape::Var Tape::fold_rows(Var a, Index k) {
  const Matrix& x = value(a);
  const Index n = x.rows() / k;
  Matrix value(n, k);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < k; ++j) {
      value(i, j) = x(i * k + j, 0);
    }
  }
  Var out = push(std::move(value), wants(a), nullptr);
  if (wants(a)) {
    nodes_[out.id].back = [a, out, k](Tape& t) {
      const Matrix& g = t.nodes_[out.id].grad;
      Matrix& ga = t.grad_ref(a);
      for (Index i = 0; i < g.rows(); ++i) {
        for (Index j = 0; j < k; ++j) {
          ga(i * k + j, 0) += g(i, j);
        }
      }
    };
  }
  return out;
}

Tape::Var Tape::block_matmul(Var a, Var b, Index rows_a, Index rows_b) {
  const Matrix& av = value(a);
  const Matrix& bv = value(b);
  const Index n = av.rows() / rows_a;
  Matrix value(av.rows(), bv.cols());
  for (Index i = 0; i < n; ++i) {
    value.middleRows(i * rows_a, rows_a).noalias() =
        av.middleRows(i * rows_a, rows_a) * bv.middleRows(i * rows_b, rows_b);
  }
  const bool needs = wants(a) || wants(b);
  Var out = push(std::move(value), needs, nullptr);
  if (needs) {
    nodes_[out.id].back = [a, b, out, rows_a, rows_b, n](Tape& t) {
      const Matrix& g = t.nodes_[out.id].grad;
      const Matrix& av = t.value(a);
      const Matrix& bv = t.value(b);
      if (t.wants(a)) {
        Matrix& ga = t.grad_ref(a);
        for (Index i = 0; i < n; ++i) {
          ga.middleRows(i * rows_a, rows_a).noalias() +=
              g.middleRows(i * rows_a, rows_a) *
              bv.middleRows(i * rows_b, rows_b).transpose();
        }
      }
      if (t.wants(b)) {
        Matrix& gb = t.grad_ref(b);
        for (Index i = 0; i < n; ++i) {
          gb.middleRows(i * rows_b, rows_b).noalias() +=
              av.middleRows(i * rows_a, rows_a).transpose() *
              g.middleRows(i * rows_a, rows_a);
        }
      }
    };
  }
  return out;
}

Tape::Var Tape::block_matmul_nt(Var a, Var b, Index rows_a, Index rows_b,
                                double s) {
  const Matrix& av = value(a);
  const Matrix& bv = value(b);
  const Index n = av.rows() / rows_a;
  Matrix value(av.rows(), rows_b);
  for (Index i = 0; i < n; ++i) {
    value.middleRows(i * rows_a, rows_a).noalias() =
        s * av.middleRows(i * rows_a, rows_a) *
        bv.middleRows(i * rows_b, rows_b).transpose();
  }
  const bool needs = wants(a) || wants(b);
  Var out = push(std::move(value), needs, nullptr);
  if (needs) {
    nodes_[out.id].back = [a, b, out, rows_a, rows_b, n, s](Tape& t) {
      const Matrix& g = t.nodes_[out.id].grad;
      const Matrix& av = t.value(a);
      const Matrix& bv = t.value(b);
      if (t.wants(a)) {
        Matrix& ga = t.grad_ref(a);
        for (Index i = 0; i < n; ++i) {
          ga.middleRows(i * rows_a, rows_a).noalias() +=
              s * g.middleRows(i * rows_a, rows_a) *
              bv.middleRows(i * rows_b, rows_b);
        }
      }
      if (t.wants(b)) {
        Matrix& gb = t.grad_ref(b);
        for (Index i = 0; i < n; ++i) {
          gb.middleRows(i * rows_b, rows_b).noalias() +=
              s * g.middleRows(i * rows_a, rows_a).transpose() *
              av.middleRows(i * rows_a, rows_a);
        }
      }
    };
  }
  return out;
}

Tape::Var Tape::sum(Var a) {
  Matrix value(1, 1);
  value(0, 0) = this->value(a).sum();
  Var out = push(std::move(value), wants(a), nullptr);
  if (wants(a)) {
    nodes_[out.id].back = [a, out](Tape& t) {
      t.grad_ref(a).array() += t.nodes_[out.id].grad(0, 0);
    };
  }
  return out;
}

Tape::Var Tape::cross_entropy_mean(Var logits, std::vector<Index> targets) {
  const Matrix& x = value(logits);
  const Index n = x.rows();
  Matrix probs(n, x.cols());
  double loss = 0.0;
  for (Index r = 0; r < n; ++r) {
    const double mx = x.row(r).maxCoeff();
    const Eigen::ArrayXd shifted = x.row(r).transpose().array() - mx;
    const double lse = std::log(shifted.exp().sum()) + mx;
    probs.row(r) = (x.row(r).array() - lse).exp();
    loss += lse - x(r, targets[r]);
  }
  Matrix value(1, 1);
  value(0, 0) = loss / static_cast<double>(n);
  Var out = push(std::move(value), wants(logits), nullptr);
  if (wants(logits)) {
    nodes_[out.id].back = [logits, out, probs = std::move(probs),
                           targets = std::move(targets)](Tape& t) {
      const double g = t.nodes_[out.id].grad(0, 0);
      Matrix& gl = t.grad_ref(logits);
      const double inv_n = 1.0 / static_cast<double>(probs.rows());
      gl += (g * inv_n) * probs;
      for (Index r = 0; r < probs.rows(); ++r) {
        gl(r, targets[r]) -= g * inv_n;
      }
    };
  }
  return out;
}

void Tape::backward(Var out) {
  if (value(out).rows() != 1 || value(out).cols() != 1) {
    throw UsageError("backward: output must be a 1x1 scalar");
  }
  grad_ref(out)(0, 0) = 1.0;
  for (std::int32_t i = out.id; i >= 0; --i) {
    Node& node = nodes_[i];
    if (node.back && node.needs_grad && node.grad.size() > 0) {
      node.back(*this);
    }
  }
}

}  // namespace smartsense
