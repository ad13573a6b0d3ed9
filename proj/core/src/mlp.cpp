#include "npc/mlp.hpp"

#include <cmath>
#include <stdexcept>

namespace npc {

MlpModel init_mlp(std::vector<std::uint32_t> dims, Head head, RngState& rng) {
  if (dims.size() < 2) throw std::invalid_argument("init_mlp: need at least two layer dims");
  for (std::uint32_t d : dims) {
    if (d == 0) throw std::invalid_argument("init_mlp: zero-width layer");
  }
  MlpModel m;
  m.dims = std::move(dims);
  m.head = head;
  for (std::size_t l = 0; l + 1 < m.dims.size(); ++l) {
    const std::uint32_t fan_in = m.dims[l];
    const std::uint32_t fan_out = m.dims[l + 1];
    Matrix w(fan_out, fan_in);
    const double scale = std::sqrt(2.0 / fan_in);
    for (double& v : w.data()) v = scale * next_normal(rng);
    m.w.push_back(std::move(w));
    m.b.emplace_back(fan_out, 0.0);
  }
  return m;
}

namespace {

// out = x * w^T + b, rows of x and w both contiguous.
Matrix linear(const Matrix& x, const Matrix& w, const std::vector<double>& b) {
  const std::size_t n = x.rows();
  const std::size_t in = x.cols();
  const std::size_t out = w.rows();
  Matrix y(n, out);
  for (std::size_t i = 0; i < n; ++i) {
    const double* xi = x.row(i);
    double* yi = y.row(i);
    for (std::size_t o = 0; o < out; ++o) {
      const double* wo = w.row(o);
      double acc = b[o];
      for (std::size_t j = 0; j < in; ++j) acc += xi[j] * wo[j];
      yi[o] = acc;
    }
  }
  return y;
}

void relu_inplace(Matrix& m) {
  for (double& v : m.data()) v = v > 0.0 ? v : 0.0;
}

}  // namespace

Matrix mlp_logits(const MlpModel& model, const Matrix& x, MlpTrace* trace) {
  if (x.cols() != model.input_dim())
    throw std::invalid_argument("mlp_logits: input width mismatch");
  if (trace) {
    trace->act.clear();
    trace->act.push_back(x);
  }
  Matrix cur = x;
  const std::size_t layers = model.w.size();
  for (std::size_t l = 0; l < layers; ++l) {
    cur = linear(cur, model.w[l], model.b[l]);
    if (l + 1 < layers) relu_inplace(cur);
    if (trace) trace->act.push_back(cur);
  }
  return cur;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

Matrix apply_head(Head head, const Matrix& logits) {
  Matrix out = logits;
  switch (head) {
    case Head::Softmax:
      for (std::size_t i = 0; i < out.rows(); ++i) {
        auto row = softmax(logits.row_span(i));
        std::copy(row.begin(), row.end(), out.row(i));
      }
      break;
    case Head::Sigmoid:
      for (double& v : out.data()) v = sigmoid(v);
      break;
    case Head::Softplus:
      for (double& v : out.data()) v = softplus(v);
      break;
  }
  return out;
}

void MlpGrads::scale(double factor) {
  for (Matrix& m : w)
    for (double& v : m.data()) v *= factor;
  for (auto& vec : b)
    for (double& v : vec) v *= factor;
}

MlpGrads make_grads(const MlpModel& model) {
  MlpGrads g;
  for (std::size_t l = 0; l < model.w.size(); ++l) {
    g.w.emplace_back(model.w[l].rows(), model.w[l].cols());
    g.b.emplace_back(model.b[l].size(), 0.0);
  }
  return g;
}

void mlp_backward(const MlpModel& model, const MlpTrace& trace, const Matrix& dlogits,
                  MlpGrads& grads, Matrix* dx) {
  const std::size_t layers = model.w.size();
  if (trace.act.size() != layers + 1)
    throw std::invalid_argument("mlp_backward: trace does not match model");

  Matrix delta = dlogits;  // dL/d(pre-activation) of the current layer
  for (std::size_t l = layers; l-- > 0;) {
    const Matrix& input = trace.act[l];
    const std::size_t n = delta.rows();
    const std::size_t out = model.w[l].rows();
    const std::size_t in = model.w[l].cols();

    Matrix& gw = grads.w[l];
    std::vector<double>& gb = grads.b[l];
    for (std::size_t i = 0; i < n; ++i) {
      const double* di = delta.row(i);
      const double* xi = input.row(i);
      for (std::size_t o = 0; o < out; ++o) {
        const double d = di[o];
        if (d == 0.0) continue;
        gb[o] += d;
        double* gwo = gw.row(o);
        for (std::size_t j = 0; j < in; ++j) gwo[j] += d * xi[j];
      }
    }

    const bool need_input_grad = l > 0 || dx != nullptr;
    if (!need_input_grad) break;

    Matrix prev(n, in);
    for (std::size_t i = 0; i < n; ++i) {
      const double* di = delta.row(i);
      double* pi = prev.row(i);
      for (std::size_t o = 0; o < out; ++o) {
        const double d = di[o];
        if (d == 0.0) continue;
        const double* wo = model.w[l].row(o);
        for (std::size_t j = 0; j < in; ++j) pi[j] += d * wo[j];
      }
    }
    if (l > 0) {
      // act[l] is the rectified output of layer l-1; zero slope where inactive.
      const Matrix& post = trace.act[l];
      for (std::size_t i = 0; i < n; ++i) {
        const double* ai = post.row(i);
        double* pi = prev.row(i);
        for (std::size_t j = 0; j < in; ++j) {
          if (ai[j] <= 0.0) pi[j] = 0.0;
        }
      }
    }
    if (l == 0 && dx != nullptr) {
      *dx = std::move(prev);
      break;
    }
    delta = std::move(prev);
  }
}

AdamState make_adam(const MlpModel& model) {
  AdamState s;
  for (std::size_t l = 0; l < model.w.size(); ++l) {
    s.mw.emplace_back(model.w[l].rows(), model.w[l].cols());
    s.vw.emplace_back(model.w[l].rows(), model.w[l].cols());
    s.mb.emplace_back(model.b[l].size(), 0.0);
    s.vb.emplace_back(model.b[l].size(), 0.0);
  }
  return s;
}

void adam_step(MlpModel& model, const MlpGrads& grads, AdamState& state, double lr) {
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));

  auto update = [&](double& param, double g, double& m, double& v) {
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g * g;
    param -= lr * (m / c1) / (std::sqrt(v / c2) + state.eps);
  };

  for (std::size_t l = 0; l < model.w.size(); ++l) {
    auto& wdata = model.w[l].data();
    const auto& gdata = grads.w[l].data();
    auto& mdata = state.mw[l].data();
    auto& vdata = state.vw[l].data();
    for (std::size_t i = 0; i < wdata.size(); ++i)
      update(wdata[i], gdata[i], mdata[i], vdata[i]);
    for (std::size_t i = 0; i < model.b[l].size(); ++i)
      update(model.b[l][i], grads.b[l][i], state.mb[l][i], state.vb[l][i]);
  }
}

}  // namespace npc
