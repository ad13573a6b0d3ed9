#pragma once

#include <cstdint>
#include <vector>

#include "npc/mathcore.hpp"

namespace npc {

enum class Head : std::uint8_t { Softmax, Sigmoid, Softplus };

// Fully connected network with rectifier hidden layers. The output head is
// applied on top of the stored linear output ("logits").
struct MlpModel {
  std::vector<std::uint32_t> dims;  // input, hidden..., output widths
  Head head = Head::Softmax;
  std::vector<Matrix> w;            // w[l] has shape dims[l+1] x dims[l]
  std::vector<std::vector<double>> b;

  std::uint32_t input_dim() const { return dims.front(); }
  std::uint32_t output_dim() const { return dims.back(); }
  bool operator==(const MlpModel&) const = default;
};

// He-normal weights, zero biases; layer order fixed so init is replayable.
MlpModel init_mlp(std::vector<std::uint32_t> dims, Head head, RngState& rng);

// Activations captured during a forward pass, for backprop.
// act[0] is the input batch, act[1..L-1] the rectified hidden layers,
// act[L] the output logits.
struct MlpTrace {
  std::vector<Matrix> act;
};

// Batched forward pass; returns output logits (rows = samples).
Matrix mlp_logits(const MlpModel& model, const Matrix& x, MlpTrace* trace = nullptr);

// Applies the head row-wise to a logits batch.
Matrix apply_head(Head head, const Matrix& logits);

double sigmoid(double x);

struct MlpGrads {
  std::vector<Matrix> w;
  std::vector<std::vector<double>> b;
  void scale(double factor);
  bool operator==(const MlpGrads&) const = default;
};

MlpGrads make_grads(const MlpModel& model);

// Accumulates parameter gradients given dL/dlogits; writes dL/dinput when
// dx is non-null. trace must come from mlp_logits on the same inputs.
void mlp_backward(const MlpModel& model, const MlpTrace& trace, const Matrix& dlogits,
                  MlpGrads& grads, Matrix* dx = nullptr);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<Matrix> mw, vw;
  std::vector<std::vector<double>> mb, vb;
};

AdamState make_adam(const MlpModel& model);
// Gradient-descent step on the given gradients (pass the gradient of the
// quantity being minimized).
void adam_step(MlpModel& model, const MlpGrads& grads, AdamState& state, double lr);

}  // namespace npc
