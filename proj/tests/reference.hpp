// SPDX-License-Identifier: Apache-2.0
//
// Independent double-precision re-implementation of the encoder forward
// pass and the training losses, written with plain loops against the
// published formulas. The test suites difference this model to obtain
// finite-difference oracles for gradients and neuron saliency.

#pragma once

#include <cstdint>
#include <vector>

#include "shrinkpipe/distill.hpp"
#include "shrinkpipe/model.hpp"

namespace testref {

// Additive perturbation of one post-GELU FFN activation: activation
// row `position` (= b*seq + s), neuron `neuron` of layer `layer` gets
// `delta` added before W2. layer < 0 disables the hook.
struct ActPerturb {
    int layer = -1;
    int position = 0;
    int neuron = 0;
    double delta = 0.0;
};

// Per-position vocabulary logits, row-major (batch*seq) x V.
std::vector<double> forward_logits(const shrinkpipe::EncoderModel& model,
                                   const shrinkpipe::TokenBatch& batch,
                                   const ActPerturb* perturb = nullptr);

// Mean cross-entropy over masked rows.
double masked_ce(const std::vector<double>& logits, int rows, int cols,
                 const std::vector<int>& targets, const std::vector<std::uint8_t>& mask);

// Mean squared difference over masked rows x vocab.
double masked_mse(const std::vector<double>& student, const std::vector<double>& teacher, int rows,
                  int cols, const std::vector<std::uint8_t>& mask);

// T^2 * KL(teacher || student) at temperature T, averaged over masked rows.
double masked_kl(const std::vector<double>& student, const std::vector<double>& teacher, int rows,
                 int cols, double temperature, const std::vector<std::uint8_t>& mask);

// alpha * CE + (1 - alpha) * (MSE or KL) of the masked batch, evaluated
// entirely in this reference implementation.
double combined_loss_value(const shrinkpipe::EncoderModel& student,
                           const shrinkpipe::EncoderModel& teacher,
                           const shrinkpipe::MaskedBatch& masked,
                           const std::vector<std::uint8_t>& valid, shrinkpipe::LossKind kind,
                           double alpha, double temperature);

// MLM cross-entropy alone, with an optional activation perturbation; the
// saliency oracle differentiates this with respect to single activations.
double mlm_loss_value(const shrinkpipe::EncoderModel& model, const shrinkpipe::MaskedBatch& masked,
                      const std::vector<std::uint8_t>& valid, const ActPerturb* perturb = nullptr);

}  // namespace testref
