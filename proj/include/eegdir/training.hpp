#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "eegdir/data.hpp"
#include "eegdir/model.hpp"

namespace eegdir {

// Mean over all elements of (target - pred)^2.
ad::NdValue mse_loss(ad::NdValue pred, ad::NdValue target);

struct OptimState {
    double lr = 5e-4;
    double beta1 = 0.5;
    double beta2 = 0.9;
    double eps = 1e-8;
    double weight_decay = 1e-2;
    std::uint64_t step = 0;
    std::vector<Tensor> m;
    std::vector<Tensor> v;
};

struct ParamSlot {
    Tensor* value;
    bool decay;  // decoupled weight decay applies (weight matrices only)
};

// One AdamW update with bias correction; decay uses the pre-update value.
// Moments are created lazily on the first step. Throws NumericError, leaving
// every parameter and the state untouched, if any gradient is non-finite.
void adamw_step(std::span<const ParamSlot> params, std::span<const std::vector<double>> grads,
                OptimState& state);
// Gradients in for_each_param order.
void adamw_step(ModelParams& params, std::span<const std::vector<double>> grads, OptimState& state);

struct TrainConfig {
    std::size_t epochs = 100;
    std::size_t batch_size = 32;
    std::uint64_t seed = 42;
    double lr = 5e-4;
    double beta1 = 0.5;
    double beta2 = 0.9;
    double eps_adam = 1e-8;
    double weight_decay = 1e-2;
    // Checkpoint cadence in epochs; 0 disables periodic checkpoints.
    std::size_t log_every = 10;
    std::optional<std::filesystem::path> checkpoint_path;
    std::optional<std::filesystem::path> log_path;

    void validate() const;
};

struct TrainLogRow {
    std::size_t epoch;
    std::size_t step;
    double loss;
};

struct TrainResult {
    std::vector<TrainLogRow> log;
    OptimState state;
};

// Gradients of mse(forward(noisy), clean) for one batch, in for_each_param order.
double loss_and_grads(const ModelParams& params, const ModelConfig& cfg, const Tensor& noisy,
                      const Tensor& clean, std::vector<std::vector<double>>& grads);

// Shuffled mini-batch AdamW on (noisy -> clean). Throws NumericError on a
// non-finite loss; the last checkpoint written before that stays in place.
// Called after every epoch with the mean batch loss.
using EpochCallback = std::function<void(std::size_t epoch, double mean_loss)>;

TrainResult train(ModelParams& params, const ModelConfig& cfg, const Dataset& data,
                  const TrainConfig& tc, const EpochCallback& on_epoch = {});

struct Checkpoint {
    ModelConfig cfg;
    ModelParams params;
    std::optional<OptimState> state;
};

// "EDCK" container, little-endian, 64-bit parameter storage.
std::vector<std::uint8_t> encode_checkpoint(const ModelConfig& cfg, const ModelParams& params,
                                            const OptimState* state = nullptr);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes,
                             const ModelConfig* expected = nullptr);
void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg,
                     const ModelParams& params, const OptimState* state = nullptr);
// With `expected`, a differing stored config raises a ConfigMismatch error.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected = nullptr);

}  // namespace eegdir
