#include "eegdir/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>

namespace eegdir {

ad::NdValue mse_loss(ad::NdValue pred, ad::NdValue target) {
    if (pred.shape() != target.shape()) {
        throw DimensionError("mse_loss: prediction " + shape_str(pred.shape()) + " vs target " +
                             shape_str(target.shape()));
    }
    const auto diff = ad::sub(target, pred);
    return ad::mean(ad::mul(diff, diff));
}

void adamw_step(std::span<const ParamSlot> params, std::span<const std::vector<double>> grads,
                OptimState& state) {
    if (params.size() != grads.size()) {
        throw ContractError("adamw_step: " + std::to_string(params.size()) + " parameters but " +
                            std::to_string(grads.size()) + " gradients");
    }
    for (std::size_t p = 0; p < params.size(); ++p) {
        if (grads[p].size() != params[p].value->size()) {
            throw DimensionError("adamw_step: gradient " + std::to_string(p) + " has wrong size");
        }
        for (double g : grads[p]) {
            if (!std::isfinite(g)) {
                throw NumericError("adamw_step: non-finite gradient for parameter " + std::to_string(p));
            }
        }
    }
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.value->shape);
            state.v.emplace_back(p.value->shape);
        }
    }
    if (state.m.size() != params.size()) {
        throw ContractError("adamw_step: optimizer state tracks a different parameter set");
    }

    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(state.beta1, t);
    const double bc2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto& theta = params[p].value->data;
        auto& m = state.m[p].data;
        auto& v = state.v[p].data;
        const auto& g = grads[p];
        for (std::size_t i = 0; i < theta.size(); ++i) {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            const double old = theta[i];
            theta[i] = old - state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
            if (params[p].decay) theta[i] -= state.lr * state.weight_decay * old;
        }
    }
}

void adamw_step(ModelParams& params, std::span<const std::vector<double>> grads, OptimState& state) {
    std::vector<ParamSlot> slots;
    for_each_param(params, [&](const std::string&, Tensor& t, ParamRole role) {
        slots.push_back({&t, role == ParamRole::Weight});
    });
    adamw_step(slots, grads, state);
}

void TrainConfig::validate() const {
    if (epochs == 0) throw ConfigError("epochs must be >= 1");
    if (batch_size == 0) throw ConfigError("batch size must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw ConfigError("betas must lie in [0, 1)");
    }
    if (!(eps_adam > 0.0)) throw ConfigError("adam eps must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be non-negative");
}

double loss_and_grads(const ModelParams& params, const ModelConfig& cfg, const Tensor& noisy,
                      const Tensor& clean, std::vector<std::vector<double>>& grads) {
    ad::Tape tape;
    const auto bound = bind(tape, params, true);
    const auto pred = forward(tape.constant(noisy), bound, cfg);
    const auto loss = mse_loss(pred, tape.constant(clean));
    tape.backward(loss);
    grads.clear();
    for_each_param(bound, [&](const std::string&, const ad::NdValue& v, ParamRole) {
        grads.push_back(v.grad());
    });
    return loss.value().data[0];
}

namespace {

void gather(const Dataset& data, std::span<const std::size_t> idx, Tensor& noisy, Tensor& clean) {
    const std::size_t s = data.seq_len;
    noisy = Tensor({idx.size(), s});
    clean = Tensor({idx.size(), s});
    for (std::size_t b = 0; b < idx.size(); ++b) {
        const auto& smp = data.samples[idx[b]];
        std::copy(smp.noisy.begin(), smp.noisy.end(), noisy.data.begin() + static_cast<std::ptrdiff_t>(b * s));
        std::copy(smp.clean.begin(), smp.clean.end(), clean.data.begin() + static_cast<std::ptrdiff_t>(b * s));
    }
}

}  // namespace

TrainResult train(ModelParams& params, const ModelConfig& cfg, const Dataset& data,
                  const TrainConfig& tc, const EpochCallback& on_epoch) {
    cfg.validate();
    tc.validate();
    check_params(params, cfg);
    if (data.samples.empty()) throw ContractError("train: dataset is empty");
    if (data.seq_len != cfg.seq_len) {
        throw ConfigError("train: dataset seq_len " + std::to_string(data.seq_len) +
                          " does not match model seq_len " + std::to_string(cfg.seq_len));
    }

    std::ofstream log_file;
    if (tc.log_path) {
        log_file.open(*tc.log_path, std::ios::trunc);
        if (!log_file) throw IoError("cannot open for writing " + tc.log_path->string());
        log_file.precision(17);
        log_file << "epoch,step,loss\n";
    }

    TrainResult res;
    res.state.lr = tc.lr;
    res.state.beta1 = tc.beta1;
    res.state.beta2 = tc.beta2;
    res.state.eps = tc.eps_adam;
    res.state.weight_decay = tc.weight_decay;

    std::vector<std::size_t> order(data.samples.size());
    std::vector<std::vector<double>> grads;
    Tensor noisy, clean;
    std::size_t step = 0;
    for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        std::seed_seq seq{static_cast<std::uint32_t>(tc.seed), static_cast<std::uint32_t>(tc.seed >> 32),
                          static_cast<std::uint32_t>(epoch)};
        std::mt19937_64 rng(seq);
        std::shuffle(order.begin(), order.end(), rng);

        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t lo = 0; lo < order.size(); lo += tc.batch_size) {
            const std::size_t hi = std::min(order.size(), lo + tc.batch_size);
            gather(data, std::span(order).subspan(lo, hi - lo), noisy, clean);
            ++step;
            double loss = 0.0;
            try {
                loss = loss_and_grads(params, cfg, noisy, clean, grads);
                adamw_step(params, grads, res.state);
            } catch (const NumericError& e) {
                if (log_file) log_file.flush();
                throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", step " +
                                   std::to_string(step) + ": " + e.what());
            }
            res.log.push_back({epoch, step, loss});
            if (log_file) log_file << epoch << ',' << step << ',' << loss << '\n';
            epoch_loss += loss;
            ++batches;
        }
        if (log_file) log_file.flush();
        if (on_epoch) on_epoch(epoch, epoch_loss / static_cast<double>(batches));
        const bool periodic = tc.log_every > 0 && epoch % tc.log_every == 0;
        if (tc.checkpoint_path && (periodic || epoch == tc.epochs)) {
            save_checkpoint(*tc.checkpoint_path, cfg, params, &res.state);
        }
    }
    return res;
}

}  // namespace eegdir
