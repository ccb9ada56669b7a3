#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "eegdir/autodiff.hpp"

namespace eegdir {

struct ModelConfig {
    std::size_t seq_len = 512;
    std::size_t patch = 16;
    std::size_t d_model = 64;
    std::size_t heads = 4;
    std::size_t layers = 2;
    std::size_t ffn_mult = 2;
    double eps_ln = 1e-5;
    double eps_gn = 1e-5;
    bool stabilized_retention = false;
    double theta_base = 10000.0;

    std::size_t tokens() const { return patch ? seq_len / patch : 0; }
    std::size_t head_dim() const { return heads ? d_model / heads : 0; }

    // Throws ConfigError describing the first violated constraint.
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

// Parameter containers are generic over storage: Tensor for the persistent
// model, ad::NdValue for the copy bound to a tape during one step.
template <class T>
struct RetentionHeadT {
    T W_Q, W_K, W_V;
    double gamma = 0.0;  // fixed by head index, never learned
};

template <class T>
struct MsrParamsT {
    std::vector<RetentionHeadT<T>> heads;
    T W_G, W_O;
    T gn_gamma, gn_beta;
};

template <class T>
struct DirBlockT {
    T ln1_gamma, ln1_beta;
    MsrParamsT<T> msr;
    T ln2_gamma, ln2_beta;
    T ffn_W1, ffn_b1, ffn_W2, ffn_b2;
};

template <class T>
struct ModelParamsT {
    T embed_W, embed_b;
    std::vector<DirBlockT<T>> blocks;
    T out_W, out_b;
};

using RetentionHeadParams = RetentionHeadT<Tensor>;
using MsrParams = MsrParamsT<Tensor>;
using DirBlockParams = DirBlockT<Tensor>;
using ModelParams = ModelParamsT<Tensor>;
using BoundParams = ModelParamsT<ad::NdValue>;

enum class ParamRole { Weight, Bias, Norm };

// Visits every learnable entry in a fixed order with a stable dotted name.
// Weight-decay eligibility and checkpoint layout both follow this order.
template <class P, class F>
void for_each_param(P& params, F&& fn) {
    fn("embed.W", params.embed_W, ParamRole::Weight);
    fn("embed.b", params.embed_b, ParamRole::Bias);
    for (std::size_t l = 0; l < params.blocks.size(); ++l) {
        auto& b = params.blocks[l];
        const std::string p = "blocks." + std::to_string(l) + ".";
        fn(p + "ln1.gamma", b.ln1_gamma, ParamRole::Norm);
        fn(p + "ln1.beta", b.ln1_beta, ParamRole::Norm);
        for (std::size_t h = 0; h < b.msr.heads.size(); ++h) {
            const std::string hp = p + "msr.heads." + std::to_string(h) + ".";
            fn(hp + "W_Q", b.msr.heads[h].W_Q, ParamRole::Weight);
            fn(hp + "W_K", b.msr.heads[h].W_K, ParamRole::Weight);
            fn(hp + "W_V", b.msr.heads[h].W_V, ParamRole::Weight);
        }
        fn(p + "msr.W_G", b.msr.W_G, ParamRole::Weight);
        fn(p + "msr.W_O", b.msr.W_O, ParamRole::Weight);
        fn(p + "msr.gn.gamma", b.msr.gn_gamma, ParamRole::Norm);
        fn(p + "msr.gn.beta", b.msr.gn_beta, ParamRole::Norm);
        fn(p + "ln2.gamma", b.ln2_gamma, ParamRole::Norm);
        fn(p + "ln2.beta", b.ln2_beta, ParamRole::Norm);
        fn(p + "ffn.W1", b.ffn_W1, ParamRole::Weight);
        fn(p + "ffn.b1", b.ffn_b1, ParamRole::Bias);
        fn(p + "ffn.W2", b.ffn_W2, ParamRole::Weight);
        fn(p + "ffn.b2", b.ffn_b2, ParamRole::Bias);
    }
    fn("out.W", params.out_W, ParamRole::Weight);
    fn("out.b", params.out_b, ParamRole::Bias);
}

// gamma_i = 1 - 2^(-5-i)
std::vector<double> head_gammas(std::size_t heads);

// D[n, m] = gamma^(n-m) for n >= m, else 0.
Tensor decay_matrix(double gamma, std::size_t len);

// Expected shape of every parameter, keyed by for_each_param order.
ModelParams zero_params(const ModelConfig& cfg);
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);
// p == d_model only: identity embedding and head, zeroed trunk.
ModelParams identity_params(const ModelConfig& cfg);
// Throws ShapeMismatch / Numeric errors when params do not fit cfg.
void check_params(const ModelParams& params, const ModelConfig& cfg);

BoundParams bind(ad::Tape& tape, const ModelParams& params, bool trainable);
// Arranges tape values, given in for_each_param order, into the layout of `layout`.
BoundParams bind_values(const ModelParams& layout, std::span<const ad::NdValue> values);

// [B, S] -> [B, S/p, p]
ad::NdValue patchify(ad::NdValue signal, std::size_t patch);
ad::NdValue signal_embedding(ad::NdValue signal, ad::NdValue embed_W, ad::NdValue embed_b);

// Pre-mask scores Q.K^T for one head; x is [B, T, d].
ad::NdValue retention_scores(ad::NdValue x, const RetentionHeadT<ad::NdValue>& head,
                             double theta_base);
ad::NdValue retention(ad::NdValue x, const RetentionHeadT<ad::NdValue>& head, bool stabilized,
                      double theta_base);
ad::NdValue multi_scale_retention(ad::NdValue x, const MsrParamsT<ad::NdValue>& msr,
                                  const ModelConfig& cfg);
ad::NdValue dir_block(ad::NdValue x, const DirBlockT<ad::NdValue>& block, const ModelConfig& cfg);

// [B, seq_len] -> [B, seq_len]
ad::NdValue forward(ad::NdValue signal, const BoundParams& params, const ModelConfig& cfg);

// Inference without gradient bookkeeping.
Tensor predict(const ModelParams& params, const ModelConfig& cfg, const Tensor& signal);

}  // namespace eegdir
