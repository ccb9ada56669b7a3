#include "eegdir/model.hpp"

#include <cmath>
#include <random>

namespace eegdir {

void ModelConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError(msg); };
    if (seq_len == 0) fail("seq_len must be positive");
    if (patch == 0) fail("patch must be positive");
    if (seq_len % patch != 0) {
        fail("seq_len not divisible by patch (" + std::to_string(seq_len) + " % " +
             std::to_string(patch) + " != 0)");
    }
    if (d_model == 0) fail("d_model must be positive");
    if (heads == 0) fail("heads must be positive");
    if (d_model % heads != 0) {
        fail("d_model not divisible by heads (" + std::to_string(d_model) + " % " +
             std::to_string(heads) + " != 0)");
    }
    if (head_dim() % 2 != 0) {
        fail("head dim " + std::to_string(head_dim()) + " must be even for pairwise rotation");
    }
    if (layers == 0) fail("layers must be >= 1");
    if (ffn_mult == 0) fail("ffn_mult must be >= 1");
    if (!(eps_ln > 0.0) || !(eps_gn > 0.0)) fail("normalization eps must be positive");
    if (!(theta_base > 0.0)) fail("theta_base must be positive");
}

std::vector<double> head_gammas(std::size_t heads) {
    if (heads == 0) throw ConfigError("head_gammas: need at least one head");
    std::vector<double> g(heads);
    for (std::size_t i = 0; i < heads; ++i) g[i] = 1.0 - std::ldexp(1.0, -5 - static_cast<int>(i));
    return g;
}

Tensor decay_matrix(double gamma, std::size_t len) {
    if (!(gamma > 0.0 && gamma < 1.0)) {
        throw ConfigError("decay_matrix: gamma " + std::to_string(gamma) + " outside (0, 1)");
    }
    if (len == 0) throw ConfigError("decay_matrix: length must be positive");
    Tensor d({len, len});
    for (std::size_t n = 0; n < len; ++n) {
        for (std::size_t m = 0; m <= n; ++m) {
            d.data[n * len + m] = std::pow(gamma, static_cast<double>(n - m));
        }
    }
    return d;
}

ModelParams zero_params(const ModelConfig& cfg) {
    cfg.validate();
    const std::size_t p = cfg.patch, dm = cfg.d_model, hd = cfg.head_dim();
    const std::size_t hidden = cfg.ffn_mult * dm;
    const auto gammas = head_gammas(cfg.heads);

    ModelParams mp;
    mp.embed_W = Tensor({p, dm});
    mp.embed_b = Tensor({dm});
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        DirBlockParams b;
        b.ln1_gamma = Tensor({dm});
        b.ln1_beta = Tensor({dm});
        for (std::size_t h = 0; h < cfg.heads; ++h) {
            b.msr.heads.push_back(
                RetentionHeadParams{Tensor({hd, hd}), Tensor({hd, hd}), Tensor({hd, hd}), gammas[h]});
        }
        b.msr.W_G = Tensor({dm, dm});
        b.msr.W_O = Tensor({dm, dm});
        b.msr.gn_gamma = Tensor({dm});
        b.msr.gn_beta = Tensor({dm});
        b.ln2_gamma = Tensor({dm});
        b.ln2_beta = Tensor({dm});
        b.ffn_W1 = Tensor({dm, hidden});
        b.ffn_b1 = Tensor({hidden});
        b.ffn_W2 = Tensor({hidden, dm});
        b.ffn_b2 = Tensor({dm});
        mp.blocks.push_back(std::move(b));
    }
    mp.out_W = Tensor({dm, p});
    mp.out_b = Tensor({p});
    return mp;
}

namespace {

bool is_norm_scale(const std::string& name) {
    return name.size() >= 5 && name.compare(name.size() - 5, 5, "gamma") == 0;
}

}  // namespace

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
    ModelParams mp = zero_params(cfg);
    std::mt19937_64 rng(seed);
    for_each_param(mp, [&](const std::string& name, Tensor& t, ParamRole role) {
        if (role == ParamRole::Weight) {
            const double bound = std::sqrt(1.0 / static_cast<double>(t.shape[0]));
            std::uniform_real_distribution<double> dist(-bound, bound);
            for (auto& v : t.data) v = dist(rng);
        } else if (role == ParamRole::Norm && is_norm_scale(name)) {
            std::fill(t.data.begin(), t.data.end(), 1.0);
        }
    });
    return mp;
}

ModelParams identity_params(const ModelConfig& cfg) {
    if (cfg.patch != cfg.d_model) {
        throw ConfigError("identity_params: requires patch == d_model, got " +
                          std::to_string(cfg.patch) + " and " + std::to_string(cfg.d_model));
    }
    ModelParams mp = zero_params(cfg);
    for_each_param(mp, [](const std::string& name, Tensor& t, ParamRole role) {
        if (role == ParamRole::Norm && is_norm_scale(name)) std::fill(t.data.begin(), t.data.end(), 1.0);
    });
    for (std::size_t i = 0; i < cfg.patch; ++i) {
        mp.embed_W.data[i * cfg.d_model + i] = 1.0;
        mp.out_W.data[i * cfg.patch + i] = 1.0;
    }
    return mp;
}

void check_params(const ModelParams& params, const ModelConfig& cfg) {
    const ModelParams expected = zero_params(cfg);
    if (params.blocks.size() != expected.blocks.size()) {
        throw FormatError(ErrorKind::ShapeMismatch,
                          "parameter set has " + std::to_string(params.blocks.size()) +
                              " blocks, config expects " + std::to_string(expected.blocks.size()));
    }
    for (std::size_t l = 0; l < params.blocks.size(); ++l) {
        if (params.blocks[l].msr.heads.size() != cfg.heads) {
            throw FormatError(ErrorKind::ShapeMismatch,
                              "block " + std::to_string(l) + " has wrong head count");
        }
    }
    std::vector<Shape> shapes;
    for_each_param(expected, [&](const std::string&, const Tensor& t, ParamRole) { shapes.push_back(t.shape); });
    std::size_t i = 0;
    for_each_param(params, [&](const std::string& name, const Tensor& t, ParamRole) {
        if (t.shape != shapes[i] || t.data.size() != shape_size(shapes[i])) {
            throw FormatError(ErrorKind::ShapeMismatch, "parameter " + name + " has shape " +
                                                            shape_str(t.shape) + ", expected " +
                                                            shape_str(shapes[i]));
        }
        for (double v : t.data) {
            if (!std::isfinite(v)) throw NumericError("parameter " + name + " is not finite");
        }
        ++i;
    });
}

BoundParams bind(ad::Tape& tape, const ModelParams& params, bool trainable) {
    std::vector<ad::NdValue> values;
    for_each_param(params, [&](const std::string&, const Tensor& t, ParamRole) {
        values.push_back(trainable ? tape.variable(t) : tape.constant(t));
    });
    return bind_values(params, values);
}

BoundParams bind_values(const ModelParams& layout, std::span<const ad::NdValue> values) {
    BoundParams bp;
    bp.blocks.resize(layout.blocks.size());
    for (std::size_t l = 0; l < layout.blocks.size(); ++l) {
        const auto& heads = layout.blocks[l].msr.heads;
        bp.blocks[l].msr.heads.resize(heads.size());
        for (std::size_t h = 0; h < heads.size(); ++h) bp.blocks[l].msr.heads[h].gamma = heads[h].gamma;
    }
    std::size_t i = 0;
    for_each_param(bp, [&](const std::string& name, ad::NdValue& v, ParamRole) {
        if (i >= values.size()) throw ContractError("bind_values: missing value for " + name);
        v = values[i++];
    });
    if (i != values.size()) throw ContractError("bind_values: too many values");
    return bp;
}

ad::NdValue patchify(ad::NdValue signal, std::size_t patch) {
    if (signal.shape().size() != 2) {
        throw DimensionError("patchify: expected [B, S], got " + shape_str(signal.shape()));
    }
    const std::size_t b = signal.dim(0), s = signal.dim(1);
    if (patch == 0 || s % patch != 0) {
        throw ConfigError("patchify: signal length " + std::to_string(s) +
                          " not divisible by patch " + std::to_string(patch));
    }
    return ad::reshape(signal, {b, s / patch, patch});
}

ad::NdValue signal_embedding(ad::NdValue signal, ad::NdValue embed_W, ad::NdValue embed_b) {
    if (embed_W.shape().size() != 2) {
        throw DimensionError("signal_embedding: weight must be [p, d_model], got " +
                             shape_str(embed_W.shape()));
    }
    const auto tokens = patchify(signal, embed_W.dim(0));
    return ad::add_bias(ad::matmul(tokens, embed_W), embed_b);
}

ad::NdValue retention_scores(ad::NdValue x, const RetentionHeadT<ad::NdValue>& head,
                             double theta_base) {
    // Both sides rotate forward; the real inner product supplies the conjugate,
    // so score[n, m] sees positions only through n - m.
    const auto q = ad::rotate(ad::matmul(x, head.W_Q), +1, theta_base);
    const auto k = ad::rotate(ad::matmul(x, head.W_K), +1, theta_base);
    return ad::matmul(q, ad::transpose(k));
}

ad::NdValue retention(ad::NdValue x, const RetentionHeadT<ad::NdValue>& head, bool stabilized,
                      double theta_base) {
    const std::size_t len = x.dim(-2);
    const std::size_t d = x.dim(-1);
    auto scores = ad::decay_mask(retention_scores(x, head, theta_base), decay_matrix(head.gamma, len));
    if (stabilized) {
        scores = ad::row_normalize_clamped(ad::scale(scores, 1.0 / std::sqrt(static_cast<double>(d))));
    }
    return ad::matmul(scores, ad::matmul(x, head.W_V));
}

ad::NdValue multi_scale_retention(ad::NdValue x, const MsrParamsT<ad::NdValue>& msr,
                                  const ModelConfig& cfg) {
    const std::size_t h = msr.heads.size();
    const std::size_t d = x.dim(-1) / h;
    std::vector<ad::NdValue> outs;
    outs.reserve(h);
    for (std::size_t i = 0; i < h; ++i) {
        try {
            outs.push_back(retention(ad::slice_last(x, i * d, d), msr.heads[i],
                                     cfg.stabilized_retention, cfg.theta_base));
        } catch (const NumericError& e) {
            throw NumericError("head " + std::to_string(i) + ": " + e.what());
        }
    }
    const auto y = ad::group_norm(ad::concat_last(outs), h, msr.gn_gamma, msr.gn_beta, cfg.eps_gn);
    const auto gate = ad::swish(ad::matmul(x, msr.W_G));
    return ad::matmul(ad::mul(gate, y), msr.W_O);
}

ad::NdValue dir_block(ad::NdValue x, const DirBlockT<ad::NdValue>& block, const ModelConfig& cfg) {
    const auto y = ad::add(
        x, multi_scale_retention(ad::layer_norm(x, block.ln1_gamma, block.ln1_beta, cfg.eps_ln),
                                 block.msr, cfg));
    const auto hidden = ad::gelu(ad::add_bias(
        ad::matmul(ad::layer_norm(y, block.ln2_gamma, block.ln2_beta, cfg.eps_ln), block.ffn_W1),
        block.ffn_b1));
    return ad::add(y, ad::add_bias(ad::matmul(hidden, block.ffn_W2), block.ffn_b2));
}

ad::NdValue forward(ad::NdValue signal, const BoundParams& params, const ModelConfig& cfg) {
    if (signal.shape().size() != 2 || signal.dim(1) != cfg.seq_len) {
        throw ConfigError("forward: input shape " + shape_str(signal.shape()) +
                          " does not match seq_len " + std::to_string(cfg.seq_len));
    }
    auto x = signal_embedding(signal, params.embed_W, params.embed_b);
    for (std::size_t l = 0; l < params.blocks.size(); ++l) {
        try {
            x = dir_block(x, params.blocks[l], cfg);
        } catch (const NumericError& e) {
            throw NumericError("layer " + std::to_string(l) + ": " + e.what());
        }
    }
    const auto tokens = ad::add_bias(ad::matmul(x, params.out_W), params.out_b);
    return ad::reshape(tokens, {signal.dim(0), cfg.seq_len});
}

Tensor predict(const ModelParams& params, const ModelConfig& cfg, const Tensor& signal) {
    ad::Tape tape;
    const auto bound = bind(tape, params, false);
    return forward(tape.constant(signal), bound, cfg).value();
}

}  // namespace eegdir
