#include <algorithm>
#include <cmath>

#include "binary_io.hpp"
#include "eegdir/training.hpp"

namespace eegdir {

namespace {

constexpr char kCheckpointMagic[4] = {'E', 'D', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr std::uint32_t kOptimVersion = 1;
constexpr std::uint32_t kFlagStabilized = 1u;

std::string describe_mismatch(const ModelConfig& a, const ModelConfig& b) {
    auto field = [](const char* name, auto x, auto y) {
        return std::string(name) + " " + std::to_string(x) + " vs expected " + std::to_string(y);
    };
    if (a.seq_len != b.seq_len) return field("seq_len", a.seq_len, b.seq_len);
    if (a.patch != b.patch) return field("patch", a.patch, b.patch);
    if (a.d_model != b.d_model) return field("d_model", a.d_model, b.d_model);
    if (a.heads != b.heads) return field("heads", a.heads, b.heads);
    if (a.layers != b.layers) return field("layers", a.layers, b.layers);
    if (a.ffn_mult != b.ffn_mult) return field("ffn_mult", a.ffn_mult, b.ffn_mult);
    if (a.stabilized_retention != b.stabilized_retention) return "stabilized_retention flag differs";
    if (a.eps_ln != b.eps_ln) return field("eps_ln", a.eps_ln, b.eps_ln);
    if (a.eps_gn != b.eps_gn) return field("eps_gn", a.eps_gn, b.eps_gn);
    return field("theta_base", a.theta_base, b.theta_base);
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ModelConfig& cfg, const ModelParams& params,
                                            const OptimState* state) {
    check_params(params, cfg);
    detail::ByteWriter w;
    w.bytes(kCheckpointMagic, 4);
    w.u32(kCheckpointVersion);
    for (std::size_t v : {cfg.seq_len, cfg.patch, cfg.d_model, cfg.heads, cfg.layers, cfg.ffn_mult}) {
        w.u32(static_cast<std::uint32_t>(v));
    }
    w.u32(cfg.stabilized_retention ? kFlagStabilized : 0u);
    w.f64(cfg.eps_ln);
    w.f64(cfg.eps_gn);
    w.f64(cfg.theta_base);

    std::uint32_t count = 0;
    for_each_param(params, [&](const std::string&, const Tensor&, ParamRole) { ++count; });
    w.u32(count);
    for_each_param(params, [&](const std::string& name, const Tensor& t, ParamRole) {
        w.u32(static_cast<std::uint32_t>(name.size()));
        w.bytes(name.data(), name.size());
        w.u32(static_cast<std::uint32_t>(t.shape.size()));
        for (auto d : t.shape) w.u32(static_cast<std::uint32_t>(d));
        for (double v : t.data) w.f64(v);
    });

    const bool with_state = state && !state->m.empty();
    w.u32(with_state ? 1u : 0u);
    if (with_state) {
        if (state->m.size() != count || state->v.size() != count) {
            throw ContractError("encode_checkpoint: optimizer state does not match parameters");
        }
        w.u32(kOptimVersion);
        w.u64(state->step);
        for (double v : {state->lr, state->beta1, state->beta2, state->eps, state->weight_decay}) w.f64(v);
        for (const auto* moments : {&state->m, &state->v}) {
            for (const auto& t : *moments) {
                for (double v : t.data) w.f64(v);
            }
        }
    }
    return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const ModelConfig* expected) {
    const std::size_t head = std::min<std::size_t>(bytes.size(), 4);
    if (!std::equal(kCheckpointMagic, kCheckpointMagic + head, bytes.begin())) {
        throw FormatError(ErrorKind::BadMagic, "checkpoint: bad magic");
    }
    if (head < 4) throw FormatError(ErrorKind::Truncated, "checkpoint: truncated payload");
    detail::ByteReader r(bytes.subspan(4), "checkpoint");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw FormatError(ErrorKind::VersionMismatch,
                          "checkpoint: version " + std::to_string(version) + " unsupported");
    }
    Checkpoint ck;
    ck.cfg.seq_len = r.u32();
    ck.cfg.patch = r.u32();
    ck.cfg.d_model = r.u32();
    ck.cfg.heads = r.u32();
    ck.cfg.layers = r.u32();
    ck.cfg.ffn_mult = r.u32();
    ck.cfg.stabilized_retention = (r.u32() & kFlagStabilized) != 0;
    ck.cfg.eps_ln = r.f64();
    ck.cfg.eps_gn = r.f64();
    ck.cfg.theta_base = r.f64();
    if (expected && !(ck.cfg == *expected)) {
        throw FormatError(ErrorKind::ConfigMismatch,
                          "checkpoint: config mismatch (" + describe_mismatch(ck.cfg, *expected) + ")");
    }
    ck.cfg.validate();

    ck.params = zero_params(ck.cfg);
    std::uint32_t expected_count = 0;
    for_each_param(ck.params, [&](const std::string&, const Tensor&, ParamRole) { ++expected_count; });
    const std::uint32_t count = r.u32();
    if (count != expected_count) {
        throw FormatError(ErrorKind::ShapeMismatch, "checkpoint: " + std::to_string(count) +
                                                        " tensors, config implies " +
                                                        std::to_string(expected_count));
    }
    for_each_param(ck.params, [&](const std::string& name, Tensor& t, ParamRole) {
        const std::uint32_t name_len = r.u32();
        std::string stored(name_len, '\0');
        r.bytes(stored.data(), name_len);
        if (stored != name) {
            throw FormatError(ErrorKind::ShapeMismatch,
                              "checkpoint: expected tensor " + name + ", found " + stored);
        }
        const std::uint32_t ndim = r.u32();
        r.need(static_cast<std::size_t>(ndim) * 4);
        Shape shape(ndim);
        for (auto& d : shape) d = r.u32();
        if (shape != t.shape) {
            throw FormatError(ErrorKind::ShapeMismatch, "checkpoint: tensor " + name + " has shape " +
                                                            shape_str(shape) + ", expected " +
                                                            shape_str(t.shape));
        }
        r.need(t.size() * 8);
        for (auto& v : t.data) v = r.f64();
    });
    check_params(ck.params, ck.cfg);

    if (r.u32() == 1u) {
        const std::uint32_t ov = r.u32();
        if (ov != kOptimVersion) {
            throw FormatError(ErrorKind::VersionMismatch,
                              "checkpoint: optimizer state version " + std::to_string(ov) + " unsupported");
        }
        OptimState st;
        st.step = r.u64();
        st.lr = r.f64();
        st.beta1 = r.f64();
        st.beta2 = r.f64();
        st.eps = r.f64();
        st.weight_decay = r.f64();
        for (auto* moments : {&st.m, &st.v}) {
            for_each_param(ck.params, [&](const std::string&, const Tensor& t, ParamRole) {
                Tensor mt(t.shape);
                r.need(mt.size() * 8);
                for (auto& v : mt.data) {
                    v = r.f64();
                    if (!std::isfinite(v) || (moments == &st.v && v < 0.0)) {
                        throw NumericError("checkpoint: invalid optimizer moment");
                    }
                }
                moments->push_back(std::move(mt));
            });
        }
        ck.state = std::move(st);
    }
    if (r.remaining() != 0) {
        throw FormatError(ErrorKind::Truncated, "checkpoint: " + std::to_string(r.remaining()) +
                                                    " bytes past the declared payload");
    }
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg,
                     const ModelParams& params, const OptimState* state) {
    const auto bytes = encode_checkpoint(cfg, params, state);
    detail::write_file(path, bytes);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected) {
    const auto bytes = detail::read_file(path);
    try {
        return decode_checkpoint(bytes, expected);
    } catch (const FormatError& e) {
        throw FormatError(e.kind(), path.string() + ": " + e.what());
    }
}

}  // namespace eegdir
