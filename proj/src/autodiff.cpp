#include "eegdir/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <memory>
#include <numbers>
#include <sstream>

namespace eegdir {

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)), data(shape_size(shape), fill) {}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
    if (shape_size(shape) != data.size()) {
        throw DimensionError("tensor shape " + shape_str(shape) + " does not match " +
                             std::to_string(data.size()) + " values");
    }
}

std::size_t Tensor::dim(int axis) const {
    const int n = static_cast<int>(shape.size());
    const int a = axis < 0 ? axis + n : axis;
    if (a < 0 || a >= n) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                             shape_str(shape));
    }
    return shape[static_cast<std::size_t>(a)];
}

namespace ad {

namespace testing {

namespace {
std::atomic<Fault> g_fault{Fault::None};
}

void set_fault(Fault fault) { g_fault.store(fault); }
Fault fault() { return g_fault.load(); }

}  // namespace testing

Tape& NdValue::tape() const {
    if (!tape_) throw ContractError("use of an unbound NdValue");
    return *tape_;
}

const Tensor& NdValue::value() const { return tape().value(id_); }
bool NdValue::requires_grad() const { return tape().requires_grad(id_); }
const std::vector<double>& NdValue::grad() const { return tape().grad(id_); }

NdValue Tape::constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, false, {}});
    return NdValue(this, nodes_.size() - 1);
}

NdValue Tape::variable(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, true, {}});
    return NdValue(this, nodes_.size() - 1);
}

NdValue Tape::record(std::string_view op, Tensor value, std::span<const NdValue> inputs,
                     BackwardFn fn) {
    for (double v : value.data) {
        if (!std::isfinite(v)) {
            throw NumericError("non-finite value produced by " + std::string(op));
        }
    }
    bool needs = false;
    for (const auto& in : inputs) {
        if (&in.tape() != this) throw ContractError(std::string(op) + ": operands on different tapes");
        needs = needs || nodes_[in.id()].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(fn) : BackwardFn{}});
    return NdValue(this, nodes_.size() - 1);
}

double* Tape::grad_ptr(std::size_t id) {
    auto& n = nodes_[id];
    return n.requires_grad ? n.grad.data() : nullptr;
}

void Tape::backward(NdValue loss) {
    if (&loss.tape() != this) throw ContractError("backward: loss recorded on another tape");
    if (loss.size() != 1) {
        throw ContractError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
    }
    for (auto& n : nodes_) {
        if (n.requires_grad) n.grad.assign(n.value.size(), 0.0);
    }
    if (!nodes_[loss.id()].requires_grad) return;
    nodes_[loss.id()].grad[0] = 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
        if (nodes_[i].requires_grad && nodes_[i].backward) nodes_[i].backward(*this, i);
    }
}

namespace {

Tape& common_tape(NdValue a, NdValue b) {
    Tape& t = a.tape();
    if (&b.tape() != &t) throw ContractError("operands recorded on different tapes");
    return t;
}

void require_same_shape(std::string_view op, NdValue a, NdValue b) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

void require_rank(std::string_view op, NdValue x, std::size_t rank) {
    if (x.shape().size() < rank) {
        throw DimensionError(std::string(op) + ": needs rank >= " + std::to_string(rank) +
                             ", got " + shape_str(x.shape()));
    }
}

// Unary elementwise op: f gives the value, df the derivative given (x, y).
template <class F, class DF>
NdValue unary(std::string_view op, NdValue x, F f, DF df) {
    Tape& t = x.tape();
    const Tensor& xv = x.value();
    Tensor out(xv.shape);
    for (std::size_t i = 0; i < xv.size(); ++i) out.data[i] = f(xv.data[i]);
    const std::size_t xi = x.id();
    const NdValue ins[] = {x};
    return t.record(op, std::move(out), ins, [xi, df](Tape& tp, std::size_t self) {
        const auto& g = tp.grad(self);
        const auto& xv = tp.value(xi).data;
        const auto& yv = tp.value(self).data;
        double* gx = tp.grad_ptr(xi);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xv[i], yv[i]);
    });
}

double stable_sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

NdValue add(NdValue a, NdValue b) {
    Tape& t = common_tape(a, b);
    require_same_shape("add", a, b);
    Tensor out = a.value();
    const auto& bv = b.value().data;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += bv[i];
    const std::size_t ai = a.id(), bi = b.id();
    const NdValue ins[] = {a, b};
    return t.record("add", std::move(out), ins, [ai, bi](Tape& tp, std::size_t self) {
        const auto& g = tp.grad(self);
        for (std::size_t id : {ai, bi}) {
            if (double* gp = tp.grad_ptr(id)) {
                for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
            }
        }
    });
}

NdValue sub(NdValue a, NdValue b) {
    Tape& t = common_tape(a, b);
    require_same_shape("sub", a, b);
    Tensor out = a.value();
    const auto& bv = b.value().data;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= bv[i];
    const std::size_t ai = a.id(), bi = b.id();
    const NdValue ins[] = {a, b};
    return t.record("sub", std::move(out), ins, [ai, bi](Tape& tp, std::size_t self) {
        const auto& g = tp.grad(self);
        if (double* ga = tp.grad_ptr(ai)) {
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (double* gb = tp.grad_ptr(bi)) {
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
    });
}

NdValue mul(NdValue a, NdValue b) {
    Tape& t = common_tape(a, b);
    require_same_shape("mul", a, b);
    Tensor out = a.value();
    const auto& bv = b.value().data;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= bv[i];
    const std::size_t ai = a.id(), bi = b.id();
    const NdValue ins[] = {a, b};
    return t.record("mul", std::move(out), ins, [ai, bi](Tape& tp, std::size_t self) {
        const auto& g = tp.grad(self);
        const auto& av = tp.value(ai).data;
        const auto& bv = tp.value(bi).data;
        if (double* ga = tp.grad_ptr(ai)) {
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
        }
        if (double* gb = tp.grad_ptr(bi)) {
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
        }
    });
}

NdValue scale(NdValue x, double s) {
    return unary("scale", x, [s](double v) { return v * s; }, [s](double, double) { return s; });
}

NdValue add_bias(NdValue x, NdValue b) {
    Tape& t = common_tape(x, b);
    const std::size_t d = x.dim(-1);
    if (b.shape() != Shape{d}) {
        throw DimensionError("add_bias: bias shape " + shape_str(b.shape()) + " vs input " +
                             shape_str(x.shape()));
    }
    Tensor out = x.value();
    const auto& bv = b.value().data;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += bv[i % d];
    const std::size_t xi = x.id(), bi = b.id();
    const NdValue ins[] = {x, b};
    return t.record("add_bias", std::move(out), ins, [xi, bi, d](Tape& tp, std::size_t self) {
        const auto& g = tp.grad(self);
        if (double* gx = tp.grad_ptr(xi)) {
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        }
        if (double* gb = tp.grad_ptr(bi)) {
            for (std::size_t i = 0; i < g.size(); ++i) gb[i % d] += g[i];
        }
    });
}

NdValue matmul(NdValue a, NdValue b) {
    Tape& t = common_tape(a, b);
    require_rank("matmul", a, 2);
    require_rank("matmul", b, 2);
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    const std::size_t m = as[as.size() - 2], k = as.back();
    const std::size_t kb = bs[bs.size() - 2], n = bs.back();
    const Shape lead_a(as.begin(), as.end() - 2);
    const Shape lead_b(bs.begin(), bs.end() - 2);
    if (k != kb || (!lead_a.empty() && !lead_b.empty() && lead_a != lead_b)) {
        throw DimensionError("matmul: incompatible shapes " + shape_str(as) + " and " +
                             shape_str(bs));
    }
    const Shape& lead = lead_a.empty() ? lead_b : lead_a;
    const std::size_t batch = shape_size(lead);
    const std::size_t step_a = lead_a.empty() ? 0 : m * k;
    const std::size_t step_b = lead_b.empty() ? 0 : k * n;

    Shape out_shape = lead;
    out_shape.push_back(m);
    out_shape.push_back(n);
    Tensor out(out_shape);
    const double* av = a.value().data.data();
    const double* bv = b.value().data.data();
    for (std::size_t p = 0; p < batch; ++p) {
        const double* ap = av + p * step_a;
        const double* bp = bv + p * step_b;
        double* cp = out.data.data() + p * m * n;
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t q = 0; q < k; ++q) {
                const double aiq = ap[i * k + q];
                const double* brow = bp + q * n;
                double* crow = cp + i * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += aiq * brow[j];
            }
        }
    }
    const std::size_t ai = a.id(), bi = b.id();
    const NdValue ins[] = {a, b};
    return t.record("matmul", std::move(out), ins,
                    [=](Tape& tp, std::size_t self) {
                        const double* g = tp.grad(self).data();
                        const double* av = tp.value(ai).data.data();
                        const double* bv = tp.value(bi).data.data();
                        double* ga = tp.grad_ptr(ai);
                        double* gb = tp.grad_ptr(bi);
                        for (std::size_t p = 0; p < batch; ++p) {
                            const double* gp = g + p * m * n;
                            if (ga) {
                                const double* bp = bv + p * step_b;
                                double* gap = ga + p * step_a;
                                for (std::size_t i = 0; i < m; ++i) {
                                    for (std::size_t q = 0; q < k; ++q) {
                                        double acc = 0.0;
                                        for (std::size_t j = 0; j < n; ++j) {
                                            acc += gp[i * n + j] * bp[q * n + j];
                                        }
                                        gap[i * k + q] += acc;
                                    }
                                }
                            }
                            if (gb) {
                                const double* ap = av + p * step_a;
                                double* gbp = gb + p * step_b;
                                for (std::size_t i = 0; i < m; ++i) {
                                    for (std::size_t q = 0; q < k; ++q) {
                                        const double aiq = ap[i * k + q];
                                        for (std::size_t j = 0; j < n; ++j) {
                                            gbp[q * n + j] += aiq * gp[i * n + j];
                                        }
                                    }
                                }
                            }
                        }
                    });
}

NdValue transpose(NdValue x) {
    Tape& t = x.tape();
    require_rank("transpose", x, 2);
    Shape s = x.shape();
    const std::size_t r = s[s.size() - 2], c = s.back();
    std::swap(s[s.size() - 2], s.back());
    const std::size_t batch = x.size() / (r * c);
    Tensor out(s);
    const auto& xv = x.value().data;
    for (std::size_t p = 0; p < batch; ++p) {
        for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
                out.data[p * r * c + j * r + i] = xv[p * r * c + i * c + j];
            }
        }
    }
    const std::size_t xi = x.id();
    const NdValue ins[] = {x};
    return t.record("transpose", std::move(out), ins, [=](Tape& tp, std::size_t self) {
        const auto& g = tp.grad(self);
        double* gx = tp.grad_ptr(xi);
        for (std::size_t p = 0; p < batch; ++p) {
            for (std::size_t i = 0; i < r; ++i) {
                for (std::size_t j = 0; j < c; ++j) {
                    gx[p * r * c + i * c + j] += g[p * r * c + j * r + i];
                }
            }
        }
    });
}

NdValue reshape(NdValue x, Shape shape) {
    Tape& t = x.tape();
    if (shape_size(shape) != x.size()) {
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                             shape_str(shape));
    }
    Tensor out(std::move(shape), x.value().data);
    const std::size_t xi = x.id();
    const NdValue ins[] = {x};
    return t.record("reshape", std::move(out), ins, [xi](Tape& tp, std::size_t self) {
        const auto& g = tp.grad(self);
        double* gx = tp.grad_ptr(xi);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
}

NdValue slice_last(NdValue x, std::size_t start, std::size_t width) {
    Tape& t = x.tape();
    const std::size_t d = x.dim(-1);
    if (width == 0 || start + width > d) {
        throw DimensionError("slice_last: [" + std::to_string(start) + ", " +
                             std::to_string(start + width) + ") out of range for " +
                             shape_str(x.shape()));
    }
    Shape s = x.shape();
    s.back() = width;
    const std::size_t rows = x.size() / d;
    Tensor out(s);
    const auto& xv = x.value().data;
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(r * d + start), width,
                    out.data.begin() + static_cast<std::ptrdiff_t>(r * width));
    }
    const std::size_t xi = x.id();
    const NdValue ins[] = {x};
    return t.record("slice_last", std::move(out), ins, [=](Tape& tp, std::size_t self) {
        const auto& g = tp.grad(self);
        double* gx = tp.grad_ptr(xi);
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < width; ++j) gx[r * d + start + j] += g[r * width + j];
        }
    });
}

NdValue concat_last(std::span<const NdValue> parts) {
    if (parts.empty()) throw DimensionError("concat_last: no inputs");
    Tape& t = parts[0].tape();
    Shape lead(parts[0].shape().begin(), parts[0].shape().end() - 1);
    std::vector<std::size_t> widths, ids;
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (&p.tape() != &t) throw ContractError("concat_last: operands on different tapes");
        const Shape& s = p.shape();
        if (!std::equal(lead.begin(), lead.end(), s.begin(), s.end() - 1) ||
            s.size() != lead.size() + 1) {
            throw DimensionError("concat_last: leading shape mismatch " + shape_str(parts[0].shape()) +
                                 " vs " + shape_str(s));
        }
        widths.push_back(s.back());
        ids.push_back(p.id());
        total += s.back();
    }
    const std::size_t rows = shape_size(lead);
    Shape s = lead;
    s.push_back(total);
    Tensor out(s);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto& pv = parts[k].value().data;
        for (std::size_t r = 0; r < rows; ++r) {
            std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(r * widths[k]), widths[k],
                        out.data.begin() + static_cast<std::ptrdiff_t>(r * total + offset));
        }
        offset += widths[k];
    }
    return t.record("concat_last", std::move(out), parts, [=](Tape& tp, std::size_t self) {
        const auto& g = tp.grad(self);
        std::size_t off = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (double* gp = tp.grad_ptr(ids[k])) {
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < widths[k]; ++j) {
                        gp[r * widths[k] + j] += g[r * total + off + j];
                    }
                }
            }
            off += widths[k];
        }
    });
}

NdValue sigmoid(NdValue x) {
    return unary("sigmoid", x, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

NdValue tanh(NdValue x) {
    return unary("tanh", x, [](double v) { return std::tanh(v); },
                 [](double, double y) { return 1.0 - y * y; });
}

NdValue swish(NdValue x) {
    return unary(
        "swish", x, [](double v) { return v * stable_sigmoid(v); },
        [](double v, double) {
            const double s = stable_sigmoid(v);
            return s * (1.0 + v * (1.0 - s));
        });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

NdValue gelu(NdValue x) {
    return unary(
        "gelu", x,
        [](double v) { return 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v))); },
        [](double v, double) {
            const double th = std::tanh(kGeluC * (v + kGeluA * v * v * v));
            return 0.5 * (1.0 + th) +
                   0.5 * v * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
        });
}

NdValue sum(NdValue x) {
    Tape& t = x.tape();
    double s = 0.0;
    for (double v : x.value().data) s += v;
    const std::size_t xi = x.id();
    const NdValue ins[] = {x};
    return t.record("sum", Tensor::scalar(s), ins, [xi](Tape& tp, std::size_t self) {
        const double g = tp.grad(self)[0];
        double* gx = tp.grad_ptr(xi);
        const std::size_t n = tp.value(xi).size();
        for (std::size_t i = 0; i < n; ++i) gx[i] += g;
    });
}

NdValue mean(NdValue x) {
    Tape& t = x.tape();
    const std::size_t n = x.size();
    double s = 0.0;
    for (double v : x.value().data) s += v;
    const std::size_t xi = x.id();
    const NdValue ins[] = {x};
    return t.record("mean", Tensor::scalar(s / static_cast<double>(n)), ins,
                    [xi, n](Tape& tp, std::size_t self) {
                        const double g = tp.grad(self)[0] / static_cast<double>(n);
                        double* gx = tp.grad_ptr(xi);
                        for (std::size_t i = 0; i < n; ++i) gx[i] += g;
                    });
}

namespace {

NdValue grouped_norm(std::string_view op, NdValue x, std::size_t groups, NdValue gamma,
                     NdValue beta, double eps) {
    Tape& t = common_tape(x, gamma);
    common_tape(x, beta);
    if (!(eps > 0.0)) throw ConfigError(std::string(op) + ": eps must be positive");
    if (x.shape().empty() || x.dim(-1) == 0) {
        throw DimensionError(std::string(op) + ": empty channel axis in " + shape_str(x.shape()));
    }
    const std::size_t c = x.dim(-1);
    if (groups == 0 || c % groups != 0) {
        throw ConfigError(std::string(op) + ": " + std::to_string(c) +
                          " channels not divisible into " + std::to_string(groups) + " groups");
    }
    if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
        throw DimensionError(std::string(op) + ": affine shapes " + shape_str(gamma.shape()) + ", " +
                             shape_str(beta.shape()) + " vs channels " + std::to_string(c));
    }
    const std::size_t width = c / groups;
    const std::size_t slices = x.size() / width;
    auto xhat = std::make_shared<std::vector<double>>(x.size());
    auto inv_std = std::make_shared<std::vector<double>>(slices);
    Tensor out(x.shape());
    const auto& xv = x.value().data;
    const auto& gv = gamma.value().data;
    const auto& bv = beta.value().data;
    for (std::size_t s = 0; s < slices; ++s) {
        const double* xs = xv.data() + s * width;
        double mu = 0.0;
        for (std::size_t j = 0; j < width; ++j) mu += xs[j];
        mu /= static_cast<double>(width);
        double var = 0.0;
        for (std::size_t j = 0; j < width; ++j) var += (xs[j] - mu) * (xs[j] - mu);
        var /= static_cast<double>(width);
        const double r = 1.0 / std::sqrt(var + eps);
        (*inv_std)[s] = r;
        for (std::size_t j = 0; j < width; ++j) {
            const std::size_t i = s * width + j;
            const std::size_t ch = i % c;
            (*xhat)[i] = (xs[j] - mu) * r;
            out.data[i] = (*xhat)[i] * gv[ch] + bv[ch];
        }
    }
    const std::size_t xi = x.id(), gi = gamma.id(), bi = beta.id();
    const NdValue ins[] = {x, gamma, beta};
    return t.record(op, std::move(out), ins, [=](Tape& tp, std::size_t self) {
        const auto& g = tp.grad(self);
        const auto& gv = tp.value(gi).data;
        double* gx = tp.grad_ptr(xi);
        double* gg = tp.grad_ptr(gi);
        double* gb = tp.grad_ptr(bi);
        const auto& xh = *xhat;
        for (std::size_t s = 0; s < slices; ++s) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < width; ++j) {
                const std::size_t i = s * width + j;
                const std::size_t ch = i % c;
                if (gg) gg[ch] += g[i] * xh[i];
                if (gb) gb[ch] += g[i];
                const double dxh = g[i] * gv[ch];
                m1 += dxh;
                m2 += dxh * xh[i];
            }
            if (!gx) continue;
            m1 /= static_cast<double>(width);
            m2 /= static_cast<double>(width);
            const double r = (*inv_std)[s];
            for (std::size_t j = 0; j < width; ++j) {
                const std::size_t i = s * width + j;
                const double dxh = g[i] * gv[i % c];
                gx[i] += r * (dxh - m1 - xh[i] * m2);
            }
        }
    });
}

}  // namespace

NdValue layer_norm(NdValue x, NdValue gamma, NdValue beta, double eps) {
    return grouped_norm("layer_norm", x, 1, gamma, beta, eps);
}

NdValue group_norm(NdValue x, std::size_t groups, NdValue gamma, NdValue beta, double eps) {
    return grouped_norm("group_norm", x, groups, gamma, beta, eps);
}

NdValue rotate(NdValue x, int sign, double theta_base) {
    Tape& t = x.tape();
    require_rank("rotate", x, 2);
    if (sign != 1 && sign != -1) throw ConfigError("rotate: sign must be +1 or -1");
    const std::size_t d = x.dim(-1);
    const std::size_t len = x.dim(-2);
    if (d % 2 != 0) {
        throw ConfigError("rotate: channel count " + std::to_string(d) + " must be even");
    }
    const std::size_t half = d / 2;
    auto cs = std::make_shared<std::vector<double>>(len * half);
    auto sn = std::make_shared<std::vector<double>>(len * half);
    for (std::size_t n = 0; n < len; ++n) {
        for (std::size_t j = 0; j < half; ++j) {
            const double theta =
                std::pow(theta_base, -2.0 * static_cast<double>(j) / static_cast<double>(d));
            const double angle = static_cast<double>(sign) * static_cast<double>(n) * theta;
            (*cs)[n * half + j] = std::cos(angle);
            (*sn)[n * half + j] = std::sin(angle);
        }
    }
    const std::size_t rows = x.size() / d;
    Tensor out(x.shape());
    const auto& xv = x.value().data;
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t n = r % len;
        for (std::size_t j = 0; j < half; ++j) {
            const double c = (*cs)[n * half + j], s = (*sn)[n * half + j];
            const double a = xv[r * d + 2 * j], b = xv[r * d + 2 * j + 1];
            out.data[r * d + 2 * j] = a * c - b * s;
            out.data[r * d + 2 * j + 1] = a * s + b * c;
        }
    }
    const std::size_t xi = x.id();
    const NdValue ins[] = {x};
    return t.record("rotate", std::move(out), ins, [=](Tape& tp, std::size_t self) {
        const auto& g = tp.grad(self);
        double* gx = tp.grad_ptr(xi);
        for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t n = r % len;
            for (std::size_t j = 0; j < half; ++j) {
                const double c = (*cs)[n * half + j], s = (*sn)[n * half + j];
                const double ga = g[r * d + 2 * j], gb = g[r * d + 2 * j + 1];
                gx[r * d + 2 * j] += ga * c + gb * s;
                gx[r * d + 2 * j + 1] += -ga * s + gb * c;
            }
        }
    });
}

NdValue decay_mask(NdValue x, const Tensor& mask) {
    Tape& t = x.tape();
    require_rank("decay_mask", x, 2);
    const std::size_t r = x.dim(-2), c = x.dim(-1);
    if (mask.shape != Shape{r, c}) {
        throw DimensionError("decay_mask: mask " + shape_str(mask.shape) + " vs scores " +
                             shape_str(x.shape()));
    }
    const std::size_t block = r * c;
    Tensor out = x.value();
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= mask.data[i % block];
    auto m = std::make_shared<std::vector<double>>(mask.data);
    const std::size_t xi = x.id();
    const NdValue ins[] = {x};
    return t.record("decay_mask", std::move(out), ins, [=](Tape& tp, std::size_t self) {
        const auto& g = tp.grad(self);
        double* gx = tp.grad_ptr(xi);
        const bool corrupt = testing::fault() == testing::Fault::DecayMaskBackward;
        for (std::size_t i = 0; i < g.size(); ++i) {
            gx[i] += corrupt ? g[i] : g[i] * (*m)[i % block];
        }
    });
}

NdValue row_normalize_clamped(NdValue x) {
    Tape& t = x.tape();
    require_rank("row_normalize_clamped", x, 1);
    const std::size_t c = x.dim(-1);
    const std::size_t rows = x.size() / c;
    auto row_sum = std::make_shared<std::vector<double>>(rows);
    Tensor out = x.value();
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += out.data[r * c + j];
        (*row_sum)[r] = s;
        const double denom = std::max(std::abs(s), 1.0);
        for (std::size_t j = 0; j < c; ++j) out.data[r * c + j] /= denom;
    }
    const std::size_t xi = x.id();
    const NdValue ins[] = {x};
    return t.record("row_normalize_clamped", std::move(out), ins,
                    [=](Tape& tp, std::size_t self) {
                        const auto& g = tp.grad(self);
                        const auto& xv = tp.value(xi).data;
                        double* gx = tp.grad_ptr(xi);
                        for (std::size_t r = 0; r < rows; ++r) {
                            const double s = (*row_sum)[r];
                            const double denom = std::max(std::abs(s), 1.0);
                            double dot = 0.0;
                            for (std::size_t j = 0; j < c; ++j) dot += g[r * c + j] * xv[r * c + j];
                            const double coupling =
                                std::abs(s) > 1.0 ? (s > 0 ? 1.0 : -1.0) * dot / (denom * denom) : 0.0;
                            for (std::size_t j = 0; j < c; ++j) {
                                gx[r * c + j] += g[r * c + j] / denom - coupling;
                            }
                        }
                    });
}

}  // namespace ad

GradCheckResult finite_diff_check(const ScalarFn& f, std::span<const Tensor> inputs, double step) {
    if (!(step > 0.0)) throw ContractError("finite_diff_check: step must be positive");

    std::vector<std::vector<double>> analytic;
    {
        ad::Tape tape;
        std::vector<ad::NdValue> vars;
        for (const auto& in : inputs) vars.push_back(tape.variable(in));
        ad::NdValue loss = f(tape, vars);
        tape.backward(loss);
        for (const auto& v : vars) analytic.push_back(v.grad());
    }

    std::vector<Tensor> work(inputs.begin(), inputs.end());
    auto eval = [&]() {
        ad::Tape tape;
        std::vector<ad::NdValue> consts;
        for (const auto& w : work) consts.push_back(tape.constant(w));
        const double v = f(tape, consts).value().data.at(0);
        if (!std::isfinite(v)) throw NumericError("finite_diff_check: non-finite evaluation");
        return v;
    };

    // Error is measured per input tensor against that tensor's largest gradient
    // entry, so isolated near-zero components do not dominate.
    GradCheckResult res;
    for (std::size_t k = 0; k < work.size(); ++k) {
        double scale = 0.0, worst = -1.0;
        std::size_t worst_i = 0;
        double worst_num = 0.0;
        for (std::size_t i = 0; i < work[k].size(); ++i) {
            const double orig = work[k].data[i];
            work[k].data[i] = orig + step;
            const double fp = eval();
            work[k].data[i] = orig - step;
            const double fm = eval();
            work[k].data[i] = orig;
            const double numeric = (fp - fm) / (2.0 * step);
            const double a = analytic[k][i];
            scale = std::max({scale, std::abs(a), std::abs(numeric)});
            if (std::abs(a - numeric) > worst) {
                worst = std::abs(a - numeric);
                worst_i = i;
                worst_num = numeric;
            }
        }
        if (work[k].size() == 0) continue;
        const double rel = worst / std::max(scale, 1e-8);
        if (rel > res.max_rel_err || k == 0) {
            res = GradCheckResult{rel, k, worst_i, analytic[k][worst_i], worst_num};
        }
    }
    return res;
}

GradCheckResult finite_diff_check(const std::function<ad::NdValue(ad::NdValue)>& f,
                                  const Tensor& x, double step) {
    const Tensor inputs[] = {x};
    return finite_diff_check(
        [&f](ad::Tape&, std::span<const ad::NdValue> v) { return f(v[0]); }, inputs, step);
}

}  // namespace eegdir
