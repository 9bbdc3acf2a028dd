#include "corn/model.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>

#include "binary_io.hpp"
#include "corn/rng.hpp"

namespace corn {

namespace {

constexpr std::string_view kCheckpointMagic = "CRN1";

struct Extent {
    std::size_t h;
    std::size_t w;
    std::size_t plane() const { return h * w; }
};

// Valid output range along one axis for kernel offset d in {-1, 0, 1}.
inline std::size_t lo(int d) { return d < 0 ? 1 : 0; }
inline std::size_t hi(std::size_t n, int d) { return d > 0 ? n - 1 : n; }

void conv3x3_forward(std::span<const double> in, std::size_t cin, Extent e, const double* w, const double* b,
                     std::size_t cout, std::span<double> out) {
    const std::size_t plane = e.plane();
    for (std::size_t o = 0; o < cout; ++o) {
        double* dst = out.data() + o * plane;
        std::fill(dst, dst + plane, b[o]);
        for (std::size_t i = 0; i < cin; ++i) {
            const double* src = in.data() + i * plane;
            const double* k = w + (o * cin + i) * 9;
            for (int ky = 0; ky < 3; ++ky) {
                const int dy = ky - 1;
                for (int kx = 0; kx < 3; ++kx) {
                    const int dx = kx - 1;
                    const double wv = k[ky * 3 + kx];
                    const std::size_t x0 = lo(dx), x1 = hi(e.w, dx);
                    for (std::size_t y = lo(dy); y < hi(e.h, dy); ++y) {
                        double* drow = dst + y * e.w;
                        const double* srow = src + (y + dy) * e.w + dx;
                        for (std::size_t x = x0; x < x1; ++x) drow[x] += wv * srow[x];
                    }
                }
            }
        }
    }
}

// Accumulates weight/bias gradients and, when d_in is non-empty, the input gradient.
void conv3x3_backward(std::span<const double> in, std::size_t cin, Extent e, const double* w, std::size_t cout,
                      std::span<const double> d_out, double* d_w, double* d_b, std::span<double> d_in) {
    const std::size_t plane = e.plane();
    for (std::size_t o = 0; o < cout; ++o) {
        const double* g = d_out.data() + o * plane;
        double bias_sum = 0.0;
        for (std::size_t p = 0; p < plane; ++p) bias_sum += g[p];
        d_b[o] += bias_sum;
        for (std::size_t i = 0; i < cin; ++i) {
            const double* src = in.data() + i * plane;
            double* dsrc = d_in.empty() ? nullptr : d_in.data() + i * plane;
            const double* k = w + (o * cin + i) * 9;
            double* dk = d_w + (o * cin + i) * 9;
            for (int ky = 0; ky < 3; ++ky) {
                const int dy = ky - 1;
                for (int kx = 0; kx < 3; ++kx) {
                    const int dx = kx - 1;
                    const double wv = k[ky * 3 + kx];
                    const std::size_t x0 = lo(dx), x1 = hi(e.w, dx);
                    double acc = 0.0;
                    for (std::size_t y = lo(dy); y < hi(e.h, dy); ++y) {
                        const double* grow = g + y * e.w;
                        const double* srow = src + (y + dy) * e.w + dx;
                        for (std::size_t x = x0; x < x1; ++x) acc += grow[x] * srow[x];
                        if (dsrc != nullptr) {
                            double* drow = dsrc + (y + dy) * e.w + dx;
                            for (std::size_t x = x0; x < x1; ++x) drow[x] += wv * grow[x];
                        }
                    }
                    dk[ky * 3 + kx] += acc;
                }
            }
        }
    }
}

void relu(std::span<const double> pre, std::span<double> act) {
    for (std::size_t i = 0; i < pre.size(); ++i) act[i] = pre[i] > 0.0 ? pre[i] : 0.0;
}

// out(s, c) = b[c] + sum_h w[c, h] * act[h, s]
Matrix pointwise_head(std::span<const double> act, std::size_t hidden, std::size_t pixels, const double* w,
                      const double* b, std::size_t outputs) {
    Matrix out(pixels, outputs);
    for (std::size_t c = 0; c < outputs; ++c) {
        std::vector<double> col(pixels, b[c]);
        for (std::size_t h = 0; h < hidden; ++h) {
            const double wv = w[c * hidden + h];
            const double* a = act.data() + h * pixels;
            for (std::size_t s = 0; s < pixels; ++s) col[s] += wv * a[s];
        }
        for (std::size_t s = 0; s < pixels; ++s) out(s, c) = col[s];
    }
    return out;
}

void pointwise_head_backward(std::span<const double> act, std::size_t hidden, std::size_t pixels, const double* w,
                             std::size_t outputs, const Matrix& d_out, double* d_w, double* d_b,
                             std::span<double> d_act) {
    std::vector<double> col(pixels);
    for (std::size_t c = 0; c < outputs; ++c) {
        double bias_sum = 0.0;
        for (std::size_t s = 0; s < pixels; ++s) {
            col[s] = d_out(s, c);
            bias_sum += col[s];
        }
        d_b[c] += bias_sum;
        for (std::size_t h = 0; h < hidden; ++h) {
            const double* a = act.data() + h * pixels;
            double* da = d_act.data() + h * pixels;
            const double wv = w[c * hidden + h];
            double acc = 0.0;
            for (std::size_t s = 0; s < pixels; ++s) {
                acc += col[s] * a[s];
                da[s] += wv * col[s];
            }
            d_w[c * hidden + h] += acc;
        }
    }
}

BranchForward branch_forward(const Arch& arch, const ParamLayout& L, std::span<const double> params,
                             std::span<const double> input, Extent e, bool with_embed) {
    const std::size_t plane = e.plane();
    const double* p = params.data();
    BranchForward f;
    f.pre1.resize(arch.hidden * plane);
    f.act1.resize(arch.hidden * plane);
    f.pre2.resize(arch.hidden * plane);
    f.act2.resize(arch.hidden * plane);
    conv3x3_forward(input, arch.in_channels, e, p + L.conv1_w, p + L.conv1_b, arch.hidden, f.pre1);
    relu(f.pre1, f.act1);
    conv3x3_forward(f.act1, arch.hidden, e, p + L.conv2_w, p + L.conv2_b, arch.hidden, f.pre2);
    relu(f.pre2, f.act2);
    f.probs = softmax_rows(pointwise_head(f.act2, arch.hidden, plane, p + L.head_w, p + L.head_b, arch.classes));
    if (with_embed) f.embed = pointwise_head(f.act2, arch.hidden, plane, p + L.proj_w, p + L.proj_b, arch.proj_dim);
    return f;
}

void branch_backward(const Arch& arch, const ParamLayout& L, std::span<const double> params,
                     std::span<const double> input, Extent e, const BranchForward& f, const Matrix& d_probs,
                     const Matrix& d_embed, std::vector<double>& grad) {
    const std::size_t plane = e.plane();
    const double* p = params.data();
    double* g = grad.data();
    std::vector<double> d_act2(arch.hidden * plane, 0.0);
    if (!d_probs.empty()) {
        if (d_probs.rows() != plane || d_probs.cols() != arch.classes) {
            throw std::invalid_argument("backward: probability gradient shape mismatch");
        }
        const Matrix d_logits = softmax_rows_backward(f.probs, d_probs);
        pointwise_head_backward(f.act2, arch.hidden, plane, p + L.head_w, arch.classes, d_logits, g + L.head_w,
                                g + L.head_b, d_act2);
    }
    if (!d_embed.empty()) {
        if (d_embed.rows() != plane || d_embed.cols() != arch.proj_dim) {
            throw std::invalid_argument("backward: embedding gradient shape mismatch");
        }
        pointwise_head_backward(f.act2, arch.hidden, plane, p + L.proj_w, arch.proj_dim, d_embed, g + L.proj_w,
                                g + L.proj_b, d_act2);
    }
    // ReLU derivative is taken as 0 at 0.
    for (std::size_t i = 0; i < d_act2.size(); ++i) {
        if (!(f.pre2[i] > 0.0)) d_act2[i] = 0.0;
    }
    std::vector<double> d_act1(arch.hidden * plane, 0.0);
    conv3x3_backward(f.act1, arch.hidden, e, p + L.conv2_w, arch.hidden, d_act2, g + L.conv2_w, g + L.conv2_b,
                     d_act1);
    for (std::size_t i = 0; i < d_act1.size(); ++i) {
        if (!(f.pre1[i] > 0.0)) d_act1[i] = 0.0;
    }
    conv3x3_backward(input, arch.in_channels, e, p + L.conv1_w, arch.hidden, d_act1, g + L.conv1_w, g + L.conv1_b,
                     {});
}

void validate_arch(const Arch& arch) {
    if (arch.in_channels == 0 || arch.hidden == 0 || arch.classes < 2 || arch.proj_dim == 0) {
        throw std::invalid_argument("Arch: need in_channels, hidden, proj_dim >= 1 and classes >= 2");
    }
}

void fill_uniform(std::span<double> dst, double bound, Rng& rng) {
    for (double& v : dst) v = rng.uniform(-bound, bound);
}

std::vector<double> init_branch(const Arch& arch, std::uint64_t seed) {
    const ParamLayout L(arch);
    std::vector<double> p(L.total, 0.0);
    Rng rng(seed);
    const double conv1_bound = std::sqrt(6.0 / static_cast<double>(arch.in_channels * 9));
    const double conv2_bound = std::sqrt(6.0 / static_cast<double>(arch.hidden * 9));
    const double head_bound = 1.0 / std::sqrt(static_cast<double>(arch.hidden));
    fill_uniform({p.data() + L.conv1_w, L.conv1_b - L.conv1_w}, conv1_bound, rng);
    fill_uniform({p.data() + L.conv2_w, L.conv2_b - L.conv2_w}, conv2_bound, rng);
    fill_uniform({p.data() + L.head_w, L.head_b - L.head_w}, head_bound, rng);
    fill_uniform({p.data() + L.proj_w, L.proj_b - L.proj_w}, head_bound, rng);
    return p;
}

Extent checked_extent(const Arch& arch, const Image& image) {
    if (image.height == 0 || image.width == 0) throw std::invalid_argument("forward: empty image");
    if (image.pixels.size() != image.height * image.width * arch.in_channels) {
        throw std::invalid_argument("forward: image dimension mismatch");
    }
    return {image.height, image.width};
}

}  // namespace

ParamLayout::ParamLayout(const Arch& a) {
    std::size_t off = 0;
    conv1_w = off;
    off += a.hidden * a.in_channels * 9;
    conv1_b = off;
    off += a.hidden;
    conv2_w = off;
    off += a.hidden * a.hidden * 9;
    conv2_b = off;
    off += a.hidden;
    head_w = off;
    off += a.classes * a.hidden;
    head_b = off;
    off += a.classes;
    proj_w = off;
    off += a.proj_dim * a.hidden;
    proj_b = off;
    off += a.proj_dim;
    total = off;
}

std::size_t Arch::parameter_count() const { return ParamLayout(*this).total; }

DualModelState init_model(const Arch& arch, std::uint64_t seed_main, std::uint64_t seed_aux) {
    validate_arch(arch);
    if (seed_main == seed_aux) throw std::invalid_argument("branches must be independently initialized");
    DualModelState s;
    s.arch = arch;
    s.main.params = init_branch(arch, seed_main);
    s.aux.params = init_branch(arch, seed_aux);
    s.main.velocity.assign(s.main.params.size(), 0.0);
    s.aux.velocity.assign(s.aux.params.size(), 0.0);
    return s;
}

DualModelState zero_model(const Arch& arch) {
    validate_arch(arch);
    DualModelState s;
    s.arch = arch;
    const std::size_t n = arch.parameter_count();
    s.main = {std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
    s.aux = s.main;
    return s;
}

ForwardOutput forward(const DualModelState& state, const Image& image) {
    const Extent e = checked_extent(state.arch, image);
    const ParamLayout L(state.arch);
    ForwardOutput out;
    out.height = e.h;
    out.width = e.w;
    out.input = image.pixels;
    out.main = branch_forward(state.arch, L, state.main.params, out.input, e, true);
    out.aux = branch_forward(state.arch, L, state.aux.params, out.input, e, true);
    out.version = state.version;
    return out;
}

Matrix predict_probs(const Arch& arch, const std::vector<double>& params, const Image& image) {
    const Extent e = checked_extent(arch, image);
    const ParamLayout L(arch);
    if (params.size() != L.total) throw std::invalid_argument("predict_probs: parameter count mismatch");
    return branch_forward(arch, L, params, image.pixels, e, false).probs;
}

Gradients zero_gradients(const Arch& arch) {
    const std::size_t n = arch.parameter_count();
    return {std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
}

void backward(const DualModelState& state, const ForwardOutput& output, const OutputGrads& output_grads,
              Gradients& grads) {
    if (output.version != state.version || output.main.pre1.empty()) throw std::logic_error("stale cache");
    const ParamLayout L(state.arch);
    if (grads.main.size() != L.total || grads.aux.size() != L.total) {
        throw std::invalid_argument("backward: gradient buffer size mismatch");
    }
    const Extent e{output.height, output.width};
    branch_backward(state.arch, L, state.main.params, output.input, e, output.main, output_grads.probs_main,
                    output_grads.embed_main, grads.main);
    branch_backward(state.arch, L, state.aux.params, output.input, e, output.aux, output_grads.probs_aux,
                    output_grads.embed_aux, grads.aux);
}

namespace {

void step_branch(Branch& b, const std::vector<double>& g, const SgdConfig& c) {
    for (std::size_t i = 0; i < b.params.size(); ++i) {
        b.velocity[i] = c.momentum * b.velocity[i] + g[i] + c.weight_decay * b.params[i];
        b.params[i] -= c.lr * b.velocity[i];
    }
}

}  // namespace

void sgd_step(DualModelState& state, const Gradients& grads, const SgdConfig& config) {
    if (grads.main.size() != state.main.params.size() || grads.aux.size() != state.aux.params.size()) {
        throw std::invalid_argument("sgd_step: gradient shape mismatch");
    }
    for (const auto* g : {&grads.main, &grads.aux}) {
        for (double v : *g) {
            if (!std::isfinite(v)) throw std::runtime_error("diverged");
        }
    }
    step_branch(state.main, grads.main, config);
    step_branch(state.aux, grads.aux, config);
    for (const auto* b : {&state.main, &state.aux}) {
        for (double v : b->params) {
            if (!std::isfinite(v)) throw std::runtime_error("diverged");
        }
    }
    ++state.version;
}

void save_checkpoint(const DualModelState& state, std::ostream& out) {
    io::write_magic(out, kCheckpointMagic);
    io::write_u64(out, state.arch.in_channels);
    io::write_u64(out, state.arch.hidden);
    io::write_u64(out, state.arch.classes);
    io::write_u64(out, state.arch.proj_dim);
    io::write_u64(out, state.version);
    io::write_u64(out, state.main.params.size());
    for (const auto* v : {&state.main.params, &state.aux.params, &state.main.velocity, &state.aux.velocity}) {
        for (double x : *v) io::write_f64(out, x);
    }
    if (!out) throw std::runtime_error("failed to write checkpoint");
}

DualModelState load_checkpoint(std::istream& in) {
    io::expect_magic(in, kCheckpointMagic);
    DualModelState s;
    s.arch.in_channels = io::read_u64(in);
    s.arch.hidden = io::read_u64(in);
    s.arch.classes = io::read_u64(in);
    s.arch.proj_dim = io::read_u64(in);
    validate_arch(s.arch);
    s.version = io::read_u64(in);
    const auto n = io::read_u64(in);
    if (n != s.arch.parameter_count()) throw std::runtime_error("checkpoint: parameter count does not match arch");
    for (auto* v : {&s.main.params, &s.aux.params, &s.main.velocity, &s.aux.velocity}) {
        v->resize(n);
        for (double& x : *v) x = io::read_f64(in);
    }
    return s;
}

}  // namespace corn
