#include "csikit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "csikit/errors.hpp"

namespace csikit {

namespace {

size_t numel(const Shape& s) {
    size_t n = 1;
    for (int d : s) {
        if (d <= 0) {
            throw DimensionError("tensor dimensions must be positive");
        }
        n *= static_cast<size_t>(d);
    }
    return n;
}

} // namespace

struct Tensor::Impl {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad; // sized like data iff requires_grad
};

Tensor::Tensor(Shape shape, bool requires_grad) {
    impl_ = std::make_shared<Impl>();
    impl_->shape = std::move(shape);
    impl_->data.assign(numel(impl_->shape), 0.0);
    if (requires_grad) {
        set_requires_grad(true);
    }
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
    impl_ = std::make_shared<Impl>();
    impl_->shape = std::move(shape);
    if (values.size() != numel(impl_->shape)) {
        throw DimensionError("value count does not match shape");
    }
    impl_->data = std::move(values);
    if (requires_grad) {
        set_requires_grad(true);
    }
}

Tensor Tensor::scalar(double v, bool requires_grad) {
    return Tensor({1}, {v}, requires_grad);
}

Tensor Tensor::zeros(Shape shape) {
    return Tensor(std::move(shape));
}

Tensor Tensor::full(Shape shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.impl_->data.begin(), t.impl_->data.end(), v);
    return t;
}

Tensor Tensor::uniform(Shape shape, double lo, double hi, Rng& rng,
                       bool requires_grad) {
    Tensor t(std::move(shape));
    for (double& v : t.impl_->data) {
        v = rng.uniform(lo, hi);
    }
    if (requires_grad) {
        t.set_requires_grad(true);
    }
    return t;
}

const Shape& Tensor::shape() const { return impl_->shape; }
int Tensor::rank() const { return static_cast<int>(impl_->shape.size()); }
int Tensor::dim(int i) const { return impl_->shape.at(static_cast<size_t>(i)); }
size_t Tensor::size() const { return impl_->data.size(); }

std::span<const double> Tensor::data() const { return impl_->data; }
std::span<double> Tensor::mutable_data() { return impl_->data; }

double Tensor::value() const {
    if (size() != 1) {
        throw UsageError("value() requires a scalar tensor");
    }
    return impl_->data[0];
}

double Tensor::at(int r, int c) const {
    if (rank() != 2) {
        throw UsageError("at(r, c) requires a 2-D tensor");
    }
    return impl_->data[static_cast<size_t>(r) * static_cast<size_t>(dim(1)) +
                       static_cast<size_t>(c)];
}

double Tensor::at(int i) const { return impl_->data.at(static_cast<size_t>(i)); }

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool v) {
    impl_->requires_grad = v;
    if (v) {
        impl_->grad.assign(impl_->data.size(), 0.0);
    } else {
        impl_->grad.clear();
        impl_->grad.shrink_to_fit();
    }
}

std::span<const double> Tensor::grad() const {
    if (!requires_grad()) {
        throw UsageError("grad() on a tensor without requires_grad");
    }
    return impl_->grad;
}

std::span<double> Tensor::mutable_grad() {
    if (!requires_grad()) {
        throw UsageError("mutable_grad() on a tensor without requires_grad");
    }
    return impl_->grad;
}

void Tensor::zero_grad() {
    if (requires_grad()) {
        std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
    }
}

void Tensor::accumulate_grad(std::span<const double> g) {
    if (!requires_grad()) {
        return;
    }
    if (g.size() != impl_->grad.size()) {
        throw DimensionError("gradient size mismatch");
    }
    for (size_t i = 0; i < g.size(); ++i) {
        impl_->grad[i] += g[i];
    }
}

// ---- tape --------------------------------------------------------------

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape::Tape() : previous_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = previous_; }

Tape* Tape::active() { return g_active_tape; }
bool Tape::recording() { return g_active_tape != nullptr; }

void Tape::record(std::function<void()> backward_rule) {
    nodes_.push_back(std::move(backward_rule));
}

void Tape::run_backward() {
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        (*it)();
    }
    nodes_.clear();
}

void backward(const Tensor& loss) {
    if (loss.size() != 1) {
        throw UsageError("backward() requires a scalar loss");
    }
    if (!Tape::recording()) {
        throw UsageError("backward() without an active tape");
    }
    if (!loss.requires_grad()) {
        throw UsageError("backward() on a tensor disconnected from the tape");
    }
    Tensor seed = loss;
    seed.mutable_grad()[0] += 1.0;
    Tape::active()->run_backward();
}

// ---- op plumbing ---------------------------------------------------------

namespace {

bool track(std::initializer_list<const Tensor*> inputs) {
    if (!Tape::recording()) {
        return false;
    }
    for (const Tensor* t : inputs) {
        if (t->requires_grad()) {
            return true;
        }
    }
    return false;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch");
    }
}

double stable_sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

} // namespace

double canonical_sum(std::vector<double>& terms) {
    std::sort(terms.begin(), terms.end());
    double s = 0.0;
    for (double t : terms) {
        s += t;
    }
    return s;
}

// ---- elementwise ops -----------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out(a.shape());
    auto av = a.data(), bv = b.data();
    auto ov = out.mutable_data();
    for (size_t i = 0; i < ov.size(); ++i) {
        ov[i] = av[i] + bv[i];
    }
    if (track({&a, &b})) {
        out.set_requires_grad(true);
        Tensor ac = a, bc = b, oc = out;
        Tape::active()->record([ac, bc, oc]() mutable {
            ac.accumulate_grad(oc.grad());
            bc.accumulate_grad(oc.grad());
        });
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Tensor out(a.shape());
    auto av = a.data(), bv = b.data();
    auto ov = out.mutable_data();
    for (size_t i = 0; i < ov.size(); ++i) {
        ov[i] = av[i] - bv[i];
    }
    if (track({&a, &b})) {
        out.set_requires_grad(true);
        Tensor ac = a, bc = b, oc = out;
        Tape::active()->record([ac, bc, oc]() mutable {
            ac.accumulate_grad(oc.grad());
            if (bc.requires_grad()) {
                auto og = oc.grad();
                auto bg = bc.mutable_grad();
                for (size_t i = 0; i < bg.size(); ++i) {
                    bg[i] -= og[i];
                }
            }
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Tensor out(a.shape());
    auto av = a.data(), bv = b.data();
    auto ov = out.mutable_data();
    for (size_t i = 0; i < ov.size(); ++i) {
        ov[i] = av[i] * bv[i];
    }
    if (track({&a, &b})) {
        out.set_requires_grad(true);
        Tensor ac = a, bc = b, oc = out;
        Tape::active()->record([ac, bc, oc]() mutable {
            auto og = oc.grad();
            if (ac.requires_grad()) {
                auto ag = ac.mutable_grad();
                auto bv2 = bc.data();
                for (size_t i = 0; i < ag.size(); ++i) {
                    ag[i] += og[i] * bv2[i];
                }
            }
            if (bc.requires_grad()) {
                auto bg = bc.mutable_grad();
                auto av2 = ac.data();
                for (size_t i = 0; i < bg.size(); ++i) {
                    bg[i] += og[i] * av2[i];
                }
            }
        });
    }
    return out;
}

Tensor square(const Tensor& a) {
    Tensor out(a.shape());
    auto av = a.data();
    auto ov = out.mutable_data();
    for (size_t i = 0; i < ov.size(); ++i) {
        ov[i] = av[i] * av[i];
    }
    if (track({&a})) {
        out.set_requires_grad(true);
        Tensor ac = a, oc = out;
        Tape::active()->record([ac, oc]() mutable {
            auto og = oc.grad();
            auto ag = ac.mutable_grad();
            auto av2 = ac.data();
            for (size_t i = 0; i < ag.size(); ++i) {
                ag[i] += 2.0 * av2[i] * og[i];
            }
        });
    }
    return out;
}

Tensor scale(const Tensor& a, double s) {
    Tensor out(a.shape());
    auto av = a.data();
    auto ov = out.mutable_data();
    for (size_t i = 0; i < ov.size(); ++i) {
        ov[i] = av[i] * s;
    }
    if (track({&a})) {
        out.set_requires_grad(true);
        Tensor ac = a, oc = out;
        Tape::active()->record([ac, oc, s]() mutable {
            auto og = oc.grad();
            auto ag = ac.mutable_grad();
            for (size_t i = 0; i < ag.size(); ++i) {
                ag[i] += og[i] * s;
            }
        });
    }
    return out;
}

Tensor add_rowvec(const Tensor& mat, const Tensor& vec) {
    if (mat.rank() != 2 || vec.rank() != 1 || mat.dim(1) != vec.dim(0)) {
        throw DimensionError("add_rowvec: need mat[r x c] and vec[c]");
    }
    const int rows = mat.dim(0), cols = mat.dim(1);
    Tensor out(mat.shape());
    auto mv = mat.data(), vv = vec.data();
    auto ov = out.mutable_data();
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            ov[static_cast<size_t>(r) * cols + c] =
                mv[static_cast<size_t>(r) * cols + c] + vv[static_cast<size_t>(c)];
        }
    }
    if (track({&mat, &vec})) {
        out.set_requires_grad(true);
        Tensor mc = mat, vc = vec, oc = out;
        Tape::active()->record([mc, vc, oc, rows, cols]() mutable {
            auto og = oc.grad();
            mc.accumulate_grad(og);
            if (vc.requires_grad()) {
                auto vg = vc.mutable_grad();
                for (int r = 0; r < rows; ++r) {
                    for (int c = 0; c < cols; ++c) {
                        vg[static_cast<size_t>(c)] +=
                            og[static_cast<size_t>(r) * cols + c];
                    }
                }
            }
        });
    }
    return out;
}

// ---- matmul / structure ops ------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b, bool canonical_sums) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw DimensionError("matmul: both operands must be 2-D");
    }
    if (a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: inner dimensions do not match");
    }
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out({m, n});
    auto av = a.data(), bv = b.data();
    auto ov = out.mutable_data();
    if (canonical_sums) {
        std::vector<double> terms(static_cast<size_t>(k));
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < n; ++j) {
                for (int p = 0; p < k; ++p) {
                    terms[static_cast<size_t>(p)] =
                        av[static_cast<size_t>(i) * k + p] *
                        bv[static_cast<size_t>(p) * n + j];
                }
                ov[static_cast<size_t>(i) * n + j] = canonical_sum(terms);
            }
        }
    } else {
        for (int i = 0; i < m; ++i) {
            const double* arow = av.data() + static_cast<size_t>(i) * k;
            double* orow = ov.data() + static_cast<size_t>(i) * n;
            for (int p = 0; p < k; ++p) {
                const double aip = arow[p];
                const double* brow = bv.data() + static_cast<size_t>(p) * n;
                for (int j = 0; j < n; ++j) {
                    orow[j] += aip * brow[j];
                }
            }
        }
    }
    if (track({&a, &b})) {
        out.set_requires_grad(true);
        Tensor ac = a, bc = b, oc = out;
        Tape::active()->record([ac, bc, oc, m, k, n]() mutable {
            auto og = oc.grad();
            if (ac.requires_grad()) {
                // dA = dC * B^T; both factors walk contiguous rows
                auto ag = ac.mutable_grad();
                auto bv2 = bc.data();
                for (int i = 0; i < m; ++i) {
                    const double* grow = og.data() + static_cast<size_t>(i) * n;
                    for (int p = 0; p < k; ++p) {
                        const double* brow = bv2.data() + static_cast<size_t>(p) * n;
                        double acc = 0.0;
                        for (int j = 0; j < n; ++j) {
                            acc += grow[j] * brow[j];
                        }
                        ag[static_cast<size_t>(i) * k + p] += acc;
                    }
                }
            }
            if (bc.requires_grad()) {
                // dB = A^T * dC
                auto bg = bc.mutable_grad();
                auto av2 = ac.data();
                for (int i = 0; i < m; ++i) {
                    for (int p = 0; p < k; ++p) {
                        const double aip = av2[static_cast<size_t>(i) * k + p];
                        for (int j = 0; j < n; ++j) {
                            bg[static_cast<size_t>(p) * n + j] +=
                                aip * og[static_cast<size_t>(i) * n + j];
                        }
                    }
                }
            }
        });
    }
    return out;
}

Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) {
        throw DimensionError("transpose: 2-D only");
    }
    const int m = a.dim(0), n = a.dim(1);
    Tensor out({n, m});
    auto av = a.data();
    auto ov = out.mutable_data();
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            ov[static_cast<size_t>(j) * m + i] = av[static_cast<size_t>(i) * n + j];
        }
    }
    if (track({&a})) {
        out.set_requires_grad(true);
        Tensor ac = a, oc = out;
        Tape::active()->record([ac, oc, m, n]() mutable {
            auto og = oc.grad();
            auto ag = ac.mutable_grad();
            for (int i = 0; i < m; ++i) {
                for (int j = 0; j < n; ++j) {
                    ag[static_cast<size_t>(i) * n + j] +=
                        og[static_cast<size_t>(j) * m + i];
                }
            }
        });
    }
    return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
    Tensor out(std::move(shape));
    if (out.size() != a.size()) {
        throw DimensionError("reshape: element count mismatch");
    }
    auto av = a.data();
    auto ov = out.mutable_data();
    std::copy(av.begin(), av.end(), ov.begin());
    if (track({&a})) {
        out.set_requires_grad(true);
        Tensor ac = a, oc = out;
        Tape::active()->record([ac, oc]() mutable {
            ac.accumulate_grad(oc.grad());
        });
    }
    return out;
}

Tensor slice_cols(const Tensor& a, int c0, int c1) {
    if (a.rank() != 2) {
        throw DimensionError("slice_cols: 2-D only");
    }
    if (c0 < 0 || c1 > a.dim(1) || c0 >= c1) {
        throw DimensionError("slice_cols: bad column range");
    }
    const int rows = a.dim(0), cols = a.dim(1), w = c1 - c0;
    Tensor out({rows, w});
    auto av = a.data();
    auto ov = out.mutable_data();
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < w; ++c) {
            ov[static_cast<size_t>(r) * w + c] =
                av[static_cast<size_t>(r) * cols + c0 + c];
        }
    }
    if (track({&a})) {
        out.set_requires_grad(true);
        Tensor ac = a, oc = out;
        Tape::active()->record([ac, oc, rows, cols, c0, w]() mutable {
            auto og = oc.grad();
            auto ag = ac.mutable_grad();
            for (int r = 0; r < rows; ++r) {
                for (int c = 0; c < w; ++c) {
                    ag[static_cast<size_t>(r) * cols + c0 + c] +=
                        og[static_cast<size_t>(r) * w + c];
                }
            }
        });
    }
    return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) {
        throw DimensionError("concat_cols: no inputs");
    }
    const int rows = parts[0].dim(0);
    int cols = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != 2 || p.dim(0) != rows) {
            throw DimensionError("concat_cols: row count mismatch");
        }
        cols += p.dim(1);
    }
    Tensor out({rows, cols});
    auto ov = out.mutable_data();
    int base = 0;
    for (const Tensor& p : parts) {
        auto pv = p.data();
        const int w = p.dim(1);
        for (int r = 0; r < rows; ++r) {
            for (int c = 0; c < w; ++c) {
                ov[static_cast<size_t>(r) * cols + base + c] =
                    pv[static_cast<size_t>(r) * w + c];
            }
        }
        base += w;
    }
    bool any_grad = false;
    for (const Tensor& p : parts) {
        if (p.requires_grad()) {
            any_grad = true;
        }
    }
    if (Tape::recording() && any_grad) {
        out.set_requires_grad(true);
        std::vector<Tensor> pc = parts;
        Tensor oc = out;
        Tape::active()->record([pc, oc, rows, cols]() mutable {
            auto og = oc.grad();
            int base2 = 0;
            for (Tensor& p : pc) {
                const int w = p.dim(1);
                if (p.requires_grad()) {
                    auto pg = p.mutable_grad();
                    for (int r = 0; r < rows; ++r) {
                        for (int c = 0; c < w; ++c) {
                            pg[static_cast<size_t>(r) * w + c] +=
                                og[static_cast<size_t>(r) * cols + base2 + c];
                        }
                    }
                }
                base2 += w;
            }
        });
    }
    return out;
}

// ---- nonlinearities --------------------------------------------------------

Tensor softmax(const Tensor& x, bool canonical_sums) {
    if (x.rank() < 1 || x.dim(x.rank() - 1) < 1) {
        throw DimensionError("softmax: empty last axis");
    }
    const int n = x.dim(x.rank() - 1);
    const size_t rows = x.size() / static_cast<size_t>(n);
    Tensor out(x.shape());
    auto xv = x.data();
    auto ov = out.mutable_data();
    std::vector<double> terms(static_cast<size_t>(n));
    for (size_t r = 0; r < rows; ++r) {
        const double* row = xv.data() + r * n;
        double* orow = ov.data() + r * n;
        double mx = row[0];
        for (int j = 1; j < n; ++j) {
            mx = std::max(mx, row[j]);
        }
        double denom;
        if (canonical_sums) {
            for (int j = 0; j < n; ++j) {
                terms[static_cast<size_t>(j)] = std::exp(row[j] - mx);
            }
            denom = canonical_sum(terms);
            for (int j = 0; j < n; ++j) {
                orow[j] = std::exp(row[j] - mx) / denom;
            }
        } else {
            denom = 0.0;
            for (int j = 0; j < n; ++j) {
                orow[j] = std::exp(row[j] - mx);
                denom += orow[j];
            }
            for (int j = 0; j < n; ++j) {
                orow[j] /= denom;
            }
        }
    }
    if (track({&x})) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        Tape::active()->record([xc, oc, rows, n]() mutable {
            auto og = oc.grad();
            auto y = oc.data();
            auto xg = xc.mutable_grad();
            for (size_t r = 0; r < rows; ++r) {
                double dot = 0.0;
                for (int j = 0; j < n; ++j) {
                    dot += og[r * n + j] * y[r * n + j];
                }
                for (int j = 0; j < n; ++j) {
                    xg[r * n + j] += y[r * n + j] * (og[r * n + j] - dot);
                }
            }
        });
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
    if (x.rank() < 1) {
        throw DimensionError("layer_norm: rank >= 1 required");
    }
    const int d = x.dim(x.rank() - 1);
    if (d == 0) {
        throw DimensionError("layer_norm: empty last axis");
    }
    if (gamma.rank() != 1 || gamma.dim(0) != d || beta.rank() != 1 ||
        beta.dim(0) != d) {
        throw DimensionError("layer_norm: gamma/beta must match the last axis");
    }
    if (!(eps > 0.0)) {
        throw ConfigError("layer_norm: eps must be positive");
    }
    const size_t rows = x.size() / static_cast<size_t>(d);
    Tensor out(x.shape());
    auto xv = x.data();
    auto gv = gamma.data();
    auto bv = beta.data();
    auto ov = out.mutable_data();
    std::vector<double> xhat(x.size());
    std::vector<double> inv_std(rows);
    for (size_t r = 0; r < rows; ++r) {
        const double* row = xv.data() + r * d;
        double mean = 0.0;
        for (int j = 0; j < d; ++j) {
            mean += row[j];
        }
        mean /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
            const double c = row[j] - mean;
            var += c * c;
        }
        var /= d;
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = is;
        for (int j = 0; j < d; ++j) {
            const double xh = (row[j] - mean) * is;
            xhat[r * d + j] = xh;
            ov[r * d + j] = xh * gv[j] + bv[j];
        }
    }
    if (track({&x, &gamma, &beta})) {
        out.set_requires_grad(true);
        Tensor xc = x, gc = gamma, bc = beta, oc = out;
        auto xh = std::make_shared<std::vector<double>>(std::move(xhat));
        auto is = std::make_shared<std::vector<double>>(std::move(inv_std));
        Tape::active()->record([xc, gc, bc, oc, xh, is, rows, d]() mutable {
            auto og = oc.grad();
            auto gv2 = gc.data();
            if (gc.requires_grad() || bc.requires_grad()) {
                for (size_t r = 0; r < rows; ++r) {
                    for (int j = 0; j < d; ++j) {
                        const double g = og[r * d + j];
                        if (gc.requires_grad()) {
                            gc.mutable_grad()[static_cast<size_t>(j)] +=
                                g * (*xh)[r * d + j];
                        }
                        if (bc.requires_grad()) {
                            bc.mutable_grad()[static_cast<size_t>(j)] += g;
                        }
                    }
                }
            }
            if (xc.requires_grad()) {
                auto xg = xc.mutable_grad();
                for (size_t r = 0; r < rows; ++r) {
                    double sum_gy = 0.0, sum_gyx = 0.0;
                    for (int j = 0; j < d; ++j) {
                        const double gy = og[r * d + j] * gv2[j];
                        sum_gy += gy;
                        sum_gyx += gy * (*xh)[r * d + j];
                    }
                    const double m1 = sum_gy / d;
                    const double m2 = sum_gyx / d;
                    for (int j = 0; j < d; ++j) {
                        const double gy = og[r * d + j] * gv2[j];
                        xg[r * d + j] +=
                            (gy - m1 - (*xh)[r * d + j] * m2) * (*is)[r];
                    }
                }
            }
        });
    }
    return out;
}

Tensor sigmoid(const Tensor& x) {
    Tensor out(x.shape());
    auto xv = x.data();
    auto ov = out.mutable_data();
    for (size_t i = 0; i < ov.size(); ++i) {
        ov[i] = stable_sigmoid(xv[i]);
    }
    if (track({&x})) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        Tape::active()->record([xc, oc]() mutable {
            auto og = oc.grad();
            auto y = oc.data();
            auto xg = xc.mutable_grad();
            for (size_t i = 0; i < xg.size(); ++i) {
                xg[i] += og[i] * y[i] * (1.0 - y[i]);
            }
        });
    }
    return out;
}

Tensor swish(const Tensor& x) {
    Tensor out(x.shape());
    auto xv = x.data();
    auto ov = out.mutable_data();
    for (size_t i = 0; i < ov.size(); ++i) {
        ov[i] = xv[i] * stable_sigmoid(xv[i]);
    }
    if (track({&x})) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        Tape::active()->record([xc, oc]() mutable {
            auto og = oc.grad();
            auto xv2 = xc.data();
            auto xg = xc.mutable_grad();
            for (size_t i = 0; i < xg.size(); ++i) {
                const double s = stable_sigmoid(xv2[i]);
                xg[i] += og[i] * s * (1.0 + xv2[i] * (1.0 - s));
            }
        });
    }
    return out;
}

Tensor glu(const Tensor& x) {
    if (x.rank() < 1 || x.dim(x.rank() - 1) % 2 != 0) {
        throw DimensionError("glu: last axis must be even");
    }
    const int two_c = x.dim(x.rank() - 1);
    const int c = two_c / 2;
    const size_t rows = x.size() / static_cast<size_t>(two_c);
    Shape out_shape = x.shape();
    out_shape.back() = c;
    Tensor out(out_shape);
    auto xv = x.data();
    auto ov = out.mutable_data();
    for (size_t r = 0; r < rows; ++r) {
        for (int j = 0; j < c; ++j) {
            const double a = xv[r * two_c + j];
            const double g = xv[r * two_c + c + j];
            ov[r * c + j] = a * stable_sigmoid(g);
        }
    }
    if (track({&x})) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        Tape::active()->record([xc, oc, rows, c, two_c]() mutable {
            auto og = oc.grad();
            auto xv2 = xc.data();
            auto xg = xc.mutable_grad();
            for (size_t r = 0; r < rows; ++r) {
                for (int j = 0; j < c; ++j) {
                    const double a = xv2[r * two_c + j];
                    const double s = stable_sigmoid(xv2[r * two_c + c + j]);
                    const double g = og[r * c + j];
                    xg[r * two_c + j] += g * s;
                    xg[r * two_c + c + j] += g * a * s * (1.0 - s);
                }
            }
        });
    }
    return out;
}

Tensor depthwise_conv1d(const Tensor& x, const Tensor& kernel) {
    if (x.rank() != 2 || kernel.rank() != 2) {
        throw DimensionError("depthwise_conv1d: x[c x t], kernel[c x k] required");
    }
    if (x.dim(0) != kernel.dim(0)) {
        throw DimensionError("depthwise_conv1d: channel count mismatch");
    }
    const int c = x.dim(0), t = x.dim(1), k = kernel.dim(1);
    if (k % 2 == 0) {
        throw ConfigError("depthwise_conv1d: kernel size must be odd");
    }
    const int pad = (k - 1) / 2;
    Tensor out({c, t});
    auto xv = x.data();
    auto kv = kernel.data();
    auto ov = out.mutable_data();
    for (int ch = 0; ch < c; ++ch) {
        const double* xrow = xv.data() + static_cast<size_t>(ch) * t;
        const double* krow = kv.data() + static_cast<size_t>(ch) * k;
        double* orow = ov.data() + static_cast<size_t>(ch) * t;
        for (int i = 0; i < t; ++i) {
            double acc = 0.0;
            for (int u = 0; u < k; ++u) {
                const int src = i + u - pad;
                if (src >= 0 && src < t) {
                    acc += krow[u] * xrow[src];
                }
            }
            orow[i] = acc;
        }
    }
    if (track({&x, &kernel})) {
        out.set_requires_grad(true);
        Tensor xc = x, kc = kernel, oc = out;
        Tape::active()->record([xc, kc, oc, c, t, k, pad]() mutable {
            auto og = oc.grad();
            auto xv2 = xc.data();
            auto kv2 = kc.data();
            for (int ch = 0; ch < c; ++ch) {
                const double* grow = og.data() + static_cast<size_t>(ch) * t;
                if (xc.requires_grad()) {
                    auto xg = xc.mutable_grad();
                    double* xgrow = xg.data() + static_cast<size_t>(ch) * t;
                    const double* krow = kv2.data() + static_cast<size_t>(ch) * k;
                    for (int i = 0; i < t; ++i) {
                        for (int u = 0; u < k; ++u) {
                            const int src = i + u - pad;
                            if (src >= 0 && src < t) {
                                xgrow[src] += krow[u] * grow[i];
                            }
                        }
                    }
                }
                if (kc.requires_grad()) {
                    auto kg = kc.mutable_grad();
                    double* kgrow = kg.data() + static_cast<size_t>(ch) * k;
                    const double* xrow = xv2.data() + static_cast<size_t>(ch) * t;
                    for (int i = 0; i < t; ++i) {
                        for (int u = 0; u < k; ++u) {
                            const int src = i + u - pad;
                            if (src >= 0 && src < t) {
                                kgrow[u] += grow[i] * xrow[src];
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) {
        s += v;
    }
    Tensor out = Tensor::scalar(s);
    if (track({&x})) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        Tape::active()->record([xc, oc]() mutable {
            const double g = oc.grad()[0];
            auto xg = xc.mutable_grad();
            for (size_t i = 0; i < xg.size(); ++i) {
                xg[i] += g;
            }
        });
    }
    return out;
}

Tensor dropout(const Tensor& x, double rate, Rng* rng, bool training) {
    if (rate < 0.0 || rate >= 1.0) {
        throw ConfigError("dropout: rate must be in [0, 1)");
    }
    if (!training || rate == 0.0) {
        return x;
    }
    if (rng == nullptr) {
        throw UsageError("dropout: training mode requires an rng stream");
    }
    const double keep = 1.0 - rate;
    auto mask = std::make_shared<std::vector<double>>(x.size());
    for (double& m : *mask) {
        m = rng->uniform() < rate ? 0.0 : 1.0 / keep;
    }
    Tensor out(x.shape());
    auto xv = x.data();
    auto ov = out.mutable_data();
    for (size_t i = 0; i < ov.size(); ++i) {
        ov[i] = xv[i] * (*mask)[i];
    }
    if (track({&x})) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        Tape::active()->record([xc, oc, mask]() mutable {
            auto og = oc.grad();
            auto xg = xc.mutable_grad();
            for (size_t i = 0; i < xg.size(); ++i) {
                xg[i] += og[i] * (*mask)[i];
            }
        });
    }
    return out;
}

Tensor detach(const Tensor& x) {
    Tensor out;
    out.impl_ = std::make_shared<Tensor::Impl>();
    out.impl_->shape = x.shape();
    out.impl_->data.assign(x.data().begin(), x.data().end());
    return out;
}

Tensor straight_through(const Tensor& q_s, const Tensor& q_r) {
    check_same_shape(q_s, q_r, "straight_through");
    Tensor out(q_r.shape());
    auto rv = q_r.data();
    auto ov = out.mutable_data();
    std::copy(rv.begin(), rv.end(), ov.begin());
    if (track({&q_s})) {
        out.set_requires_grad(true);
        Tensor sc = q_s, oc = out;
        Tape::active()->record([sc, oc]() mutable {
            sc.accumulate_grad(oc.grad());
        });
    }
    return out;
}

Tensor gather_rows(const Tensor& table, const std::vector<int>& idx) {
    if (table.rank() != 2) {
        throw DimensionError("gather_rows: table must be 2-D");
    }
    const int k = table.dim(0), d = table.dim(1);
    const int rows = static_cast<int>(idx.size());
    Tensor out({rows, d});
    auto tv = table.data();
    auto ov = out.mutable_data();
    for (int r = 0; r < rows; ++r) {
        if (idx[static_cast<size_t>(r)] < 0 || idx[static_cast<size_t>(r)] >= k) {
            throw UsageError("gather_rows: index out of range");
        }
        const double* src =
            tv.data() + static_cast<size_t>(idx[static_cast<size_t>(r)]) * d;
        std::copy(src, src + d, ov.data() + static_cast<size_t>(r) * d);
    }
    if (track({&table})) {
        out.set_requires_grad(true);
        Tensor tc = table, oc = out;
        auto ic = std::make_shared<std::vector<int>>(idx);
        Tape::active()->record([tc, oc, ic, d]() mutable {
            auto og = oc.grad();
            auto tg = tc.mutable_grad();
            for (size_t r = 0; r < ic->size(); ++r) {
                const size_t base = static_cast<size_t>((*ic)[r]) * d;
                for (int j = 0; j < d; ++j) {
                    tg[base + j] += og[r * d + j];
                }
            }
        });
    }
    return out;
}

Tensor unit_gradient_map(const Tensor& x,
                         const std::function<double(double)>& f) {
    Tensor out(x.shape());
    auto xv = x.data();
    auto ov = out.mutable_data();
    for (size_t i = 0; i < ov.size(); ++i) {
        ov[i] = f(xv[i]);
    }
    if (track({&x})) {
        out.set_requires_grad(true);
        Tensor xc = x, oc = out;
        Tape::active()->record([xc, oc]() mutable {
            xc.accumulate_grad(oc.grad());
        });
    }
    return out;
}

} // namespace csikit
