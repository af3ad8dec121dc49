#include "asl/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

namespace asl::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

bool track(const Tape& tape, std::initializer_list<const Tensor*> inputs) {
    if (!tape.grad_enabled()) return false;
    for (const Tensor* t : inputs)
        if (t && t->on_grad_path()) return true;
    return false;
}

Tensor make_output(Tape& tape, std::vector<int> shape,
                   std::initializer_list<const Tensor*> inputs) {
    Tensor out = Tensor::zeros(std::move(shape));
    if (track(tape, inputs)) out.mark_on_grad_path();
    return out;
}

// Patch matrix in an Eigen-owned buffer: gemm operand alignment is then
// independent of heap layout, which keeps results bit-identical across
// otherwise equivalent process invocations.
RowMat im2col(const std::vector<double>& input, int h, int w, int cin, int k) {
    const int pad = k / 2;
    const int patch = k * k * cin;
    RowMat cols = RowMat::Zero(h * w, patch);
    for (int oy = 0; oy < h; ++oy) {
        for (int ox = 0; ox < w; ++ox) {
            double* row = cols.data() + (static_cast<std::size_t>(oy) * w + ox) * patch;
            for (int ky = 0; ky < k; ++ky) {
                const int iy = oy + ky - pad;
                if (iy < 0 || iy >= h) continue;
                for (int kx = 0; kx < k; ++kx) {
                    const int ix = ox + kx - pad;
                    if (ix < 0 || ix >= w) continue;
                    const double* src = input.data() + (static_cast<std::size_t>(iy) * w + ix) * cin;
                    std::copy(src, src + cin, row + (ky * k + kx) * cin);
                }
            }
        }
    }
    return cols;
}

void col2im_accumulate(const RowMat& cols, int h, int w, int cin, int k,
                       std::vector<double>& grad_input) {
    const int pad = k / 2;
    const int patch = k * k * cin;
    for (int oy = 0; oy < h; ++oy) {
        for (int ox = 0; ox < w; ++ox) {
            const double* row = cols.data() + (static_cast<std::size_t>(oy) * w + ox) * patch;
            for (int ky = 0; ky < k; ++ky) {
                const int iy = oy + ky - pad;
                if (iy < 0 || iy >= h) continue;
                for (int kx = 0; kx < k; ++kx) {
                    const int ix = ox + kx - pad;
                    if (ix < 0 || ix >= w) continue;
                    double* dst = grad_input.data() + (static_cast<std::size_t>(iy) * w + ix) * cin;
                    const double* src = row + (ky * k + kx) * cin;
                    for (int c = 0; c < cin; ++c) dst[c] += src[c];
                }
            }
        }
    }
}

}  // namespace

Tensor reshape(Tape& tape, const Tensor& x, std::vector<int> shape) {
    check_shape(shape_size(shape) == x.size(), "reshape must preserve size");
    Tensor out = make_output(tape, std::move(shape), {&x});
    out.data() = x.data();
    if (out.on_grad_path()) {
        auto xi = x.handle();
        auto oi = out.handle();
        tape.record([xi, oi] {
            if (!xi->on_grad_path) return;
            for (std::size_t i = 0; i < oi->grad.size(); ++i) xi->grad[i] += oi->grad[i];
        });
    }
    return out;
}

Tensor concat_channels(Tape& tape, const Tensor& a, const Tensor& b) {
    check_shape(a.shape().size() == 3 && b.shape().size() == 3,
                "concat_channels expects HxWxC tensors");
    check_shape(a.dim(0) == b.dim(0) && a.dim(1) == b.dim(1),
                "concat_channels spatial extents differ");
    const int h = a.dim(0), w = a.dim(1), ca = a.dim(2), cb = b.dim(2);
    Tensor out = make_output(tape, {h, w, ca + cb}, {&a, &b});
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& ov = out.data();
    for (int p = 0; p < h * w; ++p) {
        std::copy(av.begin() + static_cast<std::size_t>(p) * ca,
                  av.begin() + static_cast<std::size_t>(p + 1) * ca,
                  ov.begin() + static_cast<std::size_t>(p) * (ca + cb));
        std::copy(bv.begin() + static_cast<std::size_t>(p) * cb,
                  bv.begin() + static_cast<std::size_t>(p + 1) * cb,
                  ov.begin() + static_cast<std::size_t>(p) * (ca + cb) + ca);
    }
    if (out.on_grad_path()) {
        auto ai = a.handle(); auto bi = b.handle(); auto oi = out.handle();
        tape.record([ai, bi, oi, h, w, ca, cb] {
            for (int p = 0; p < h * w; ++p) {
                const double* g = oi->grad.data() + static_cast<std::size_t>(p) * (ca + cb);
                if (ai->on_grad_path) {
                    double* ga = ai->grad.data() + static_cast<std::size_t>(p) * ca;
                    for (int c = 0; c < ca; ++c) ga[c] += g[c];
                }
                if (bi->on_grad_path) {
                    double* gb = bi->grad.data() + static_cast<std::size_t>(p) * cb;
                    for (int c = 0; c < cb; ++c) gb[c] += g[ca + c];
                }
            }
        });
    }
    return out;
}

Tensor broadcast_concat(Tape& tape, const Tensor& visual, const Tensor& attributes) {
    check_shape(visual.shape().size() == 3, "broadcast_concat expects an HxWxC visual map");
    const int h = visual.dim(0), w = visual.dim(1), c = visual.dim(2);
    const int a = attributes.size();
    check_shape(a >= 1, "attribute vector must be nonempty");
    Tensor out = make_output(tape, {h, w, c + a}, {&visual, &attributes});
    const auto& vv = visual.data();
    const auto& av = attributes.data();
    auto& ov = out.data();
    for (int p = 0; p < h * w; ++p) {
        std::copy(vv.begin() + static_cast<std::size_t>(p) * c,
                  vv.begin() + static_cast<std::size_t>(p + 1) * c,
                  ov.begin() + static_cast<std::size_t>(p) * (c + a));
        std::copy(av.begin(), av.end(),
                  ov.begin() + static_cast<std::size_t>(p) * (c + a) + c);
    }
    if (out.on_grad_path()) {
        auto vi = visual.handle(); auto ai = attributes.handle(); auto oi = out.handle();
        tape.record([vi, ai, oi, h, w, c, a] {
            for (int p = 0; p < h * w; ++p) {
                const double* g = oi->grad.data() + static_cast<std::size_t>(p) * (c + a);
                if (vi->on_grad_path) {
                    double* gv = vi->grad.data() + static_cast<std::size_t>(p) * c;
                    for (int i = 0; i < c; ++i) gv[i] += g[i];
                }
                if (ai->on_grad_path)
                    for (int i = 0; i < a; ++i) ai->grad[static_cast<std::size_t>(i)] += g[c + i];
            }
        });
    }
    return out;
}

namespace {

Tensor elementwise_binary(Tape& tape, const Tensor& a, const Tensor& b,
                          double sign_b) {
    check_shape(a.shape() == b.shape(), "elementwise op requires matching shapes");
    Tensor out = make_output(tape, a.shape(), {&a, &b});
    for (int i = 0; i < a.size(); ++i)
        out.data()[static_cast<std::size_t>(i)] =
            a.data()[static_cast<std::size_t>(i)] + sign_b * b.data()[static_cast<std::size_t>(i)];
    if (out.on_grad_path()) {
        auto ai = a.handle(); auto bi = b.handle(); auto oi = out.handle();
        tape.record([ai, bi, oi, sign_b] {
            for (std::size_t i = 0; i < oi->grad.size(); ++i) {
                if (ai->on_grad_path) ai->grad[i] += oi->grad[i];
                if (bi->on_grad_path) bi->grad[i] += sign_b * oi->grad[i];
            }
        });
    }
    return out;
}

}  // namespace

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
    return elementwise_binary(tape, a, b, 1.0);
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
    return elementwise_binary(tape, a, b, -1.0);
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
    check_shape(a.shape() == b.shape(), "elementwise op requires matching shapes");
    Tensor out = make_output(tape, a.shape(), {&a, &b});
    for (int i = 0; i < a.size(); ++i)
        out.data()[static_cast<std::size_t>(i)] =
            a.data()[static_cast<std::size_t>(i)] * b.data()[static_cast<std::size_t>(i)];
    if (out.on_grad_path()) {
        auto ai = a.handle(); auto bi = b.handle(); auto oi = out.handle();
        tape.record([ai, bi, oi] {
            for (std::size_t i = 0; i < oi->grad.size(); ++i) {
                if (ai->on_grad_path) ai->grad[i] += oi->grad[i] * bi->value[i];
                if (bi->on_grad_path) bi->grad[i] += oi->grad[i] * ai->value[i];
            }
        });
    }
    return out;
}

Tensor scale(Tape& tape, const Tensor& a, double factor) {
    Tensor out = make_output(tape, a.shape(), {&a});
    for (int i = 0; i < a.size(); ++i)
        out.data()[static_cast<std::size_t>(i)] = factor * a.data()[static_cast<std::size_t>(i)];
    if (out.on_grad_path()) {
        auto ai = a.handle(); auto oi = out.handle();
        tape.record([ai, oi, factor] {
            if (!ai->on_grad_path) return;
            for (std::size_t i = 0; i < oi->grad.size(); ++i)
                ai->grad[i] += factor * oi->grad[i];
        });
    }
    return out;
}

Tensor sigmoid(Tape& tape, const Tensor& x) {
    Tensor out = make_output(tape, x.shape(), {&x});
    for (int i = 0; i < x.size(); ++i) {
        const double v = x.data()[static_cast<std::size_t>(i)];
        out.data()[static_cast<std::size_t>(i)] =
            v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                     : std::exp(v) / (1.0 + std::exp(v));
    }
    if (out.on_grad_path()) {
        auto xi = x.handle(); auto oi = out.handle();
        tape.record([xi, oi] {
            if (!xi->on_grad_path) return;
            for (std::size_t i = 0; i < oi->grad.size(); ++i) {
                const double s = oi->value[i];
                xi->grad[i] += oi->grad[i] * s * (1.0 - s);
            }
        });
    }
    return out;
}

Tensor relu(Tape& tape, const Tensor& x) {
    Tensor out = make_output(tape, x.shape(), {&x});
    for (int i = 0; i < x.size(); ++i)
        out.data()[static_cast<std::size_t>(i)] =
            std::max(0.0, x.data()[static_cast<std::size_t>(i)]);
    if (out.on_grad_path()) {
        auto xi = x.handle(); auto oi = out.handle();
        tape.record([xi, oi] {
            if (!xi->on_grad_path) return;
            for (std::size_t i = 0; i < oi->grad.size(); ++i)
                if (xi->value[i] > 0.0) xi->grad[i] += oi->grad[i];
        });
    }
    return out;
}

Tensor mul_channel(Tape& tape, const Tensor& gate, const Tensor& x) {
    check_shape(x.shape().size() == 3, "mul_channel expects an HxWxC tensor");
    const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
    check_shape(gate.size() == c, "channel gate length must match channel count");
    Tensor out = make_output(tape, x.shape(), {&gate, &x});
    for (int p = 0; p < h * w; ++p)
        for (int i = 0; i < c; ++i)
            out.data()[static_cast<std::size_t>(p) * c + i] =
                gate.data()[static_cast<std::size_t>(i)] *
                x.data()[static_cast<std::size_t>(p) * c + i];
    if (out.on_grad_path()) {
        auto gi = gate.handle(); auto xi = x.handle(); auto oi = out.handle();
        tape.record([gi, xi, oi, h, w, c] {
            for (int p = 0; p < h * w; ++p)
                for (int i = 0; i < c; ++i) {
                    const std::size_t idx = static_cast<std::size_t>(p) * c + i;
                    if (gi->on_grad_path)
                        gi->grad[static_cast<std::size_t>(i)] += oi->grad[idx] * xi->value[idx];
                    if (xi->on_grad_path)
                        xi->grad[idx] += oi->grad[idx] * gi->value[static_cast<std::size_t>(i)];
                }
        });
    }
    return out;
}

Tensor mul_spatial(Tape& tape, const Tensor& gate, const Tensor& x) {
    check_shape(x.shape().size() == 3, "mul_spatial expects an HxWxC tensor");
    const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
    check_shape(gate.size() == h * w, "spatial gate extent must match HxW");
    Tensor out = make_output(tape, x.shape(), {&gate, &x});
    for (int p = 0; p < h * w; ++p)
        for (int i = 0; i < c; ++i)
            out.data()[static_cast<std::size_t>(p) * c + i] =
                gate.data()[static_cast<std::size_t>(p)] *
                x.data()[static_cast<std::size_t>(p) * c + i];
    if (out.on_grad_path()) {
        auto gi = gate.handle(); auto xi = x.handle(); auto oi = out.handle();
        tape.record([gi, xi, oi, h, w, c] {
            for (int p = 0; p < h * w; ++p)
                for (int i = 0; i < c; ++i) {
                    const std::size_t idx = static_cast<std::size_t>(p) * c + i;
                    if (gi->on_grad_path)
                        gi->grad[static_cast<std::size_t>(p)] += oi->grad[idx] * xi->value[idx];
                    if (xi->on_grad_path)
                        xi->grad[idx] += oi->grad[idx] * gi->value[static_cast<std::size_t>(p)];
                }
        });
    }
    return out;
}

Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& kernels, const Tensor* bias) {
    check_shape(input.shape().size() == 3, "conv2d input must be HxWxCin");
    check_shape(kernels.shape().size() == 4, "conv2d kernels must be kxkxCinxCout");
    const int h = input.dim(0), w = input.dim(1), cin = input.dim(2);
    const int k = kernels.dim(0);
    check_shape(kernels.dim(1) == k, "conv2d kernels must be square");
    check_shape(k % 2 == 1, "conv2d kernel size must be odd");
    check_shape(kernels.dim(2) == cin, "conv2d channel count mismatch");
    const int cout = kernels.dim(3);
    if (bias) check_shape(bias->size() == cout, "conv2d bias length must match Cout");

    Tensor out = make_output(tape, {h, w, cout}, {&input, &kernels, bias});
    const int patch = k * k * cin;
    // all gemm operands live in Eigen-owned aligned buffers (see im2col note)
    {
        const RowMat cols = im2col(input.data(), h, w, cin, k);
        RowMat km(patch, cout);
        std::copy(kernels.data().begin(), kernels.data().end(), km.data());
        RowMat om(h * w, cout);
        om.noalias() = cols * km;
        if (bias) {
            ConstMatMap bm(bias->data().data(), 1, cout);
            om.rowwise() += bm.row(0);
        }
        std::copy(om.data(), om.data() + om.size(), out.data().begin());
    }
    if (out.on_grad_path()) {
        auto ii = input.handle(); auto ki = kernels.handle(); auto oi = out.handle();
        auto bi = bias ? bias->handle() : nullptr;
        tape.record([ii, ki, bi, oi, h, w, cin, cout, k, patch] {
            RowMat gm(h * w, cout);
            std::copy(oi->grad.begin(), oi->grad.end(), gm.data());
            if (ki->on_grad_path) {
                const RowMat cols = im2col(ii->value, h, w, cin, k);
                RowMat kg(patch, cout);
                kg.noalias() = cols.transpose() * gm;
                for (std::size_t i = 0; i < ki->grad.size(); ++i)
                    ki->grad[i] += kg.data()[i];
            }
            if (ii->on_grad_path) {
                RowMat km(patch, cout);
                std::copy(ki->value.begin(), ki->value.end(), km.data());
                RowMat dcols(h * w, patch);
                dcols.noalias() = gm * km.transpose();
                col2im_accumulate(dcols, h, w, cin, k, ii->grad);
            }
            if (bi && bi->on_grad_path) {
                // fixed-order scalar accumulation keeps the result independent
                // of the grad buffer's heap alignment
                for (int p = 0; p < h * w; ++p)
                    for (int c = 0; c < cout; ++c)
                        bi->grad[static_cast<std::size_t>(c)] += gm(p, c);
            }
        });
    }
    return out;
}

Tensor max_pool2(Tape& tape, const Tensor& x) {
    check_shape(x.shape().size() == 3, "max_pool2 expects an HxWxC tensor");
    const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
    check_shape(h % 2 == 0 && w % 2 == 0, "max_pool2 requires even spatial extents");
    const int oh = h / 2, ow = w / 2;
    Tensor out = make_output(tape, {oh, ow, c}, {&x});
    std::vector<int> argmax(static_cast<std::size_t>(oh) * ow * c);
    for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox)
            for (int ch = 0; ch < c; ++ch) {
                double best = -std::numeric_limits<double>::infinity();
                int best_idx = -1;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) {
                        const int idx = ((oy * 2 + dy) * w + ox * 2 + dx) * c + ch;
                        if (x.data()[static_cast<std::size_t>(idx)] > best) {
                            best = x.data()[static_cast<std::size_t>(idx)];
                            best_idx = idx;
                        }
                    }
                const std::size_t oidx = (static_cast<std::size_t>(oy) * ow + ox) * c + ch;
                out.data()[oidx] = best;
                argmax[oidx] = best_idx;
            }
    if (out.on_grad_path()) {
        auto xi = x.handle(); auto oi = out.handle();
        tape.record([xi, oi, argmax = std::move(argmax)] {
            if (!xi->on_grad_path) return;
            for (std::size_t i = 0; i < oi->grad.size(); ++i)
                xi->grad[static_cast<std::size_t>(argmax[i])] += oi->grad[i];
        });
    }
    return out;
}

Tensor global_pool(Tape& tape, const Tensor& x, PoolMode mode) {
    check_shape(x.shape().size() == 3, "global_pool expects an HxWxC tensor");
    const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
    const int n = h * w;
    Tensor out = make_output(tape, {1, 1, c}, {&x});
    std::vector<int> argmax(mode == PoolMode::Max ? c : 0);
    for (int ch = 0; ch < c; ++ch) {
        if (mode == PoolMode::Avg) {
            double s = 0.0;
            for (int p = 0; p < n; ++p) s += x.data()[static_cast<std::size_t>(p) * c + ch];
            out.data()[static_cast<std::size_t>(ch)] = s / n;
        } else {
            double best = x.data()[static_cast<std::size_t>(ch)];
            int best_p = 0;
            for (int p = 1; p < n; ++p) {
                const double v = x.data()[static_cast<std::size_t>(p) * c + ch];
                if (v > best) { best = v; best_p = p; }
            }
            out.data()[static_cast<std::size_t>(ch)] = best;
            argmax[static_cast<std::size_t>(ch)] = best_p;
        }
    }
    if (out.on_grad_path()) {
        auto xi = x.handle(); auto oi = out.handle();
        tape.record([xi, oi, mode, n, c, argmax = std::move(argmax)] {
            if (!xi->on_grad_path) return;
            for (int ch = 0; ch < c; ++ch) {
                const double g = oi->grad[static_cast<std::size_t>(ch)];
                if (mode == PoolMode::Avg) {
                    for (int p = 0; p < n; ++p)
                        xi->grad[static_cast<std::size_t>(p) * c + ch] += g / n;
                } else {
                    xi->grad[static_cast<std::size_t>(argmax[static_cast<std::size_t>(ch)]) * c + ch] += g;
                }
            }
        });
    }
    return out;
}

Tensor channel_pool(Tape& tape, const Tensor& x, PoolMode mode) {
    check_shape(x.shape().size() == 3, "channel_pool expects an HxWxC tensor");
    const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
    const int n = h * w;
    Tensor out = make_output(tape, {h, w, 1}, {&x});
    std::vector<int> argmax(mode == PoolMode::Max ? n : 0);
    for (int p = 0; p < n; ++p) {
        const double* row = x.data().data() + static_cast<std::size_t>(p) * c;
        if (mode == PoolMode::Avg) {
            double s = 0.0;
            for (int ch = 0; ch < c; ++ch) s += row[ch];
            out.data()[static_cast<std::size_t>(p)] = s / c;
        } else {
            double best = row[0];
            int best_c = 0;
            for (int ch = 1; ch < c; ++ch)
                if (row[ch] > best) { best = row[ch]; best_c = ch; }
            out.data()[static_cast<std::size_t>(p)] = best;
            argmax[static_cast<std::size_t>(p)] = best_c;
        }
    }
    if (out.on_grad_path()) {
        auto xi = x.handle(); auto oi = out.handle();
        tape.record([xi, oi, mode, n, c, argmax = std::move(argmax)] {
            if (!xi->on_grad_path) return;
            for (int p = 0; p < n; ++p) {
                const double g = oi->grad[static_cast<std::size_t>(p)];
                if (mode == PoolMode::Avg) {
                    for (int ch = 0; ch < c; ++ch)
                        xi->grad[static_cast<std::size_t>(p) * c + ch] += g / c;
                } else {
                    xi->grad[static_cast<std::size_t>(p) * c + argmax[static_cast<std::size_t>(p)]] += g;
                }
            }
        });
    }
    return out;
}

Tensor linear(Tape& tape, const Tensor& x, const Tensor& weights, const Tensor& bias) {
    check_shape(weights.shape().size() == 2, "linear weights must be DinxDout");
    const int din = weights.dim(0), dout = weights.dim(1);
    check_shape(x.size() == din, "linear input size must match Din");
    check_shape(bias.size() == dout, "linear bias length must match Dout");
    Tensor out = make_output(tape, {dout}, {&x, &weights, &bias});
    for (int o = 0; o < dout; ++o) {
        double s = bias.data()[static_cast<std::size_t>(o)];
        for (int i = 0; i < din; ++i)
            s += x.data()[static_cast<std::size_t>(i)] *
                 weights.data()[static_cast<std::size_t>(i) * dout + o];
        out.data()[static_cast<std::size_t>(o)] = s;
    }
    if (out.on_grad_path()) {
        auto xi = x.handle(); auto wi = weights.handle(); auto bi = bias.handle();
        auto oi = out.handle();
        tape.record([xi, wi, bi, oi, din, dout] {
            for (int o = 0; o < dout; ++o) {
                const double g = oi->grad[static_cast<std::size_t>(o)];
                if (bi->on_grad_path) bi->grad[static_cast<std::size_t>(o)] += g;
                for (int i = 0; i < din; ++i) {
                    if (wi->on_grad_path)
                        wi->grad[static_cast<std::size_t>(i) * dout + o] += g * xi->value[static_cast<std::size_t>(i)];
                    if (xi->on_grad_path)
                        xi->grad[static_cast<std::size_t>(i)] += g * wi->value[static_cast<std::size_t>(i) * dout + o];
                }
            }
        });
    }
    return out;
}

std::vector<Tensor> batch_norm(Tape& tape, const std::vector<Tensor>& xs,
                               const Tensor& gamma, const Tensor& beta,
                               NormStats& stats, bool training) {
    check_shape(!xs.empty(), "batch_norm needs at least one tensor");
    check_shape(xs[0].shape().size() == 3, "batch_norm expects HxWxC tensors");
    const int h = xs[0].dim(0), w = xs[0].dim(1), c = xs[0].dim(2);
    for (const Tensor& x : xs)
        check_shape(x.shape() == xs[0].shape(), "batch_norm tensors must share one shape");
    const int n = h * w;
    const int batch = static_cast<int>(xs.size());
    const int m = n * batch;
    check_shape(gamma.size() == c && beta.size() == c,
                "batch_norm affine parameters must match channel count");
    check_shape(static_cast<int>(stats.running_mean.size()) == c,
                "batch_norm running stats must match channel count");

    std::vector<Tensor> outs;
    outs.reserve(xs.size());
    for (const Tensor& x : xs) outs.push_back(make_output(tape, x.shape(), {&x, &gamma, &beta}));

    std::vector<double> xhat(static_cast<std::size_t>(m) * c);
    std::vector<double> invstd(static_cast<std::size_t>(c));

    for (int ch = 0; ch < c; ++ch) {
        double mean, var;
        if (training) {
            double s = 0.0;
            for (const Tensor& x : xs)
                for (int p = 0; p < n; ++p) s += x.data()[static_cast<std::size_t>(p) * c + ch];
            mean = s / m;
            double sq = 0.0;
            for (const Tensor& x : xs)
                for (int p = 0; p < n; ++p) {
                    const double d = x.data()[static_cast<std::size_t>(p) * c + ch] - mean;
                    sq += d * d;
                }
            var = sq / m;
            stats.running_mean[static_cast<std::size_t>(ch)] =
                (1.0 - stats.momentum) * stats.running_mean[static_cast<std::size_t>(ch)] + stats.momentum * mean;
            stats.running_var[static_cast<std::size_t>(ch)] =
                (1.0 - stats.momentum) * stats.running_var[static_cast<std::size_t>(ch)] + stats.momentum * var;
        } else {
            mean = stats.running_mean[static_cast<std::size_t>(ch)];
            var = stats.running_var[static_cast<std::size_t>(ch)];
        }
        const double is = 1.0 / std::sqrt(var + stats.eps);
        invstd[static_cast<std::size_t>(ch)] = is;
        for (int b = 0; b < batch; ++b)
            for (int p = 0; p < n; ++p) {
                const std::size_t idx = static_cast<std::size_t>(p) * c + ch;
                const std::size_t xidx = static_cast<std::size_t>(b) * n * c + idx;
                xhat[xidx] = (xs[static_cast<std::size_t>(b)].data()[idx] - mean) * is;
                outs[static_cast<std::size_t>(b)].data()[idx] =
                    gamma.data()[static_cast<std::size_t>(ch)] * xhat[xidx] +
                    beta.data()[static_cast<std::size_t>(ch)];
            }
    }

    bool any_grad = false;
    for (const Tensor& o : outs) any_grad = any_grad || o.on_grad_path();
    if (any_grad) {
        std::vector<std::shared_ptr<TensorImpl>> xi, oi;
        for (const Tensor& x : xs) xi.push_back(x.handle());
        for (const Tensor& o : outs) oi.push_back(o.handle());
        auto gi = gamma.handle();
        auto bi = beta.handle();
        tape.record([xi = std::move(xi), oi = std::move(oi), gi, bi, n, c, batch, m, training,
                     xhat = std::move(xhat), invstd = std::move(invstd)] {
            for (int ch = 0; ch < c; ++ch) {
                double sum_dy = 0.0, sum_dy_xhat = 0.0;
                for (int b = 0; b < batch; ++b)
                    for (int p = 0; p < n; ++p) {
                        const std::size_t idx = static_cast<std::size_t>(p) * c + ch;
                        const std::size_t xidx = static_cast<std::size_t>(b) * n * c + idx;
                        sum_dy += oi[static_cast<std::size_t>(b)]->grad[idx];
                        sum_dy_xhat += oi[static_cast<std::size_t>(b)]->grad[idx] * xhat[xidx];
                    }
                if (bi->on_grad_path) bi->grad[static_cast<std::size_t>(ch)] += sum_dy;
                if (gi->on_grad_path) gi->grad[static_cast<std::size_t>(ch)] += sum_dy_xhat;
                const double g = gi->value[static_cast<std::size_t>(ch)];
                const double is = invstd[static_cast<std::size_t>(ch)];
                for (int b = 0; b < batch; ++b) {
                    if (!xi[static_cast<std::size_t>(b)]->on_grad_path) continue;
                    for (int p = 0; p < n; ++p) {
                        const std::size_t idx = static_cast<std::size_t>(p) * c + ch;
                        const std::size_t xidx = static_cast<std::size_t>(b) * n * c + idx;
                        if (training) {
                            // batch-statistics backward: mean and variance
                            // both depend on every x in the batch
                            xi[static_cast<std::size_t>(b)]->grad[idx] += g * is / m *
                                (m * oi[static_cast<std::size_t>(b)]->grad[idx] - sum_dy -
                                 xhat[xidx] * sum_dy_xhat);
                        } else {
                            xi[static_cast<std::size_t>(b)]->grad[idx] +=
                                g * is * oi[static_cast<std::size_t>(b)]->grad[idx];
                        }
                    }
                }
            }
        });
    }
    return outs;
}

Tensor instance_norm(Tape& tape, const Tensor& x, const Tensor& gamma,
                     const Tensor& beta, NormStats& stats, bool training) {
    check_shape(x.shape().size() == 3, "instance_norm expects an HxWxC tensor");
    std::vector<Tensor> outs = batch_norm(tape, {x}, gamma, beta, stats, training);
    return outs.front();
}

Tensor sum(Tape& tape, const Tensor& x) {
    Tensor out = make_output(tape, {1}, {&x});
    double s = 0.0;
    for (double v : x.data()) s += v;
    out.data()[0] = s;
    if (out.on_grad_path()) {
        auto xi = x.handle(); auto oi = out.handle();
        tape.record([xi, oi] {
            if (!xi->on_grad_path) return;
            for (double& g : xi->grad) g += oi->grad[0];
        });
    }
    return out;
}

Tensor softmax(Tape& tape, const Tensor& logits) {
    const int n = logits.size();
    Tensor out = make_output(tape, logits.shape(), {&logits});
    double mx = logits.data()[0];
    for (double v : logits.data()) mx = std::max(mx, v);
    double denom = 0.0;
    for (int i = 0; i < n; ++i) {
        const double e = std::exp(logits.data()[static_cast<std::size_t>(i)] - mx);
        out.data()[static_cast<std::size_t>(i)] = e;
        denom += e;
    }
    for (int i = 0; i < n; ++i) out.data()[static_cast<std::size_t>(i)] /= denom;
    if (out.on_grad_path()) {
        auto xi = logits.handle(); auto oi = out.handle();
        tape.record([xi, oi, n] {
            if (!xi->on_grad_path) return;
            double dot = 0.0;
            for (int i = 0; i < n; ++i)
                dot += oi->grad[static_cast<std::size_t>(i)] * oi->value[static_cast<std::size_t>(i)];
            for (int i = 0; i < n; ++i)
                xi->grad[static_cast<std::size_t>(i)] +=
                    oi->value[static_cast<std::size_t>(i)] *
                    (oi->grad[static_cast<std::size_t>(i)] - dot);
        });
    }
    return out;
}

Tensor squared_distance(Tape& tape, const Tensor& a, const Tensor& b) {
    check_shape(a.size() == b.size(), "squared_distance requires equal sizes");
    Tensor out = make_output(tape, {1}, {&a, &b});
    double s = 0.0;
    for (int i = 0; i < a.size(); ++i) {
        const double d = a.data()[static_cast<std::size_t>(i)] - b.data()[static_cast<std::size_t>(i)];
        s += d * d;
    }
    out.data()[0] = s;
    if (out.on_grad_path()) {
        auto ai = a.handle(); auto bi = b.handle(); auto oi = out.handle();
        tape.record([ai, bi, oi] {
            const double g = oi->grad[0];
            for (std::size_t i = 0; i < ai->value.size(); ++i) {
                const double d = ai->value[i] - bi->value[i];
                if (ai->on_grad_path) ai->grad[i] += 2.0 * d * g;
                if (bi->on_grad_path) bi->grad[i] -= 2.0 * d * g;
            }
        });
    }
    return out;
}

Tensor stack_scalars(Tape& tape, const std::vector<Tensor>& scalars) {
    check_shape(!scalars.empty(), "stack_scalars requires a nonempty list");
    const int n = static_cast<int>(scalars.size());
    Tensor out = Tensor::zeros({n});
    bool any = false;
    for (const Tensor& s : scalars) {
        check_shape(s.size() == 1, "stack_scalars inputs must be scalars");
        any = any || s.on_grad_path();
    }
    if (tape.grad_enabled() && any) out.mark_on_grad_path();
    for (int i = 0; i < n; ++i)
        out.data()[static_cast<std::size_t>(i)] = scalars[static_cast<std::size_t>(i)].item();
    if (out.on_grad_path()) {
        std::vector<std::shared_ptr<TensorImpl>> handles;
        handles.reserve(scalars.size());
        for (const Tensor& s : scalars) handles.push_back(s.handle());
        auto oi = out.handle();
        tape.record([handles = std::move(handles), oi] {
            for (std::size_t i = 0; i < handles.size(); ++i)
                if (handles[i]->on_grad_path) handles[i]->grad[0] += oi->grad[i];
        });
    }
    return out;
}

Tensor mean_of(Tape& tape, const std::vector<Tensor>& tensors) {
    check_shape(!tensors.empty(), "mean_of requires a nonempty list");
    const auto& shape = tensors.front().shape();
    bool any = false;
    for (const Tensor& t : tensors) {
        check_shape(t.shape() == shape, "mean_of requires matching shapes");
        any = any || t.on_grad_path();
    }
    Tensor out = Tensor::zeros(shape);
    if (tape.grad_enabled() && any) out.mark_on_grad_path();
    const double inv = 1.0 / static_cast<double>(tensors.size());
    for (const Tensor& t : tensors)
        for (int i = 0; i < t.size(); ++i)
            out.data()[static_cast<std::size_t>(i)] += inv * t.data()[static_cast<std::size_t>(i)];
    if (out.on_grad_path()) {
        std::vector<std::shared_ptr<TensorImpl>> handles;
        handles.reserve(tensors.size());
        for (const Tensor& t : tensors) handles.push_back(t.handle());
        auto oi = out.handle();
        tape.record([handles = std::move(handles), oi, inv] {
            for (auto& hi : handles) {
                if (!hi->on_grad_path) continue;
                for (std::size_t i = 0; i < oi->grad.size(); ++i)
                    hi->grad[i] += inv * oi->grad[i];
            }
        });
    }
    return out;
}

Tensor negative_log_prob(Tape& tape, const Tensor& probs, int label) {
    check_shape(label >= 0 && label < probs.size(), "label out of range");
    constexpr double kFloor = 1e-12;
    Tensor out = make_output(tape, {1}, {&probs});
    const double p = probs.data()[static_cast<std::size_t>(label)];
    out.data()[0] = -std::log(std::max(p, kFloor));
    if (out.on_grad_path()) {
        auto pi = probs.handle(); auto oi = out.handle();
        tape.record([pi, oi, label] {
            if (!pi->on_grad_path) return;
            const double p = pi->value[static_cast<std::size_t>(label)];
            if (p > kFloor) pi->grad[static_cast<std::size_t>(label)] -= oi->grad[0] / p;
        });
    }
    return out;
}

Tensor mse_to_const(Tape& tape, const Tensor& pred, std::span<const double> target) {
    check_shape(static_cast<std::size_t>(pred.size()) == target.size(),
                "mse_to_const size mismatch");
    const int n = pred.size();
    Tensor out = make_output(tape, {1}, {&pred});
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
        const double d = pred.data()[static_cast<std::size_t>(i)] - target[static_cast<std::size_t>(i)];
        s += d * d;
    }
    out.data()[0] = s / n;
    if (out.on_grad_path()) {
        auto pi = pred.handle(); auto oi = out.handle();
        std::vector<double> tgt(target.begin(), target.end());
        tape.record([pi, oi, n, tgt = std::move(tgt)] {
            if (!pi->on_grad_path) return;
            const double g = oi->grad[0];
            for (int i = 0; i < n; ++i)
                pi->grad[static_cast<std::size_t>(i)] +=
                    2.0 * (pi->value[static_cast<std::size_t>(i)] - tgt[static_cast<std::size_t>(i)]) * g / n;
        });
    }
    return out;
}

bool all_finite(const Tensor& x) {
    for (double v : x.data())
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace asl::ops
