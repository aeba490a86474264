#include "masktune/network.hpp"

#include <cmath>
#include <cstring>
#include <string>

#include "masktune/errors.hpp"
#include "masktune/gemm.hpp"
#include "masktune/loss.hpp"
#include "masktune/rng.hpp"

namespace masktune {

NetworkSpec NetworkSpec::mnist_default(int num_classes, int in_channels) {
    NetworkSpec spec;
    spec.in_channels = in_channels;
    spec.in_height = 28;
    spec.in_width = 28;
    spec.num_classes = num_classes;
    spec.conv_blocks = {
        {16, 3, 1, 1, true, true},
        {32, 3, 1, 1, true, true},
        {64, 3, 1, 1, true, true},
        {128, 3, 1, 1, true, false},
    };
    spec.cam_layer_index = 3;
    return spec;
}

void NetworkSpec::validate() const {
    if (in_channels <= 0 || in_height <= 0 || in_width <= 0)
        throw ConfigError("network input dims must be positive");
    if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
    if (conv_blocks.empty()) throw ConfigError("network needs at least one conv block");
    if (cam_layer_index < 0 || cam_layer_index >= static_cast<int>(conv_blocks.size()))
        throw ConfigError("cam_layer_index " + std::to_string(cam_layer_index) + " out of range for " +
                          std::to_string(conv_blocks.size()) + " conv blocks");
    for (size_t b = 0; b < conv_blocks.size(); ++b) {
        const auto& cb = conv_blocks[b];
        if (cb.out_channels <= 0 || cb.kernel_size <= 0 || cb.stride <= 0 || cb.padding < 0)
            throw ConfigError("bad conv block parameters at layer " + std::to_string(b));
        Dims d = conv_out_dims(static_cast<int>(b));
        if (d.h <= 0 || d.w <= 0)
            throw ConfigError("conv block " + std::to_string(b) + " output collapses to zero size");
        if (conv_blocks[b].followed_by_maxpool2 && (d.h < 2 || d.w < 2))
            throw ConfigError("conv block " + std::to_string(b) + " too small for 2x2 max-pool");
    }
}

NetworkSpec::Dims NetworkSpec::block_in_dims(int block) const {
    Dims d{in_channels, in_height, in_width};
    for (int b = 0; b < block; ++b) {
        Dims o = conv_out_dims(b);
        d = o;
        if (conv_blocks[static_cast<size_t>(b)].followed_by_maxpool2) {
            d.h = o.h / 2;
            d.w = o.w / 2;
        }
    }
    return d;
}

NetworkSpec::Dims NetworkSpec::conv_out_dims(int block) const {
    Dims in = block_in_dims(block);
    const auto& cb = conv_blocks[static_cast<size_t>(block)];
    Dims out;
    out.c = cb.out_channels;
    out.h = (in.h + 2 * cb.padding - cb.kernel_size) / cb.stride + 1;
    out.w = (in.w + 2 * cb.padding - cb.kernel_size) / cb.stride + 1;
    return out;
}

int NetworkSpec::feature_count() const {
    return conv_blocks.back().out_channels;
}

NetworkParams NetworkParams::init(const NetworkSpec& spec, uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    NetworkParams p;
    int in_c = spec.in_channels;
    for (const auto& cb : spec.conv_blocks) {
        int k = cb.kernel_size;
        int fan_in = in_c * k * k;
        int fan_out = cb.out_channels * k * k;
        double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        LayerParams lp;
        lp.weight = Tensor({cb.out_channels, in_c, k, k});
        for (int64_t i = 0; i < lp.weight.numel(); ++i) lp.weight[i] = rng.uniform(-limit, limit);
        lp.bias = Tensor({cb.out_channels});
        p.conv.push_back(std::move(lp));
        p.conv_momentum.push_back({Tensor({cb.out_channels, in_c, k, k}), Tensor({cb.out_channels})});
        in_c = cb.out_channels;
    }
    int features = spec.feature_count();
    double limit = std::sqrt(6.0 / static_cast<double>(features + spec.num_classes));
    p.head.weight = Tensor({spec.num_classes, features});
    for (int64_t i = 0; i < p.head.weight.numel(); ++i) p.head.weight[i] = rng.uniform(-limit, limit);
    p.head.bias = Tensor({spec.num_classes});
    p.head_momentum = {Tensor({spec.num_classes, features}), Tensor({spec.num_classes})};
    return p;
}

void NetworkParams::validate_against(const NetworkSpec& spec) const {
    if (conv.size() != spec.conv_blocks.size())
        throw ConfigError("params have " + std::to_string(conv.size()) + " conv layers, spec expects " +
                          std::to_string(spec.conv_blocks.size()));
    int in_c = spec.in_channels;
    for (size_t b = 0; b < conv.size(); ++b) {
        const auto& cb = spec.conv_blocks[b];
        std::vector<int64_t> want{cb.out_channels, in_c, cb.kernel_size, cb.kernel_size};
        if (conv[b].weight.shape() != want)
            throw ConfigError("conv weight shape mismatch at layer " + std::to_string(b) + ": got " +
                              conv[b].weight.shape_str());
        if (conv[b].bias.shape() != std::vector<int64_t>{cb.out_channels})
            throw ConfigError("conv bias shape mismatch at layer " + std::to_string(b));
        in_c = cb.out_channels;
    }
    std::vector<int64_t> want_head{spec.num_classes, spec.feature_count()};
    if (head.weight.shape() != want_head)
        throw ConfigError("head weight shape mismatch: got " + head.weight.shape_str());
    if (head.bias.shape() != std::vector<int64_t>{spec.num_classes})
        throw ConfigError("head bias shape mismatch");
}

int64_t NetworkParams::parameter_count() const {
    int64_t n = head.weight.numel() + head.bias.numel();
    for (const auto& lp : conv) n += lp.weight.numel() + lp.bias.numel();
    return n;
}

Gradients Gradients::zeros_like(const NetworkSpec& spec) {
    Gradients g;
    int in_c = spec.in_channels;
    for (const auto& cb : spec.conv_blocks) {
        g.conv.push_back({Tensor({cb.out_channels, in_c, cb.kernel_size, cb.kernel_size}), Tensor({cb.out_channels})});
        in_c = cb.out_channels;
    }
    g.head = {Tensor({spec.num_classes, spec.feature_count()}), Tensor({spec.num_classes})};
    return g;
}

void Gradients::scale(double factor) {
    for (auto& lp : conv) {
        for (int64_t i = 0; i < lp.weight.numel(); ++i) lp.weight[i] *= factor;
        for (int64_t i = 0; i < lp.bias.numel(); ++i) lp.bias[i] *= factor;
    }
    for (int64_t i = 0; i < head.weight.numel(); ++i) head.weight[i] *= factor;
    for (int64_t i = 0; i < head.bias.numel(); ++i) head.bias[i] *= factor;
}

void Gradients::add(const Gradients& other) {
    for (size_t b = 0; b < conv.size(); ++b) {
        for (int64_t i = 0; i < conv[b].weight.numel(); ++i) conv[b].weight[i] += other.conv[b].weight[i];
        for (int64_t i = 0; i < conv[b].bias.numel(); ++i) conv[b].bias[i] += other.conv[b].bias[i];
    }
    for (int64_t i = 0; i < head.weight.numel(); ++i) head.weight[i] += other.head.weight[i];
    for (int64_t i = 0; i < head.bias.numel(); ++i) head.bias[i] += other.head.bias[i];
}

namespace {

using detail::gemm_accumulate;
using detail::transpose;

// Per-sample forward/backward engine. Scratch buffers are sized once and
// reused across samples; per-stage layouts are flat [C,H,W].
class Engine {
public:
    Engine(const NetworkSpec& spec, const NetworkParams& params) : spec_(spec), params_(params) {
        int blocks = static_cast<int>(spec.conv_blocks.size());
        in_dims_.resize(blocks);
        out_dims_.resize(blocks);
        block_in_.resize(blocks);
        act_.resize(blocks);
        pooled_.resize(blocks);
        pool_idx_.resize(blocks);
        col_.resize(blocks);
        dcol_.resize(blocks);
        dbuf_a_.clear();
        for (int b = 0; b < blocks; ++b) {
            in_dims_[b] = spec.block_in_dims(b);
            out_dims_[b] = spec.conv_out_dims(b);
            const auto& cb = spec.conv_blocks[static_cast<size_t>(b)];
            size_t ck = static_cast<size_t>(in_dims_[b].c) * cb.kernel_size * cb.kernel_size;
            size_t sp = static_cast<size_t>(out_dims_[b].h) * out_dims_[b].w;
            block_in_[b].assign(static_cast<size_t>(in_dims_[b].c) * in_dims_[b].h * in_dims_[b].w, 0.0);
            act_[b].assign(static_cast<size_t>(out_dims_[b].c) * sp, 0.0);
            if (cb.followed_by_maxpool2) {
                size_t psp = static_cast<size_t>(out_dims_[b].h / 2) * (out_dims_[b].w / 2);
                pooled_[b].assign(static_cast<size_t>(out_dims_[b].c) * psp, 0.0);
                pool_idx_[b].assign(static_cast<size_t>(out_dims_[b].c) * psp, 0);
            }
            col_[b].assign(ck * sp, 0.0);
            dcol_[b].assign(ck * sp, 0.0);
        }
        features_ = spec.feature_count();
        gap_.assign(static_cast<size_t>(features_), 0.0);
        logits_.assign(static_cast<size_t>(spec.num_classes), 0.0);
        size_t max_plane = 0;
        for (int b = 0; b < blocks; ++b) {
            max_plane = std::max(max_plane, block_in_[b].size());
            max_plane = std::max(max_plane, act_[b].size());
        }
        dbuf_a_.assign(max_plane, 0.0);
        dbuf_b_.assign(max_plane, 0.0);
        size_t max_wt = 0;
        for (const auto& lp : params.conv) max_wt = std::max(max_wt, static_cast<size_t>(lp.weight.numel()));
        wt_scratch_.assign(max_wt, 0.0);
        colT_scratch_.assign(*std::max_element(col_.begin(), col_.end(),
                                               [](const auto& a, const auto& b) { return a.size() < b.size(); })
                                  ->size() ? 0 : 0, 0.0);
        size_t max_col = 0;
        for (const auto& c : col_) max_col = std::max(max_col, c.size());
        colT_scratch_.assign(max_col, 0.0);
    }

    // Runs the conv stack + head; input is a flat [C,H,W] view.
    void forward(const double* x) {
        int blocks = static_cast<int>(spec_.conv_blocks.size());
        std::memcpy(block_in_[0].data(), x, block_in_[0].size() * sizeof(double));
        for (int b = 0; b < blocks; ++b) {
            conv_forward(b);
            const auto& cb = spec_.conv_blocks[static_cast<size_t>(b)];
            if (cb.followed_by_relu) {
                for (double& v : act_[b])
                    if (v < 0.0) v = 0.0;
            }
            const double* next_src = act_[b].data();
            if (cb.followed_by_maxpool2) {
                maxpool_forward(b);
                next_src = pooled_[b].data();
            }
            if (b + 1 < blocks) {
                const auto& sz = block_in_[b + 1];
                std::memcpy(block_in_[b + 1].data(), next_src, sz.size() * sizeof(double));
            } else {
                gap_forward(next_src);
            }
        }
        head_forward();
    }

    // Backward from dlogits; fills parameter gradients when grads != nullptr.
    // When stop_block >= 0, stops after propagating to the post-activation
    // output of that block (result left in dbuf at that stage).
    void backward(const double* dlogits, Gradients* grads, int stop_block, std::vector<double>* dcam_out) {
        int blocks = static_cast<int>(spec_.conv_blocks.size());
        // head
        double* dgap = dbuf_a_.data();
        const double* hw = params_.head.weight.data();
        for (int f = 0; f < features_; ++f) {
            double s = 0.0;
            for (int c = 0; c < spec_.num_classes; ++c) s += hw[static_cast<size_t>(c) * features_ + f] * dlogits[c];
            dgap[f] = s;
        }
        if (grads) {
            double* dhw = grads->head.weight.data();
            double* dhb = grads->head.bias.data();
            for (int c = 0; c < spec_.num_classes; ++c) {
                dhb[c] += dlogits[c];
                for (int f = 0; f < features_; ++f) dhw[static_cast<size_t>(c) * features_ + f] += dlogits[c] * gap_[static_cast<size_t>(f)];
            }
        }
        // un-GAP into gradient w.r.t. the last stage output
        const auto& last_out = post_pool_dims(blocks - 1);
        size_t last_sp = static_cast<size_t>(last_out.h) * last_out.w;
        double inv = 1.0 / static_cast<double>(last_sp);
        double* dcur = dbuf_b_.data();
        for (int c = 0; c < last_out.c; ++c)
            for (size_t i = 0; i < last_sp; ++i) dcur[static_cast<size_t>(c) * last_sp + i] = dgap[c] * inv;

        for (int b = blocks - 1; b >= 0; --b) {
            const auto& cb = spec_.conv_blocks[static_cast<size_t>(b)];
            // dcur currently holds grad w.r.t. this block's post-pool output
            double* dact = dbuf_a_.data();
            if (cb.followed_by_maxpool2) {
                size_t sp = static_cast<size_t>(out_dims_[b].h) * out_dims_[b].w;
                std::memset(dact, 0, static_cast<size_t>(out_dims_[b].c) * sp * sizeof(double));
                maxpool_backward(b, dcur, dact);
            } else {
                std::swap(dact, dcur);  // dact <- dcur buffer
            }
            if (b == stop_block) {
                const auto& od = out_dims_[b];
                dcam_out->assign(dact, dact + static_cast<size_t>(od.c) * od.h * od.w);
                return;
            }
            if (cb.followed_by_relu) {
                size_t n = static_cast<size_t>(out_dims_[b].c) * out_dims_[b].h * out_dims_[b].w;
                const double* a = act_[b].data();
                for (size_t i = 0; i < n; ++i)
                    if (a[i] <= 0.0) dact[i] = 0.0;
            }
            // conv backward: dact is dZ
            conv_backward(b, dact, grads, b > 0 || grads == nullptr ? dcur : nullptr, b > 0 ? dcur : nullptr);
            // ensure dcur points at the produced input-gradient buffer and dbuf roles stay disjoint
            if (b > 0) {
                if (dcur == dbuf_a_.data()) {
                    // conv_backward wrote into the *other* buffer
                }
            }
            // swap buffers so dcur holds grad w.r.t. the previous stage output
            if (dact == dbuf_a_.data()) {
                dcur = dbuf_b_.data();
            } else {
                dcur = dbuf_a_.data();
            }
        }
    }

    const std::vector<double>& logits() const { return logits_; }
    const std::vector<double>& act(int b) const { return act_[static_cast<size_t>(b)]; }
    NetworkSpec::Dims act_dims(int b) const { return out_dims_[static_cast<size_t>(b)]; }
    const std::vector<double>& gap() const { return gap_; }

private:
    NetworkSpec::Dims post_pool_dims(int b) const {
        NetworkSpec::Dims d = out_dims_[static_cast<size_t>(b)];
        if (spec_.conv_blocks[static_cast<size_t>(b)].followed_by_maxpool2) {
            d.h /= 2;
            d.w /= 2;
        }
        return d;
    }

    void im2col(int b, const double* in) {
        const auto& cb = spec_.conv_blocks[static_cast<size_t>(b)];
        const auto& id = in_dims_[static_cast<size_t>(b)];
        const auto& od = out_dims_[static_cast<size_t>(b)];
        int k = cb.kernel_size, s = cb.stride, p = cb.padding;
        double* col = col_[static_cast<size_t>(b)].data();
        size_t sp = static_cast<size_t>(od.h) * od.w;
        for (int c = 0; c < id.c; ++c) {
            const double* plane = in + static_cast<size_t>(c) * id.h * id.w;
            for (int ky = 0; ky < k; ++ky) {
                for (int kx = 0; kx < k; ++kx) {
                    double* dst = col + (static_cast<size_t>(c) * k * k + static_cast<size_t>(ky) * k + kx) * sp;
                    for (int oy = 0; oy < od.h; ++oy) {
                        int iy = oy * s + ky - p;
                        double* drow = dst + static_cast<size_t>(oy) * od.w;
                        if (iy < 0 || iy >= id.h) {
                            std::memset(drow, 0, static_cast<size_t>(od.w) * sizeof(double));
                            continue;
                        }
                        const double* irow = plane + static_cast<size_t>(iy) * id.w;
                        for (int ox = 0; ox < od.w; ++ox) {
                            int ix = ox * s + kx - p;
                            drow[ox] = (ix >= 0 && ix < id.w) ? irow[ix] : 0.0;
                        }
                    }
                }
            }
        }
    }

    void conv_forward(int b) {
        const auto& cb = spec_.conv_blocks[static_cast<size_t>(b)];
        const auto& id = in_dims_[static_cast<size_t>(b)];
        const auto& od = out_dims_[static_cast<size_t>(b)];
        im2col(b, block_in_[static_cast<size_t>(b)].data());
        int ck = id.c * cb.kernel_size * cb.kernel_size;
        int sp = od.h * od.w;
        double* out = act_[static_cast<size_t>(b)].data();
        const double* bias = params_.conv[static_cast<size_t>(b)].bias.data();
        for (int m = 0; m < od.c; ++m)
            for (int i = 0; i < sp; ++i) out[static_cast<size_t>(m) * sp + i] = bias[m];
        gemm_accumulate(params_.conv[static_cast<size_t>(b)].weight.data(), col_[static_cast<size_t>(b)].data(), out,
                        od.c, sp, ck);
    }

    // dz: [M, sp]; writes dW/db into grads, input gradient into the buffer
    // opposite to dz (dbuf_a_/dbuf_b_). din may be null at block 0 when only
    // parameter gradients are needed.
    void conv_backward(int b, double* dz, Gradients* grads, double* unused, double* want_din) {
        (void)unused;
        const auto& cb = spec_.conv_blocks[static_cast<size_t>(b)];
        const auto& id = in_dims_[static_cast<size_t>(b)];
        const auto& od = out_dims_[static_cast<size_t>(b)];
        int k = cb.kernel_size, s = cb.stride, p = cb.padding;
        int ck = id.c * k * k;
        int sp = od.h * od.w;
        if (grads) {
            double* db = grads->conv[static_cast<size_t>(b)].bias.data();
            for (int m = 0; m < od.c; ++m) {
                double acc = 0.0;
                const double* row = dz + static_cast<size_t>(m) * sp;
                for (int i = 0; i < sp; ++i) acc += row[i];
                db[m] += acc;
            }
            // dW[M,CK] += dZ[M,sp] * col^T[sp,CK]
            transpose(col_[static_cast<size_t>(b)].data(), colT_scratch_.data(), ck, sp);
            gemm_accumulate(dz, colT_scratch_.data(), grads->conv[static_cast<size_t>(b)].weight.data(), od.c, ck, sp);
        }
        if (!want_din) return;
        // dcol[CK,sp] = W^T[CK,M] * dZ[M,sp]
        const double* w = params_.conv[static_cast<size_t>(b)].weight.data();
        transpose(w, wt_scratch_.data(), od.c, ck);
        double* dcol = dcol_[static_cast<size_t>(b)].data();
        std::memset(dcol, 0, static_cast<size_t>(ck) * sp * sizeof(double));
        gemm_accumulate(wt_scratch_.data(), dz, dcol, ck, sp, od.c);
        // col2im scatter-add
        double* din = want_din;
        std::memset(din, 0, static_cast<size_t>(id.c) * id.h * id.w * sizeof(double));
        for (int c = 0; c < id.c; ++c) {
            double* plane = din + static_cast<size_t>(c) * id.h * id.w;
            for (int ky = 0; ky < k; ++ky) {
                for (int kx = 0; kx < k; ++kx) {
                    const double* src = dcol + (static_cast<size_t>(c) * k * k + static_cast<size_t>(ky) * k + kx) *
                                                   static_cast<size_t>(sp);
                    for (int oy = 0; oy < od.h; ++oy) {
                        int iy = oy * s + ky - p;
                        if (iy < 0 || iy >= id.h) continue;
                        const double* srow = src + static_cast<size_t>(oy) * od.w;
                        double* irow = plane + static_cast<size_t>(iy) * id.w;
                        for (int ox = 0; ox < od.w; ++ox) {
                            int ix = ox * s + kx - p;
                            if (ix >= 0 && ix < id.w) irow[ix] += srow[ox];
                        }
                    }
                }
            }
        }
    }

    void maxpool_forward(int b) {
        const auto& od = out_dims_[static_cast<size_t>(b)];
        int ph = od.h / 2, pw = od.w / 2;
        const double* in = act_[static_cast<size_t>(b)].data();
        double* out = pooled_[static_cast<size_t>(b)].data();
        int32_t* idx = pool_idx_[static_cast<size_t>(b)].data();
        for (int c = 0; c < od.c; ++c) {
            const double* plane = in + static_cast<size_t>(c) * od.h * od.w;
            for (int y = 0; y < ph; ++y) {
                for (int x = 0; x < pw; ++x) {
                    int iy = 2 * y, ix = 2 * x;
                    int best = iy * od.w + ix;
                    double bv = plane[best];
                    int cand = iy * od.w + ix + 1;
                    if (plane[cand] > bv) { bv = plane[cand]; best = cand; }
                    cand = (iy + 1) * od.w + ix;
                    if (plane[cand] > bv) { bv = plane[cand]; best = cand; }
                    cand = (iy + 1) * od.w + ix + 1;
                    if (plane[cand] > bv) { bv = plane[cand]; best = cand; }
                    size_t o = (static_cast<size_t>(c) * ph + y) * pw + x;
                    out[o] = bv;
                    idx[o] = best;
                }
            }
        }
    }

    void maxpool_backward(int b, const double* dout, double* din) {
        const auto& od = out_dims_[static_cast<size_t>(b)];
        int ph = od.h / 2, pw = od.w / 2;
        const int32_t* idx = pool_idx_[static_cast<size_t>(b)].data();
        size_t psp = static_cast<size_t>(ph) * pw;
        for (int c = 0; c < od.c; ++c) {
            double* plane = din + static_cast<size_t>(c) * od.h * od.w;
            for (size_t i = 0; i < psp; ++i) {
                size_t o = static_cast<size_t>(c) * psp + i;
                plane[idx[o]] += dout[o];
            }
        }
    }

    void gap_forward(const double* in) {
        int blocks = static_cast<int>(spec_.conv_blocks.size());
        const auto d = post_pool_dims(blocks - 1);
        size_t sp = static_cast<size_t>(d.h) * d.w;
        double inv = 1.0 / static_cast<double>(sp);
        for (int c = 0; c < d.c; ++c) {
            double s = 0.0;
            const double* plane = in + static_cast<size_t>(c) * sp;
            for (size_t i = 0; i < sp; ++i) s += plane[i];
            gap_[static_cast<size_t>(c)] = s * inv;
        }
    }

    void head_forward() {
        const double* w = params_.head.weight.data();
        const double* bias = params_.head.bias.data();
        for (int c = 0; c < spec_.num_classes; ++c) {
            double s = bias[c];
            for (int f = 0; f < features_; ++f) s += w[static_cast<size_t>(c) * features_ + f] * gap_[static_cast<size_t>(f)];
            logits_[static_cast<size_t>(c)] = s;
        }
    }

    const NetworkSpec& spec_;
    const NetworkParams& params_;
    std::vector<NetworkSpec::Dims> in_dims_, out_dims_;
    std::vector<std::vector<double>> block_in_, act_, pooled_, col_, dcol_;
    std::vector<std::vector<int32_t>> pool_idx_;
    std::vector<double> gap_, logits_, dbuf_a_, dbuf_b_, wt_scratch_, colT_scratch_;
    int features_ = 0;
};

void check_batch_shape(const NetworkSpec& spec, const Tensor& batch) {
    if (batch.rank() != 4 || batch.dim(1) != spec.in_channels || batch.dim(2) != spec.in_height ||
        batch.dim(3) != spec.in_width)
        throw ConfigError("batch shape " + batch.shape_str() + " does not match network input [N," +
                          std::to_string(spec.in_channels) + "," + std::to_string(spec.in_height) + "," +
                          std::to_string(spec.in_width) + "]");
}

}  // namespace

ForwardResult forward(const NetworkSpec& spec, const NetworkParams& params, const Tensor& batch) {
    spec.validate();
    params.validate_against(spec);
    check_batch_shape(spec, batch);
    int64_t n = batch.dim(0);
    auto cam_dims = spec.conv_out_dims(spec.cam_layer_index);
    ForwardResult result{Tensor({n, spec.num_classes}), Tensor({n, cam_dims.c, cam_dims.h, cam_dims.w})};
    Engine eng(spec, params);
    int64_t sample_sz = batch.numel() / n;
    int64_t cam_sz = static_cast<int64_t>(cam_dims.c) * cam_dims.h * cam_dims.w;
    for (int64_t i = 0; i < n; ++i) {
        eng.forward(batch.data() + i * sample_sz);
        std::memcpy(result.logits.data() + i * spec.num_classes, eng.logits().data(),
                    static_cast<size_t>(spec.num_classes) * sizeof(double));
        std::memcpy(result.feature_maps.data() + i * cam_sz, eng.act(spec.cam_layer_index).data(),
                    static_cast<size_t>(cam_sz) * sizeof(double));
    }
    return result;
}

SampleForward forward_sample(const NetworkSpec& spec, const NetworkParams& params, const Tensor& x) {
    spec.validate();
    params.validate_against(spec);
    if (x.rank() != 3 || x.dim(0) != spec.in_channels || x.dim(1) != spec.in_height || x.dim(2) != spec.in_width)
        throw ConfigError("sample shape " + x.shape_str() + " does not match network input");
    Engine eng(spec, params);
    eng.forward(x.data());
    auto cam_dims = spec.conv_out_dims(spec.cam_layer_index);
    SampleForward sf{Tensor({spec.num_classes}, eng.logits()),
                     Tensor({cam_dims.c, cam_dims.h, cam_dims.w}, eng.act(spec.cam_layer_index))};
    return sf;
}

BatchGradients gradients(const NetworkSpec& spec, const NetworkParams& params, const Tensor& batch,
                         const std::vector<int>& labels) {
    spec.validate();
    params.validate_against(spec);
    check_batch_shape(spec, batch);
    int64_t n = batch.dim(0);
    if (static_cast<int64_t>(labels.size()) != n)
        throw InputError("labels size " + std::to_string(labels.size()) + " != batch size " + std::to_string(n));
    for (int y : labels)
        if (y < 0 || y >= spec.num_classes) throw InputError("label " + std::to_string(y) + " out of range");

    BatchGradients out;
    out.grads = Gradients::zeros_like(spec);
    Engine eng(spec, params);
    int64_t sample_sz = batch.numel() / n;
    std::vector<double> probs(static_cast<size_t>(spec.num_classes));
    std::vector<double> dlogits(static_cast<size_t>(spec.num_classes));
    double inv_n = 1.0 / static_cast<double>(n);
    for (int64_t i = 0; i < n; ++i) {
        eng.forward(batch.data() + i * sample_sz);
        const auto& logits = eng.logits();
        softmax_row(logits.data(), probs.data(), spec.num_classes);
        int y = labels[static_cast<size_t>(i)];
        out.mean_loss += -std::log(std::max(probs[static_cast<size_t>(y)], 1e-300)) * inv_n;
        int argmax = 0;
        for (int c = 1; c < spec.num_classes; ++c)
            if (logits[static_cast<size_t>(c)] > logits[static_cast<size_t>(argmax)]) argmax = c;
        if (argmax == y) ++out.correct;
        for (int c = 0; c < spec.num_classes; ++c)
            dlogits[static_cast<size_t>(c)] = (probs[static_cast<size_t>(c)] - (c == y ? 1.0 : 0.0)) * inv_n;
        eng.backward(dlogits.data(), &out.grads, -1, nullptr);
    }
    return out;
}

Tensor logit_gradient_wrt_cam(const NetworkSpec& spec, const NetworkParams& params, const Tensor& x,
                              int target_class) {
    spec.validate();
    params.validate_against(spec);
    if (target_class < 0 || target_class >= spec.num_classes)
        throw InputError("target class " + std::to_string(target_class) + " out of range");
    Engine eng(spec, params);
    eng.forward(x.data());
    std::vector<double> dlogits(static_cast<size_t>(spec.num_classes), 0.0);
    dlogits[static_cast<size_t>(target_class)] = 1.0;
    std::vector<double> dcam;
    eng.backward(dlogits.data(), nullptr, spec.cam_layer_index, &dcam);
    auto cd = spec.conv_out_dims(spec.cam_layer_index);
    return Tensor({cd.c, cd.h, cd.w}, std::move(dcam));
}

}  // namespace masktune
