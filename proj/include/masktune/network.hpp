#pragma once

#include <cstdint>
#include <vector>

#include "masktune/tensor.hpp"

namespace masktune {

struct ConvBlockSpec {
    int out_channels = 0;
    int kernel_size = 3;
    int stride = 1;
    int padding = 1;
    bool followed_by_relu = true;
    bool followed_by_maxpool2 = false;
};

// Conv stack + global average pool + linear head. cam_layer_index names the
// conv block whose post-activation output is tapped for saliency.
struct NetworkSpec {
    int in_channels = 3;
    int in_height = 28;
    int in_width = 28;
    int num_classes = 2;
    std::vector<ConvBlockSpec> conv_blocks;
    int cam_layer_index = -1;

    // Four blocks (16, 32, 64, 128), 3x3 stride 1 pad 1, ReLU everywhere,
    // 2x2 max-pool after the first three blocks, cam tap on the last block.
    static NetworkSpec mnist_default(int num_classes = 2, int in_channels = 3);

    void validate() const;

    struct Dims {
        int c = 0, h = 0, w = 0;
    };
    // Spatial dims of each block's conv output (pre-pool).
    Dims conv_out_dims(int block) const;
    // Dims entering each block (output of the previous block's pool).
    Dims block_in_dims(int block) const;
    // Channels entering the head after global average pooling.
    int feature_count() const;
};

struct LayerParams {
    Tensor weight;
    Tensor bias;
};

struct NetworkParams {
    std::vector<LayerParams> conv;  // weight [outC,inC,k,k], bias [outC]
    LayerParams head;               // weight [classes,features], bias [classes]
    std::vector<LayerParams> conv_momentum;
    LayerParams head_momentum;

    // Uniform +-sqrt(6/(fan_in+fan_out)) weights, zero biases and momentum.
    static NetworkParams init(const NetworkSpec& spec, uint64_t seed);
    void validate_against(const NetworkSpec& spec) const;
    int64_t parameter_count() const;
};

struct Gradients {
    std::vector<LayerParams> conv;
    LayerParams head;

    static Gradients zeros_like(const NetworkSpec& spec);
    void scale(double factor);
    void add(const Gradients& other);
};

struct ForwardResult {
    Tensor logits;        // [N, classes]
    Tensor feature_maps;  // [N, K, H', W'] post-activation output of the cam block
};

ForwardResult forward(const NetworkSpec& spec, const NetworkParams& params, const Tensor& batch);

struct BatchGradients {
    Gradients grads;
    double mean_loss = 0.0;
    int64_t correct = 0;
};

// Mean cross-entropy gradients over the batch.
BatchGradients gradients(const NetworkSpec& spec, const NetworkParams& params, const Tensor& batch,
                         const std::vector<int>& labels);

// d(logit[target_class]) / d(cam feature maps) for a single sample [C,H,W].
Tensor logit_gradient_wrt_cam(const NetworkSpec& spec, const NetworkParams& params, const Tensor& x,
                              int target_class);

// Single-sample forward returning logits [classes] and cam tap [K,H',W'].
struct SampleForward {
    Tensor logits;
    Tensor feature_maps;
};
SampleForward forward_sample(const NetworkSpec& spec, const NetworkParams& params, const Tensor& x);

}  // namespace masktune
