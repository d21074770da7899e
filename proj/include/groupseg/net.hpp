// Copyright (c) 2026 groupseg contributors
// SPDX-License-Identifier: Apache-2.0
//
// A small U-Net-style encoder–decoder over a single depth channel, with a
// swappable final layer: N channels for the flat baseline or
// activation_count(schema) channels for the grouped head. Hand-rolled
// forward/backward (im2col convolutions, instance norm, ReLU, 2x2 max
// pool, nearest-neighbor upsampling, skip concatenation), Adam with
// decoupled weight decay, and a deterministic training loop: fixed
// (seed, config, data) reproduces parameters bit for bit at any thread
// count.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "groupseg/dataset.hpp"
#include "groupseg/sample.hpp"
#include "groupseg/schema.hpp"
#include "groupseg/tensor.hpp"

namespace groupseg {

enum class HeadMode { Flat, Grouped };

struct ModelConfig {
    int in_channels = 1;
    int width = 16;  // channels at full resolution; doubles per level
    int levels = 3;  // encoder stages; inputs must be divisible by 2^levels
    HeadMode head = HeadMode::Grouped;
};

int head_channels_for(HeadMode mode, const GroupSchema& schema);

template <typename T>
struct ConvParam {
    std::string name;
    int in = 0, out = 0, k = 3;
    std::vector<T> w;  // out x in x k x k
    std::vector<T> b;  // out
};

template <typename T>
struct Model {
    ModelConfig config;
    int head_channels = 0;
    std::uint64_t schema_fingerprint = 0;
    // Fixed order: enc{l}a, enc{l}b for l = 0..levels-1, then
    // up{l}, dec{l}a, dec{l}b for l = levels-2..0, then head.
    std::vector<ConvParam<T>> convs;
};

// Fan-in-scaled uniform kernels (limit sqrt(3/fan_in)), zero biases, and a
// zero head layer so the untrained network predicts exactly uniform
// blocks. The head consumes no random draws, so flat and grouped models
// built from one seed share identical trunk parameters.
template <typename T>
Model<T> build_model(const ModelConfig& config, const GroupSchema& schema, std::uint64_t seed);

template <typename T>
std::size_t parameter_count(const Model<T>& model);

// FNV-1a over all parameter bytes in block order.
template <typename T>
std::uint64_t params_fingerprint(const Model<T>& model);

template <typename T>
struct GradSet {
    struct Entry {
        std::vector<T> w, b;
    };
    std::vector<Entry> convs;

    void add(const GradSet& other);
    void scale(T s);
    bool finite() const;
};

template <typename T>
GradSet<T> zero_grads(const Model<T>& model);

// Activation caches from one forward pass, consumed by backward.
template <typename T>
struct BlockCache {
    Tensor<T> conv_in;
    std::vector<T> inv_std;  // per channel
    Tensor<T> normalized;    // pre-ReLU, post-norm
};

struct PoolCache {
    int c = 0, oh = 0, ow = 0;
    std::vector<std::uint8_t> argmax;  // 2-bit position code per output pixel
};

template <typename T>
struct Workspace {
    bool ready = false;
    std::vector<BlockCache<T>> enc;   // 2 per level
    std::vector<PoolCache> pools;     // levels-1
    std::vector<BlockCache<T>> up;    // levels-1 (deepest first)
    std::vector<BlockCache<T>> deca;  // levels-1
    std::vector<BlockCache<T>> decb;  // levels-1
    Tensor<T> head_in;
    std::vector<int> skip_channels;  // per decoder stage, for the concat split
};

// Pure function of (parameters, input); pass a workspace to enable
// backward. Throws std::invalid_argument on channel/divisibility
// mismatches.
template <typename T>
Tensor<T> forward(const Model<T>& model, const Tensor<T>& input, Workspace<T>* ws = nullptr);

// Accumulates parameter gradients (caller zeroes) and returns nothing;
// throws std::logic_error when the workspace is missing or stale.
template <typename T>
void backward(const Model<T>& model, const Workspace<T>& ws, const Tensor<T>& grad_logits,
              GradSet<T>& grads);

struct TrainConfig {
    int epochs = 30;
    int batch = 8;
    double lr = 1e-3;
    double lr_decay = 0.1;
    int lr_step_epochs = 10;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double weight_decay = 1e-5;  // decoupled (applied outside the moments)
    double lambda = 0.1;         // grouped-loss occlusion/void weight
    std::uint64_t seed = 0;
    int threads = 1;
    // Full-scale reference values: batch 25, 100 epochs; the desk defaults
    // above keep CPU runs in the minutes.
};

double lr_at_epoch(const TrainConfig& config, int epoch);

template <typename T>
struct AdamState {
    struct Entry {
        std::vector<T> mw, vw, mb, vb;
    };
    std::vector<Entry> convs;
    std::uint64_t step = 0;
};

template <typename T>
AdamState<T> zero_adam(const Model<T>& model);

// One AdamW-style update on a flat array; step is 1-based for bias
// correction.
template <typename T>
void adam_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v,
                 std::uint64_t step, T lr, T beta1, T beta2, T eps, T weight_decay);

// Applies one optimizer step over every block; throws DivergenceError on
// non-finite gradients.
template <typename T>
void adam_step(Model<T>& model, const GradSet<T>& grads, AdamState<T>& state,
               const TrainConfig& config, int epoch);

struct EpochRecord {
    int epoch = 0;
    double lr = 0;
    double train_loss = 0;
    double val_pa_vis = 0;
};

struct TrainResult {
    Model<float> model;
    std::vector<EpochRecord> history;
};

// Full training run. Writes checkpoint.gssm (atomically, after every
// epoch) and history.jsonl under out_dir; with resume=true continues from
// an existing checkpoint, preserving the optimizer state and learning-rate
// schedule. Throws DivergenceError on a non-finite loss or gradient,
// leaving the last completed epoch's checkpoint on disk.
TrainResult train(const Dataset& dataset, const ModelConfig& model_config,
                  const TrainConfig& train_config, const std::string& out_dir,
                  bool resume = false);

// depth / depth_scale as the single input channel.
template <typename T>
Tensor<T> input_from_sample(const Sample& sample, float depth_scale);

// Logits for one sample; pair with flat_softmax or grouped_softmax.
template <typename T>
Tensor<T> infer(const Model<T>& model, const Sample& sample, float depth_scale);

// Checkpoint file: magic GSSM, fixed-width header, parameter blocks and
// Adam moments as f32 LE. Loading validates the structure against the
// stored config and rejects mismatches with FormatError.
struct Checkpoint {
    Model<float> model;
    AdamState<float> adam;
    int epochs_completed = 0;
};

void save_checkpoint(const std::string& path, const Model<float>& model,
                     const AdamState<float>& adam, int epochs_completed);
Checkpoint load_checkpoint(const std::string& path);

extern template Model<float> build_model(const ModelConfig&, const GroupSchema&, std::uint64_t);
extern template Model<double> build_model(const ModelConfig&, const GroupSchema&, std::uint64_t);
extern template std::size_t parameter_count(const Model<float>&);
extern template std::size_t parameter_count(const Model<double>&);
extern template std::uint64_t params_fingerprint(const Model<float>&);
extern template std::uint64_t params_fingerprint(const Model<double>&);
extern template GradSet<float> zero_grads(const Model<float>&);
extern template GradSet<double> zero_grads(const Model<double>&);
extern template Tensor<float> forward(const Model<float>&, const Tensor<float>&, Workspace<float>*);
extern template Tensor<double> forward(const Model<double>&, const Tensor<double>&,
                                       Workspace<double>*);
extern template void backward(const Model<float>&, const Workspace<float>&, const Tensor<float>&,
                              GradSet<float>&);
extern template void backward(const Model<double>&, const Workspace<double>&,
                              const Tensor<double>&, GradSet<double>&);
extern template AdamState<float> zero_adam(const Model<float>&);
extern template AdamState<double> zero_adam(const Model<double>&);
extern template void adam_update(std::span<float>, std::span<const float>, std::span<float>,
                                 std::span<float>, std::uint64_t, float, float, float, float,
                                 float);
extern template void adam_update(std::span<double>, std::span<const double>, std::span<double>,
                                 std::span<double>, std::uint64_t, double, double, double, double,
                                 double);
extern template void adam_step(Model<float>&, const GradSet<float>&, AdamState<float>&,
                               const TrainConfig&, int);
extern template void adam_step(Model<double>&, const GradSet<double>&, AdamState<double>&,
                               const TrainConfig&, int);
extern template Tensor<float> input_from_sample(const Sample&, float);
extern template Tensor<double> input_from_sample(const Sample&, float);
extern template Tensor<float> infer(const Model<float>&, const Sample&, float);
extern template Tensor<double> infer(const Model<double>&, const Sample&, float);

}  // namespace groupseg
