#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <string>

#include "fracgan/common/archive.hpp"
#include "fracgan/common/image.hpp"
#include "fracgan/dataset/dataset.hpp"

namespace fracgan::nn {

/// Single-threaded intra-op execution; with it every training and inference
/// path in the library is bit-reproducible for a given seed.
void set_deterministic(int threads = 1);

/// [N, 1, R, R] float tensor with intensities mapped from [0,1] to [-1,1].
torch::Tensor images_to_tensor(const dataset::LabeledDataset& ds);
torch::Tensor image_to_tensor(const Image& img);
/// Inverse mapping for one [1, R, R] or [R, R] tensor; clamps to [0,1].
Image tensor_to_image(const torch::Tensor& t);

/// int64 [N] tensor of 0/1 labels.
torch::Tensor labels_to_tensor(const dataset::LabeledDataset& ds);

/// Kaiming-normal weights (fan-in, leaky-relu slope `slope`) and zero
/// biases for every conv/linear layer, drawn from a private generator.
void kaiming_init(torch::nn::Module& module, uint64_t seed, double slope = 0.2);

/// Copy parameters and buffers into `archive` as `<prefix>.<name>` blobs.
void export_module(const torch::nn::Module& module, const std::string& prefix, Archive& archive);
/// Shape-checked inverse of export_module.
void import_module(torch::nn::Module& module, const std::string& prefix, const Archive& archive);

/// Deep copy of parameter and buffer values between identically shaped modules.
void copy_state(const torch::nn::Module& from, torch::nn::Module& to);

torch::Generator make_generator(uint64_t seed);

}  // namespace fracgan::nn
