#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "ivoa/image.hpp"
#include "ivoa/labelgen.hpp"
#include "ivoa/rng.hpp"

namespace ivoa::introspection {

using labelgen::OutcomeClass;

struct ConvLayerSpec {
  int channels = 8;
  int kernel = 5;
  int stride = 1;
  int pool = 2;  // 1 = no pooling
};

// Patch classifier: conv stack, then fully connected layers ending in the
// 4-class softmax. Dropout sits before the first two fc layers (inverted
// scaling, so p_drop = 0 is exactly the deterministic network).
struct NetworkSpec {
  int input_size = 100;
  std::vector<ConvLayerSpec> conv;
  std::vector<int> fc;  // last entry must be 4
  double p_drop = 0.5;

  void validate() const;

  struct ConvDims {
    int in_size = 0, in_ch = 0;
    int conv_size = 0;  // after the valid convolution
    int out_size = 0;   // after pooling
    int out_ch = 0;
  };
  std::vector<ConvDims> conv_dims() const;
  int flattened_size() const;

  // 3 conv blocks (8/16/32, kernel 5, 2x2 max pool), fc 128-64-4
  static NetworkSpec reduced_default();
  // deeper variant with a 256-wide second fc layer
  static NetworkSpec wide_fc256();
};

template <typename Scalar>
struct DropoutMasks {
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  Vec before_fc0;  // over the flattened conv output
  Vec before_fc1;  // over the first fc activation
  bool active = false;
};

template <typename Scalar>
class Network {
 public:
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Network(NetworkSpec spec, std::uint64_t init_seed);

  const NetworkSpec& spec() const { return spec_; }
  std::uint64_t init_seed() const { return init_seed_; }

  std::size_t param_count() const;
  void copy_params(std::vector<Scalar>& out) const;
  void set_params(std::span<const Scalar> in);

  // deterministic forward, dropout off
  std::array<double, 4> forward(std::span<const Scalar> input01) const;

  // forward with the given dropout masks; trace receives per-fc-layer
  // post-activation outputs when non-null
  std::array<double, 4> forward_masked(std::span<const Scalar> input01,
                                       const DropoutMasks<Scalar>& masks,
                                       std::vector<Vec>* fc_trace = nullptr) const;

  DropoutMasks<Scalar> make_masks(Rng& rng) const;

  // weights storage, exposed for the trainer
  std::vector<Mat> conv_w;  // (out_ch) x (in_ch * k * k)
  std::vector<Vec> conv_b;
  std::vector<Mat> fc_w;
  std::vector<Vec> fc_b;

 private:
  NetworkSpec spec_;
  std::uint64_t init_seed_ = 0;
};

using NetworkF = Network<float>;
using NetworkD = Network<double>;

// --- training ---

struct TrainSet {
  int input_size = 100;
  std::vector<std::uint8_t> pixels;  // size() * input_size^2, row-major
  std::vector<OutcomeClass> labels;

  std::size_t size() const { return labels.size(); }
  std::span<const std::uint8_t> patch(std::size_t i) const {
    const std::size_t n = static_cast<std::size_t>(input_size) * input_size;
    return {pixels.data() + i * n, n};
  }
  void push(const Image& patch, OutcomeClass label);
};

struct TrainParams {
  double lr = 0.01;
  int epochs = 3;
  int batch = 32;
  std::uint64_t seed = 1;
  double momentum = 0.9;
  double lr_decay = 1.0;  // per-epoch multiplier
  // inverse-frequency weights (clamped to [1,100]) when unset
  std::optional<std::array<double, 4>> class_weights;
};

struct TrainLog {
  std::vector<double> epoch_loss;  // mean weighted cross-entropy
  std::array<double, 4> class_weights_used{1, 1, 1, 1};
};

std::array<double, 4> inverse_frequency_weights(const std::array<int, 4>& counts);

// Mini-batch SGD with momentum on the weighted cross-entropy, dropout
// active. Deterministic given params.seed: sample shuffling, per-sample
// dropout masks and the gradient reduction order are all fixed, so the
// thread count never changes the result.
template <typename Scalar>
TrainLog train(Network<Scalar>& net, const TrainSet& data, const TrainParams& params,
               int jobs = 1);

// loss (mean weighted CE) and the full analytic gradient on a fixed batch
// with fixed masks; the finite-difference harness calls loss_on_batch with
// perturbed parameters and the same masks.
template <typename Scalar>
struct BatchRef {
  const TrainSet* data = nullptr;
  std::span<const std::size_t> indices;
  const std::vector<DropoutMasks<Scalar>>* masks = nullptr;  // one per index
  std::array<double, 4> class_weights{1, 1, 1, 1};
};

template <typename Scalar>
double loss_on_batch(const Network<Scalar>& net, const BatchRef<Scalar>& batch);

template <typename Scalar>
std::vector<Scalar> grad_on_batch(const Network<Scalar>& net,
                                  const BatchRef<Scalar>& batch);

// --- persistence: JSON header + little-endian float32 blob ---

void save_network(const NetworkF& net, const std::filesystem::path& path);
void save_network(const NetworkD& net, const std::filesystem::path& path);

template <typename Scalar>
Network<Scalar> load_network(const std::filesystem::path& path);

// helpers
template <typename Scalar>
std::vector<Scalar> image_to_input(const Image& img);
template <typename Scalar>
std::vector<Scalar> patch_to_input(std::span<const std::uint8_t> patch);

}  // namespace ivoa::introspection
