#include "ivoa/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <stdexcept>

#include "ivoa/common.hpp"
#include "ivoa/parallel.hpp"

namespace ivoa::introspection {

using json = nlohmann::json;

void NetworkSpec::validate() const {
  if (input_size < 1) throw std::invalid_argument("input size must be positive");
  if (fc.size() < 2)
    throw std::invalid_argument("need at least two fc layers (two dropout positions)");
  if (fc.back() != 4) throw std::invalid_argument("final fc width must be 4");
  for (const int w : fc)
    if (w < 1) throw std::invalid_argument("fc widths must be >= 1");
  if (p_drop < 0.0 || p_drop >= 1.0)
    throw std::invalid_argument("dropout probability must be in [0, 1)");
  for (const auto& c : conv) {
    if (c.channels < 1 || c.kernel < 1 || c.stride < 1 || c.pool < 1)
      throw std::invalid_argument("conv layer parameters must be positive");
  }
  conv_dims();  // throws when a layer underflows
}

std::vector<NetworkSpec::ConvDims> NetworkSpec::conv_dims() const {
  std::vector<ConvDims> dims;
  int size = input_size;
  int ch = 1;
  for (const auto& c : conv) {
    ConvDims d;
    d.in_size = size;
    d.in_ch = ch;
    if (size < c.kernel)
      throw std::invalid_argument("conv kernel larger than its input");
    d.conv_size = (size - c.kernel) / c.stride + 1;
    d.out_size = d.conv_size / c.pool;
    if (d.out_size < 1) throw std::invalid_argument("pooling exhausts the feature map");
    d.out_ch = c.channels;
    dims.push_back(d);
    size = d.out_size;
    ch = d.out_ch;
  }
  return dims;
}

int NetworkSpec::flattened_size() const {
  if (conv.empty()) return input_size * input_size;
  const auto dims = conv_dims();
  const auto& last = dims.back();
  return last.out_ch * last.out_size * last.out_size;
}

NetworkSpec NetworkSpec::reduced_default() {
  NetworkSpec s;
  s.input_size = 100;
  s.conv = {{8, 5, 1, 2}, {16, 5, 1, 2}, {32, 5, 1, 2}};
  s.fc = {128, 64, 4};
  s.p_drop = 0.5;
  return s;
}

NetworkSpec NetworkSpec::wide_fc256() {
  NetworkSpec s;
  s.input_size = 100;
  s.conv = {{8, 5, 1, 2}, {16, 5, 1, 2}, {32, 5, 1, 2}};
  s.fc = {1024, 256, 4};
  s.p_drop = 0.5;
  return s;
}

namespace {

template <typename Scalar>
void he_uniform_init(Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& w,
                     int fan_in, Rng& rng) {
  const double limit = std::sqrt(6.0 / fan_in);
  for (Eigen::Index j = 0; j < w.cols(); ++j)
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      w(i, j) = static_cast<Scalar>(rng.uniform(-limit, limit));
}

}  // namespace

template <typename Scalar>
Network<Scalar>::Network(NetworkSpec spec, std::uint64_t init_seed)
    : spec_(std::move(spec)), init_seed_(init_seed) {
  spec_.validate();
  Rng rng(derive_seed(init_seed, 0x1417, 0));
  const auto dims = spec_.conv_dims();
  for (std::size_t i = 0; i < dims.size(); ++i) {
    const int fan_in = dims[i].in_ch * spec_.conv[i].kernel * spec_.conv[i].kernel;
    Mat w(dims[i].out_ch, fan_in);
    he_uniform_init(w, fan_in, rng);
    conv_w.push_back(std::move(w));
    conv_b.push_back(Vec::Zero(dims[i].out_ch));
  }
  int in = spec_.flattened_size();
  for (const int width : spec_.fc) {
    Mat w(width, in);
    he_uniform_init(w, in, rng);
    fc_w.push_back(std::move(w));
    fc_b.push_back(Vec::Zero(width));
    in = width;
  }
}

template <typename Scalar>
std::size_t Network<Scalar>::param_count() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < conv_w.size(); ++i)
    n += conv_w[i].size() + conv_b[i].size();
  for (std::size_t i = 0; i < fc_w.size(); ++i)
    n += fc_w[i].size() + fc_b[i].size();
  return n;
}

template <typename Scalar>
void Network<Scalar>::copy_params(std::vector<Scalar>& out) const {
  out.clear();
  out.reserve(param_count());
  auto append_mat = [&](const Mat& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) out.push_back(m(i, j));
  };
  auto append_vec = [&](const Vec& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  };
  for (std::size_t i = 0; i < conv_w.size(); ++i) {
    append_mat(conv_w[i]);
    append_vec(conv_b[i]);
  }
  for (std::size_t i = 0; i < fc_w.size(); ++i) {
    append_mat(fc_w[i]);
    append_vec(fc_b[i]);
  }
}

template <typename Scalar>
void Network<Scalar>::set_params(std::span<const Scalar> in) {
  if (in.size() != param_count()) throw std::invalid_argument("parameter size mismatch");
  std::size_t pos = 0;
  auto read_mat = [&](Mat& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = in[pos++];
  };
  auto read_vec = [&](Vec& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = in[pos++];
  };
  for (std::size_t i = 0; i < conv_w.size(); ++i) {
    read_mat(conv_w[i]);
    read_vec(conv_b[i]);
  }
  for (std::size_t i = 0; i < fc_w.size(); ++i) {
    read_mat(fc_w[i]);
    read_vec(fc_b[i]);
  }
}

template <typename Scalar>
DropoutMasks<Scalar> Network<Scalar>::make_masks(Rng& rng) const {
  DropoutMasks<Scalar> m;
  const double p = spec_.p_drop;
  if (p <= 0.0) {
    m.active = false;
    return m;
  }
  const Scalar keep_scale = static_cast<Scalar>(1.0 / (1.0 - p));
  auto fill = [&](typename DropoutMasks<Scalar>::Vec& v, int n) {
    v.resize(n);
    for (int i = 0; i < n; ++i)
      v(i) = rng.uniform() < p ? Scalar(0) : keep_scale;
  };
  fill(m.before_fc0, spec_.flattened_size());
  fill(m.before_fc1, spec_.fc[0]);
  m.active = true;
  return m;
}

// ---------------------------------------------------------------- forward --

namespace {

// workspace for one sample's forward/backward pass
template <typename Scalar>
struct Workspace {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  // conv stage
  std::vector<Vec> conv_in;          // flattened channel-major inputs
  std::vector<Mat> cols;             // im2col matrices
  std::vector<Mat> z;                // pre-activation (out_ch x T^2)
  std::vector<Mat> pooled;           // post relu+pool (out_ch x P^2)
  std::vector<std::vector<int>> pool_arg;  // argmax index into T^2, per (ch, cell)

  // fc stage
  std::vector<Vec> fc_in;  // input to each fc layer (post dropout)
  std::vector<Vec> fc_z;   // pre-activation
  std::vector<Vec> fc_a;   // post relu (last layer: softmax probs)
};

template <typename Scalar>
void im2col(const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& in, int in_ch, int in_size,
            int kernel, int stride, int out_size,
            Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& col) {
  col.resize(in_ch * kernel * kernel, out_size * out_size);
  for (int c = 0; c < in_ch; ++c) {
    const Scalar* plane = in.data() + static_cast<std::size_t>(c) * in_size * in_size;
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        const int row = (c * kernel + ky) * kernel + kx;
        for (int oy = 0; oy < out_size; ++oy) {
          const Scalar* src = plane + (oy * stride + ky) * in_size + kx;
          Scalar* dst = col.data() + static_cast<std::size_t>(oy * out_size) * col.rows() + row;
          for (int ox = 0; ox < out_size; ++ox)
            dst[static_cast<std::size_t>(ox) * col.rows()] = src[ox * stride];
        }
      }
    }
  }
}

template <typename Scalar>
void col2im_add(const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& dcol,
                int in_ch, int in_size, int kernel, int stride, int out_size,
                Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& din) {
  din.setZero(static_cast<Eigen::Index>(in_ch) * in_size * in_size);
  for (int c = 0; c < in_ch; ++c) {
    Scalar* plane = din.data() + static_cast<std::size_t>(c) * in_size * in_size;
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        const int row = (c * kernel + ky) * kernel + kx;
        for (int oy = 0; oy < out_size; ++oy) {
          Scalar* dst = plane + (oy * stride + ky) * in_size + kx;
          const Scalar* src =
              dcol.data() + static_cast<std::size_t>(oy * out_size) * dcol.rows() + row;
          for (int ox = 0; ox < out_size; ++ox)
            dst[ox * stride] += src[static_cast<std::size_t>(ox) * dcol.rows()];
        }
      }
    }
  }
}

template <typename Scalar>
void softmax_inplace(Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& z) {
  const Scalar m = z.maxCoeff();
  z = (z.array() - m).exp();
  const Scalar sum = z.sum();
  z /= sum;
}

// Runs the full forward pass into the workspace. Returns the class
// probabilities (last fc_a).
template <typename Scalar>
const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& forward_impl(
    const Network<Scalar>& net, std::span<const Scalar> input,
    const DropoutMasks<Scalar>* masks, Workspace<Scalar>& ws) {
  using Vec = typename Network<Scalar>::Vec;
  const auto& spec = net.spec();
  const auto dims = spec.conv_dims();
  const std::size_t n_conv = dims.size();

  ws.conv_in.resize(n_conv + 1);
  ws.cols.resize(n_conv);
  ws.z.resize(n_conv);
  ws.pooled.resize(n_conv);
  ws.pool_arg.resize(n_conv);

  ws.conv_in[0] = Eigen::Map<const Vec>(input.data(), static_cast<Eigen::Index>(input.size()));
  for (std::size_t l = 0; l < n_conv; ++l) {
    const auto& d = dims[l];
    const auto& cl = spec.conv[l];
    im2col<Scalar>(ws.conv_in[l], d.in_ch, d.in_size, cl.kernel, cl.stride, d.conv_size,
                   ws.cols[l]);
    ws.z[l].noalias() = net.conv_w[l] * ws.cols[l];
    ws.z[l].colwise() += net.conv_b[l];

    // relu + max pool
    const int T = d.conv_size, P = d.out_size, pool = cl.pool;
    ws.pooled[l].resize(d.out_ch, P * P);
    ws.pool_arg[l].assign(static_cast<std::size_t>(d.out_ch) * P * P, 0);
    for (int ch = 0; ch < d.out_ch; ++ch) {
      for (int py = 0; py < P; ++py) {
        for (int px = 0; px < P; ++px) {
          Scalar best = std::numeric_limits<Scalar>::lowest();
          int best_idx = 0;
          for (int dy = 0; dy < pool; ++dy) {
            for (int dx = 0; dx < pool; ++dx) {
              const int idx = (py * pool + dy) * T + (px * pool + dx);
              const Scalar v = ws.z[l](ch, idx);
              if (v > best) {
                best = v;
                best_idx = idx;
              }
            }
          }
          const int cell = py * P + px;
          ws.pooled[l](ch, cell) = best > Scalar(0) ? best : Scalar(0);
          ws.pool_arg[l][static_cast<std::size_t>(ch) * P * P + cell] = best_idx;
        }
      }
    }
    // flatten channel-major for the next layer
    auto& next = ws.conv_in[l + 1];
    next.resize(static_cast<Eigen::Index>(d.out_ch) * P * P);
    for (int ch = 0; ch < d.out_ch; ++ch)
      for (int i = 0; i < P * P; ++i)
        next(static_cast<Eigen::Index>(ch) * P * P + i) = ws.pooled[l](ch, i);
  }

  const std::size_t n_fc = spec.fc.size();
  ws.fc_in.resize(n_fc);
  ws.fc_z.resize(n_fc);
  ws.fc_a.resize(n_fc);
  Vec x = ws.conv_in[n_conv];
  for (std::size_t l = 0; l < n_fc; ++l) {
    if (masks && masks->active) {
      if (l == 0) x = x.cwiseProduct(masks->before_fc0);
      if (l == 1) x = x.cwiseProduct(masks->before_fc1);
    }
    ws.fc_in[l] = x;
    ws.fc_z[l].noalias() = net.fc_w[l] * x;
    ws.fc_z[l] += net.fc_b[l];
    if (l + 1 < n_fc) {
      ws.fc_a[l] = ws.fc_z[l].cwiseMax(Scalar(0));
      x = ws.fc_a[l];
    } else {
      ws.fc_a[l] = ws.fc_z[l];
      softmax_inplace(ws.fc_a[l]);
    }
  }
  return ws.fc_a.back();
}

template <typename Scalar>
std::array<double, 4> to_probs(const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& v) {
  return {static_cast<double>(v(0)), static_cast<double>(v(1)),
          static_cast<double>(v(2)), static_cast<double>(v(3))};
}

// gradient accumulator mirroring the weight layout
template <typename Scalar>
struct Grads {
  using Mat = typename Network<Scalar>::Mat;
  using Vec = typename Network<Scalar>::Vec;
  std::vector<Mat> conv_w;
  std::vector<Vec> conv_b;
  std::vector<Mat> fc_w;
  std::vector<Vec> fc_b;

  explicit Grads(const Network<Scalar>& net) {
    for (const auto& w : net.conv_w) conv_w.emplace_back(Mat::Zero(w.rows(), w.cols()));
    for (const auto& b : net.conv_b) conv_b.emplace_back(Vec::Zero(b.size()));
    for (const auto& w : net.fc_w) fc_w.emplace_back(Mat::Zero(w.rows(), w.cols()));
    for (const auto& b : net.fc_b) fc_b.emplace_back(Vec::Zero(b.size()));
  }
  void set_zero() {
    for (auto& m : conv_w) m.setZero();
    for (auto& v : conv_b) v.setZero();
    for (auto& m : fc_w) m.setZero();
    for (auto& v : fc_b) v.setZero();
  }
  void add(const Grads& o) {
    for (std::size_t i = 0; i < conv_w.size(); ++i) conv_w[i] += o.conv_w[i];
    for (std::size_t i = 0; i < conv_b.size(); ++i) conv_b[i] += o.conv_b[i];
    for (std::size_t i = 0; i < fc_w.size(); ++i) fc_w[i] += o.fc_w[i];
    for (std::size_t i = 0; i < fc_b.size(); ++i) fc_b[i] += o.fc_b[i];
  }
};

// backward for one sample given a completed forward workspace; adds into g.
// Returns nothing; dz_out = w_y * (p - onehot) is formed here.
template <typename Scalar>
void backward_impl(const Network<Scalar>& net, const Workspace<Scalar>& ws,
                   OutcomeClass label, double class_weight,
                   const DropoutMasks<Scalar>* masks, Grads<Scalar>& g) {
  using Mat = typename Network<Scalar>::Mat;
  using Vec = typename Network<Scalar>::Vec;
  const auto& spec = net.spec();
  const auto dims = spec.conv_dims();
  const std::size_t n_fc = spec.fc.size();

  Vec dz = ws.fc_a.back();
  dz(static_cast<int>(label)) -= Scalar(1);
  dz *= static_cast<Scalar>(class_weight);

  for (std::size_t l = n_fc; l-- > 0;) {
    g.fc_w[l].noalias() += dz * ws.fc_in[l].transpose();
    g.fc_b[l] += dz;
    if (l == 0) {
      Vec dflat = net.fc_w[0].transpose() * dz;
      if (masks && masks->active) dflat = dflat.cwiseProduct(masks->before_fc0);
      // into the conv stack
      const std::size_t n_conv = dims.size();
      Vec dcur = std::move(dflat);
      for (std::size_t cl = n_conv; cl-- > 0;) {
        const auto& d = dims[cl];
        const int T = d.conv_size, P = d.out_size;
        // un-pool and relu-mask into dz_conv (out_ch x T^2)
        Mat dz_conv = Mat::Zero(d.out_ch, T * T);
        for (int ch = 0; ch < d.out_ch; ++ch) {
          for (int cell = 0; cell < P * P; ++cell) {
            const Scalar gv = dcur(static_cast<Eigen::Index>(ch) * P * P + cell);
            if (gv == Scalar(0)) continue;
            const int src = ws.pool_arg[cl][static_cast<std::size_t>(ch) * P * P + cell];
            if (ws.z[cl](ch, src) > Scalar(0)) dz_conv(ch, src) += gv;
          }
        }
        g.conv_w[cl].noalias() += dz_conv * ws.cols[cl].transpose();
        g.conv_b[cl] += dz_conv.rowwise().sum();
        if (cl > 0) {
          Mat dcol;
          dcol.noalias() = net.conv_w[cl].transpose() * dz_conv;
          Vec din;
          col2im_add<Scalar>(dcol, d.in_ch, d.in_size, spec.conv[cl].kernel,
                             spec.conv[cl].stride, d.conv_size, din);
          dcur = std::move(din);
        }
      }
      return;
    }
    Vec da = net.fc_w[l].transpose() * dz;
    if (l == 1 && masks && masks->active) da = da.cwiseProduct(masks->before_fc1);
    dz = da.cwiseProduct(
        (ws.fc_z[l - 1].array() > Scalar(0)).template cast<Scalar>().matrix());
  }
}

}  // namespace

template <typename Scalar>
std::array<double, 4> Network<Scalar>::forward(std::span<const Scalar> input01) const {
  if (static_cast<int>(input01.size()) != spec_.input_size * spec_.input_size)
    throw std::invalid_argument("input size does not match the network spec");
  Workspace<Scalar> ws;
  return to_probs(forward_impl<Scalar>(*this, input01, nullptr, ws));
}

template <typename Scalar>
std::array<double, 4> Network<Scalar>::forward_masked(
    std::span<const Scalar> input01, const DropoutMasks<Scalar>& masks,
    std::vector<Vec>* fc_trace) const {
  if (static_cast<int>(input01.size()) != spec_.input_size * spec_.input_size)
    throw std::invalid_argument("input size does not match the network spec");
  Workspace<Scalar> ws;
  const auto& probs = forward_impl<Scalar>(*this, input01, &masks, ws);
  if (fc_trace) *fc_trace = ws.fc_a;
  return to_probs(probs);
}

void TrainSet::push(const Image& patch, OutcomeClass label) {
  if (patch.width() != input_size || patch.height() != input_size)
    throw std::invalid_argument("patch size does not match the training set");
  for (const float v : patch.pixels()) pixels.push_back(to_u8(v));
  labels.push_back(label);
}

std::array<double, 4> inverse_frequency_weights(const std::array<int, 4>& counts) {
  const double total = counts[0] + counts[1] + counts[2] + counts[3];
  std::array<double, 4> w{1, 1, 1, 1};
  for (int c = 0; c < 4; ++c) {
    if (counts[c] > 0) w[c] = std::clamp(total / (4.0 * counts[c]), 1.0, 100.0);
  }
  return w;
}

namespace {

constexpr int kGradShards = 8;  // fixed so the reduction order never varies

template <typename Scalar>
std::vector<Scalar> input_from_u8(std::span<const std::uint8_t> patch) {
  std::vector<Scalar> v(patch.size());
  for (std::size_t i = 0; i < patch.size(); ++i)
    v[i] = static_cast<Scalar>(patch[i]) / Scalar(255);
  return v;
}

}  // namespace

template <typename Scalar>
TrainLog train(Network<Scalar>& net, const TrainSet& data, const TrainParams& params,
               int jobs) {
  if (data.size() == 0) throw DataError("training set is empty");
  if (params.batch < 1 || params.epochs < 1)
    throw std::invalid_argument("batch and epochs must be positive");
  if (data.input_size != net.spec().input_size)
    throw std::invalid_argument("training set patch size mismatch");

  std::array<int, 4> counts{0, 0, 0, 0};
  for (const auto l : data.labels) ++counts[static_cast<int>(l)];
  std::array<double, 4> weights;
  if (params.class_weights) {
    weights = *params.class_weights;
  } else {
    for (int c = 0; c < 4; ++c)
      if (counts[c] == 0)
        throw DataError(std::string("class ") +
                        labelgen::to_string(static_cast<OutcomeClass>(c)) +
                        " absent from the training set; pass explicit class weights");
    weights = inverse_frequency_weights(counts);
  }

  TrainLog log;
  log.class_weights_used = weights;

  const std::size_t n = data.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  Grads<Scalar> momentum(net);
  std::vector<Grads<Scalar>> shard_grads;
  std::vector<Workspace<Scalar>> shard_ws(kGradShards);
  for (int s = 0; s < kGradShards; ++s) shard_grads.emplace_back(net);
  Grads<Scalar> batch_grad(net);

  for (int epoch = 0; epoch < params.epochs; ++epoch) {
    // deterministic shuffle
    Rng shuffle_rng(derive_seed(params.seed, 0xe90c, epoch));
    for (std::size_t i = n; i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_int(0, static_cast<int>(i) - 1)]);

    double loss_sum = 0.0;
    std::size_t loss_count = 0;

    for (std::size_t start = 0; start < n; start += params.batch) {
      const std::size_t bsz = std::min<std::size_t>(params.batch, n - start);
      std::array<double, kGradShards> shard_loss{};
      parallel_for(kGradShards, jobs, [&](std::size_t s) {
        shard_grads[s].set_zero();
        double local_loss = 0.0;
        for (std::size_t i = s; i < bsz; i += kGradShards) {
          const std::size_t global_pos = start + i;
          const std::size_t sample = order[global_pos];
          const auto input = input_from_u8<Scalar>(data.patch(sample));
          Rng mask_rng(derive_seed(params.seed, 0xd40 + epoch, global_pos));
          const auto masks = net.make_masks(mask_rng);
          const auto& probs =
              forward_impl<Scalar>(net, input, &masks, shard_ws[s]);
          const int y = static_cast<int>(data.labels[sample]);
          const double p = std::max(static_cast<double>(probs(y)), 1e-300);
          local_loss += -weights[y] * std::log(p);
          backward_impl<Scalar>(net, shard_ws[s], data.labels[sample], weights[y],
                                &masks, shard_grads[s]);
        }
        shard_loss[s] = local_loss;
      });

      batch_grad.set_zero();
      double batch_loss = 0.0;
      for (int s = 0; s < kGradShards; ++s) {
        batch_grad.add(shard_grads[s]);
        batch_loss += shard_loss[s];
      }
      batch_loss /= static_cast<double>(bsz);
      if (!std::isfinite(batch_loss))
        throw NumericError("non-finite training loss in epoch " +
                           std::to_string(epoch) + ", batch at sample " +
                           std::to_string(start));
      loss_sum += batch_loss * static_cast<double>(bsz);
      loss_count += bsz;

      // momentum SGD step
      const Scalar scale = static_cast<Scalar>(1.0 / static_cast<double>(bsz));
      const Scalar mu = static_cast<Scalar>(params.momentum);
      const Scalar lr =
          static_cast<Scalar>(params.lr * std::pow(params.lr_decay, epoch));
      auto step = [&](auto& w, auto& g, auto& m) {
        m = mu * m + scale * g;
        w -= lr * m;
      };
      for (std::size_t i = 0; i < net.conv_w.size(); ++i) {
        step(net.conv_w[i], batch_grad.conv_w[i], momentum.conv_w[i]);
        step(net.conv_b[i], batch_grad.conv_b[i], momentum.conv_b[i]);
      }
      for (std::size_t i = 0; i < net.fc_w.size(); ++i) {
        step(net.fc_w[i], batch_grad.fc_w[i], momentum.fc_w[i]);
        step(net.fc_b[i], batch_grad.fc_b[i], momentum.fc_b[i]);
      }
    }
    log.epoch_loss.push_back(loss_sum / static_cast<double>(loss_count));
  }
  return log;
}

template <typename Scalar>
double loss_on_batch(const Network<Scalar>& net, const BatchRef<Scalar>& batch) {
  Workspace<Scalar> ws;
  double loss = 0.0;
  for (std::size_t i = 0; i < batch.indices.size(); ++i) {
    const std::size_t sample = batch.indices[i];
    const auto input = input_from_u8<Scalar>(batch.data->patch(sample));
    const DropoutMasks<Scalar>* masks =
        batch.masks ? &(*batch.masks)[i] : nullptr;
    const auto& probs = forward_impl<Scalar>(net, input, masks, ws);
    const int y = static_cast<int>(batch.data->labels[sample]);
    const double p = std::max(static_cast<double>(probs(y)), 1e-300);
    loss += -batch.class_weights[y] * std::log(p);
  }
  return loss / static_cast<double>(batch.indices.size());
}

template <typename Scalar>
std::vector<Scalar> grad_on_batch(const Network<Scalar>& net,
                                  const BatchRef<Scalar>& batch) {
  Workspace<Scalar> ws;
  Grads<Scalar> g(net);
  for (std::size_t i = 0; i < batch.indices.size(); ++i) {
    const std::size_t sample = batch.indices[i];
    const auto input = input_from_u8<Scalar>(batch.data->patch(sample));
    const DropoutMasks<Scalar>* masks =
        batch.masks ? &(*batch.masks)[i] : nullptr;
    forward_impl<Scalar>(net, input, masks, ws);
    backward_impl<Scalar>(net, ws, batch.data->labels[sample],
                          batch.class_weights[static_cast<int>(
                              batch.data->labels[sample])],
                          masks, g);
  }
  // flatten in the canonical parameter order, scaled to the batch mean
  const Scalar scale = static_cast<Scalar>(1.0 / batch.indices.size());
  std::vector<Scalar> flat;
  flat.reserve(net.param_count());
  auto append_mat = [&](const auto& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) flat.push_back(m(i, j) * scale);
  };
  auto append_vec = [&](const auto& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) flat.push_back(v(i) * scale);
  };
  for (std::size_t i = 0; i < g.conv_w.size(); ++i) {
    append_mat(g.conv_w[i]);
    append_vec(g.conv_b[i]);
  }
  for (std::size_t i = 0; i < g.fc_w.size(); ++i) {
    append_mat(g.fc_w[i]);
    append_vec(g.fc_b[i]);
  }
  return flat;
}

// ------------------------------------------------------------ persistence --

namespace {

json spec_to_json(const NetworkSpec& s) {
  json j;
  j["input_size"] = s.input_size;
  j["p_drop"] = s.p_drop;
  j["fc"] = s.fc;
  j["conv"] = json::array();
  for (const auto& c : s.conv)
    j["conv"].push_back({{"channels", c.channels},
                         {"kernel", c.kernel},
                         {"stride", c.stride},
                         {"pool", c.pool}});
  return j;
}

NetworkSpec spec_from_json(const json& j) {
  NetworkSpec s;
  s.input_size = j.at("input_size").get<int>();
  s.p_drop = j.at("p_drop").get<double>();
  s.fc = j.at("fc").get<std::vector<int>>();
  for (const auto& c : j.at("conv")) {
    s.conv.push_back({c.at("channels").get<int>(), c.at("kernel").get<int>(),
                      c.at("stride").get<int>(), c.at("pool").get<int>()});
  }
  return s;
}

constexpr char kNetMagic[8] = {'I', 'V', 'O', 'A', 'N', 'E', 'T', '1'};

template <typename Scalar>
void save_network_impl(const Network<Scalar>& net, const std::filesystem::path& path) {
  json header;
  header["format_version"] = 1;
  header["seed"] = net.init_seed();
  header["spec"] = spec_to_json(net.spec());
  const std::string htext = header.dump();

  std::vector<Scalar> params;
  net.copy_params(params);
  std::vector<float> blob(params.begin(), params.end());

  std::vector<std::uint8_t> bytes;
  bytes.reserve(16 + htext.size() + blob.size() * 4);
  bytes.insert(bytes.end(), kNetMagic, kNetMagic + 8);
  const std::uint32_t hlen = static_cast<std::uint32_t>(htext.size());
  const std::uint8_t* hp = reinterpret_cast<const std::uint8_t*>(&hlen);
  bytes.insert(bytes.end(), hp, hp + 4);
  bytes.insert(bytes.end(), htext.begin(), htext.end());
  const std::uint8_t* bp = reinterpret_cast<const std::uint8_t*>(blob.data());
  bytes.insert(bytes.end(), bp, bp + blob.size() * 4);
  atomic_write_bytes(path, bytes.data(), bytes.size());
}

}  // namespace

void save_network(const NetworkF& net, const std::filesystem::path& path) {
  save_network_impl(net, path);
}
void save_network(const NetworkD& net, const std::filesystem::path& path) {
  save_network_impl(net, path);
}

template <typename Scalar>
Network<Scalar> load_network(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open network file: " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kNetMagic, 8) != 0)
    throw DataError("bad network file magic: " + path.string());
  std::uint32_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), 4);
  if (!in || hlen == 0 || hlen > (1u << 20))
    throw DataError("bad network header length: " + path.string());
  std::string htext(hlen, '\0');
  in.read(htext.data(), hlen);
  if (!in) throw DataError("truncated network header: " + path.string());
  const json header = json::parse(htext);
  if (header.at("format_version").get<int>() != 1)
    throw DataError("unsupported network format version in " + path.string());

  Network<Scalar> net(spec_from_json(header.at("spec")),
                      header.at("seed").get<std::uint64_t>());
  std::vector<float> blob(net.param_count());
  in.read(reinterpret_cast<char*>(blob.data()),
          static_cast<std::streamsize>(blob.size() * 4));
  if (!in) throw DataError("truncated network blob: " + path.string());
  std::vector<Scalar> params(blob.begin(), blob.end());
  net.set_params(params);
  return net;
}

template <typename Scalar>
std::vector<Scalar> image_to_input(const Image& img) {
  std::vector<Scalar> v(img.pixels().size());
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = static_cast<Scalar>(img.pixels()[i]);
  return v;
}

template <typename Scalar>
std::vector<Scalar> patch_to_input(std::span<const std::uint8_t> patch) {
  return input_from_u8<Scalar>(patch);
}

// explicit instantiations
template class Network<float>;
template class Network<double>;
template TrainLog train<float>(Network<float>&, const TrainSet&, const TrainParams&, int);
template TrainLog train<double>(Network<double>&, const TrainSet&, const TrainParams&, int);
template double loss_on_batch<float>(const Network<float>&, const BatchRef<float>&);
template double loss_on_batch<double>(const Network<double>&, const BatchRef<double>&);
template std::vector<float> grad_on_batch<float>(const Network<float>&,
                                                 const BatchRef<float>&);
template std::vector<double> grad_on_batch<double>(const Network<double>&,
                                                   const BatchRef<double>&);
template Network<float> load_network<float>(const std::filesystem::path&);
template Network<double> load_network<double>(const std::filesystem::path&);
template std::vector<float> image_to_input<float>(const Image&);
template std::vector<double> image_to_input<double>(const Image&);
template std::vector<float> patch_to_input<float>(std::span<const std::uint8_t>);
template std::vector<double> patch_to_input<double>(std::span<const std::uint8_t>);

}  // namespace ivoa::introspection
