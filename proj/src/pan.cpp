#include "pyramnet/pan.hpp"

#include "pyramnet/errors.hpp"
#include "pyramnet/init.hpp"

#include <sstream>

namespace pyramnet {

Index PyramidConfig::total_channels() const {
  Index total = 0;
  for (Index c : channels) total += c;
  return total;
}

void PyramidConfig::validate(bool reference_shape) const {
  for (std::size_t i = 0; i < kBranches; ++i) {
    if (kernels[i] < 1 || kernels[i] % 2 == 0) {
      throw ConfigError("pyramid branch " + std::to_string(i) + ": kernel " +
                        std::to_string(kernels[i]) + " must be odd");
    }
    if (strides[i] < 1) {
      throw ConfigError("pyramid branch " + std::to_string(i) + ": stride must be >= 1");
    }
    if (channels[i] < 1) {
      throw ConfigError("pyramid branch " + std::to_string(i) + ": needs at least one channel");
    }
  }
  if (reference_shape && total_channels() != kReferenceChannels) {
    throw ConfigError("pyramid channels sum to " + std::to_string(total_channels()) +
                      ", reference architecture needs " + std::to_string(kReferenceChannels));
  }
}

std::string PyramidConfig::format(const std::array<Index, kBranches>& values) {
  std::ostringstream out;
  for (std::size_t i = 0; i < values.size(); ++i) out << (i ? "," : "") << values[i];
  return out.str();
}

std::array<Index, PyramidConfig::kBranches> PyramidConfig::parse_list(const std::string& text) {
  std::array<Index, kBranches> values{};
  std::istringstream in(text);
  std::string item;
  std::size_t i = 0;
  while (std::getline(in, item, ',')) {
    if (i >= kBranches) throw ConfigError("pyramid list '" + text + "' has more than 4 entries");
    try {
      values[i++] = std::stoll(item);
    } catch (const std::exception&) {
      throw ConfigError("pyramid list '" + text + "' is not a list of integers");
    }
  }
  if (i != kBranches) throw ConfigError("pyramid list '" + text + "' needs exactly 4 entries");
  return values;
}

template <typename Scalar>
PanBranch<Scalar>::PanBranch(Index kernel_size, Index stride_size, Index out_channels,
                             std::mt19937_64& rng, double init_std)
    : kernel(kernel_size),
      stride(stride_size),
      weight(truncated_normal<Scalar>({kernel_size, kernel_size, 1, out_channels}, init_std, rng)),
      bias(zero_parameter<Scalar>({out_channels})),
      bn(out_channels) {}

template <typename Scalar>
Tensor<Scalar> pan_branch(const Tensor<Scalar>& x, PanBranch<Scalar>& branch, bool training) {
  Tensor<Scalar> grid;
  if (x.rank() == 3) {
    grid = reshape(x, {x.dim(0), x.dim(1), x.dim(2), 1});
  } else if (x.rank() == 4 && x.dim(3) == 1) {
    grid = x;
  } else {
    throw DimensionError("pan_branch: expected [B,N,C] or [B,N,C,1], got " + to_string(x.shape()));
  }
  const Index rows = grid.dim(1), cols = grid.dim(2);
  if (branch.stride > rows || branch.stride > cols) {
    throw ConfigError("pan_branch: stride " + std::to_string(branch.stride) + " exceeds the " +
                      std::to_string(rows) + "x" + std::to_string(cols) + " grid");
  }
  Tensor<Scalar> y = conv2d(grid, branch.weight, branch.bias, {branch.stride, branch.stride});
  y = relu(batch_norm(y, branch.bn, training));
  return bilinear_resize(y, rows, cols);
}

template <typename Scalar>
Tensor<Scalar> pan_forward(const Tensor<Scalar>& x, std::vector<PanBranch<Scalar>>& branches,
                           bool training) {
  if (branches.empty()) throw ConfigError("pan_forward: no branches");
  std::vector<Tensor<Scalar>> outputs;
  outputs.reserve(branches.size());
  for (auto& branch : branches) outputs.push_back(pan_branch(x, branch, training));
  return concat(outputs);
}

template <typename Scalar>
Tensor<Scalar> pan_collapse(const Tensor<Scalar>& x) {
  if (x.rank() != 4) {
    throw DimensionError("pan_collapse: expected [B,N,C,K], got " + to_string(x.shape()));
  }
  return global_avg_pool(x, 2, true);
}

template <typename Scalar>
std::vector<PanBranch<Scalar>> make_pan_branches(const PyramidConfig& config, std::mt19937_64& rng,
                                                 double init_std) {
  config.validate(false);
  std::vector<PanBranch<Scalar>> branches;
  for (std::size_t i = 0; i < PyramidConfig::kBranches; ++i) {
    branches.emplace_back(config.kernels[i], config.strides[i], config.channels[i], rng, init_std);
  }
  return branches;
}

#define PYRAMNET_INSTANTIATE(S)                                                                  \
  template struct PanBranch<S>;                                                                  \
  template Tensor<S> pan_branch<S>(const Tensor<S>&, PanBranch<S>&, bool);                       \
  template Tensor<S> pan_forward<S>(const Tensor<S>&, std::vector<PanBranch<S>>&, bool);         \
  template Tensor<S> pan_collapse<S>(const Tensor<S>&);                                          \
  template std::vector<PanBranch<S>> make_pan_branches<S>(const PyramidConfig&, std::mt19937_64&, \
                                                          double);

PYRAMNET_INSTANTIATE(float)
PYRAMNET_INSTANTIATE(double)
#undef PYRAMNET_INSTANTIATE

}  // namespace pyramnet
