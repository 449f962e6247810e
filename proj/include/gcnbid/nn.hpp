#pragma once

#include <cstddef>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "gcnbid/grid.hpp"

namespace gcnbid::nn {

using Index = Eigen::Index;
/// Row-major double matrix; rows are nodes (or batch entries), columns features.
using Tensor2 = grid::Matrix;
using RowVector = Eigen::RowVectorXd;

enum class Activation { relu, identity };

struct DenseLayer {
  Tensor2 weights;  // in x out
  RowVector bias;   // out
  Activation activation = Activation::relu;
};

/// sigma(S * O * W); W is f_in x f_out and does not depend on the node count.
struct GcnLayer {
  Tensor2 weights;
  Activation activation = Activation::relu;
};

/// GCN stack -> mean over nodes -> dense head. With no GCN layers and one row
/// per sample the network is a plain MLP.
struct Network {
  std::vector<GcnLayer> gcn_layers;
  std::vector<DenseLayer> head_layers;

  Index input_width() const;
  Index output_width() const;
  /// Throws std::invalid_argument if consecutive shapes do not chain.
  void validate() const;
  std::size_t parameter_count() const;
  std::vector<std::span<double>> parameter_blocks();
  std::vector<std::span<const double>> parameter_blocks() const;
};

/// Same layout as Network's parameters.
struct Gradients {
  std::vector<Tensor2> gcn_weights;
  std::vector<Tensor2> head_weights;
  std::vector<RowVector> head_bias;

  static Gradients zeros_like(const Network& net);
  std::vector<std::span<const double>> blocks() const;
  double max_abs() const;
};

struct Architecture {
  Index input_width = 6;
  std::vector<Index> gcn_widths{16, 16};
  std::vector<Index> head_widths{15, 10};
  Index output_width = 1;
};

enum class InitScheme {
  fan_in,  // U(-sqrt(6/fan_in), sqrt(6/fan_in)) (He uniform), zero biases
  paper,   // every weight and bias drawn from U(1, 2)
};

Network make_network(const Architecture& arch, InitScheme init, std::mt19937_64& rng);

/// Intermediates of one forward pass, consumed by backward().
struct ForwardCache {
  Index batch = 0;
  Index nodes = 0;
  std::vector<Tensor2> mixed;        // S * O_l per GCN layer
  std::vector<Tensor2> gcn_pre;      // pre-activation per GCN layer
  std::vector<Tensor2> head_inputs;  // input per dense layer (first is the pooled matrix)
  std::vector<Tensor2> head_pre;     // pre-activation per dense layer
};

/// One GCN layer applied to a single graph (N x f_in features).
Tensor2 gcn_forward(const GcnLayer& layer, const Tensor2& input,
                    const grid::NormalizedAdjacency& norm_adj);

/// Forward pass over `batch` graphs stacked row-wise, each with
/// features.rows() / batch nodes sharing `norm_adj`. Returns batch x out.
Tensor2 forward(const Network& net, const Tensor2& features,
                const grid::NormalizedAdjacency& norm_adj, Index batch = 1,
                ForwardCache* cache = nullptr);

struct BackwardResult {
  Gradients grads;
  Tensor2 input_gradient;  // same shape as the forward features
};

// Which parts of BackwardResult to compute; the skipped part is left empty.
enum class BackwardParts { all, parameters, input };

/// Reverse-mode gradients given dLoss/dOutput (batch x out).
BackwardResult backward(const Network& net, const ForwardCache& cache,
                        const grid::NormalizedAdjacency& norm_adj,
                        const Tensor2& output_gradient,
                        BackwardParts parts = BackwardParts::all);

/// theta <- theta - lr * grad
void sgd_step(Network& net, const Gradients& grads, double lr);

/// target <- tau * online + (1 - tau) * target
void soft_update(Network& target, const Network& online, double tau);

struct ScalarLoss {
  std::function<double(const Tensor2&)> value;
  std::function<Tensor2(const Tensor2&)> gradient;
};

struct GradCheckOptions {
  double step = 1e-5;
  double floor = 1e-8;
};

/// Central differences against backward(); returns
/// max |g_fd - g_bp| / max(floor, |g_fd| + |g_bp|) over all parameters.
double grad_check(const Network& net, const Tensor2& features,
                  const grid::NormalizedAdjacency& norm_adj, const ScalarLoss& loss,
                  Index batch = 1, GradCheckOptions opts = {});

/// Same error measure for two flat gradient vectors.
double max_relative_error(std::span<const double> numeric, std::span<const double> analytic,
                          double floor = 1e-8);

}  // namespace gcnbid::nn
