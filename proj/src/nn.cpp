#include "gcnbid/nn.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace gcnbid::nn {

namespace {

void activate(Tensor2& m, Activation act) {
  if (act == Activation::relu) m = m.cwiseMax(0.0);
}

// dL/dpre from dL/dout, given the pre-activation values.
void activation_backward(Tensor2& grad, const Tensor2& pre, Activation act) {
  if (act == Activation::relu) grad = (pre.array() > 0.0).select(grad, 0.0);
}

// Applies S to each of the `batch` node blocks of m.
Tensor2 propagate(const grid::NormalizedAdjacency& norm_adj, const Tensor2& m, Index batch) {
  const Index n = norm_adj.size();
  const auto& s = norm_adj.sparse();
  const Index f = m.cols();
  Tensor2 out(m.rows(), f);
  // direct CSR walk; Eigen's sparse x dense-block product is slow at this size
  for (Index b = 0; b < batch; ++b) {
    const double* src = m.data() + b * n * f;
    double* dst = out.data() + b * n * f;
    for (Index i = 0; i < n; ++i) {
      double* row = dst + i * f;
      Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(s, i);
      // every row holds its self loop, so the first entry initializes the row
      {
        const double v = it.value();
        const double* in = src + it.col() * f;
        for (Index k = 0; k < f; ++k) row[k] = v * in[k];
      }
      for (++it; it; ++it) {
        const double v = it.value();
        const double* in = src + it.col() * f;
        for (Index k = 0; k < f; ++k) row[k] += v * in[k];
      }
    }
  }
  return out;
}

std::span<double> as_span(Tensor2& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }
std::span<double> as_span(RowVector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }
std::span<const double> as_span(const Tensor2& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}
std::span<const double> as_span(const RowVector& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

}  // namespace

Index Network::input_width() const {
  if (!gcn_layers.empty()) return gcn_layers.front().weights.rows();
  if (!head_layers.empty()) return head_layers.front().weights.rows();
  return 0;
}

Index Network::output_width() const {
  if (!head_layers.empty()) return head_layers.back().weights.cols();
  if (!gcn_layers.empty()) return gcn_layers.back().weights.cols();
  return 0;
}

void Network::validate() const {
  Index width = input_width();
  if (width <= 0) throw std::invalid_argument("network has no layers");
  for (std::size_t l = 0; l < gcn_layers.size(); ++l) {
    if (gcn_layers[l].weights.rows() != width)
      throw std::invalid_argument(fmt::format("gcn layer {} expects width {}, got {}", l,
                                              gcn_layers[l].weights.rows(), width));
    width = gcn_layers[l].weights.cols();
  }
  for (std::size_t l = 0; l < head_layers.size(); ++l) {
    const auto& d = head_layers[l];
    if (d.weights.rows() != width)
      throw std::invalid_argument(fmt::format("dense layer {} expects width {}, got {}", l,
                                              d.weights.rows(), width));
    if (d.bias.size() != d.weights.cols())
      throw std::invalid_argument(fmt::format("dense layer {} bias size mismatch", l));
    width = d.weights.cols();
  }
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& b : parameter_blocks()) n += b.size();
  return n;
}

std::vector<std::span<double>> Network::parameter_blocks() {
  std::vector<std::span<double>> out;
  for (auto& g : gcn_layers) out.push_back(as_span(g.weights));
  for (auto& d : head_layers) {
    out.push_back(as_span(d.weights));
    out.push_back(as_span(d.bias));
  }
  return out;
}

std::vector<std::span<const double>> Network::parameter_blocks() const {
  std::vector<std::span<const double>> out;
  for (const auto& g : gcn_layers) out.push_back(as_span(g.weights));
  for (const auto& d : head_layers) {
    out.push_back(as_span(d.weights));
    out.push_back(as_span(d.bias));
  }
  return out;
}

Gradients Gradients::zeros_like(const Network& net) {
  Gradients g;
  for (const auto& l : net.gcn_layers)
    g.gcn_weights.push_back(Tensor2::Zero(l.weights.rows(), l.weights.cols()));
  for (const auto& d : net.head_layers) {
    g.head_weights.push_back(Tensor2::Zero(d.weights.rows(), d.weights.cols()));
    g.head_bias.push_back(RowVector::Zero(d.bias.size()));
  }
  return g;
}

std::vector<std::span<const double>> Gradients::blocks() const {
  std::vector<std::span<const double>> out;
  for (const auto& w : gcn_weights) out.push_back(as_span(w));
  for (std::size_t l = 0; l < head_weights.size(); ++l) {
    out.push_back(as_span(head_weights[l]));
    out.push_back(as_span(head_bias[l]));
  }
  return out;
}

double Gradients::max_abs() const {
  double m = 0.0;
  for (const auto& b : blocks())
    for (double v : b) m = std::max(m, std::abs(v));
  return m;
}

Network make_network(const Architecture& arch, InitScheme init, std::mt19937_64& rng) {
  auto fill = [&](auto& m, Index fan_in) {
    double lo = 1.0, hi = 2.0;
    if (init == InitScheme::fan_in) {
      hi = std::sqrt(6.0 / static_cast<double>(fan_in));
      lo = -hi;
    }
    std::uniform_real_distribution<double> dist(lo, hi);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  };

  Network net;
  Index width = arch.input_width;
  for (Index w : arch.gcn_widths) {
    GcnLayer layer{Tensor2(width, w), Activation::relu};
    fill(layer.weights, width);
    net.gcn_layers.push_back(std::move(layer));
    width = w;
  }
  std::vector<Index> widths = arch.head_widths;
  widths.push_back(arch.output_width);
  for (std::size_t l = 0; l < widths.size(); ++l) {
    const bool last = l + 1 == widths.size();
    DenseLayer layer{Tensor2(width, widths[l]), RowVector::Zero(widths[l]),
                     last ? Activation::identity : Activation::relu};
    fill(layer.weights, width);
    if (init == InitScheme::paper) fill(layer.bias, width);
    net.head_layers.push_back(std::move(layer));
    width = widths[l];
  }
  return net;
}

Tensor2 gcn_forward(const GcnLayer& layer, const Tensor2& input,
                    const grid::NormalizedAdjacency& norm_adj) {
  if (input.rows() != norm_adj.size() || input.cols() != layer.weights.rows())
    throw std::invalid_argument(fmt::format(
        "gcn_forward: input {}x{}, adjacency {}x{}, weights {}x{}", input.rows(), input.cols(),
        norm_adj.size(), norm_adj.size(), layer.weights.rows(), layer.weights.cols()));
  Tensor2 out = (norm_adj.sparse() * input) * layer.weights;
  activate(out, layer.activation);
  return out;
}

Tensor2 forward(const Network& net, const Tensor2& features,
                const grid::NormalizedAdjacency& norm_adj, Index batch, ForwardCache* cache) {
  if (batch <= 0 || features.rows() % batch != 0)
    throw std::invalid_argument("forward: feature rows not divisible by batch");
  if (features.cols() != net.input_width())
    throw std::invalid_argument(fmt::format("forward: feature width {} but network expects {}",
                                            features.cols(), net.input_width()));
  const Index nodes = features.rows() / batch;
  if (!net.gcn_layers.empty() && nodes != norm_adj.size())
    throw std::invalid_argument(fmt::format("forward: {} nodes per graph but adjacency is {}x{}",
                                            nodes, norm_adj.size(), norm_adj.size()));
  if (cache) {
    *cache = ForwardCache{};
    cache->batch = batch;
    cache->nodes = nodes;
  }

  Tensor2 h = features;
  for (const auto& layer : net.gcn_layers) {
    Tensor2 mixed = propagate(norm_adj, h, batch);
    Tensor2 pre = mixed * layer.weights;
    h = pre;
    activate(h, layer.activation);
    if (cache) {
      cache->mixed.push_back(std::move(mixed));
      cache->gcn_pre.push_back(std::move(pre));
    }
  }

  Tensor2 pooled(batch, h.cols());
  for (Index b = 0; b < batch; ++b) pooled.row(b) = h.middleRows(b * nodes, nodes).colwise().mean();

  h = std::move(pooled);
  for (const auto& layer : net.head_layers) {
    Tensor2 pre = h * layer.weights;
    pre.rowwise() += layer.bias;
    if (cache) cache->head_inputs.push_back(h);
    h = pre;
    activate(h, layer.activation);
    if (cache) cache->head_pre.push_back(std::move(pre));
  }
  return h;
}

BackwardResult backward(const Network& net, const ForwardCache& cache,
                        const grid::NormalizedAdjacency& norm_adj,
                        const Tensor2& output_gradient, BackwardParts parts) {
  if (cache.batch == 0 || cache.gcn_pre.size() != net.gcn_layers.size() ||
      cache.head_pre.size() != net.head_layers.size())
    throw std::logic_error("backward called without a matching forward cache");
  if (output_gradient.rows() != cache.batch || output_gradient.cols() != net.output_width())
    throw std::invalid_argument("backward: output gradient shape mismatch");

  const bool want_params = parts != BackwardParts::input;
  const bool want_input = parts != BackwardParts::parameters;
  BackwardResult res;
  if (want_params) res.grads = Gradients::zeros_like(net);

  Tensor2 grad = output_gradient;
  for (std::size_t l = net.head_layers.size(); l-- > 0;) {
    const auto& layer = net.head_layers[l];
    activation_backward(grad, cache.head_pre[l], layer.activation);
    if (want_params) {
      res.grads.head_weights[l] = cache.head_inputs[l].transpose() * grad;
      res.grads.head_bias[l] = grad.colwise().sum();
    }
    if (l == 0 && net.gcn_layers.empty() && !want_input) return res;
    grad = grad * layer.weights.transpose();
  }

  // un-pool: each node row receives its graph's pooled gradient / N
  const Index nodes = cache.nodes;
  Tensor2 node_grad(cache.batch * nodes, grad.cols());
  for (Index b = 0; b < cache.batch; ++b)
    node_grad.middleRows(b * nodes, nodes).rowwise() = grad.row(b) / static_cast<double>(nodes);

  for (std::size_t l = net.gcn_layers.size(); l-- > 0;) {
    const auto& layer = net.gcn_layers[l];
    activation_backward(node_grad, cache.gcn_pre[l], layer.activation);
    if (want_params) res.grads.gcn_weights[l] = cache.mixed[l].transpose() * node_grad;
    if (l == 0 && !want_input) return res;
    Tensor2 mixed_grad = node_grad * layer.weights.transpose();
    // S is symmetric, so S^T * grad == S * grad
    node_grad = propagate(norm_adj, mixed_grad, cache.batch);
  }
  res.input_gradient = std::move(node_grad);
  return res;
}

void sgd_step(Network& net, const Gradients& grads, double lr) {
  auto params = net.parameter_blocks();
  auto g = grads.blocks();
  if (params.size() != g.size()) throw std::invalid_argument("sgd_step: layer count mismatch");
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (params[b].size() != g[b].size()) throw std::invalid_argument("sgd_step: shape mismatch");
    for (std::size_t i = 0; i < params[b].size(); ++i) params[b][i] -= lr * g[b][i];
  }
}

void soft_update(Network& target, const Network& online, double tau) {
  if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("soft_update: tau must be in (0, 1]");
  auto dst = target.parameter_blocks();
  auto src = online.parameter_blocks();
  if (dst.size() != src.size()) throw std::invalid_argument("soft_update: layer count mismatch");
  for (std::size_t b = 0; b < dst.size(); ++b) {
    if (dst[b].size() != src[b].size()) throw std::invalid_argument("soft_update: shape mismatch");
    for (std::size_t i = 0; i < dst[b].size(); ++i)
      dst[b][i] = tau == 1.0 ? src[b][i] : tau * src[b][i] + (1.0 - tau) * dst[b][i];
  }
}

double max_relative_error(std::span<const double> numeric, std::span<const double> analytic,
                          double floor) {
  if (numeric.size() != analytic.size())
    throw std::invalid_argument("max_relative_error: size mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < numeric.size(); ++i) {
    const double diff = std::abs(numeric[i] - analytic[i]);
    worst = std::max(worst, diff / std::max(floor, std::abs(numeric[i]) + std::abs(analytic[i])));
  }
  return worst;
}

double grad_check(const Network& net, const Tensor2& features,
                  const grid::NormalizedAdjacency& norm_adj, const ScalarLoss& loss, Index batch,
                  GradCheckOptions opts) {
  ForwardCache cache;
  Tensor2 out = forward(net, features, norm_adj, batch, &cache);
  BackwardResult bp = backward(net, cache, norm_adj, loss.gradient(out));

  std::vector<double> analytic;
  for (const auto& b : bp.grads.blocks()) analytic.insert(analytic.end(), b.begin(), b.end());

  Network probe = net;
  std::vector<double> numeric;
  numeric.reserve(analytic.size());
  for (auto block : probe.parameter_blocks()) {
    for (double& p : block) {
      const double saved = p;
      p = saved + opts.step;
      const double up = loss.value(forward(probe, features, norm_adj, batch));
      p = saved - opts.step;
      const double down = loss.value(forward(probe, features, norm_adj, batch));
      p = saved;
      numeric.push_back((up - down) / (2.0 * opts.step));
    }
  }
  return max_relative_error(numeric, analytic, opts.floor);
}

}  // namespace gcnbid::nn
