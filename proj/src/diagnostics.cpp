#include "gcnbid/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>

#include "gcnbid/nn.hpp"
#include "gcnbid/rl.hpp"

namespace gcnbid::diagnostics {

namespace {

using nn::Index;
using nn::Tensor2;

constexpr double kKinkMargin = 1e-4;
constexpr int kMaxRedraws = 1000;

// The finite-difference side re-evaluates losses in extended precision. With
// h = 1e-5, double roundoff in the loss (about eps * |L| / h) is large enough
// to swamp entries near 1e-8, which the actor loss routinely produces.
using Real = long double;
using RealMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

RealMatrix widen(const Tensor2& m) { return m.cast<Real>(); }

void activate(RealMatrix& m, nn::Activation act) {
  if (act == nn::Activation::relu) m = m.cwiseMax(Real(0));
}

RealMatrix reference_forward(const nn::Network& net, const RealMatrix& x, const RealMatrix& s, Index batch) {
  const Index n = x.rows() / batch;
  RealMatrix o = x;
  for (const auto& layer : net.gcn_layers) {
    RealMatrix mixed(o.rows(), o.cols());
    for (Index b = 0; b < batch; ++b) mixed.middleRows(b * n, n) = s * o.middleRows(b * n, n);
    o = mixed * widen(layer.weights);
    activate(o, layer.activation);
  }
  RealMatrix h(batch, o.cols());
  for (Index b = 0; b < batch; ++b) h.row(b) = o.middleRows(b * n, n).colwise().sum() / Real(n);
  for (const auto& layer : net.head_layers) {
    h = h * widen(layer.weights);
    h.rowwise() += layer.bias.cast<Real>();
    activate(h, layer.activation);
  }
  return h;
}

// Central differences of `loss` over every parameter of `net` (h = 1e-5).
std::vector<double> numeric_gradient(nn::Network& net, const std::function<Real()>& loss) {
  constexpr double h = 1e-5;
  std::vector<double> out;
  for (auto block : net.parameter_blocks()) {
    for (double& p : block) {
      const double saved = p;
      p = saved + h;
      const Real up = loss();
      const Real up_at = p;
      p = saved - h;
      const Real down = loss();
      const Real down_at = p;
      p = saved;
      out.push_back(static_cast<double>((up - down) / (up_at - down_at)));
    }
  }
  return out;
}

std::vector<double> flatten(const nn::Gradients& g) {
  std::vector<double> out;
  for (auto b : g.blocks()) out.insert(out.end(), b.begin(), b.end());
  return out;
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Tensor2 random_matrix(std::mt19937_64& rng, Index rows, Index cols, double scale = 1.0) {
  Tensor2 m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = uniform(rng, -scale, scale);
  return m;
}

grid::GridTopology random_topology(std::mt19937_64& rng, int n) {
  std::vector<grid::Line> lines;
  for (int a = 0; a < n; ++a)
    for (int b = a + 1; b < n; ++b)
      if (uniform(rng, 0, 1) < 0.4) lines.push_back({a, b});
  return grid::GridTopology(n, lines, {});
}

// Smallest |pre-activation| over the ReLU layers of one forward pass.
double kink_distance(const nn::Network& net, const nn::ForwardCache& cache) {
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l < net.gcn_layers.size(); ++l)
    if (net.gcn_layers[l].activation == nn::Activation::relu)
      m = std::min(m, cache.gcn_pre[l].cwiseAbs().minCoeff());
  for (std::size_t l = 0; l < net.head_layers.size(); ++l)
    if (net.head_layers[l].activation == nn::Activation::relu)
      m = std::min(m, cache.head_pre[l].cwiseAbs().minCoeff());
  return m;
}

nn::Network random_network(std::mt19937_64& rng, Index input, bool with_gcn, bool linear) {
  nn::Architecture arch;
  arch.input_width = input;
  arch.gcn_widths.clear();
  arch.head_widths.clear();
  if (with_gcn)
    for (int l = uniform_int(rng, 1, 2); l > 0; --l) arch.gcn_widths.push_back(uniform_int(rng, 2, 5));
  for (int l = uniform_int(rng, with_gcn ? 0 : 1, 2); l > 0; --l)
    arch.head_widths.push_back(uniform_int(rng, 2, 6));
  arch.output_width = uniform_int(rng, 1, 3);
  nn::Network net = nn::make_network(arch, nn::InitScheme::fan_in, rng);
  for (auto& d : net.head_layers) d.bias = random_matrix(rng, 1, d.bias.size(), 0.5).row(0);
  if (linear) {
    for (auto& g : net.gcn_layers) g.activation = nn::Activation::identity;
    for (auto& d : net.head_layers) d.activation = nn::Activation::identity;
  }
  return net;
}

// 0.5 * q * sum(out^2) + <c, out> for a fixed random c.
struct RandomLoss {
  Tensor2 c;
  double q = 0;
  Tensor2 gradient(const Tensor2& out) const { return q * out + c; }
  Real value(const RealMatrix& out) const {
    return Real(0.5 * q) * out.squaredNorm() + (widen(c).array() * out.array()).sum();
  }
};

GradCheckCase network_case(const std::string& name, int configs, std::mt19937_64& rng, bool with_gcn,
                           bool linear, double tol) {
  GradCheckCase res{name, configs, 0.0, tol};
  for (int c = 0; c < configs; ++c) {
    for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
      const int nodes = with_gcn ? uniform_int(rng, 2, 8) : 1;
      const Index batch = uniform_int(rng, 1, 3);
      const Index width = uniform_int(rng, 1, 4);
      const auto adj = with_gcn ? grid::normalize_adjacency(grid::build_adjacency(random_topology(rng, nodes)))
                                : grid::NormalizedAdjacency(Tensor2::Identity(1, 1));
      nn::Network net = random_network(rng, width, with_gcn, linear);
      Tensor2 x = random_matrix(rng, batch * nodes, width, 2.0);
      nn::ForwardCache cache;
      Tensor2 out = nn::forward(net, x, adj, batch, &cache);
      if (!linear && kink_distance(net, cache) < kKinkMargin) continue;
      const RandomLoss loss{random_matrix(rng, batch, net.output_width()), linear ? 0.0 : 1.0};

      const auto analytic = flatten(nn::backward(net, cache, adj, loss.gradient(out)).grads);
      const RealMatrix xs = widen(x), s = widen(adj.dense());
      const auto numeric =
          numeric_gradient(net, [&] { return loss.value(reference_forward(net, xs, s, batch)); });
      res.max_error = std::max(res.max_error, nn::max_relative_error(numeric, analytic));
      break;
    }
  }
  return res;
}

struct RlFixture {
  grid::GridTopology topo;
  std::vector<market::GenerationUnit> units;
  rl::Encoder enc;
  rl::Agent agent;
  std::vector<rl::Transition> batch;
};

RlFixture random_rl_fixture(std::mt19937_64& rng) {
  const int n_buses = uniform_int(rng, 2, 7);
  auto topo = random_topology(rng, n_buses);
  std::vector<market::GenerationUnit> units;
  const int n_units = uniform_int(rng, 1, std::min(3, n_buses));
  for (int i = 0; i < n_units; ++i)
    units.push_back({i, uniform(rng, 0.5, 4.0), 0.0, uniform(rng, 20, 100), uniform(rng, 1.5, 3.0), 0.0,
                     uniform_int(rng, 0, n_buses - 1)});
  const auto method = uniform(rng, 0, 1) < 0.5 ? rl::Method::gcn : rl::Method::mlp;
  rl::Encoder enc(method, topo, units, rl::default_scales(units));

  rl::AgentConfig cfg;
  cfg.batch_size = static_cast<std::size_t>(uniform_int(rng, 1, 5));
  cfg.gcn_widths = {uniform_int(rng, 2, 5), uniform_int(rng, 2, 5)};
  cfg.head_widths = {uniform_int(rng, 2, 6)};
  cfg.gamma = uniform(rng, 0.0, 0.95);
  const auto& unit = units[uniform_int(rng, 0, n_units - 1)];
  rl::Agent agent = rl::make_agent(unit, method, cfg, rng());
  for (auto* net : {&agent.critic, &agent.target_critic, &agent.target_actor})
    for (auto& d : net->head_layers) d.bias = random_matrix(rng, 1, d.bias.size(), 0.5).row(0);

  std::vector<rl::Transition> batch;
  const double hi = market::total_max(units);
  for (std::size_t b = 0; b < cfg.batch_size; ++b) {
    rl::Transition t;
    t.state = {uniform(rng, 0.5, 8.0), uniform(rng, 0.2, 1.0) * hi};
    t.next_state = {uniform(rng, 0.5, 8.0), uniform(rng, 0.2, 1.0) * hi};
    t.action = uniform(rng, 1.0, unit.k_max);
    t.reward = uniform(rng, -50, 300);
    t.terminal = uniform(rng, 0, 1) < 0.2;
    batch.push_back(t);
  }
  return {std::move(topo), std::move(units), std::move(enc), std::move(agent), std::move(batch)};
}

std::vector<rl::MarketState> states_of(const std::vector<rl::Transition>& batch) {
  std::vector<rl::MarketState> s;
  for (const auto& t : batch) s.push_back(t.state);
  return s;
}

GradCheckCase critic_case(int configs, std::mt19937_64& rng) {
  GradCheckCase res{"critic_loss", configs, 0.0, 1e-4};
  for (int c = 0; c < configs; ++c) {
    for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
      auto fx = random_rl_fixture(rng);
      const auto states = states_of(fx.batch);
      std::vector<double> actions;
      for (const auto& t : fx.batch) actions.push_back(t.action);
      nn::ForwardCache cache;
      const Index n = static_cast<Index>(fx.batch.size());
      nn::forward(fx.agent.critic, fx.enc.critic_input(states, actions, fx.agent.id), fx.enc.adjacency(), n,
                  &cache);
      if (kink_distance(fx.agent.critic, cache) < kKinkMargin) continue;

      const auto targets = rl::critic_targets(fx.agent, fx.batch, fx.enc);
      const auto analytic = flatten(rl::critic_loss_and_gradient(fx.agent, fx.batch, targets, fx.enc).grads);
      const RealMatrix xs = widen(fx.enc.critic_input(states, actions, fx.agent.id));
      const RealMatrix s = widen(fx.enc.adjacency().dense());
      const auto numeric = numeric_gradient(fx.agent.critic, [&] {
        const RealMatrix q = reference_forward(fx.agent.critic, xs, s, n);
        Real sum = 0;
        for (Index b = 0; b < n; ++b) sum += (Real(targets[b]) - q(b, 0)) * (Real(targets[b]) - q(b, 0));
        return sum / Real(n);
      });
      res.max_error = std::max(res.max_error, nn::max_relative_error(numeric, analytic));
      break;
    }
  }
  return res;
}

GradCheckCase actor_case(int configs, std::mt19937_64& rng) {
  GradCheckCase res{"actor_loss", configs, 0.0, 1e-4};
  for (int c = 0; c < configs; ++c) {
    for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
      auto fx = random_rl_fixture(rng);
      const auto states = states_of(fx.batch);
      const Index n = static_cast<Index>(fx.batch.size());
      nn::ForwardCache actor_cache;
      Tensor2 raw = nn::forward(fx.agent.actor, fx.enc.actor_input(states), fx.enc.adjacency(), n, &actor_cache);
      if (kink_distance(fx.agent.actor, actor_cache) < kKinkMargin) continue;
      bool near_bound = false;
      std::vector<double> actions;
      for (Index b = 0; b < n; ++b) {
        near_bound |= std::abs(raw(b, 0) - 1.0) < kKinkMargin || std::abs(raw(b, 0) - fx.agent.k_max) < kKinkMargin;
        actions.push_back(rl::clip_action(raw(b, 0), fx.agent.k_max));
      }
      if (near_bound) continue;
      nn::ForwardCache critic_cache;
      nn::forward(fx.agent.critic, fx.enc.critic_input(states, actions, fx.agent.id), fx.enc.adjacency(), n,
                  &critic_cache);
      if (kink_distance(fx.agent.critic, critic_cache) < kKinkMargin) continue;

      const auto analytic = flatten(rl::actor_loss_and_gradient(fx.agent, fx.batch, fx.enc).grads);
      const RealMatrix xa = widen(fx.enc.actor_input(states));
      const RealMatrix xc = widen(fx.enc.critic_input(states, actions, fx.agent.id));
      const RealMatrix s = widen(fx.enc.adjacency().dense());
      const Real k_max = fx.agent.k_max;
      const auto numeric = numeric_gradient(fx.agent.actor, [&] {
        const RealMatrix raw_ld = reference_forward(fx.agent.actor, xa, s, n);
        RealMatrix x = xc;
        for (Index b = 0; b < n; ++b) {
          auto [r, col] = fx.enc.action_entry(b, fx.agent.id);
          x(r, col) = std::clamp(raw_ld(b, 0), Real(1), k_max);
        }
        return -reference_forward(fx.agent.critic, x, s, n).mean();
      });
      res.max_error = std::max(res.max_error, nn::max_relative_error(numeric, analytic));
      break;
    }
  }
  return res;
}

}  // namespace

std::vector<GradCheckCase> run_gradcheck_suite(int configs, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<GradCheckCase> out;
  out.push_back(network_case("dense", configs, rng, false, false, 1e-4));
  out.push_back(network_case("gcn", configs, rng, true, false, 1e-4));
  out.push_back(network_case("linear", configs, rng, true, true, 1e-8));
  out.push_back(critic_case(configs, rng));
  out.push_back(actor_case(configs, rng));
  return out;
}

}  // namespace gcnbid::diagnostics
