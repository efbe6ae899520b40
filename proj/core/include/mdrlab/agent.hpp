#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "mdrlab/layers.hpp"
#include "mdrlab/random.hpp"

namespace mdrlab {

struct NetworkSpec {
  std::size_t input_dim = 0;
  std::size_t num_actions = 0;
  std::vector<std::size_t> hidden{64, 64};
  ActivationKind activation = ActivationKind::Tanh;
  // Slot after each hidden linear layer.
  bool batchnorm = false;
  double bn_momentum = 0.1;
  double bn_eta = BatchNormLayer::kDefaultEta;
  // Slot after each hidden activation.
  bool dropout = false;
  double dropout_rate = 0.1;
  double actor_head_scale = 0.01;
};

// Softmax policy over a discrete action set, one row per state.
struct CategoricalDistribution {
  std::vector<double> logits;
  std::vector<double> log_probs;  // log-softmax of logits

  static CategoricalDistribution from_logits(std::vector<double> logits);

  std::size_t num_actions() const { return logits.size(); }
  double prob(std::size_t action) const;
  std::vector<double> probs() const;
};

double log_prob(const CategoricalDistribution& dist, std::size_t action);
double entropy(const CategoricalDistribution& dist);
std::size_t sample(const CategoricalDistribution& dist, Rng& rng);

// Outputs of one forward pass recorded on a tape.
struct PolicyOutput {
  Var logits;  // [batch, actions]
  Var values;  // [batch]
};

// Outputs with the tape discarded.
struct PolicyEvaluation {
  std::vector<CategoricalDistribution> dists;
  std::vector<double> values;
};

// Snapshot of every non-parameter buffer: BatchNorm running statistics and
// dropout random streams.
struct BufferState {
  std::vector<std::vector<double>> running_mean;
  std::vector<std::vector<double>> running_var;
  std::vector<Rng> dropout_rngs;
};

// Shared-backbone actor-critic. Actor and critic read the same backbone
// activations, so they share BatchNorm running statistics.
class ActorCritic {
 public:
  ActorCritic(NetworkSpec spec, std::uint64_t seed);

  // obs is [batch, input_dim]. Train mode updates BatchNorm running stats and
  // draws dropout masks.
  PolicyOutput forward(Tape& tape, const Tensor& obs, Mode mode);
  PolicyOutput forward(Tape& tape, const Tensor& obs) { return forward(tape, obs, mode_); }
  PolicyEvaluation evaluate(const Tensor& obs, Mode mode);

  // Switches every mode-dependent layer; the stored mode is what the
  // single-argument forward() uses.
  void set_mode(Mode mode);
  Mode mode() const { return mode_; }

  bool has_mode_dependent_layers() const;
  std::vector<Mode> layer_modes() const;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::size_t parameter_count() const;

  BufferState buffers() const;
  void restore_buffers(const BufferState& state);
  // FNV-1a over the bit patterns of every buffer.
  std::uint64_t buffer_hash() const;

  const NetworkSpec& spec() const { return spec_; }
  std::vector<Layer>& backbone() { return backbone_; }
  const std::vector<Layer>& backbone() const { return backbone_; }
  LinearLayer& actor_head() { return actor_head_; }
  LinearLayer& value_head() { return value_head_; }

  // Versioned text checkpoint; floats as hex so load(save(x)) is bit-exact.
  void save(std::ostream& os) const;
  static ActorCritic load(std::istream& is);
  void save_file(const std::string& path) const;
  static ActorCritic load_file(const std::string& path);

 private:
  ActorCritic() = default;

  NetworkSpec spec_;
  std::vector<Layer> backbone_;
  LinearLayer actor_head_{1, 1};
  LinearLayer value_head_{1, 1};
  Mode mode_ = Mode::Eval;
};

}  // namespace mdrlab
