#include "mdrlab/agent.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <span>
#include <type_traits>

#include "mdrlab/error.hpp"

namespace mdrlab {

// --- categorical distribution ------------------------------------------------------

CategoricalDistribution CategoricalDistribution::from_logits(std::vector<double> logits) {
  if (logits.empty()) throw ShapeError("categorical: no actions");
  CategoricalDistribution d;
  double mx = logits[0];
  for (double v : logits) {
    if (!std::isfinite(v)) throw NumericError("categorical: non-finite logit");
    mx = std::max(mx, v);
  }
  double z = 0.0;
  for (double v : logits) z += std::exp(v - mx);
  const double lz = mx + std::log(z);
  d.log_probs.reserve(logits.size());
  for (double v : logits) d.log_probs.push_back(v - lz);
  d.logits = std::move(logits);
  return d;
}

double CategoricalDistribution::prob(std::size_t action) const { return std::exp(log_probs.at(action)); }

std::vector<double> CategoricalDistribution::probs() const {
  std::vector<double> p;
  p.reserve(log_probs.size());
  for (double lp : log_probs) p.push_back(std::exp(lp));
  return p;
}

double log_prob(const CategoricalDistribution& dist, std::size_t action) {
  if (action >= dist.num_actions()) {
    throw ShapeError("log_prob: action " + std::to_string(action) + " out of range for " +
                     std::to_string(dist.num_actions()) + " actions");
  }
  return dist.log_probs[action];
}

double entropy(const CategoricalDistribution& dist) {
  double h = 0.0;
  for (double lp : dist.log_probs) h -= std::exp(lp) * lp;
  return std::max(h, 0.0);
}

std::size_t sample(const CategoricalDistribution& dist, Rng& rng) {
  const double u = rng.uniform();
  double cdf = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t a = 0; a < dist.num_actions(); ++a) {
    const double p = std::exp(dist.log_probs[a]);
    if (p > 0.0) last_positive = a;
    cdf += p;
    if (u < cdf) return a;
  }
  // Rounding left cdf slightly below 1.
  return last_positive;
}

// --- network -----------------------------------------------------------------------

namespace {

void he_uniform(Parameter& w, Rng& rng, double gain) {
  const double fan_in = static_cast<double>(w.value.dim(1));
  const double bound = gain * std::sqrt(6.0 / fan_in);
  for (double& v : w.value.data()) v = rng.uniform(-bound, bound);
}

}  // namespace

ActorCritic::ActorCritic(NetworkSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  if (spec_.input_dim == 0 || spec_.num_actions == 0) throw ConfigError("network: input_dim and num_actions must be positive");
  Rng init(derive_seed(seed, Stream::kInit));
  std::size_t width = spec_.input_dim;
  std::uint64_t dropout_index = 0;
  for (std::size_t h : spec_.hidden) {
    LinearLayer lin(width, h);
    he_uniform(lin.weight, init, 1.0);
    backbone_.emplace_back(std::move(lin));
    if (spec_.batchnorm) backbone_.emplace_back(BatchNormLayer(h, spec_.bn_momentum, spec_.bn_eta));
    backbone_.emplace_back(ActivationLayer{spec_.activation});
    if (spec_.dropout) {
      backbone_.emplace_back(DropoutLayer(spec_.dropout_rate, derive_seed(seed, Stream::kDropout, dropout_index++)));
    }
    width = h;
  }
  actor_head_ = LinearLayer(width, spec_.num_actions);
  he_uniform(actor_head_.weight, init, spec_.actor_head_scale);
  value_head_ = LinearLayer(width, 1);
  he_uniform(value_head_.weight, init, 1.0);
  set_mode(Mode::Eval);
}

PolicyOutput ActorCritic::forward(Tape& tape, const Tensor& obs, Mode mode) {
  if (obs.rank() != 2 || obs.dim(1) != spec_.input_dim) {
    throw ShapeError("actor-critic: expected observations (batch, " + std::to_string(spec_.input_dim) + "), got " +
                     shape_string(obs.shape()));
  }
  Var h = tape.constant(obs);
  for (Layer& layer : backbone_) {
    h = std::visit(
        [&](auto& l) -> Var {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, LinearLayer>) {
            return l.forward(tape, h);
          } else if constexpr (std::is_same_v<T, BatchNormLayer>) {
            return l.forward(tape, h, mode).y;
          } else if constexpr (std::is_same_v<T, DropoutLayer>) {
            return l.forward(tape, h, mode);
          } else {
            return l.forward(h);
          }
        },
        layer);
  }
  PolicyOutput out;
  out.logits = actor_head_.forward(tape, h);
  Var v = value_head_.forward(tape, h);
  out.values = sum(v, 1);
  return out;
}

PolicyEvaluation ActorCritic::evaluate(const Tensor& obs, Mode mode) {
  Tape tape;
  PolicyOutput out = forward(tape, obs, mode);
  const Tensor& logits = out.logits.value();
  const std::size_t m = logits.dim(0), n = logits.dim(1);
  PolicyEvaluation ev;
  ev.dists.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    std::vector<double> row(logits.data().begin() + static_cast<std::ptrdiff_t>(i * n),
                            logits.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * n));
    ev.dists.push_back(CategoricalDistribution::from_logits(std::move(row)));
  }
  ev.values = out.values.value().values();
  return ev;
}

void ActorCritic::set_mode(Mode mode) {
  mode_ = mode;
  for (Layer& layer : backbone_) {
    if (auto* bn = std::get_if<BatchNormLayer>(&layer)) bn->set_mode(mode);
    if (auto* dr = std::get_if<DropoutLayer>(&layer)) dr->set_mode(mode);
  }
}

bool ActorCritic::has_mode_dependent_layers() const {
  for (const Layer& layer : backbone_) {
    if (is_mode_dependent(layer)) return true;
  }
  return false;
}

std::vector<Mode> ActorCritic::layer_modes() const {
  std::vector<Mode> modes;
  for (const Layer& layer : backbone_) {
    if (auto* bn = std::get_if<BatchNormLayer>(&layer)) modes.push_back(bn->mode());
    if (auto* dr = std::get_if<DropoutLayer>(&layer)) modes.push_back(dr->mode());
  }
  return modes;
}

std::vector<Parameter*> ActorCritic::parameters() {
  std::vector<Parameter*> out;
  for (Layer& layer : backbone_) {
    if (auto* lin = std::get_if<LinearLayer>(&layer)) {
      out.push_back(&lin->weight);
      out.push_back(&lin->bias);
    } else if (auto* bn = std::get_if<BatchNormLayer>(&layer)) {
      out.push_back(&bn->gamma);
      out.push_back(&bn->beta);
    }
  }
  out.push_back(&actor_head_.weight);
  out.push_back(&actor_head_.bias);
  out.push_back(&value_head_.weight);
  out.push_back(&value_head_.bias);
  return out;
}

std::vector<const Parameter*> ActorCritic::parameters() const {
  auto mut = const_cast<ActorCritic*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

std::size_t ActorCritic::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter* p : parameters()) n += p->value.size();
  return n;
}

BufferState ActorCritic::buffers() const {
  BufferState s;
  for (const Layer& layer : backbone_) {
    if (auto* bn = std::get_if<BatchNormLayer>(&layer)) {
      s.running_mean.push_back(bn->running_mean);
      s.running_var.push_back(bn->running_var);
    } else if (auto* dr = std::get_if<DropoutLayer>(&layer)) {
      s.dropout_rngs.push_back(dr->rng());
    }
  }
  return s;
}

void ActorCritic::restore_buffers(const BufferState& state) {
  std::size_t ib = 0, id = 0;
  for (Layer& layer : backbone_) {
    if (auto* bn = std::get_if<BatchNormLayer>(&layer)) {
      bn->running_mean = state.running_mean.at(ib);
      bn->running_var = state.running_var.at(ib);
      ++ib;
    } else if (auto* dr = std::get_if<DropoutLayer>(&layer)) {
      dr->rng() = state.dropout_rngs.at(id++);
    }
  }
}

std::uint64_t ActorCritic::buffer_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  };
  const BufferState s = buffers();
  for (const auto& v : s.running_mean) {
    for (double x : v) mix(std::bit_cast<std::uint64_t>(x));
  }
  for (const auto& v : s.running_var) {
    for (double x : v) mix(std::bit_cast<std::uint64_t>(x));
  }
  for (const Rng& r : s.dropout_rngs) {
    std::ostringstream os;
    os << r.engine();
    for (char c : os.str()) mix(static_cast<unsigned char>(c));
  }
  return h;
}

// --- checkpoint --------------------------------------------------------------------

namespace {

constexpr const char* kCheckpointMagic = "mdrlab-checkpoint";
constexpr int kCheckpointVersion = 1;

std::string hex(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

void write_values(std::ostream& os, const std::string& tag, std::span<const double> values) {
  os << tag << ' ' << values.size();
  for (double v : values) os << ' ' << hex(v);
  os << '\n';
}

void write_tensor(std::ostream& os, const std::string& tag, const Tensor& t) {
  os << tag << ' ' << t.rank();
  for (auto d : t.shape()) os << ' ' << d;
  os << '\n';
  write_values(os, "data", t.data());
}

class Reader {
 public:
  explicit Reader(std::istream& is) : is_(is) {}

  std::string word() {
    std::string w;
    if (!(is_ >> w)) throw Error("checkpoint: unexpected end of file");
    return w;
  }
  void expect(const std::string& w) {
    const std::string got = word();
    if (got != w) throw Error("checkpoint: expected '" + w + "', got '" + got + "'");
  }
  std::size_t size() { return static_cast<std::size_t>(std::stoull(word())); }
  double real() {
    const std::string w = word();
    char* end = nullptr;
    const double v = std::strtod(w.c_str(), &end);
    if (end == w.c_str() || *end != '\0') throw Error("checkpoint: bad number '" + w + "'");
    return v;
  }
  std::vector<double> values(const std::string& tag) {
    expect(tag);
    const std::size_t n = size();
    std::vector<double> out(n);
    for (auto& v : out) v = real();
    return out;
  }
  Tensor tensor(const std::string& tag) {
    expect(tag);
    const std::size_t rank = size();
    Shape shape(rank);
    for (auto& d : shape) d = size();
    return Tensor(shape, values("data"));
  }
  Mode mode() {
    const std::string w = word();
    if (w == "train") return Mode::Train;
    if (w == "eval") return Mode::Eval;
    throw Error("checkpoint: bad mode '" + w + "'");
  }
  std::istream& stream() { return is_; }

 private:
  std::istream& is_;
};

void write_linear(std::ostream& os, const LinearLayer& l) {
  os << "linear " << l.out_features() << ' ' << l.in_features() << '\n';
  write_tensor(os, "weight", l.weight.value);
  write_tensor(os, "bias", l.bias.value);
}

LinearLayer read_linear(Reader& r) {
  const std::size_t out = r.size();
  const std::size_t in = r.size();
  LinearLayer l(in, out);
  l.weight.value = r.tensor("weight");
  l.bias.value = r.tensor("bias");
  if (l.weight.value.shape() != Shape{out, in} || l.bias.value.shape() != Shape{out}) {
    throw Error("checkpoint: linear layer shape mismatch");
  }
  l.weight.zero_grad();
  l.bias.zero_grad();
  return l;
}

}  // namespace

void ActorCritic::save(std::ostream& os) const {
  os << kCheckpointMagic << " v" << kCheckpointVersion << '\n';
  os << "spec " << spec_.input_dim << ' ' << spec_.num_actions << ' '
     << (spec_.activation == ActivationKind::Tanh ? "tanh" : "relu") << ' ' << int(spec_.batchnorm) << ' '
     << hex(spec_.bn_momentum) << ' ' << hex(spec_.bn_eta) << ' ' << int(spec_.dropout) << ' '
     << hex(spec_.dropout_rate) << ' ' << hex(spec_.actor_head_scale) << '\n';
  os << "hidden " << spec_.hidden.size();
  for (auto h : spec_.hidden) os << ' ' << h;
  os << '\n';
  os << "mode " << to_string(mode_) << '\n';
  os << "layers " << backbone_.size() << '\n';
  for (const Layer& layer : backbone_) {
    if (auto* lin = std::get_if<LinearLayer>(&layer)) {
      write_linear(os, *lin);
    } else if (auto* bn = std::get_if<BatchNormLayer>(&layer)) {
      os << "batchnorm " << bn->features() << ' ' << hex(bn->momentum()) << ' ' << hex(bn->eta()) << ' '
         << to_string(bn->mode()) << '\n';
      write_tensor(os, "gamma", bn->gamma.value);
      write_tensor(os, "beta", bn->beta.value);
      write_values(os, "running_mean", bn->running_mean);
      write_values(os, "running_var", bn->running_var);
    } else if (auto* dr = std::get_if<DropoutLayer>(&layer)) {
      os << "dropout " << hex(dr->rate()) << ' ' << to_string(dr->mode()) << '\n';
      os << "rng " << dr->rng().engine() << '\n';
    } else {
      const auto& act = std::get<ActivationLayer>(layer);
      os << "activation " << (act.kind == ActivationKind::Tanh ? "tanh" : "relu") << '\n';
    }
  }
  os << "actor_head ";
  write_linear(os, actor_head_);
  os << "value_head ";
  write_linear(os, value_head_);
  os << "end\n";
}

ActorCritic ActorCritic::load(std::istream& is) {
  Reader r(is);
  r.expect(kCheckpointMagic);
  const std::string version = r.word();
  if (version != "v" + std::to_string(kCheckpointVersion)) {
    throw Error("checkpoint: unsupported version '" + version + "'");
  }
  ActorCritic net;
  r.expect("spec");
  net.spec_.input_dim = r.size();
  net.spec_.num_actions = r.size();
  net.spec_.activation = r.word() == "tanh" ? ActivationKind::Tanh : ActivationKind::Relu;
  net.spec_.batchnorm = r.size() != 0;
  net.spec_.bn_momentum = r.real();
  net.spec_.bn_eta = r.real();
  net.spec_.dropout = r.size() != 0;
  net.spec_.dropout_rate = r.real();
  net.spec_.actor_head_scale = r.real();
  r.expect("hidden");
  net.spec_.hidden.resize(r.size());
  for (auto& h : net.spec_.hidden) h = r.size();
  r.expect("mode");
  net.mode_ = r.mode();
  r.expect("layers");
  const std::size_t count = r.size();
  for (std::size_t i = 0; i < count; ++i) {
    const std::string kind = r.word();
    if (kind == "linear") {
      net.backbone_.emplace_back(read_linear(r));
    } else if (kind == "batchnorm") {
      const std::size_t features = r.size();
      const double momentum = r.real();
      const double eta = r.real();
      BatchNormLayer bn(features, momentum, eta);
      bn.set_mode(r.mode());
      bn.gamma.value = r.tensor("gamma");
      bn.beta.value = r.tensor("beta");
      bn.running_mean = r.values("running_mean");
      bn.running_var = r.values("running_var");
      if (bn.gamma.value.size() != features || bn.running_mean.size() != features ||
          bn.running_var.size() != features) {
        throw Error("checkpoint: batchnorm feature mismatch");
      }
      net.backbone_.emplace_back(std::move(bn));
    } else if (kind == "dropout") {
      const double rate = r.real();
      DropoutLayer dr(rate, 0);
      dr.set_mode(r.mode());
      r.expect("rng");
      r.stream() >> dr.rng().engine();
      if (!r.stream()) throw Error("checkpoint: bad rng state");
      net.backbone_.emplace_back(std::move(dr));
    } else if (kind == "activation") {
      net.backbone_.emplace_back(ActivationLayer{r.word() == "tanh" ? ActivationKind::Tanh : ActivationKind::Relu});
    } else {
      throw Error("checkpoint: unknown layer '" + kind + "'");
    }
  }
  r.expect("actor_head");
  r.expect("linear");
  net.actor_head_ = read_linear(r);
  r.expect("value_head");
  r.expect("linear");
  net.value_head_ = read_linear(r);
  r.expect("end");
  return net;
}

void ActorCritic::save_file(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw Error("cannot open checkpoint for writing: " + path);
  save(os);
  if (!os) throw Error("failed writing checkpoint: " + path);
}

ActorCritic ActorCritic::load_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open checkpoint: " + path);
  return load(is);
}

}  // namespace mdrlab
