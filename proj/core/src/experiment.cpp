#include "mdrlab/experiment.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>

#include "mdrlab/diagnostics.hpp"
#include "mdrlab/error.hpp"
#include "mdrlab/rollout.hpp"

namespace mdrlab {

namespace fs = std::filesystem;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double optimal_return(const Environment& env) {
  if (const auto* p = dynamic_cast<const PatchLocEnv*>(&env)) return p->optimal_return();
  return 1.0;
}

void mean_std(const std::vector<double>& xs, double& mean, double& sd) {
  if (xs.empty()) {
    mean = kNaN;
    sd = kNaN;
    return;
  }
  double s = 0.0;
  for (double x : xs) s += x;
  mean = s / static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  sd = std::sqrt(ss / static_cast<double>(xs.size()));
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

const std::vector<std::string>& csv_columns() {
  static const std::vector<std::string> cols{
      "mode",          "seed",          "step",
      "env_steps",     "episodes",      "reward_mean",
      "reward_std",    "reward_norm",   "mismatch_pre",
      "mismatch_post", "delta_r_mean_abs", "delta_r_max_abs",
      "delta_eps",     "clip_fraction", "entropy",
      "loss_total",    "loss_clip",     "loss_value",
      "standard_updates", "rectification_updates", "eval_train_reward",
      "eval_test_reward", "wallclock"};
  return cols;
}

std::string csv_header() {
  std::string out;
  for (const auto& c : csv_columns()) {
    if (!out.empty()) out += ',';
    out += c;
  }
  return out;
}

std::string format_csv_row(const RunRecord& r) {
  std::ostringstream os;
  os << r.mode << ',' << r.seed << ',' << r.step << ',' << r.env_steps << ',' << r.episodes << ','
     << fmt(r.reward_mean) << ',' << fmt(r.reward_std) << ',' << fmt(r.reward_norm) << ',' << fmt(r.mismatch_pre)
     << ',' << fmt(r.mismatch_post) << ',' << fmt(r.delta_r_mean_abs) << ',' << fmt(r.delta_r_max_abs) << ','
     << fmt(r.delta_eps) << ',' << fmt(r.clip_fraction) << ',' << fmt(r.entropy) << ',' << fmt(r.loss_total) << ','
     << fmt(r.loss_clip) << ',' << fmt(r.loss_value) << ',' << r.standard_updates << ',' << r.rectification_updates
     << ',' << fmt(r.eval_train_reward) << ',' << fmt(r.eval_test_reward) << ',' << fmt(r.wallclock);
  return os.str();
}

std::string csv_file_name(ModePlan mode, std::uint64_t seed) {
  return std::string(to_string(mode)) + "_seed" + std::to_string(seed) + ".csv";
}

double evaluate_policy(const Environment& prototype, ActorCritic& net, std::size_t episodes, std::uint64_t seed) {
  if (episodes == 0) return kNaN;
  auto env = prototype.clone();
  Rng rng(derive_seed(seed, Stream::kEvaluation));
  double total = 0.0;
  const std::size_t n = env->observation_size();
  for (std::size_t e = 0; e < episodes; ++e) {
    std::vector<double> obs = env->reset(e);
    double ret = 0.0;
    for (;;) {
      const PolicyEvaluation ev = net.evaluate(Tensor(Shape{1, n}, obs), Mode::Eval);
      const StepResult sr = env->step(sample(ev.dists[0], rng));
      ret += sr.reward;
      if (sr.done) break;
      obs = sr.obs;
    }
    total += ret;
  }
  return total / static_cast<double>(episodes);
}

RunResult run_single(const ExperimentConfig& config, ModePlan mode, std::uint64_t seed, const RunOptions& options) {
  RunResult result;
  result.mode = mode;
  result.seed = seed;

  std::ofstream csv;
  if (!options.out_dir.empty()) {
    fs::create_directories(options.out_dir);
    result.csv_path = (fs::path(options.out_dir) / csv_file_name(mode, seed)).string();
    csv.open(result.csv_path, std::ios::binary | std::ios::trunc);
    if (!csv) throw Error("cannot write '" + result.csv_path + "'");
    csv << "#schema=" << kCsvSchema << '\n' << csv_header() << '\n';
    csv.flush();
  }

  const auto start = std::chrono::steady_clock::now();
  std::size_t k = 0;
  try {
    const auto prototype = make_env(config.env, config.env_overrides);
    std::unique_ptr<Environment> held_out;
    if (config.eval_every > 0) {
      EnvOverrides shifted = config.env_overrides;
      const auto levels = shifted.find("levels");
      if (levels != shifted.end() && levels->second > 0) {
        shifted["level_offset"] = shifted["level_offset"] + levels->second;
        held_out = make_env(config.env, shifted);
      }
    }
    const double norm = optimal_return(*prototype);
    const MdrSchedule schedule = config.schedule(mode);
    const Mode update_mode = schedule.standard_epochs > 0 ? Mode::Train : Mode::Eval;

    ActorCritic net(config.network(mode, prototype->observation_size(), prototype->num_actions()), seed);
    EnvPool pool(*prototype, config.num_envs, seed);
    AdamOptions adam_opts;
    adam_opts.lr = config.ppo.lr;
    adam_opts.weight_decay = config.ppo.weight_decay;
    Adam adam(net.parameters(), adam_opts);
    Rng shuffle_rng(derive_seed(seed, Stream::kShuffle));
    std::size_t env_steps = 0;

    for (k = 0; k < config.steps; ++k) {
      net.set_mode(Mode::Eval);
      RolloutBuffer buffer = collect(pool, net, config.steps_per_env);
      buffer.step = k;
      env_steps += buffer.size();
      recompute_targets(buffer, net, config.ppo.gamma, config.ppo.lambda, config.ppo.normalize_advantages);

      const std::uint64_t diag_seed = derive_seed(seed, Stream::kDiagnostics, k);
      const MismatchReport pre = policy_mismatch(buffer, net, config.ppo.minibatch, diag_seed, update_mode);
      const TrainLog log = train_step(buffer, net, config.ppo, schedule, adam, shuffle_rng);
      const MismatchReport post = policy_mismatch(buffer, net, config.ppo.minibatch, diag_seed, update_mode);
      const RatioPerturbationReport rp =
          ratio_perturbation(buffer, net, config.ppo.minibatch, config.ppo.clip_eps, diag_seed, update_mode);

      RunRecord r;
      r.mode = std::string(to_string(mode));
      r.seed = seed;
      r.step = k;
      r.env_steps = env_steps;
      r.episodes = buffer.episode_returns.size();
      mean_std(buffer.episode_returns, r.reward_mean, r.reward_std);
      r.reward_norm = r.reward_mean / norm;
      r.mismatch_pre = pre.mean;
      r.mismatch_post = post.mean;
      r.delta_r_mean_abs = rp.mean_abs;
      r.delta_r_max_abs = rp.max_abs;
      r.delta_eps = rp.delta_eps;
      const LossComponents lc = log.mean_loss();
      r.clip_fraction = log.mean_clip_fraction();
      r.entropy = lc.entropy;
      r.loss_total = lc.total;
      r.loss_clip = lc.clip;
      r.loss_value = lc.value;
      r.standard_updates = log.standard_updates;
      r.rectification_updates = log.rectification_updates;
      r.eval_train_reward = kNaN;
      r.eval_test_reward = kNaN;
      if (config.eval_every > 0 && ((k + 1) % config.eval_every == 0 || k + 1 == config.steps)) {
        const std::uint64_t eval_seed = derive_seed(seed, Stream::kEvaluation, k);
        r.eval_train_reward = evaluate_policy(*prototype, net, config.eval_episodes, eval_seed);
        if (held_out) r.eval_test_reward = evaluate_policy(*held_out, net, config.eval_episodes, eval_seed);
      }
      if (config.wallclock) {
        r.wallclock = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      }
      if (csv.is_open()) {
        csv << format_csv_row(r) << '\n';
        csv.flush();
      }
      if (options.log) {
        *options.log << to_string(mode) << " seed " << seed << " step " << k << " reward " << fmt(r.reward_mean)
                     << " mismatch " << fmt(r.mismatch_pre) << '\n';
      }
      result.records.push_back(std::move(r));

      const bool last = k + 1 == config.steps;
      if (config.checkpoints && !options.out_dir.empty() &&
          (last || (config.checkpoint_every > 0 && (k + 1) % config.checkpoint_every == 0))) {
        const fs::path dir = fs::path(options.out_dir) / "checkpoints";
        fs::create_directories(dir);
        net.save_file((dir / (std::string(to_string(mode)) + "_seed" + std::to_string(seed) + "_step" +
                              std::to_string(k + 1) + ".ckpt"))
                          .string());
      }
    }
  } catch (const std::exception& e) {
    result.error = "step " + std::to_string(k) + ": " + e.what();
    if (csv.is_open()) {
      std::string msg = *result.error;
      for (char& ch : msg) {
        if (ch == '\n' || ch == '\r') ch = ' ';
      }
      csv << "# error," << msg << '\n';
      csv.flush();
    }
  }
  return result;
}

std::vector<RunResult> run_experiment(const ExperimentConfig& config, const RunOptions& options,
                                      const std::string& build_hash) {
  config.validate();
  std::vector<RunResult> results;
  for (ModePlan mode : config.modes) {
    for (std::uint64_t seed : config.seeds) results.push_back(run_single(config, mode, seed, options));
  }
  if (!options.out_dir.empty()) {
    std::ostringstream os;
    os << "# mdrlab manifest\n";
    os << "# schema = " << kCsvSchema << '\n';
    os << "# build = " << build_hash << '\n';
    for (const auto& r : results) {
      os << "# file = " << fs::path(r.csv_path).filename().string() << " " << git_blob_sha1_file(r.csv_path);
      if (r.error) os << " error";
      os << '\n';
    }
    os << config.to_text();
    std::ofstream out(fs::path(options.out_dir) / "manifest.cfg", std::ios::binary | std::ios::trunc);
    out << os.str();
  }
  return results;
}

std::string git_blob_sha1(std::string_view content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw Error("sha1: cannot allocate digest context");
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, content.data(), content.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, digest, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw Error("sha1: digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned char b : std::string_view(reinterpret_cast<const char*>(digest), len)) {
    out += hex[b >> 4];
    out += hex[b & 15];
  }
  return out;
}

std::string git_blob_sha1_file(const std::string& path) { return git_blob_sha1(read_file(path)); }

}  // namespace mdrlab
