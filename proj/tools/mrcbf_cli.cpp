#include "mrcbf/config.hpp"
#include "mrcbf/csv.hpp"
#include "mrcbf/oracles.hpp"
#include "mrcbf/sim.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#ifndef MRCBF_VERSION
#define MRCBF_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using namespace mrcbf;

namespace {

struct CommonOptions {
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  bool quiet = false;
};

void provenance(std::ostream& os, const std::string& hash, std::uint64_t seed) {
  os << "# config_hash=" << hash << "\n# seed=" << seed << "\n# version=" << MRCBF_VERSION << '\n';
}

// Flag, then MRCBF_OUT_DIR, then the config.
fs::path resolve_out_dir(const CommonOptions& opt, const RunConfig& cfg) {
  if (!opt.out_dir.empty()) return opt.out_dir;
  if (const char* env = std::getenv("MRCBF_OUT_DIR"); env && *env) return env;
  return cfg.output.dir;
}

std::ofstream open_output(const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write '" + path.string() + "'");
  return os;
}

RunConfig load(const std::string& path, const CommonOptions& opt) {
  RunConfig cfg = load_run_config(path);
  if (opt.seed) cfg.scenario.noise_seed = *opt.seed;
  return cfg;
}

int cmd_run(const std::string& path, const CommonOptions& opt) {
  const RunConfig cfg = load(path, opt);
  const SimSetup setup = build_setup(cfg);
  const TrajectoryLog log = run(cfg.scenario, setup);
  const SafetyReport rep = safety_audit(log);
  const fs::path dir = resolve_out_dir(opt, cfg);

  const fs::path csv = dir / (cfg.output.prefix + ".csv");
  {
    auto os = open_output(csv);
    provenance(os, cfg.hash, cfg.scenario.noise_seed);
    write_trajectory_csv(os, log);
  }

  std::ostringstream summary;
  summary << "config: " << path << '\n'
          << "verdict: " << (rep.safe() ? "safe" : "VIOLATION") << '\n';
  if (rep.first_crossing) summary << "first crossing at t = " << format_number(*rep.first_crossing) << " s\n";
  summary << "min h_b(x) " << format_number(rep.min_hb_x) << ", max estimation error "
          << format_number(rep.max_error) << ", infeasible steps " << rep.infeasible_steps << "\n\n";
  write_audit(summary, rep);
  const fs::path audit = dir / (cfg.output.prefix + "_audit.txt");
  {
    auto os = open_output(audit);
    provenance(os, cfg.hash, cfg.scenario.noise_seed);
    os << summary.str();
  }
  if (!opt.quiet) std::cout << summary.str() << "trajectory: " << csv.string() << "\naudit: " << audit.string() << '\n';
  return 0;
}

LipschitzBundle pointwise_max(const std::vector<RobustBarrier>& barriers) {
  LipschitzBundle out = barriers.front().lips;
  for (const auto& rb : barriers) {
    out.L_Lfh = std::max(out.L_Lfh, rb.lips.L_Lfh);
    out.L_Lgh = std::max(out.L_Lgh, rb.lips.L_Lgh);
    out.L_alpha_h = std::max(out.L_alpha_h, rb.lips.L_alpha_h);
  }
  return out;
}

int cmd_field(const std::string& path, const std::string& which, const CommonOptions& opt) {
  const RunConfig cfg = load(path, opt);
  if (which == "required_count" && !cfg.perception) {
    throw ConfigError("field required_count needs a [perception] section");
  }
  const SimSetup setup = build_setup(cfg);
  const auto& rb = setup.barriers;
  const LipschitzBundle shared = pointwise_max(rb);
  std::optional<NonparametricBound> bound;
  if (which == "required_count") {
    bound = setup.perception->bound;
    if (!bound) throw ConfigError("field required_count: perception has no error bound");
  }

  auto value = [&](const State& x) {
    if (which == "eps_bar") {
      double v = kInf;
      for (const auto& b : rb) v = std::min(v, eps_bar(b.barrier, setup.sys, x, b.lips));
      return v;
    }
    if (which == "prop1") return prop1_eps_bar(rb[0].barrier, rb[1].barrier, setup.sys, x, shared);
    return corollary1_required_count(rb, setup.sys, x, *bound);
  };

  const auto& oc = cfg.output;
  const double ts = cfg.barrier.theta_star;
  const fs::path out = resolve_out_dir(opt, cfg) / (oc.prefix + "_field_" + which + ".csv");
  auto os = open_output(out);
  provenance(os, cfg.hash, cfg.scenario.noise_seed);
  os << "theta,theta_dot,hb," << which << '\n';
  const int n = oc.field_points;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      State x = State::Zero(4);
      x[segway_index::theta] = ts - oc.field_theta_span + 2.0 * oc.field_theta_span * i / (n - 1.0);
      x[segway_index::theta_dot] = -oc.field_rate_span + 2.0 * oc.field_rate_span * j / (n - 1.0);
      os << format_number(x[segway_index::theta]) << ',' << format_number(x[segway_index::theta_dot]) << ','
         << format_number(hb_value(rb, x)) << ',' << format_number(value(x)) << '\n';
    }
  }
  if (!opt.quiet) std::cout << "field " << which << ": " << out.string() << '\n';
  return 0;
}

int cmd_oracle(const std::string& suite, const CommonOptions& opt) {
  OracleReport rep;
  if (suite == "socp") {
    SocpOracleOptions o;
    if (opt.seed) o.seed = *opt.seed;
    rep = socp_oracle(o);
  } else if (suite == "lemma5") {
    Lemma5OracleOptions o;
    if (opt.seed) o.seed = *opt.seed;
    rep = lemma5_oracle(o);
  } else {
    NwOracleOptions o;
    if (opt.seed) o.seed = *opt.seed;
    rep = nw_oracle(o);
  }
  if (!opt.quiet || !rep.pass) {
    std::cout << "oracle " << rep.suite << ": " << rep.passed << '/' << rep.total << " passed";
    if (rep.excluded) std::cout << ", " << rep.excluded << " excluded as ties";
    std::cout << ", worst " << format_number(rep.worst) << (rep.pass ? " PASS" : " FAIL") << '\n';
  }
  if (!rep.pass && !rep.failing_seeds.empty()) {
    std::cout << "failing " << (suite == "nw" ? "trials" : "seeds") << ':';
    const std::size_t shown = std::min<std::size_t>(rep.failing_seeds.size(), 50);
    for (std::size_t i = 0; i < shown; ++i) std::cout << ' ' << rep.failing_seeds[i];
    if (shown < rep.failing_seeds.size()) std::cout << " ...";
    std::cout << '\n';
  }
  return rep.pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Measurement-robust CBF filters on a planar Segway"};
  app.set_version_flag("--version", std::string(MRCBF_VERSION));
  app.require_subcommand(1);
  CommonOptions opt;
  std::uint64_t seed = 0;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", seed, "Override the scenario noise seed (oracle: base seed)");
    sub->add_option("--out-dir", opt.out_dir, "Output directory (overrides MRCBF_OUT_DIR and the config)");
    sub->add_flag("--quiet", opt.quiet, "Print nothing on success");
  };

  std::string config, which, suite;
  auto* run_cmd = app.add_subcommand("run", "Simulate a scenario and write its trajectory and audit");
  run_cmd->add_option("config", config, "Scenario config (.ini or .json)")->required();
  add_common(run_cmd);

  auto* field_cmd = app.add_subcommand("field", "Export a field over the (theta, theta_dot) box");
  field_cmd->add_option("config", config, "Scenario config (.ini or .json)")->required();
  field_cmd->add_option("--which", which, "Field to export")
      ->required()
      ->check(CLI::IsMember({"eps_bar", "prop1", "required_count"}));
  add_common(field_cmd);

  auto* oracle_cmd = app.add_subcommand("oracle", "Run a brute-force comparison suite");
  oracle_cmd->add_option("suite", suite, "Suite name")->required()->check(CLI::IsMember({"socp", "lemma5", "nw"}));
  add_common(oracle_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }
  for (auto* sub : {run_cmd, field_cmd, oracle_cmd}) {
    if (sub->count("--seed")) opt.seed = seed;
  }

  try {
    if (*run_cmd) return cmd_run(config, opt);
    if (*field_cmd) return cmd_field(config, which, opt);
    return cmd_oracle(suite, opt);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
