#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "treewave/experiment.hpp"
#include "treewave/inverse.hpp"
#include "treewave/measurement.hpp"
#include "treewave/selfcheck.hpp"
#include "treewave/spectral.hpp"

using namespace treewave;

namespace {

constexpr int kExitClean = 0;
constexpr int kExitFailure = 1;
constexpr int kExitAmbiguous = 2;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::InvalidArgument, "cannot read " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_output(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::InvalidArgument, "cannot write " + path);
  out << text;
}

/// "min:max:count" with optional ":lin" or ":log" suffix; empty means the
/// tree-derived default.
std::vector<double> parse_s_grid(const std::string& text, const MetricTree& tree, int default_count) {
  if (text.empty()) return make_s_grid(default_s_grid(tree, default_count));
  std::vector<std::string> parts;
  std::stringstream ss(text);
  for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
  if (parts.size() < 3 || parts.size() > 4) throw Error(Errc::InvalidArgument, "--s-grid expects min:max:count[:lin|log]");
  SGridSpec spec;
  try {
    spec.min = std::stod(parts[0]);
    spec.max = std::stod(parts[1]);
    spec.count = std::stoi(parts[2]);
  } catch (const std::exception&) {
    throw Error(Errc::InvalidArgument, "--s-grid has a non-numeric field: " + text);
  }
  if (parts.size() == 4) {
    if (parts[3] == "lin") spec.logarithmic = false;
    else if (parts[3] != "log") throw Error(Errc::InvalidArgument, "--s-grid spacing must be lin or log");
  }
  return make_s_grid(spec);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Inverse problems for in-plane vibrating string trees: generate, simulate, invert, compare, selfcheck"};
  app.set_config("--config", "", "TOML/INI file with option values; command-line flags override it");
  app.require_subcommand(1);

  ExperimentConfig cfg;
  std::string shape = "random";
  std::string out_path;
  std::string s_grid;
  unsigned threads = 1;
  Tolerances tol;

  auto* gen = app.add_subcommand("gen", "Generate a seeded random tree");
  gen->add_option("--seed", cfg.seed, "Random seed")->capture_default_str();
  gen->add_option("--edges", cfg.edges, "Edge count, root edge included")->capture_default_str();
  gen->add_option("--depth", cfg.depth, "Largest number of edges on a root-to-leaf path")->capture_default_str();
  gen->add_option("--max-children", cfg.max_children, "Largest child count of a vertex")->capture_default_str();
  gen->add_option("--shape", shape, "random, two-edge or star")
      ->check(CLI::IsMember({"random", "two-edge", "star"}))
      ->capture_default_str();
  gen->add_option("--length-min", cfg.length_min)->capture_default_str();
  gen->add_option("--length-max", cfg.length_max)->capture_default_str();
  gen->add_option("--speed-min", cfg.speed_min, "Channel-1 speed range")->capture_default_str();
  gen->add_option("--speed-max", cfg.speed_max)->capture_default_str();
  gen->add_option("--ratio-min", cfg.ratio_min, "k2/k1 range")->capture_default_str();
  gen->add_option("--ratio-max", cfg.ratio_max)->capture_default_str();
  gen->add_option("--min-speed-separation", cfg.min_speed_separation)->capture_default_str();
  gen->add_option("--min-angle-separation", cfg.min_angle_separation, "Radians")->capture_default_str();
  bool allow_isotropic = false;
  gen->add_flag("--allow-isotropic", allow_isotropic, "Do not force k1 != k2");
  gen->add_option("--out", out_path, "Output file (stdout if omitted)");

  auto* sim = app.add_subcommand("simulate", "Response matrix and TW samples of a tree");
  std::string tree_path;
  sim->add_option("tree", tree_path, "Tree file")->required();
  sim->add_option("--horizon-factor", cfg.horizon_factor, "Horizon as a multiple of d(Omega)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sim->add_option("--exact-factor", cfg.exact_factor, "Exact spikes up to this multiple of d(Omega)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sim->add_option("--s-grid", s_grid, "min:max:count[:lin|log]; default derived from the tree");
  sim->add_option("--s-count", cfg.s_count, "Sample count of the default grid")->capture_default_str();
  sim->add_option("--threads", threads, "Worker threads for TW samples")->capture_default_str();
  sim->add_option("--out", out_path, "Output file (stdout if omitted)");

  auto* inv = app.add_subcommand("invert", "Recover the tree from a measurement");
  std::string meas_path, report_path;
  inv->add_option("measurement", meas_path, "Measurement file")->required();
  inv->add_option("--tol-stage1", tol.stage1, "Relative tolerance of time-domain extraction")->capture_default_str();
  inv->add_option("--tol-peel", tol.peel, "Relative tolerance of asymptotic TW stages")->capture_default_str();
  inv->add_option("--tol-star", tol.star, "Star-solve residual tolerance")->capture_default_str();
  inv->add_option("--tol-time", tol.time_match, "Spike time matching tolerance")->capture_default_str();
  inv->add_option("--tol-echo", tol.echo, "Echo model residual tolerance")->capture_default_str();
  inv->add_option("--out", out_path, "Recovered tree file (stdout if omitted)");
  inv->add_option("--report", report_path, "Text report file (stderr if omitted)");

  auto* cmp = app.add_subcommand("compare", "Error table of a recovered tree against the truth");
  std::string truth_path, rec_path, csv_path;
  cmp->add_option("truth", truth_path, "True tree file")->required();
  cmp->add_option("recovered", rec_path, "Recovered tree file")->required();
  cmp->add_option("--csv", csv_path, "CSV error table");
  cmp->add_option("--out", out_path, "Text report (stdout if omitted)");

  auto* chk = app.add_subcommand("selfcheck", "Invariant suite on one tree");
  SelfcheckOptions sc;
  chk->add_option("tree", tree_path, "Tree file")->required();
  chk->add_option("--horizon-factor", sc.horizon_factor)->check(CLI::PositiveNumber)->capture_default_str();
  chk->add_option("--exact-factor", sc.exact_factor)->check(CLI::PositiveNumber)->capture_default_str();
  chk->add_option("--s-count", sc.s_count)->capture_default_str();
  chk->add_option("--threads", sc.threads)->capture_default_str();
  chk->add_flag("--corrupt-scatter", sc.corrupt_scatter, "Perturb one scattering operator (fault injection)");
  chk->add_option("--csv", csv_path, "CSV report");
  chk->add_option("--out", out_path, "Text report (stdout if omitted)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      cfg.shape = shape == "two-edge" ? TreeShape::TwoEdge : shape == "star" ? TreeShape::Star : TreeShape::Random;
      cfg.forbid_isotropic = !allow_isotropic;
      write_output(out_path, serialize(generate_tree(cfg)));
      return kExitClean;
    }
    if (*sim) {
      const MetricTree tree = deserialize(read_file(tree_path));
      if (!(cfg.horizon_factor > 1.0)) throw Error(Errc::InvalidArgument, "--horizon-factor must exceed 1");
      const double d = optical_diameter(tree);
      SimulationOptions opt;
      opt.horizon = cfg.horizon_factor * d;
      opt.exact_horizon = std::min(cfg.exact_factor, cfg.horizon_factor) * d;
      const Measurement m = measure(tree, opt, parse_s_grid(s_grid, tree, cfg.s_count), threads);
      write_output(out_path, serialize_measurement(m));
      return kExitClean;
    }
    if (*inv) {
      const Measurement m = deserialize_measurement(read_file(meas_path));
      RecoveredTree r;
      try {
        r = recover_tree(m, tol);
      } catch (const Error& e) {
        std::cerr << "invert failed: " << e.what() << "\n";
        return kExitFailure;
      }
      write_output(out_path, serialize_recovered(r));
      const std::string report = recovery_report(r);
      if (report_path.empty()) std::cerr << report;
      else write_output(report_path, report);
      return r.ambiguous() ? kExitAmbiguous : kExitClean;
    }
    if (*cmp) {
      const MetricTree truth = deserialize(read_file(truth_path));
      std::vector<EdgeId> resolved;
      const MetricTree rec = deserialize_recovered(read_file(rec_path), &resolved);
      const Comparison c = compare_trees(truth, rec, resolved);
      std::ostringstream os;
      os.precision(3);
      os << std::scientific;
      os << "topology " << (c.topology_match ? "match" : "MISMATCH") << "\n";
      if (!c.topology_match) os << c.diff;
      os << "max relative length error " << c.max_length_error << "\n"
         << "max relative speed error " << c.max_speed_error << "\n"
         << "max angle error mod pi " << c.max_angle_error_pi << " rad\n"
         << "max angle error mod 2pi (resolved pairs) " << c.max_angle_error_2pi << " rad\n";
      for (const EdgeComparison& e : c.edges)
        os << "  edge " << e.key << " length " << e.length_error << " k1 " << e.k1_error << " k2 " << e.k2_error
           << "\n";
      write_output(out_path, os.str());
      if (!csv_path.empty()) write_output(csv_path, comparison_csv(c));
      if (!c.topology_match) {
        std::cerr << "compare: " << to_string(Errc::TopologyMismatch) << "\n";
        return kExitFailure;
      }
      return kExitClean;
    }
    if (*chk) {
      const MetricTree tree = deserialize(read_file(tree_path));
      const std::vector<CheckLine> lines = run_selfcheck(tree, sc);
      write_output(out_path, selfcheck_report(lines));
      if (!csv_path.empty()) write_output(csv_path, selfcheck_csv(lines));
      for (const CheckLine& l : lines)
        if (l.gating && !l.pass) return kExitFailure;
      return kExitClean;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}
