// oqr: data generation, experiment runs, figure data and interval audits.

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "oqr/error.hpp"
#include "oqr/harness.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kTrialFailed = 1;
constexpr int kConfigError = 2;

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw oqr::ConfigError("cannot read config " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

struct RunFlags {
  std::string config;
  std::string seeds;
  std::string out;
  int jobs = -1;
  std::optional<double> gamma;
  std::string penalty;
  std::string loss;
  bool conformalize = false;
  bool quiet = false;
};

oqr::RunSpec build_runspec(const RunFlags& flags) {
  oqr::RunSpec spec = flags.config.empty() ? oqr::default_runspec() : oqr::runspec_from_json(slurp(flags.config));
  if (!flags.seeds.empty()) spec.seeds = oqr::parse_seeds(flags.seeds);
  if (!flags.out.empty()) spec.output_dir = flags.out;
  if (flags.jobs >= 0) spec.jobs = flags.jobs;
  if (flags.conformalize) spec.conformalize = true;
  if (!flags.loss.empty() || !flags.penalty.empty()) {
    const oqr::LossKind loss = flags.loss.empty() ? spec.methods.front().loss : oqr::parse_loss_kind(flags.loss);
    const oqr::PenaltyKind penalty =
        flags.penalty.empty() ? oqr::PenaltyKind::corr : oqr::parse_penalty_kind(flags.penalty);
    spec.methods = {oqr::MethodSpec{"", loss, oqr::PenaltyKind::none, std::nullopt}};
    if (penalty != oqr::PenaltyKind::none) spec.methods.push_back(oqr::MethodSpec{"", loss, penalty, flags.gamma});
  }
  if (flags.gamma)
    for (auto& m : spec.methods)
      if (m.penalty != oqr::PenaltyKind::none) m.gamma = flags.gamma;
  spec.validate();
  return spec;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Orthogonal quantile regression: training, evaluation and conditional-coverage audits"};
  app.require_subcommand(1);

  // generate
  auto* generate = app.add_subcommand("generate", "Write the synthetic two-group dataset and its oracle quantiles");
  std::string gen_config;
  std::string gen_out = ".";
  oqr::SyntheticSpec gen_spec;
  double gen_alpha = 0.1;
  generate->add_option("--config", gen_config, "JSON with n, lambda, seed, alpha");
  generate->add_option("--n", gen_spec.n, "Number of samples")->capture_default_str();
  generate->add_option("--lambda", gen_spec.lambda, "Minority-group noise level")->capture_default_str();
  generate->add_option("--seed", gen_spec.seed, "Generator seed")->capture_default_str();
  generate->add_option("--alpha", gen_alpha, "Miscoverage level of the oracle sidecar")->capture_default_str();
  generate->add_option("--out", gen_out, "Output directory")->capture_default_str();

  // run
  auto* run = app.add_subcommand("run", "Train and evaluate every method over the seeds");
  RunFlags flags;
  run->add_option("--config", flags.config, "RunSpec JSON file");
  run->add_option("--seeds", flags.seeds, "Seed list, e.g. 0-29 or 0,3,5");
  run->add_option("--out", flags.out, "Output directory");
  run->add_option("--jobs", flags.jobs, "Parallel trials (0 = all cores)");
  run->add_option("--gamma", flags.gamma, "Penalty multiplier for the penalised methods");
  run->add_option("--penalty", flags.penalty, "Compare vanilla against this penalty (none | corr | hsic)");
  run->add_option("--loss", flags.loss, "Loss (pinball | interval_score)");
  run->add_flag("--conformalize", flags.conformalize, "Calibrate intervals with split conformal (CQR)");
  run->add_flag("--quiet", flags.quiet, "No progress output");
  bool dry_run = false;
  run->add_flag("--print-spec", dry_run, "Print the resolved RunSpec and exit");

  // figures
  auto* figures = app.add_subcommand("figures", "Plot data from a finished run");
  std::string fig_run;
  std::string fig_out;
  int fig_bins = 100;
  figures->add_option("--run", fig_run, "Run output directory")->required();
  figures->add_option("--out", fig_out, "Where to write figure1.csv / figure2.csv (default: the run directory)");
  figures->add_option("--bins", fig_bins, "Length bins for figure2.csv")->capture_default_str();

  // audit
  auto* audit = app.add_subcommand("audit", "Coverage metrics of an interval CSV (y, lo, hi, [group], features...)");
  std::string audit_file;
  std::optional<std::string> audit_baseline;
  std::string audit_out;
  oqr::MetricsOptions audit_options;
  audit->add_option("--intervals", audit_file, "Intervals CSV")->required();
  audit->add_option("--baseline", audit_baseline, "Baseline intervals on the same rows (enables ILS metrics)");
  audit->add_option("--out", audit_out, "Also write the metrics row to this CSV");
  audit->add_option("--wsc-directions", audit_options.wsc.directions, "Random slab directions")->capture_default_str();
  audit->add_option("--wsc-delta", audit_options.wsc.delta, "Minimum slab mass")->capture_default_str();
  audit->add_option("--seed", audit_options.wsc.seed, "Seed of the slab directions")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  try {
    if (*generate) {
      if (!gen_config.empty()) gen_spec = oqr::synthetic_spec_from_json(slurp(gen_config), &gen_alpha);
      const auto files = oqr::generate_dataset(gen_spec, gen_alpha, gen_out);
      std::cout << oqr::synthetic_spec_json(gen_spec, gen_alpha);
      std::cerr << "wrote " << files.data << ", " << files.oracle << ", " << files.spec << '\n';
      return kOk;
    }
    if (*run) {
      const oqr::RunSpec spec = build_runspec(flags);
      if (dry_run) {
        std::cout << oqr::runspec_to_json(spec);
        return kOk;
      }
      const auto summary = oqr::run_experiment(spec, flags.quiet ? nullptr : &std::cerr);
      oqr::write_metrics_csv(std::cout, summary.aggregate);
      if (!summary.failed_seeds.empty()) {
        std::cerr << summary.failed_seeds.size() << " trial(s) failed; see " << spec.output_dir << "/errors\n";
        return kTrialFailed;
      }
      return kOk;
    }
    if (*figures) {
      oqr::write_figures(fig_run, fig_out.empty() ? fig_run : fig_out, fig_bins);
      return kOk;
    }
    if (*audit) {
      const oqr::MetricsRow row = oqr::audit_intervals(audit_file, audit_baseline, audit_options);
      oqr::write_metrics_csv(std::cout, {row});
      if (!audit_out.empty()) {
        std::ofstream out(audit_out, std::ios::binary);
        if (!out) throw oqr::Error("cannot write " + audit_out);
        oqr::write_metrics_csv(out, {row});
      }
      return kOk;
    }
  } catch (const oqr::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kTrialFailed;
  }
  return kOk;
}
