#include "oqr/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "oqr/error.hpp"

namespace oqr {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::string format_lambda(double lambda) {
  std::string text = format_number(lambda);
  std::replace(text.begin(), text.end(), '.', 'p');
  return text;
}

std::string group_label(int group) { return group < 0 ? "all" : std::to_string(group); }

std::string part_label(SplitPart part) {
  switch (part) {
    case SplitPart::train: return "train";
    case SplitPart::validation: return "validation";
    case SplitPart::test: return "test";
    case SplitPart::calibration: return "calibration";
  }
  return "?";
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

/// Header plus string cells; no quoting (files written by this tool only
/// need plain fields).
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name, const std::string& file) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw DataError(file + ": missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  }
};

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream stream(line);
  while (std::getline(stream, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

Table read_table(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path);
  Table table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
    if (line.empty()) continue;
    auto cells = split_line(line);
    if (table.header.empty()) {
      table.header = std::move(cells);
      continue;
    }
    if (cells.size() != table.header.size())
      throw DataError(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(table.header.size()) +
                      " fields, found " + std::to_string(cells.size()));
    table.rows.push_back(std::move(cells));
  }
  if (table.header.empty()) throw DataError(path + ": empty file");
  return table;
}

double parse_double(const std::string& text, const std::string& where) {
  double value = 0;
  const char* begin = text.data();
  const char* end = begin + text.size();
  while (begin < end && *begin == ' ') ++begin;
  if (begin < end && *begin == '+') ++begin;
  const auto res = std::from_chars(begin, end, value);
  if (res.ec != std::errc() || res.ptr != end) throw DataError(where + ": not a number: '" + text + "'");
  return value;
}

IntervalBatch read_intervals(const Table& table, const std::string& path) {
  const std::size_t cy = table.column("y", path), clo = table.column("lo", path), chi = table.column("hi", path);
  const auto n = static_cast<Eigen::Index>(table.rows.size());
  Eigen::VectorXd y(n), lo(n), hi(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = table.rows[static_cast<std::size_t>(i)];
    const std::string where = path + " row " + std::to_string(i + 1);
    y(i) = parse_double(r[cy], where);
    lo(i) = parse_double(r[clo], where);
    hi(i) = parse_double(r[chi], where);
  }
  return IntervalBatch{lo, hi, y};
}

std::string trace_name(const std::string& method, std::uint64_t seed) {
  return method + "_seed" + std::to_string(seed) + ".csv";
}

void write_trace(const fs::path& path, const TrainTrace& trace) {
  auto out = open_output(path);
  out << "epoch,split,group,coverage,loss\n";
  for (const auto& e : trace.epochs) {
    out << e.epoch << ",validation,all,," << format_number(e.validation_loss) << '\n';
    for (const auto& c : e.coverage) {
      out << e.epoch << ',' << part_label(c.split) << ',' << group_label(c.group) << ',' << format_number(c.coverage)
          << ',';
      if (c.split == SplitPart::train && c.group < 0) out << format_number(e.train_loss);
      out << '\n';
    }
  }
}

void write_intervals(const fs::path& path, const IntervalBatch& intervals, const std::optional<Eigen::VectorXi>& groups,
                     const Eigen::MatrixXd* features) {
  auto out = open_output(path);
  out << "y,lo,hi";
  if (groups) out << ",group";
  if (features)
    for (Eigen::Index j = 0; j < features->cols(); ++j) out << ",x" << j;
  out << '\n';
  for (Eigen::Index i = 0; i < intervals.size(); ++i) {
    out << format_number(intervals.y(i)) << ',' << format_number(intervals.lo(i)) << ','
        << format_number(intervals.hi(i));
    if (groups) out << ',' << (*groups)(i);
    if (features)
      for (Eigen::Index j = 0; j < features->cols(); ++j) out << ',' << format_number((*features)(i, j));
    out << '\n';
  }
}

const MethodSpec* find_baseline(const std::vector<MethodSpec>& methods, const MethodSpec& treated) {
  for (const auto& m : methods)
    if (m.penalty == PenaltyKind::none && m.loss == treated.loss) return &m;
  return nullptr;
}

std::string method_label(const RunSpec& spec, const MethodSpec& method) {
  return method.resolved_name() + (spec.conformalize ? "_cqr" : "");
}

}  // namespace

std::string DatasetSource::resolved_name() const {
  if (!name.empty()) return name;
  if (kind == Kind::synthetic) return "synthetic_lambda" + format_lambda(synthetic.lambda);
  return fs::path(path).stem().string();
}

bool DatasetSource::resolved_log_y() const {
  if (log_y) return *log_y;
  static const std::set<std::string> heavy = {"facebook_1", "facebook_2", "blog_data", "bio"};
  return kind == Kind::csv && heavy.count(resolved_name()) > 0;
}

std::string MethodSpec::resolved_name() const {
  if (!name.empty()) return name;
  if (penalty == PenaltyKind::none) return "vanilla_" + to_string(loss);
  return "orthogonal_" + to_string(penalty) + "_" + to_string(loss);
}

void RunSpec::validate() const {
  if (methods.empty()) throw ConfigError("runspec: no methods");
  if (seeds.empty()) throw ConfigError("runspec: no seeds");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
    throw ConfigError("runspec: seeds must be distinct");
  if (!(alpha > 0 && alpha < 1)) throw ConfigError("runspec: alpha must lie in (0, 1)");
  if (jobs < 0) throw ConfigError("runspec: jobs must be non-negative");
  if (output_dir.empty()) throw ConfigError("runspec: empty output directory");
  std::set<std::string> names;
  for (const auto& m : methods) {
    const std::string name = m.resolved_name();
    if (name.empty() || name.find_first_not_of("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_-+.") !=
                            std::string::npos)
      throw ConfigError("runspec: method name '" + name + "' may only use letters, digits and _-+.");
    if (!names.insert(name).second) throw ConfigError("runspec: duplicate method '" + name + "'");
    if (m.gamma && *m.gamma < 0) throw ConfigError("runspec: gamma of " + name + " is negative");
    if (m.penalty != PenaltyKind::none) gamma_for(dataset.resolved_name(), m.loss, m.penalty, m.gamma);
  }
  const auto fractions = split_fractions();
  if (fractions.size() != 3 && fractions.size() != 4)
    throw ConfigError("runspec: split needs 3 or 4 fractions");
  if (conformalize && (fractions.size() != 4 || fractions[3] <= 0))
    throw ConfigError("runspec: conformalize needs a calibration fraction");
  if (dataset.kind == DatasetSource::Kind::synthetic) dataset.synthetic.validate();
  if (dataset.kind == DatasetSource::Kind::csv) {
    if (dataset.path.empty()) throw ConfigError("runspec: csv dataset without a path");
    if (dataset.schema.target.empty()) throw ConfigError("runspec: csv dataset without a target column");
  }
  TrainConfig probe = train_config(methods.front(), seeds.front());
  probe.validate();
  if (metrics.wsc.directions < 1) throw ConfigError("runspec: wsc needs at least one direction");
  if (!(metrics.wsc.delta > 0 && metrics.wsc.delta <= 1)) throw ConfigError("runspec: wsc delta must lie in (0, 1]");
}

std::vector<double> RunSpec::split_fractions() const {
  if (!split.empty()) return split;
  if (conformalize) return {0.54, 0.06, 0.20, 0.20};
  if (dataset.kind == DatasetSource::Kind::synthetic) return {0.72, 0.08, 0.20};
  return {0.54, 0.06, 0.40};
}

TrainConfig RunSpec::train_config(const MethodSpec& method, std::uint64_t seed) const {
  TrainConfig config = train;
  config.loss = method.loss;
  config.penalty = method.penalty;
  config.gamma = gamma_for(dataset.resolved_name(), method.loss, method.penalty, method.gamma);
  config.alpha = alpha;
  config.seed = seed;
  config.architecture = architecture ? *architecture
                                     : (dataset.kind == DatasetSource::Kind::synthetic ? Architecture::synthetic
                                                                                       : Architecture::real);
  return config;
}

RunSpec default_runspec() {
  RunSpec spec;
  spec.methods = {MethodSpec{"", LossKind::pinball, PenaltyKind::none, std::nullopt},
                  MethodSpec{"", LossKind::pinball, PenaltyKind::corr, std::nullopt}};
  for (std::uint64_t s = 0; s < 30; ++s) spec.seeds.push_back(s);
  return spec;
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::istringstream stream(text);
  std::string item;
  auto number = [&](const std::string& s) {
    std::uint64_t v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size())
      throw ConfigError("seeds: cannot parse '" + s + "'");
    return v;
  };
  while (std::getline(stream, item, ',')) {
    item.erase(std::remove(item.begin(), item.end(), ' '), item.end());
    const auto dash = item.find('-');
    if (dash == std::string::npos) {
      seeds.push_back(number(item));
      continue;
    }
    const std::uint64_t a = number(item.substr(0, dash));
    const std::uint64_t b = number(item.substr(dash + 1));
    if (b < a) throw ConfigError("seeds: empty range '" + item + "'");
    for (std::uint64_t s = a; s <= b; ++s) seeds.push_back(s);
  }
  if (seeds.empty()) throw ConfigError("seeds: empty list");
  return seeds;
}

RunSpec runspec_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("runspec: invalid JSON: ") + e.what());
  }
  static const std::set<std::string> known = {"dataset",       "methods", "seeds", "conformalize", "alpha",
                                              "split",         "train",   "metrics", "output",     "jobs",
                                              "write_interval_features"};
  for (const auto& [key, _] : doc.items())
    if (!known.count(key)) throw ConfigError("runspec: unknown key '" + key + "'");

  RunSpec spec = default_runspec();
  try {
    if (doc.contains("dataset")) {
      const auto& d = doc["dataset"];
      const std::string kind = d.value("kind", "synthetic");
      if (kind == "synthetic") {
        spec.dataset.kind = DatasetSource::Kind::synthetic;
        spec.dataset.synthetic.n = d.value("n", spec.dataset.synthetic.n);
        spec.dataset.synthetic.lambda = d.value("lambda", spec.dataset.synthetic.lambda);
        spec.dataset.synthetic.seed = d.value("seed", spec.dataset.synthetic.seed);
      } else if (kind == "csv") {
        spec.dataset.kind = DatasetSource::Kind::csv;
        spec.dataset.path = d.at("path").get<std::string>();
        spec.dataset.schema.target = d.value("target", std::string("y"));
        if (d.contains("group")) spec.dataset.schema.group = d["group"].get<std::string>();
        spec.dataset.schema.drop = d.value("drop", std::vector<std::string>{});
        spec.dataset.schema.group_is_feature = d.value("group_is_feature", true);
      } else {
        throw ConfigError("runspec: dataset kind must be synthetic or csv");
      }
      spec.dataset.name = d.value("name", std::string());
      if (d.contains("log_y")) spec.dataset.log_y = d["log_y"].get<bool>();
    }
    if (doc.contains("methods")) {
      spec.methods.clear();
      for (const auto& m : doc["methods"]) {
        MethodSpec method;
        method.name = m.value("name", std::string());
        method.loss = parse_loss_kind(m.value("loss", std::string("pinball")));
        method.penalty = parse_penalty_kind(m.value("penalty", std::string("none")));
        if (m.contains("gamma") && !(m["gamma"].is_string() && m["gamma"] == "auto"))
          method.gamma = m["gamma"].get<double>();
        spec.methods.push_back(method);
      }
    }
    if (doc.contains("seeds")) {
      const auto& s = doc["seeds"];
      if (s.is_string()) spec.seeds = parse_seeds(s.get<std::string>());
      else spec.seeds = s.get<std::vector<std::uint64_t>>();
    }
    spec.conformalize = doc.value("conformalize", spec.conformalize);
    spec.alpha = doc.value("alpha", spec.alpha);
    spec.split = doc.value("split", spec.split);
    spec.output_dir = doc.value("output", spec.output_dir);
    spec.jobs = doc.value("jobs", spec.jobs);
    spec.write_interval_features = doc.value("write_interval_features", spec.write_interval_features);
    if (doc.contains("train")) {
      const auto& t = doc["train"];
      auto& c = spec.train;
      c.batch_size = t.value("batch_size", c.batch_size);
      c.learning_rate = t.value("learning_rate", c.learning_rate);
      c.max_epochs = t.value("max_epochs", c.max_epochs);
      c.patience = t.value("patience", c.patience);
      c.min_penalty_batch = t.value("min_penalty_batch", c.min_penalty_batch);
      c.slope = t.value("slope", c.slope);
      c.penalized_validation = t.value("penalized_validation", c.penalized_validation);
      c.validation_alpha_grid = t.value("validation_alpha_grid", c.validation_alpha_grid);
      if (t.contains("architecture")) spec.architecture = parse_architecture(t["architecture"].get<std::string>());
      if (t.contains("hidden")) c.hidden = t["hidden"].get<std::vector<Eigen::Index>>();
      if (t.contains("dropout")) c.dropout = t["dropout"].get<double>();
      if (t.contains("alpha_sampling")) {
        const std::string s = t["alpha_sampling"].get<std::string>();
        if (s == "per_example") c.sampling.kind = AlphaSampling::Kind::per_example;
        else if (s == "per_batch") c.sampling.kind = AlphaSampling::Kind::per_batch;
        else throw ConfigError("runspec: alpha_sampling must be per_example or per_batch");
      }
    }
    if (doc.contains("metrics")) {
      const auto& m = doc["metrics"];
      spec.metrics.wsc.delta = m.value("wsc_delta", spec.metrics.wsc.delta);
      spec.metrics.wsc.directions = m.value("wsc_directions", spec.metrics.wsc.directions);
      spec.metrics.tree.max_depth = m.value("tree_depth", spec.metrics.tree.max_depth);
      spec.metrics.tree.min_node_fraction = m.value("tree_min_fraction", spec.metrics.tree.min_node_fraction);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("runspec: ") + e.what());
  }
  return spec;
}

std::string runspec_to_json(const RunSpec& spec) {
  json doc;
  json d;
  if (spec.dataset.kind == DatasetSource::Kind::synthetic) {
    d["kind"] = "synthetic";
    d["n"] = spec.dataset.synthetic.n;
    d["lambda"] = spec.dataset.synthetic.lambda;
    d["seed"] = spec.dataset.synthetic.seed;
  } else {
    d["kind"] = "csv";
    d["path"] = spec.dataset.path;
    d["target"] = spec.dataset.schema.target;
    if (spec.dataset.schema.group) d["group"] = *spec.dataset.schema.group;
    d["drop"] = spec.dataset.schema.drop;
    d["group_is_feature"] = spec.dataset.schema.group_is_feature;
  }
  d["name"] = spec.dataset.resolved_name();
  d["log_y"] = spec.dataset.resolved_log_y();
  doc["dataset"] = d;
  json methods = json::array();
  for (const auto& m : spec.methods) {
    json jm;
    jm["name"] = m.resolved_name();
    jm["loss"] = to_string(m.loss);
    jm["penalty"] = to_string(m.penalty);
    jm["gamma"] = gamma_for(spec.dataset.resolved_name(), m.loss, m.penalty, m.gamma);
    methods.push_back(jm);
  }
  doc["methods"] = methods;
  doc["seeds"] = spec.seeds;
  doc["conformalize"] = spec.conformalize;
  doc["alpha"] = spec.alpha;
  doc["split"] = spec.split_fractions();
  const TrainConfig c = spec.train_config(spec.methods.front(), 0);
  doc["train"] = {{"batch_size", c.batch_size},
                  {"learning_rate", c.learning_rate},
                  {"max_epochs", c.max_epochs},
                  {"patience", c.patience},
                  {"min_penalty_batch", c.min_penalty_batch},
                  {"slope", c.slope},
                  {"penalized_validation", c.penalized_validation},
                  {"validation_alpha_grid", c.validation_alpha_grid},
                  {"architecture", to_string(c.architecture)},
                  {"hidden", c.hidden_widths()},
                  {"dropout", c.dropout_rate()},
                  {"alpha_sampling", c.sampling.kind == AlphaSampling::Kind::per_batch ? "per_batch" : "per_example"}};
  doc["metrics"] = {{"wsc_delta", spec.metrics.wsc.delta},
                    {"wsc_directions", spec.metrics.wsc.directions},
                    {"tree_depth", spec.metrics.tree.max_depth},
                    {"tree_min_fraction", spec.metrics.tree.min_node_fraction}};
  doc["output"] = spec.output_dir;
  doc["jobs"] = spec.jobs;
  doc["write_interval_features"] = spec.write_interval_features;
  return doc.dump(2) + "\n";
}

Dataset load_dataset(const DatasetSource& source) {
  Dataset data = source.kind == DatasetSource::Kind::synthetic ? generate_synthetic(source.synthetic)
                                                               : load_csv(source.path, source.schema);
  data.name = source.resolved_name();
  return data;
}

TrialResult run_trial(const RunSpec& spec, const Dataset& data, std::uint64_t seed, std::ostream* log) {
  TrialResult trial;
  trial.seed = seed;
  const Dataset ready = preprocess(split(data, spec.split_fractions(), seed), spec.dataset.resolved_log_y());
  const std::string seed_text = std::to_string(seed);
  const Eigen::MatrixXd x_test_raw = ready.raw_features(SplitPart::test);
  const Eigen::VectorXd y_test = ready.raw_responses(SplitPart::test);
  trial.x_test = ready.model_features(SplitPart::test);
  trial.group_test = ready.groups(SplitPart::test);

  MetricsOptions options = spec.metrics;
  options.wsc.seed = seed;
  for (const auto& method : spec.methods) {
    const std::string label = method_label(spec, method);
    TrainResult fit = train(ready, spec.train_config(method, seed));
    MethodOutcome outcome;
    outcome.method = label;
    outcome.intervals = predict_intervals(fit.model, x_test_raw, y_test, spec.alpha);
    if (spec.conformalize) {
      const IntervalBatch cal = predict_intervals(fit.model, ready.raw_features(SplitPart::calibration),
                                                  ready.raw_responses(SplitPart::calibration), spec.alpha);
      outcome.calibration = calibrate(cal, spec.alpha);
      outcome.intervals = conformalize(outcome.intervals, *outcome.calibration);
    }
    outcome.trace = std::move(fit.trace);
    if (log) {
      std::ostringstream line;
      line << "seed " << seed << ' ' << label << ": " << outcome.trace.epochs.size() << " epochs, best "
           << outcome.trace.best_epoch << '\n';
      *log << line.str() << std::flush;
    }
    trial.rows.push_back(evaluate(ready.name, label, seed_text, trial.x_test, outcome.intervals, options));
    if (trial.group_test) {
      auto g = evaluate_groups(ready.name, label, seed_text, outcome.intervals, *trial.group_test);
      trial.groups.insert(trial.groups.end(), g.begin(), g.end());
    }
    trial.outcomes.push_back(std::move(outcome));
  }

  // ILS-based metrics: each penalised method against the vanilla method of
  // the same loss; the baseline row keeps its first pairing.
  for (std::size_t k = 0; k < spec.methods.size(); ++k) {
    const MethodSpec& treated = spec.methods[k];
    if (treated.penalty == PenaltyKind::none) continue;
    const MethodSpec* baseline = find_baseline(spec.methods, treated);
    if (!baseline) continue;
    const auto b = static_cast<std::size_t>(baseline - spec.methods.data());
    const IntervalBatch& t_int = trial.outcomes[k].intervals;
    const IntervalBatch& b_int = trial.outcomes[b].intervals;
    const auto ils = ils_set(t_int.length(), b_int.length());
    trial.rows[k].delta_ils = delta_ils_coverage(t_int, ils);
    trial.rows[k].delta_node = delta_node_coverage(trial.x_test, t_int, ils, options.tree);
    if (std::isnan(trial.rows[b].delta_ils)) {
      trial.rows[b].delta_ils = delta_ils_coverage(b_int, ils);
      trial.rows[b].delta_node = delta_node_coverage(trial.x_test, b_int, ils, options.tree);
    }
  }
  return trial;
}

void write_improvement_csv(std::ostream& out, const RunSpec& spec, const std::vector<MetricsRow>& aggregate) {
  auto mean_of = [&](const std::string& method) -> const MetricsRow* {
    for (const auto& r : aggregate)
      if (r.method == method && r.seed == "mean") return &r;
    return nullptr;
  };
  static const std::pair<const char*, double MetricsRow::*> metrics[] = {
      {"corr", &MetricsRow::corr},           {"hsic", &MetricsRow::hsic},
      {"delta_wsc", &MetricsRow::delta_wsc}, {"delta_ils", &MetricsRow::delta_ils},
      {"delta_node", &MetricsRow::delta_node}};
  out << "dataset,baseline,treated,metric,baseline_mean,treated_mean,improvement_pct\n";
  for (const auto& treated : spec.methods) {
    if (treated.penalty == PenaltyKind::none) continue;
    const MethodSpec* baseline = find_baseline(spec.methods, treated);
    if (!baseline) continue;
    const MetricsRow* t = mean_of(method_label(spec, treated));
    const MetricsRow* b = mean_of(method_label(spec, *baseline));
    if (!t || !b) continue;
    for (const auto& [name, field] : metrics) {
      const double bv = b->*field;
      const double tv = t->*field;
      const std::string pct = std::isfinite(bv) && !std::isnan(tv) ? format_improvement(improvement_pct(bv, tv)) : "";
      out << spec.dataset.resolved_name() << ',' << b->method << ',' << t->method << ',' << name << ','
          << format_number(bv) << ',' << format_number(tv) << ',' << pct << '\n';
    }
  }
}

RunSummary run_experiment(const RunSpec& spec, std::ostream* log) {
  spec.validate();
  const fs::path root(spec.output_dir);
  fs::create_directories(root / "traces");
  fs::create_directories(root / "intervals");
  fs::create_directories(root / "errors");
  for (const auto& entry : fs::directory_iterator(root / "errors")) fs::remove(entry.path());
  open_output(root / "runspec.json") << runspec_to_json(spec);

  const Dataset data = load_dataset(spec.dataset);
  std::vector<TrialResult> results(spec.seeds.size());
  std::mutex log_mutex;
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t k = next++; k < spec.seeds.size(); k = next++) {
      const std::uint64_t seed = spec.seeds[k];
      std::ostringstream trial_log;
      try {
        results[k] = run_trial(spec, data, seed, log ? &trial_log : nullptr);
        for (const auto& outcome : results[k].outcomes) {
          write_trace(root / "traces" / trace_name(outcome.method, seed), outcome.trace);
          write_intervals(root / "intervals" / trace_name(outcome.method, seed), outcome.intervals,
                          results[k].group_test, spec.write_interval_features ? &results[k].x_test : nullptr);
        }
      } catch (const std::exception& e) {
        results[k] = TrialResult{};
        results[k].seed = seed;
        results[k].error = e.what();
        open_output(root / "errors" / ("seed" + std::to_string(seed) + ".txt")) << e.what() << '\n';
        trial_log << "seed " << seed << " failed: " << e.what() << '\n';
      }
      if (log) {
        std::lock_guard<std::mutex> lock(log_mutex);
        *log << trial_log.str() << std::flush;
      }
    }
  };
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t jobs = std::min<std::size_t>(spec.jobs > 0 ? static_cast<std::size_t>(spec.jobs) : hw,
                                                 spec.seeds.size());
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  RunSummary summary;
  for (const auto& r : results) {
    if (!r.error.empty()) {
      summary.failed_seeds.push_back(r.seed);
      continue;
    }
    summary.rows.insert(summary.rows.end(), r.rows.begin(), r.rows.end());
    summary.groups.insert(summary.groups.end(), r.groups.begin(), r.groups.end());
  }
  summary.aggregate = aggregate(summary.rows);

  {
    auto metrics = open_output(root / "metrics.csv");
    write_metrics_csv(metrics, summary.rows);
    auto aggregated = open_output(root / "aggregate.csv");
    write_metrics_csv(aggregated, summary.aggregate);
    auto groups = open_output(root / "group_metrics.csv");
    write_group_csv(groups, summary.groups);
    auto improvement = open_output(root / "improvement.csv");
    write_improvement_csv(improvement, spec, summary.aggregate);
  }
  open_output(root / "metrics.json") << metrics_json(summary.rows) << '\n';
  {
    auto index = open_output(root / "traces" / "index.csv");
    index << "method,seed,best_epoch,epochs\n";
    for (const auto& r : results)
      for (const auto& o : r.outcomes)
        index << o.method << ',' << r.seed << ',' << o.trace.best_epoch << ',' << o.trace.epochs.size() << '\n';
  }
  return summary;
}

std::vector<BinnedPoint> bin_by_length(const IntervalBatch& intervals, int bins) {
  const Eigen::Index n = intervals.size();
  if (bins < 1) throw ConfigError("figures: bins must be positive");
  if (n < bins) throw DataError("figures: " + std::to_string(n) + " rows cannot fill " + std::to_string(bins) + " bins");
  const Eigen::VectorXd len = intervals.length();
  const Eigen::VectorXd cov = intervals.covered();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return len(a) < len(b); });
  std::vector<BinnedPoint> points;
  for (int b = 0; b < bins; ++b) {
    const Eigen::Index begin = n * b / bins;
    const Eigen::Index end = n * (b + 1) / bins;
    double l = 0;
    double c = 0;
    for (Eigen::Index k = begin; k < end; ++k) {
      l += len(order[k]);
      c += cov(order[k]);
    }
    const auto count = static_cast<double>(end - begin);
    points.push_back({b, l / count, c / count});
  }
  return points;
}

void write_figures(const std::string& run_dir, const std::string& out_dir, int bins) {
  const fs::path root(run_dir);
  const fs::path index_path = root / "traces" / "index.csv";
  if (!fs::exists(index_path)) throw DataError("figures: no traces in " + run_dir);
  const Table index = read_table(index_path.string());
  if (index.rows.empty()) throw DataError("figures: trace index is empty");
  const std::size_t c_method = index.column("method", index_path.string());
  const std::size_t c_seed = index.column("seed", index_path.string());
  const std::size_t c_best = index.column("best_epoch", index_path.string());
  fs::create_directories(out_dir);

  // figure1.csv: coverage per epoch for the first seed in the index.
  const std::string first_seed = index.rows.front()[c_seed];
  auto fig1 = open_output(fs::path(out_dir) / "figure1.csv");
  fig1 << "epoch,split,group,method,coverage,is_best_epoch\n";
  std::vector<std::string> methods;
  for (const auto& row : index.rows) {
    if (std::find(methods.begin(), methods.end(), row[c_method]) == methods.end()) methods.push_back(row[c_method]);
    if (row[c_seed] != first_seed) continue;
    const std::string file = (root / "traces" / (row[c_method] + "_seed" + row[c_seed] + ".csv")).string();
    if (!fs::exists(file)) throw DataError("figures: missing trace " + file);
    const Table trace = read_table(file);
    const std::size_t te = trace.column("epoch", file), ts = trace.column("split", file),
                      tg = trace.column("group", file), tc = trace.column("coverage", file);
    for (const auto& t : trace.rows) {
      if (t[tc].empty()) continue;
      fig1 << t[te] << ',' << t[ts] << ',' << t[tg] << ',' << row[c_method] << ',' << t[tc] << ','
           << (t[te] == row[c_best] ? 1 : 0) << '\n';
    }
  }

  // figure2.csv: test rows of all seeds pooled per method.
  auto fig2 = open_output(fs::path(out_dir) / "figure2.csv");
  fig2 << "method,bin,mean_length,coverage\n";
  for (const auto& method : methods) {
    std::vector<IntervalBatch> parts;
    Eigen::Index total = 0;
    for (const auto& row : index.rows) {
      if (row[c_method] != method) continue;
      const std::string file = (root / "intervals" / (method + "_seed" + row[c_seed] + ".csv")).string();
      if (!fs::exists(file)) throw DataError("figures: missing intervals " + file);
      parts.push_back(read_intervals(read_table(file), file));
      total += parts.back().size();
    }
    Eigen::VectorXd lo(total), hi(total), y(total);
    Eigen::Index at = 0;
    for (const auto& p : parts) {
      lo.segment(at, p.size()) = p.lo;
      hi.segment(at, p.size()) = p.hi;
      y.segment(at, p.size()) = p.y;
      at += p.size();
    }
    for (const auto& point : bin_by_length(IntervalBatch{lo, hi, y}, bins))
      fig2 << method << ',' << point.bin << ',' << format_number(point.mean_length) << ','
           << format_number(point.coverage) << '\n';
  }
}

MetricsRow audit_intervals(const std::string& path, const std::optional<std::string>& baseline_path,
                           const MetricsOptions& options) {
  const Table table = read_table(path);
  const IntervalBatch intervals = read_intervals(table, path);
  std::vector<std::size_t> feature_cols;
  for (std::size_t c = 0; c < table.header.size(); ++c) {
    const auto& h = table.header[c];
    if (h != "y" && h != "lo" && h != "hi" && h != "group") feature_cols.push_back(c);
  }
  if (feature_cols.empty()) throw DataError(path + ": no feature columns for the slab and tree metrics");
  Eigen::MatrixXd x(intervals.size(), static_cast<Eigen::Index>(feature_cols.size()));
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < feature_cols.size(); ++j)
      x(i, static_cast<Eigen::Index>(j)) =
          parse_double(table.rows[static_cast<std::size_t>(i)][feature_cols[j]], path + " row " + std::to_string(i + 1));

  MetricsRow row = evaluate("audit", fs::path(path).stem().string(), "", x, intervals, options);
  if (baseline_path) {
    const IntervalBatch base = read_intervals(read_table(*baseline_path), *baseline_path);
    if (base.size() != intervals.size()) throw DataError("audit: baseline has a different number of rows");
    const auto ils = ils_set(intervals.length(), base.length());
    row.delta_ils = delta_ils_coverage(intervals, ils);
    row.delta_node = delta_node_coverage(x, intervals, ils, options.tree);
  }
  return row;
}

std::string synthetic_spec_json(const SyntheticSpec& spec, double alpha) {
  const json doc = {{"kind", "synthetic"},
                    {"n", spec.n},
                    {"lambda", spec.lambda},
                    {"seed", spec.seed},
                    {"dimension", SyntheticSpec::kDimension},
                    {"alpha", alpha}};
  return doc.dump(2) + "\n";
}

SyntheticSpec synthetic_spec_from_json(const std::string& text, double* alpha) {
  SyntheticSpec spec;
  try {
    const json doc = json::parse(text);
    for (const auto& [key, _] : doc.items())
      if (key != "kind" && key != "n" && key != "lambda" && key != "seed" && key != "alpha" && key != "dimension")
        throw ConfigError("synthetic spec: unknown key '" + key + "'");
    spec.n = doc.value("n", spec.n);
    spec.lambda = doc.value("lambda", spec.lambda);
    spec.seed = doc.value("seed", spec.seed);
    if (alpha && doc.contains("alpha")) *alpha = doc["alpha"].get<double>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("synthetic spec: ") + e.what());
  }
  return spec;
}

GeneratedFiles generate_dataset(const SyntheticSpec& spec, double alpha, const std::string& out_dir) {
  spec.validate();
  if (!(alpha > 0 && alpha < 1)) throw ConfigError("generate: alpha must lie in (0, 1)");
  fs::create_directories(out_dir);
  const Dataset data = generate_synthetic(spec);
  const SyntheticModel model = SyntheticModel::from_spec(spec);
  GeneratedFiles files{(fs::path(out_dir) / "synthetic.csv").string(), (fs::path(out_dir) / "oracle.csv").string(),
                       (fs::path(out_dir) / "spec.json").string()};
  write_csv(data, files.data);
  {
    auto out = open_output(files.oracle);
    out << "sd,q_lo,q_hi\n";
    for (Eigen::Index i = 0; i < data.rows(); ++i) {
      const Eigen::VectorXd x = data.x.row(i).transpose();
      const auto [lo, hi] = oracle_interval(x, alpha, model);
      out << format_number(model.conditional_sd(x)) << ',' << format_number(lo) << ',' << format_number(hi) << '\n';
    }
  }
  open_output(files.spec) << synthetic_spec_json(spec, alpha);
  return files;
}

}  // namespace oqr
