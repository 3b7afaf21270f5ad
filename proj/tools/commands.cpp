#include "commands.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "nkn/checkpoint.hpp"
#include "nkn/datagen.hpp"
#include "nkn/error.hpp"
#include "nkn/layers.hpp"
#include "nkn/stability.hpp"
#include "nkn/training.hpp"

namespace nkn::cli {

namespace fs = std::filesystem;

namespace {

struct MissingFile : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_file(const std::string& path) {
  if (!fs::exists(path)) throw MissingFile(path);
}

std::string dataset_meta(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / (name + ".meta.json")).string();
}

Dataset load_required(const std::string& dir, const std::string& name) {
  require_file(dataset_meta(dir, name));
  return load_dataset(dir, name);
}

OperatorModel load_required_checkpoint(const std::string& path) {
  require_file(path);
  return load_checkpoint(path);
}

void write_text(const std::string& path, const std::string& text) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw IoError("failed writing '" + path + "'");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

json convert_like(const json& like, const std::string& key, const std::string& text) {
  try {
    if (like.is_boolean()) {
      if (text == "true" || text == "1" || text.empty()) return true;
      if (text == "false" || text == "0") return false;
      throw Error("expected true or false");
    }
    if (like.is_number_unsigned()) return static_cast<std::uint64_t>(std::stoull(text));
    if (like.is_number_integer()) return std::stoll(text);
    if (like.is_number()) return std::stod(text);
    if (like.is_array()) {
      json arr = json::array();
      for (const auto& item : split_list(text)) {
        if (!like.empty()) {
          arr.push_back(convert_like(like.front(), key, item));
        } else if (item.find_first_not_of("0123456789") == std::string::npos) {
          arr.push_back(static_cast<std::uint64_t>(std::stoull(item)));
        } else {
          arr.push_back(item);
        }
      }
      return arr;
    }
  } catch (const std::exception& e) {
    throw Error("invalid value '" + text + "' for '" + key + "': " + e.what());
  }
  return text;
}

std::string key_to_flag(const std::string& key) {
  std::string f = "--";
  for (char c : key) f.push_back(c == '_' ? '-' : c);
  return f;
}

std::string fmt(double v) {
  std::ostringstream out;
  out.precision(10);
  out << v;
  return out.str();
}

}  // namespace

json merge_config(const json& defaults, const std::string& config_path,
                  const std::vector<std::pair<std::string, std::string>>& flags) {
  json cfg = defaults;
  if (!config_path.empty()) {
    require_file(config_path);
    std::ifstream in(config_path);
    json file;
    try {
      file = json::parse(in);
    } catch (const json::exception& e) {
      throw Error("config '" + config_path + "' is not valid JSON: " + e.what());
    }
    if (!file.is_object()) throw Error("config '" + config_path + "' must be a JSON object");
    for (auto it = file.begin(); it != file.end(); ++it) {
      if (cfg.contains(it.key())) cfg[it.key()] = it.value();
    }
  }
  for (const auto& [key, value] : flags) cfg[key] = convert_like(defaults.at(key), key, value);
  return cfg;
}

// ---------------------------------------------------------------------------

json gen_data_defaults() {
  return {{"task", "poisson1d"}, {"n", std::uint64_t{101}},  {"samples", std::uint64_t{500}},
          {"seed", std::uint64_t{0}}, {"out", "data"},       {"name", "train"},
          {"resolutions", json::array()}, {"fine_n", std::uint64_t{241}}};
}

int cmd_gen_data(const json& cfg) {
  const auto task = cfg.at("task").get<std::string>();
  const auto n = cfg.at("n").get<std::size_t>();
  const auto samples = cfg.at("samples").get<std::size_t>();
  const auto seed = cfg.at("seed").get<std::uint64_t>();
  const auto out = cfg.at("out").get<std::string>();
  const auto name = cfg.at("name").get<std::string>();
  auto resolutions = cfg.at("resolutions").get<std::vector<std::size_t>>();
  const bool suffixed = !resolutions.empty();
  if (!suffixed) resolutions = {n};

  auto label = [&](std::size_t r) { return suffixed ? name + "_n" + std::to_string(r) : name; };
  if (task == "poisson1d") {
    for (auto r : resolutions) {
      const Dataset ds = gen_poisson_1d(samples, make_uniform_grid(r, 1), seed);
      save_dataset(ds, out, label(r));
      std::cout << "wrote " << (fs::path(out) / label(r)).string() << " (" << ds.samples << " samples, n=" << r
                << ")\n";
    }
  } else if (task == "darcy2d") {
    const auto fine = cfg.at("fine_n").get<std::size_t>();
    const auto sets = gen_darcy_2d(samples, seed, resolutions, fine);
    for (std::size_t k = 0; k < sets.size(); ++k) {
      save_dataset(sets[k], out, label(resolutions[k]));
      std::cout << "wrote " << (fs::path(out) / label(resolutions[k])).string() << " (" << sets[k].samples
                << " samples, n=" << resolutions[k] << ")\n";
    }
  } else {
    throw Error("unknown task '" + task + "' (expected poisson1d or darcy2d)");
  }
  return kOk;
}

// ---------------------------------------------------------------------------

json train_defaults() {
  return {{"data_dir", "data"},
          {"train_name", "train"},
          {"variant", "nkn"},
          {"depths", json::array({std::uint64_t{1}})},
          {"shallow_to_deep", false},
          {"epochs", std::uint64_t{10000}},
          {"lr", 1e-3},
          {"decay_ratio", 1.0},
          {"decay_period", std::uint64_t{0}},
          {"batch_size", std::uint64_t{0}},
          {"patience", std::uint64_t{200}},
          {"threshold", 1e-4},
          {"normalize", false},
          {"shuffle", false},
          {"seed", std::uint64_t{0}},
          {"feature_dim", std::uint64_t{1}},
          {"kernel_hidden", json::array({std::uint64_t{256}, std::uint64_t{256}})},
          {"reaction_hidden", json::array({std::uint64_t{64}})},
          {"radius", 2.0},
          {"out", "runs"}};
}

int cmd_train(const json& cfg) {
  const Dataset train_set = load_required(cfg.at("data_dir"), cfg.at("train_name"));
  const auto variant = cfg.at("variant").get<std::string>();
  const auto out = cfg.at("out").get<std::string>();
  fs::create_directories(out);
  const auto seed = cfg.at("seed").get<std::uint64_t>();
  const std::string merged = json{{"merged_config", cfg}}.dump();

  TrainConfig tc;
  tc.learning_rate = cfg.at("lr").get<double>();
  tc.decay_ratio = cfg.at("decay_ratio").get<double>();
  tc.decay_period = cfg.at("decay_period").get<std::size_t>();
  tc.max_epochs = cfg.at("epochs").get<std::size_t>();
  tc.batch_size = cfg.at("batch_size").get<std::size_t>();
  tc.patience = cfg.at("patience").get<std::size_t>();
  tc.threshold = cfg.at("threshold").get<double>();
  tc.normalize = cfg.at("normalize").get<bool>();
  tc.shuffle = cfg.at("shuffle").get<bool>();
  tc.seed = seed;
  tc.depth_schedule = cfg.at("depths").get<std::vector<std::size_t>>();
  tc.validate();

  auto stem = [&](const std::string& v, std::size_t depth) {
    return (fs::path(out) / (v + "_L" + std::to_string(depth) + "_s" + std::to_string(seed))).string();
  };

  if (variant == "analytic-nkn") {
    if (train_set.dim != 1) throw Error("analytic-nkn is defined for 1D data only");
    OperatorModel m = analytic_nkn_1d(make_uniform_grid(train_set.n, 1));
    m.train_resolution = train_set.n;
    save_checkpoint(m, stem(variant, 1) + ".ckpt.json");
    TrainResult r;
    r.model = m;
    r.initial_loss = r.best_loss = r.final_train_loss = evaluate(m, train_set);
    write_text(stem(variant, 1) + ".run.json", run_metadata_json(tc, r, train_set, merged) + "\n");
    std::cout << "analytic-nkn train relative MSE " << fmt(r.final_train_loss) << "\n";
    return kOk;
  }

  ModelSpec spec;
  spec.variant = parse_variant(variant);
  spec.spatial_dim = train_set.dim;
  spec.feature_dim = cfg.at("feature_dim").get<std::size_t>();
  spec.radius = cfg.at("radius").get<double>();
  spec.kernel_uses_field = train_set.dim == 2;
  spec.kernel_hidden = cfg.at("kernel_hidden").get<std::vector<std::size_t>>();
  spec.reaction_hidden = cfg.at("reaction_hidden").get<std::vector<std::size_t>>();
  spec.seed = seed;

  const bool warm = cfg.at("shallow_to_deep").get<bool>();
  bool diverged = false;
  OperatorModel previous;
  for (std::size_t k = 0; k < tc.depth_schedule.size(); ++k) {
    const std::size_t depth = tc.depth_schedule[k];
    OperatorModel start;
    if (k > 0 && warm) {
      start = shallow_to_deep(previous, depth);
    } else {
      ModelSpec s = spec;
      s.depth = depth;
      start = assemble_model(s);
    }
    const TrainResult r = train(start, train_set, tc);
    previous = r.model;
    save_checkpoint(r.model, stem(variant, depth) + ".ckpt.json");
    write_text(stem(variant, depth) + ".run.json", run_metadata_json(tc, r, train_set, merged) + "\n");
    std::cout << variant << " L=" << depth << " epochs=" << r.epochs << " status=" << status_name(r.status)
              << " train relative MSE " << fmt(r.final_train_loss) << "\n";
    if (r.status == TrainStatus::diverged || !std::isfinite(r.final_train_loss)) diverged = true;
  }
  return diverged ? kDiverged : kOk;
}

// ---------------------------------------------------------------------------

json eval_defaults() {
  return {{"checkpoints", json::array()}, {"data_dir", "data"}, {"test_names", json::array({"test"})},
          {"out", "metrics.csv"}, {"summary", ""}};
}

int cmd_eval(const json& cfg) {
  const auto checkpoints = cfg.at("checkpoints").get<std::vector<std::string>>();
  if (checkpoints.empty()) throw Error("eval: no checkpoints given");
  const auto names = cfg.at("test_names").get<std::vector<std::string>>();
  std::vector<OperatorModel> models;
  for (const auto& c : checkpoints) models.push_back(load_required_checkpoint(c));
  std::vector<Dataset> sets;
  for (const auto& n : names) sets.push_back(load_required(cfg.at("data_dir"), n));

  std::ostringstream csv;
  csv.precision(17);
  csv << "variant,depth,train_n,test_n,relative_mse,seed\n";
  // (variant, depth, train_n, test_n) -> per-seed errors
  std::map<std::tuple<std::string, std::size_t, std::size_t, std::size_t>, std::vector<double>> groups;
  bool finite = true;
  for (const auto& m : models) {
    for (const auto& ds : sets) {
      if (ds.dim != m.spatial_dim) {
        throw Error("eval: " + std::to_string(m.spatial_dim) + "D checkpoint cannot be evaluated on " +
                    std::to_string(ds.dim) + "D data");
      }
      const double e = evaluate(m, ds);
      finite = finite && std::isfinite(e);
      const std::string v = m.kernel_form == KernelForm::green ? "analytic-nkn" : variant_name(m.variant);
      csv << v << ',' << m.depth << ',' << m.train_resolution << ',' << ds.n << ',' << e << ',' << m.seed << '\n';
      groups[{v, m.depth, m.train_resolution, ds.n}].push_back(e);
    }
  }
  const auto out = cfg.at("out").get<std::string>();
  write_text(out, csv.str());

  std::string summary_path = cfg.at("summary").get<std::string>();
  if (summary_path.empty()) summary_path = fs::path(out).replace_extension(".summary.csv").string();
  std::ostringstream sum;
  sum.precision(6);
  sum << std::scientific;
  sum << "variant,depth,train_n,test_n,count,mean,stderr,formatted\n";
  for (const auto& [key, errs] : groups) {
    const auto ms = mean_stderr(errs);
    sum << std::get<0>(key) << ',' << std::get<1>(key) << ',' << std::get<2>(key) << ',' << std::get<3>(key) << ','
        << errs.size() << ',' << ms.mean << ',' << ms.stderr_ << ',';
    std::ostringstream f;
    f.precision(2);
    f << std::scientific << ms.mean << "+-" << ms.stderr_;
    sum << f.str() << '\n';
  }
  write_text(summary_path, sum.str());
  std::cout << csv.str();
  return finite ? kOk : kFailure;
}

// ---------------------------------------------------------------------------

json analyze_defaults() {
  return {{"checkpoints", json::array()}, {"data_dir", "data"}, {"name", "train"},
          {"sample", std::uint64_t{0}},   {"out", "spectrum.csv"}, {"self_test", false}};
}

int cmd_analyze(const json& cfg) {
  if (cfg.at("self_test").get<bool>()) {
    ad::DenseArray eye({5, 5}, 0.0);
    for (std::size_t i = 0; i < 5; ++i) eye.at(i, i) = 1.0;
    const Spectrum s = eig_spectrum(eye);
    bool ok = true;
    for (const auto& e : s.eigenvalues) {
      std::cout << e.real() << (e.imag() >= 0 ? "+" : "") << e.imag() << "i\n";
      ok = ok && std::abs(e - std::complex<double>(1.0, 0.0)) < 1e-12;
    }
    std::cout << (ok ? "identity spectrum: all ones\n" : "identity spectrum: FAILED\n");
    return ok ? kOk : kFailure;
  }
  const auto checkpoints = cfg.at("checkpoints").get<std::vector<std::string>>();
  if (checkpoints.empty()) throw Error("analyze: no checkpoints given");
  const Dataset ds = load_required(cfg.at("data_dir"), cfg.at("name"));
  const auto sample = cfg.at("sample").get<std::size_t>();
  std::vector<SpectrumSummary> rows;
  for (const auto& c : checkpoints) {
    const OperatorModel m = load_required_checkpoint(c);
    if (m.spatial_dim != 1) throw Error("analyze: spectral diagnostics support 1D checkpoints only");
    if (ds.dim != 1) throw Error("analyze: dataset is not 1D");
    const Grid g = make_uniform_grid(ds.n, 1);
    const Neighborhood nb = build_neighborhood(g, m.radius);
    rows.push_back(summarize_spectrum(amplification_matrix(m, ds.input_sample(sample), g, nb, sample)));
  }
  const std::string csv = spectrum_csv(rows);
  write_text(cfg.at("out").get<std::string>(), csv);
  std::cout << csv;
  bool finite = true;
  for (const auto& r : rows) finite = finite && std::isfinite(r.neg_max) && std::isfinite(r.neg_min);
  return finite ? kOk : kFailure;
}

// ---------------------------------------------------------------------------

int cmd_self_test() {
  int failures = 0;
  auto report = [&](const char* name, bool ok, const std::string& detail) {
    std::cout << (ok ? "PASS " : "FAIL ") << name << " " << detail << "\n";
    if (!ok) ++failures;
  };

  {
    const double worst = ad::finite_diff_check([](ad::Tape& t, ad::Var x) { return t.sum(t.mul(x, x)); },
                                               ad::DenseArray::vector({3.0, -1.5}), 1e-5);
    report("autodiff-gradient", worst < 1e-6, "discrepancy=" + fmt(worst));
  }
  {
    const Grid g = make_uniform_grid(101, 1);
    const Dataset ds = gen_poisson_1d(20, g, 11);
    const double e = evaluate(analytic_nkn_1d(g), ds);
    report("analytic-nkn", e <= 2e-3, "relative_mse=" + fmt(e));
  }
  {
    const Grid g = make_uniform_grid(21, 1);
    const Neighborhood nb = build_neighborhood(g, 2.0);
    const ad::DenseArray h({g.size(), 1}, 3.25);
    const auto out = nonlocal_laplacian(
        h, [](std::size_t i, std::size_t j, std::span<double> k) { k[0] = 1.0 + 0.1 * double(i) + 0.01 * double(j); },
        nb, g);
    double worst = 0.0;
    for (double v : out.values()) worst = std::max(worst, std::abs(v));
    report("laplacian-constants", worst < 1e-12 * double(g.size()), "max=" + fmt(worst));
  }
  {
    ad::DenseArray eye({4, 4}, 0.0);
    for (std::size_t i = 0; i < 4; ++i) eye.at(i, i) = 1.0;
    const Spectrum s = eig_spectrum(eye);
    report("eig-identity", std::abs(s.max_real() - 1.0) < 1e-12 && std::abs(s.min_real() - 1.0) < 1e-12,
           "max=" + fmt(s.max_real()));
  }
  return failures == 0 ? kOk : kFailure;
}

// ---------------------------------------------------------------------------

namespace {

struct Command {
  CLI::App* app;
  json defaults;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;
  std::string config;
};

void bind_options(Command& c) {
  c.app->add_option("--config", c.config, "JSON config file; flags override its values");
  for (auto it = c.defaults.begin(); it != c.defaults.end(); ++it) {
    const std::string key = it.key();
    std::string help = "default: " + it.value().dump();
    if (it.value().is_boolean()) {
      c.options[key] = c.app->add_flag(key_to_flag(key), help);
    } else {
      c.options[key] = c.app->add_option(key_to_flag(key), c.values[key], help);
    }
  }
}

std::vector<std::pair<std::string, std::string>> given_flags(const Command& c) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& [key, opt] : c.options) {
    if (opt->count() == 0) continue;
    out.emplace_back(key, c.defaults.at(key).is_boolean() ? "true" : c.values.at(key));
  }
  return out;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Nonlocal kernel network toolkit"};
  app.require_subcommand(1);

  Command gen{app.add_subcommand("gen-data", "Generate a Poisson 1D or Darcy 2D dataset"), gen_data_defaults(), {}, {}, {}};
  Command tr{app.add_subcommand("train", "Train NKN/GKN models over a depth schedule"), train_defaults(), {}, {}, {}};
  Command ev{app.add_subcommand("eval", "Evaluate checkpoints on datasets"), eval_defaults(), {}, {}, {}};
  Command an{app.add_subcommand("analyze", "Amplification spectra of 1D checkpoints"), analyze_defaults(), {}, {}, {}};
  CLI::App* st = app.add_subcommand("self-test", "Run built-in consistency checks");
  for (Command* c : {&gen, &tr, &ev, &an}) bind_options(*c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (st->parsed()) return cmd_self_test();
    for (Command* c : {&gen, &tr, &ev, &an}) {
      if (!c->app->parsed()) continue;
      const json cfg = merge_config(c->defaults, c->config, given_flags(*c));
      if (c == &gen) return cmd_gen_data(cfg);
      if (c == &tr) return cmd_train(cfg);
      if (c == &ev) return cmd_eval(cfg);
      return cmd_analyze(cfg);
    }
  } catch (const MissingFile& e) {
    std::cerr << "error: file not found: " << e.what() << "\n";
    return kMissingFile;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}

}  // namespace nkn::cli
