// sgl: command-line front end.
//
//   sgl search    --config c.json [--seed 1-5] [--out dir] [--precision f64|f32] [--workers n] [--resume ckpt]
//   sgl gradcheck --config c.json [--seed s] [--out dir]
//   sgl compare   --config c.json [--seed list] [--out dir]
//   sgl derive    --config c.json --checkpoint final.ckpt [--retrain-steps n] [--out dir]
//
// Exit codes: 0 success, 1 usage/config error, 2 runtime failure, 3 gradcheck FAIL.

#include <CLI11.hpp>

#include <charconv>
#include <fstream>
#include <iostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "sgl/runner.hpp"

namespace {

using namespace sgl;

std::uint64_t parse_u64(const std::string& s) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError("--seed: bad seed \"" + s + "\"");
  return v;
}

// "1,2,7" or "1-10" or a mix of both.
std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto dash = item.find('-');
    if (dash == std::string::npos) {
      seeds.push_back(parse_u64(item));
      continue;
    }
    const auto lo = parse_u64(item.substr(0, dash)), hi = parse_u64(item.substr(dash + 1));
    if (hi < lo || hi - lo > 100000) throw ConfigError("--seed: bad range \"" + item + "\"");
    for (auto s = lo; s <= hi; ++s) seeds.push_back(s);
  }
  if (seeds.empty()) throw ConfigError("--seed: empty seed list");
  return seeds;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Common {
  std::string config;
  std::string seeds;
  std::string out;
  std::string precision;
  std::size_t workers = 0;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "experiment config (JSON)")->required();
  app->add_option("--seed", c.seeds, "seed list, e.g. 1,2,3 or 1-10 (default: config seeds)");
  app->add_option("--out", c.out, "output directory (default: config output_dir)");
  app->add_option("--precision", c.precision, "f64 or f32")->check(CLI::IsMember({"f64", "f32"}));
  app->add_option("--workers", c.workers, "worker threads per run")->check(CLI::PositiveNumber);
}

// Config text and the config with command-line overrides applied.
std::pair<std::string, ExperimentConfig> load(const Common& c) {
  std::string text = read_file(c.config);
  ExperimentConfig cfg = parse_config(text);
  if (!c.seeds.empty()) cfg.seeds = parse_seed_list(c.seeds);
  if (!c.out.empty()) cfg.output_dir = c.out;
  if (!c.precision.empty()) cfg.engine.precision = parse_precision(c.precision);
  if (c.workers > 0) cfg.engine.workers = c.workers;
  cfg.validate();
  return {std::move(text), std::move(cfg)};
}

int run_gradcheck_cmd(const Common& c) {
  auto [text, cfg] = load(c);
  const std::uint64_t seed = cfg.seeds.front();
  const GradcheckResult r = run_gradcheck(cfg, seed, &std::cerr);
  const auto& rep = r.report;
  std::cout << "gradcheck: " << rep.learners << " learners, " << r.weights_per_learner << " weights and "
            << r.arch_per_learner << " architecture coordinates per learner\n";
  for (std::size_t k = 0; k < rep.learners; ++k) {
    std::cout << "  own[k" << k << "] relative error " << format_double(rep.own_error[k]) << "\n";
    for (std::size_t j = 0; j < rep.learners; ++j) {
      if (j == k) continue;
      std::cout << "  cross[k" << k << " <- k" << j << "] ";
      if (rep.cross_exact_zero[k][j])
        std::cout << "exact zero (relative error " << format_double(rep.cross_error[k][j]) << ")\n";
      else
        std::cout << "relative error " << format_double(rep.cross_error[k][j]) << "\n";
    }
  }
  std::cout << "  total relative error " << format_double(rep.total_error) << " (tolerance "
            << format_double(rep.tolerance) << ") in " << format_double(rep.seconds) << " s\n";
  std::cout << (rep.pass ? "PASS" : "FAIL") << "\n";

  const std::filesystem::path out = cfg.output_dir;
  std::filesystem::create_directories(out);
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["learners"] = rep.learners;
  j["weights_per_learner"] = r.weights_per_learner;
  j["arch_per_learner"] = r.arch_per_learner;
  j["own_error"] = rep.own_error;
  j["cross_error"] = rep.cross_error;
  j["cross_exact_zero"] = rep.cross_exact_zero;
  j["total_error"] = rep.total_error;
  j["tolerance"] = rep.tolerance;
  j["pass"] = rep.pass;
  j["seconds"] = rep.seconds;
  std::ofstream(out / "gradcheck.json") << j.dump(2) << "\n";
  return rep.pass ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Small-group differentiable architecture search"};
  app.require_subcommand(1);

  Common search_opts, grad_opts, compare_opts;
  std::string resume;
  auto* search = app.add_subcommand("search", "run the search for every seed");
  add_common(search, search_opts);
  search->add_option("--resume", resume, "continue from a checkpoint (single seed)");

  auto* gradcheck = app.add_subcommand("gradcheck", "certify the hypergradient against finite differences");
  add_common(gradcheck, grad_opts);

  auto* compare = app.add_subcommand("compare", "SGL against the single-learner baseline on the same seeds");
  add_common(compare, compare_opts);

  std::string derive_config, checkpoint, derive_out;
  std::optional<std::size_t> retrain_steps;
  auto* derive = app.add_subcommand("derive", "derive genotypes from a checkpoint and retrain them from scratch");
  derive->add_option("--config", derive_config, "experiment config the checkpoint was written under")->required();
  derive->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  derive->add_option("--retrain-steps", retrain_steps, "SGD steps (default: config retrain.steps)");
  derive->add_option("--out", derive_out, "directory for genotype and report files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*search) {
      auto [text, cfg] = load(search_opts);
      RunOptions o;
      o.out = cfg.output_dir;
      o.config_text = text;
      o.log = &std::cout;
      if (!resume.empty()) o.resume = resume;
      run_search(cfg, o);
      return 0;
    }
    if (*compare) {
      auto [text, cfg] = load(compare_opts);
      RunOptions o;
      o.out = cfg.output_dir;
      o.config_text = text;
      o.log = &std::cout;
      run_compare(cfg, o);
      return 0;
    }
    if (*gradcheck) return run_gradcheck_cmd(grad_opts);
    if (*derive) {
      const ExperimentConfig cfg = load_config(derive_config);
      const std::size_t steps = retrain_steps.value_or(cfg.retrain.steps);
      const auto reports = derive_and_retrain(cfg, checkpoint, steps, &std::cout);
      if (!derive_out.empty()) {
        std::filesystem::create_directories(derive_out);
        std::ofstream table(std::filesystem::path(derive_out) / "retrain.csv", std::ios::binary);
        table << "learner,parametric_ops,test_error_at_init,test_error\n";
        for (const auto& r : reports) {
          table << r.learner << "," << r.parametric_ops << "," << format_double(r.test_error_at_init) << ","
                << format_double(r.test_error) << "\n";
          std::ofstream(std::filesystem::path(derive_out) / ("genotype-k" + std::to_string(r.learner) + ".json"),
                        std::ios::binary)
              << genotype_to_json(r.genotype, cfg.cell);
        }
      }
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
