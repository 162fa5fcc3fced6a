// lego: command-line driver for training, unlearning and evaluation runs.

#include "lego/scenario.hpp"

#if __has_include(<CLI11.hpp>)
#include <CLI11.hpp>
#else
#include <CLI/CLI.hpp>
#endif

#include <iostream>

namespace {

using lego::json;

struct Common {
  std::string config_path;
  std::string out;  // report path; defaults to <output_dir>/<command>.json
  bool quiet = false;
};

lego::Config load(const Common& c) {
  lego::warnings_enabled() = !c.quiet;
  return lego::load_config(c.config_path);
}

void emit(json report, const lego::Config& config, const Common& c, const std::string& name) {
  report["config_hash"] = lego::hex64(lego::Fnv1a().update(lego::config_to_json(config).dump()).digest());
  const std::string path = c.out.empty() ? (std::filesystem::path(config.output_dir) / (name + ".json")).string() : c.out;
  lego::write_json_file(report, path);
  std::cout << report.dump(2) << '\n';
}

lego::Matrix embedding_or_u0(const std::string& path, const lego::Pipeline& p) {
  if (path.empty()) return p.model.users;
  lego::Matrix m = lego::read_embedding_file(path);
  if (m.rows() != p.model.users.rows() || m.cols() != p.model.users.cols())
    throw lego::ShapeError("embedding " + path + " does not match the model's user matrix");
  return m;
}

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config_path, "JSON config file")->required()->check(CLI::ExistingFile);
  cmd->add_option("-o,--out", c.out, "report path (default <output_dir>/<command>.json)");
  cmd->add_flag("-q,--quiet", c.quiet, "suppress warnings");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-step multi-attribute unlearning for recommender user embeddings"};
  app.require_subcommand(1);
  Common common;

  auto* train = app.add_subcommand("train", "train (or load) the CF model and report ranking metrics");
  add_common(train, common);

  std::string attr;
  auto* calibrate = app.add_subcommand("calibrate", "calibrate U0 against one attribute and store the result");
  add_common(calibrate, common);
  calibrate->add_option("--attr", attr, "attribute name")->required();

  std::string attrs;
  auto* combine = app.add_subcommand("combine", "combine stored calibrations for a set of attributes");
  add_common(combine, common);
  combine->add_option("--attrs", attrs, "comma-separated attribute names")->required();

  std::string embedding;
  auto* attack = app.add_subcommand("attack", "attribute inference attack on U0 or a stored embedding");
  add_common(attack, common);
  attack->add_option("--embedding", embedding, "LEGOEMB1 file (default U0)")->check(CLI::ExistingFile);

  auto* rec = app.add_subcommand("rec-eval", "HR@K and NDCG@K of U0 or a stored embedding");
  add_common(rec, common);
  rec->add_option("--embedding", embedding, "LEGOEMB1 file (default U0)")->check(CLI::ExistingFile);

  std::string script;
  auto* scenario = app.add_subcommand("scenario", "run a scripted sequence of unlearning requests");
  add_common(scenario, common);
  scenario->add_option("--script", script, "scenario JSON")->required()->check(CLI::ExistingFile);
  bool traces = false;
  scenario->add_flag("--traces", traces, "write calibration traces as CSV");

  auto* bound = app.add_subcommand("bound-check", "compare the two-step and joint objectives (P1 vs P2)");
  add_common(bound, common);
  bound->add_option("--attrs", attrs, "comma-separated attribute names")->required();

  std::vector<double> sigmas;
  auto* dp = app.add_subcommand("dp", "Gaussian noise baseline over one or more noise scales");
  add_common(dp, common);
  dp->add_option("--sigma", sigmas, "noise scale(s)")->required()->delimiter(',')->check(CLI::NonNegativeNumber);

  auto* summary = app.add_subcommand("dataset-summary", "interaction and attribute statistics");
  add_common(summary, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    const lego::Config config = load(common);
    if (summary->parsed()) {
      auto [ds, table] = lego::load_data(config.dataset);
      emit(lego::dataset_summary(ds, table), config, common, "dataset_summary");
      return 0;
    }
    bool trained = false;
    const lego::Pipeline p = lego::prepare_pipeline(config, &trained);
    lego::EmbeddingStore store(config.effective_store_dir());

    if (train->parsed()) {
      emit({{"trained", trained},
            {"checkpoint", config.cf_checkpoint},
            {"users", p.dataset.num_users},
            {"items", p.dataset.num_items},
            {"dim", p.model.dim()},
            {"rec", lego::to_json(lego::hr_ndcg_at_k(p.model, p.dataset, config.rec_k))}},
           config, common, "train");
    } else if (calibrate->parsed()) {
      const auto labels = p.labels({attr});
      const auto result = lego::calibrate(p.model.users, labels[0].labels, labels[0].cardinality,
                                          config.calibration, attr);
      const lego::StoreKey key{p.source_hash(), attr, lego::hex64(config.calibration.hash())};
      store.put(key, result.embedding);
      const auto dir = std::filesystem::path(config.output_dir);
      std::filesystem::create_directories(dir);
      const auto trace = (dir / ("calibration_" + attr + ".csv")).string();
      lego::write_calibration_trace_csv(result.trace, trace);
      json j = lego::to_json(result);
      j["store_key"] = key.str();
      j["trace_csv"] = trace;
      emit(j, config, common, "calibrate_" + attr);
    } else if (combine->parsed()) {
      const auto names = lego::split_names(attrs);
      lego::ScenarioScript{{names}}.validate(p.attributes);
      const auto r = lego::run_request(config, p, store, names, 0);
      const auto file = std::filesystem::path(config.output_dir) / "combined.emb";
      std::filesystem::create_directories(file.parent_path());
      lego::write_embedding_file(r.embedding, file);
      json j = lego::to_json(r);
      j["embedding_file"] = file.string();
      emit(j, config, common, "combine");
    } else if (attack->parsed()) {
      emit(lego::to_json(lego::attack_metrics(embedding_or_u0(embedding, p), p.labels(p.attribute_names()),
                                              config.attack)),
           config, common, "attack");
    } else if (rec->parsed()) {
      emit(lego::to_json(lego::hr_ndcg_at_k(embedding_or_u0(embedding, p), p.model.items, p.dataset, config.rec_k)),
           config, common, "rec_eval");
    } else if (scenario->parsed()) {
      const auto s = lego::load_script(script);
      const auto reports = lego::run_scenario(config, p, store, s, {true, traces});
      json all = json::array();
      for (const auto& r : reports) {
        const json j = lego::to_json(r);
        lego::write_json_file(
            j, (std::filesystem::path(config.output_dir) / "scenario" / ("request_" + std::to_string(r.index) + ".json"))
                   .string());
        all.push_back(j);
      }
      emit({{"requests", all}}, config, common, "scenario");
    } else if (bound->parsed()) {
      const auto names = lego::split_names(attrs);
      lego::ScenarioScript{{names}}.validate(p.attributes);
      lego::BoundCheckConfig bc;
      bc.calibration = config.calibration;
      bc.combination = config.combination;
      bc.protocol = config.mi_protocol;
      bc.parallelism = config.parallelism;
      emit(lego::to_json(lego::bound_check(p.model.users, p.labels(names), bc)), config, common, "bound_check");
    } else if (dp->parsed()) {
      json points = json::array();
      for (const auto& point : lego::dp_sweep(config, p, sigmas)) points.push_back(lego::to_json(point));
      emit({{"seed", config.dp_seed}, {"points", points}}, config, common, "dp");
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
