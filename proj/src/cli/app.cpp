#include <algorithm>
#include <chrono>
#include <map>
#include <memory>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "foldcity/cli/cli.hpp"
#include "foldcity/cli/commands.hpp"
#include "foldcity/cli/manifest.hpp"
#include "foldcity/error.hpp"
#include "foldcity/io/csv.hpp"
#include "foldcity/io/stores.hpp"
#include "foldcity/parallel.hpp"

namespace foldcity::cli {
namespace {

using nlohmann::json;

struct Globals {
  int threads = 0;
  bool quiet = false;
  bool verbose = false;
  std::string config;
  std::string manifest = "manifest.json";
  std::uint64_t seed = 0;
};

/// Options of one invocation. CLI11 binds into these members, so the struct
/// must not move once the app is built.
struct Invocation {
  CLI::App app{"Building-shape embeddings and neighbourhood grouping", "foldcity"};
  Globals globals;
  SynthOptions synth;
  IngestOptions ingest;
  SampleOptions sample;
  TrainOptions train;
  EncodeOptions encode;
  ClusterOptions cluster;
  TsneOptions tsne;
  GroupOptions group;
  std::vector<std::string> sweep_text;
  ReportOptions report;

  Invocation() { build(); }
  Invocation(const Invocation&) = delete;
  Invocation& operator=(const Invocation&) = delete;

  /// The one subcommand that was given, or null.
  CLI::App* stage() const {
    const auto subs = app.get_subcommands();
    return subs.empty() ? nullptr : subs.front();
  }

 private:
  void build() {
    app.require_subcommand(1);
    app.fallthrough();
    app.set_version_flag("--version", std::string(kToolVersion));
    app.add_option("--threads", globals.threads, "Worker threads (default: FOLDCITY_THREADS or all cores)")
        ->check(CLI::NonNegativeNumber);
    app.add_flag("-q,--quiet", globals.quiet, "Only warnings and errors on stderr");
    app.add_flag("-v,--verbose", globals.verbose, "Debug logging on stderr");
    app.add_option("--config", globals.config, "key=value or JSON file; command-line flags take precedence");
    app.add_option("--manifest", globals.manifest, "Pipeline manifest to append to")->capture_default_str();
    app.add_option("--seed", globals.seed, "Run seed; every stage salts it with its name")->capture_default_str();

    auto* s = app.add_subcommand("synth", "Generate a labelled synthetic building dataset");
    s->add_option("--count", synth.count)->capture_default_str();
    s->add_option("--mix", synth.mix, "footprint-roof[-size][:weight],...")->capture_default_str();
    s->add_option("--bbox", synth.bbox, "xmin,ymin,xmax,ymax")->capture_default_str();
    s->add_option("--format", synth.format)->check(CLI::IsMember({"gml", "obj"}))->capture_default_str();
    s->add_option("--srs", synth.srs)->capture_default_str();
    s->add_option("--out", synth.out, "Output directory");

    auto* i = app.add_subcommand("ingest", "Parse CityGML/OBJ, drop non-watertight buildings");
    i->add_option("inputs,--inputs", ingest.inputs, "Files or directories");
    i->add_option("--out", ingest.out, "Output directory");

    auto* sa = app.add_subcommand("sample", "Sample, radius-filter and normalise point clouds");
    sa->add_option("--store", sample.store, "buildings.bmsh from ingest");
    sa->add_option("--preset", sample.preset)->check(CLI::IsMember({"desk", "paper"}))->capture_default_str();
    sa->add_option("--points", sample.points, "Points per cloud (default: from the preset)");
    sa->add_option("--split", sample.split, "train:test ratio, e.g. 3:1");
    sa->add_option("--lo-pct", sample.lo_pct)->capture_default_str();
    sa->add_option("--hi-pct", sample.hi_pct)->capture_default_str();
    sa->add_option("--out", sample.out, "Output directory");

    auto* t = app.add_subcommand("train", "Train the folding autoencoder");
    t->add_option("--clouds", train.clouds);
    t->add_option("--preset", train.preset)->check(CLI::IsMember({"desk", "paper"}))->capture_default_str();
    t->add_option("--codeword-dim", train.codeword_dim);
    t->add_option("--epochs", train.epochs);
    t->add_option("--lr", train.lr);
    t->add_option("--batch", train.batch);
    t->add_option("--checkpoint-every", train.checkpoint_every);
    t->add_option("--resume", train.resume, "Checkpoint to continue from");
    t->add_option("--out", train.out, "Output directory");

    auto* e = app.add_subcommand("encode", "Encode clouds into codewords");
    e->add_option("--checkpoint", encode.checkpoint);
    e->add_option("--clouds", encode.clouds);
    e->add_option("--out", encode.out, "Embedding store file");

    auto* c = app.add_subcommand("cluster", "PCA and Ward clustering of codewords");
    c->add_option("--embeddings", cluster.embeddings);
    c->add_option("--pca", cluster.pca, "Components; 0 disables")->capture_default_str();
    c->add_option("--cut", cluster.cut, "Dendrogram distance cut");
    c->add_option("--k", cluster.k, "Cluster count");
    c->add_option("--sample", cluster.sample, "Members listed per cluster");
    c->add_option("--out", cluster.out, "Output directory");

    auto* ts = app.add_subcommand("tsne", "Two-dimensional t-SNE layout of codewords");
    ts->add_option("--embeddings", tsne.embeddings);
    ts->add_option("--perplexity", tsne.perplexity)->capture_default_str();
    ts->add_option("--iters", tsne.iterations)->capture_default_str();
    ts->add_option("--pca", tsne.pca, "Reduce first; 0 disables")->capture_default_str();
    ts->add_option("--out", tsne.out, "CSV file");

    auto* g = app.add_subcommand("group", "Group buildings within boundaries by embedding similarity");
    g->add_option("--embeddings", group.embeddings);
    g->add_option("--entities", group.entities, "building_id,x,y[,boundary_id]");
    g->add_option("--tau", group.tau)->capture_default_str();
    g->add_option("--tau-sweep", sweep_text, "Comma-separated taus; bare flag: 0.01..0.05")
        ->expected(0, CLI::detail::expected_max_vector_size)
        ->delimiter(',');
    g->add_option("--boundaries", group.boundaries, "GeoJSON polygons with a boundary_id property");
    g->add_option("--tiles", group.tiles, "Square tile size in metres");
    g->add_option("--center", group.center)->check(CLI::IsMember({"geometric", "coordinate"}))->capture_default_str();
    g->add_option("--out", group.out, "Output directory");

    auto* r = app.add_subcommand("report", "Summarise the manifest; label purity when labels are given");
    r->add_option("--labels", report.labels, "labels.csv from synth");
    r->add_option("--clusters", report.clusters, "labels.csv from cluster");
    r->add_option("--out", report.out, "JSON file");
  }
};

using Section = std::vector<std::pair<std::string, std::vector<std::string>>>;
using ConfigFile = std::map<std::string, Section>;  // "" holds top-level keys

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> json_values(const json& v, const std::string& key) {
  if (v.is_array()) {
    std::vector<std::string> out;
    for (const auto& x : v) {
      const auto inner = json_values(x, key);
      out.insert(out.end(), inner.begin(), inner.end());
    }
    return out;
  }
  if (v.is_string()) return {v.get<std::string>()};
  if (v.is_boolean()) return {v.get<bool>() ? "true" : "false"};
  if (v.is_number_integer() || v.is_number_unsigned()) return {v.dump()};
  if (v.is_number()) return {io::format_double(v.get<double>())};
  throw UsageError("config key '" + key + "' has an unsupported value");
}

ConfigFile read_config(const std::string& path) {
  const std::string text = io::read_file(path);
  ConfigFile cfg;
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    json doc;
    try {
      doc = json::parse(text);
    } catch (const json::exception& e) {
      throw UsageError(path + ": " + e.what());
    }
    for (const auto& [key, value] : doc.items()) {
      if (value.is_object()) {
        for (const auto& [k, v] : value.items()) cfg[key].emplace_back(k, json_values(v, key + "." + k));
      } else {
        cfg[""].emplace_back(key, json_values(value, key));
      }
    }
    return cfg;
  }
  std::istringstream in(text);
  std::string line, section;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    line = trim(line);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[' && line.back() == ']') {
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError(fmt::format("{}:{}: expected key=value", path, n));
    std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && (value.front() == '"' || value.front() == '\'') && value.back() == value.front()) {
      value = value.substr(1, value.size() - 2);
    }
    if (const auto dot = key.find('.'); section.empty() && dot != std::string::npos) {
      cfg[key.substr(0, dot)].emplace_back(key.substr(dot + 1), std::vector<std::string>{value});
    } else {
      cfg[section].emplace_back(key, std::vector<std::string>{value});
    }
  }
  return cfg;
}

CLI::Option* find_option(CLI::App* app, std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  if (key == "inputs") return app->get_option_no_throw("inputs");
  return app->get_option_no_throw("--" + key);
}

/// Turns one config entry into flag tokens when the flag was not given.
bool append_entry(CLI::App* app, const std::string& key, const std::vector<std::string>& values,
                  std::vector<std::string>& out) {
  CLI::Option* opt = find_option(app, key);
  if (!opt || key == "config" || opt->count() > 0) return opt != nullptr;
  const std::string flag = opt->get_lnames().empty() ? "--inputs" : "--" + opt->get_lnames().front();
  if (opt->get_type_size() == 0) {
    if (values.size() == 1 && (values[0] == "true" || values[0] == "1")) out.push_back(flag);
    return true;
  }
  out.push_back(flag);
  out.insert(out.end(), values.begin(), values.end());
  return true;
}

/// Flag > config file > default: re-parses with config entries for flags the
/// command line left unset.
std::vector<std::string> merge_config(const Invocation& first, const std::vector<std::string>& args) {
  const ConfigFile cfg = read_config(first.globals.config);
  CLI::App* stage = first.stage();
  std::vector<std::string> head, tail;
  if (const auto it = cfg.find(""); it != cfg.end()) {
    for (const auto& [key, values] : it->second) {
      if (stage && append_entry(stage, key, values, tail)) continue;
      if (!append_entry(const_cast<CLI::App*>(&first.app), key, values, head)) {
        spdlog::debug("config key '{}' does not apply to this command", key);
      }
    }
  }
  if (stage) {
    if (const auto it = cfg.find(stage->get_name()); it != cfg.end()) {
      for (const auto& [key, values] : it->second) {
        if (!append_entry(stage, key, values, tail)) {
          throw UsageError(fmt::format("config: unknown key '{}' for {}", key, stage->get_name()));
        }
      }
    }
  }
  for (const auto& [name, section] : cfg) {
    if (!name.empty() && !first.app.get_subcommand_no_throw(name)) throw UsageError("config: unknown section '" + name + "'");
  }
  std::vector<std::string> merged = head;
  merged.insert(merged.end(), args.begin(), args.end());
  merged.insert(merged.end(), tail.begin(), tail.end());
  return merged;
}

void setup_logging(const Globals& g) {
  auto logger = spdlog::get("foldcity");
  if (!logger) {
    logger = spdlog::stderr_color_mt("foldcity");
    logger->set_pattern("%^[%l]%$ %v");
  }
  spdlog::set_default_logger(logger);
  spdlog::set_level(g.quiet ? spdlog::level::warn : g.verbose ? spdlog::level::debug : spdlog::level::info);
}

void parse(Invocation& inv, const std::vector<std::string>& args) {
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  inv.app.parse(reversed);
}

std::vector<double> parse_sweep(const Invocation& inv) {
  const auto* opt = inv.app.get_subcommand("group")->get_option("--tau-sweep");
  if (opt->count() == 0) return {};
  std::vector<double> taus;
  for (const auto& t : inv.sweep_text) {
    if (!trim(t).empty()) taus.push_back(io::parse_double(trim(t), "--tau-sweep"));
  }
  if (taus.empty()) taus = {0.01, 0.02, 0.03, 0.04, 0.05};
  return taus;
}

StageResult dispatch(Invocation& inv, const std::string& stage, const PipelineManifest& manifest) {
  const std::uint64_t seed = inv.globals.seed;
  if (stage == "synth") return cmd_synth(inv.synth, seed);
  if (stage == "ingest") return cmd_ingest(inv.ingest);
  if (stage == "sample") return cmd_sample(inv.sample, seed);
  if (stage == "train") {
    inv.train.given_epochs = inv.app.get_subcommand("train")->get_option("--epochs")->count() > 0;
    return cmd_train(inv.train, seed);
  }
  if (stage == "encode") return cmd_encode(inv.encode);
  if (stage == "cluster") return cmd_cluster(inv.cluster, seed);
  if (stage == "tsne") return cmd_tsne(inv.tsne, seed);
  if (stage == "group") {
    inv.group.sweep = parse_sweep(inv);
    return cmd_group(inv.group);
  }
  if (stage == "report") return cmd_report(inv.report, manifest.to_json());
  throw UsageError("unknown command " + stage);
}

int execute(const std::vector<std::string>& args) {
  auto inv = std::make_unique<Invocation>();
  try {
    parse(*inv, args);
  } catch (const CLI::ParseError& e) {
    return inv->app.exit(e) == 0 ? kSuccess : kUsageError;
  }
  setup_logging(inv->globals);

  std::vector<std::string> effective = args;
  if (!inv->globals.config.empty()) {
    effective = merge_config(*inv, args);
    inv = std::make_unique<Invocation>();
    try {
      parse(*inv, effective);
    } catch (const CLI::ParseError& e) {
      spdlog::error("in --config {}: {}", inv->globals.config, e.what());
      return kUsageError;
    }
    setup_logging(inv->globals);
  }
  if (inv->globals.threads > 0) set_thread_count(inv->globals.threads);

  const std::string stage = inv->stage()->get_name();
  auto manifest = PipelineManifest::open(inv->globals.manifest);
  StageRecord rec;
  rec.stage = stage;
  rec.argv = effective;
  rec.started_utc = utc_now();
  rec.run_seed = inv->globals.seed;
  rec.threads = thread_count();

  const auto t0 = std::chrono::steady_clock::now();
  StageResult result = dispatch(*inv, stage, manifest);
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  rec.seed = result.seed;
  rec.config = std::move(result.config);
  rec.counts = std::move(result.counts);
  for (const auto& f : result.inputs) rec.inputs.push_back(manifest.describe(f));
  for (const auto& f : result.outputs) rec.outputs.push_back(manifest.describe(f));
  manifest.append(std::move(rec));
  manifest.save();
  spdlog::info("{} finished in {:.2f} s; manifest {}", stage, manifest.stages().back().wall_seconds,
               manifest.path().string());
  return kSuccess;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  try {
    return execute(args);
  } catch (const UsageError& e) {
    spdlog::error("{}", e.what());
    return kUsageError;
  } catch (const NumericError& e) {
    spdlog::error("numeric failure: {}", e.what());
    return kNumericError;
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return kDataError;
  } catch (const std::filesystem::filesystem_error& e) {
    spdlog::error("{}", e.what());
    return kDataError;
  } catch (const nlohmann::json::exception& e) {
    spdlog::error("{}", e.what());
    return kDataError;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kDataError;
  }
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace foldcity::cli
