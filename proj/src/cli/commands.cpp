#include "foldcity/cli/commands.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <exception>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "foldcity/analysis/analysis.hpp"
#include "foldcity/error.hpp"
#include "foldcity/geo/geogroup.hpp"
#include "foldcity/ingest/citygml.hpp"
#include "foldcity/ingest/obj.hpp"
#include "foldcity/ingest/store.hpp"
#include "foldcity/io/csv.hpp"
#include "foldcity/io/stores.hpp"
#include "foldcity/mesh/meshops.hpp"
#include "foldcity/nn/train.hpp"
#include "foldcity/parallel.hpp"
#include "foldcity/rng.hpp"
#include "foldcity/synth/synthgen.hpp"

namespace foldcity::cli {
namespace {

using nlohmann::json;
using io::format_double;

void require_out(const fs::path& out, std::string_view stage) {
  if (out.empty()) throw UsageError(fmt::format("{}: --out is required", stage));
}

void require_in(const fs::path& in, std::string_view flag, std::string_view stage) {
  if (in.empty()) throw UsageError(fmt::format("{}: {} is required", stage, flag));
  if (!fs::exists(in)) throw DataError(fmt::format("{}: no such file: {}", stage, in.string()));
}

void make_parent(const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

/// Characters outside [A-Za-z0-9_.-] become '_'.
std::string safe_file_stem(const std::string& id) {
  std::string s = id;
  for (char& c : s) {
    const auto u = static_cast<unsigned char>(c);
    if (!std::isalnum(u) && c != '_' && c != '.' && c != '-') c = '_';
  }
  return s.empty() ? "_" : s;
}

synth::Area parse_bbox(const std::string& text) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) v.push_back(io::parse_double(part, "--bbox"));
  if (v.size() != 4 || !(v[2] > v[0]) || !(v[3] > v[1])) {
    throw UsageError("--bbox must be xmin,ymin,xmax,ymax with xmax > xmin and ymax > ymin");
  }
  return {Point2(v[0], v[1]), Point2(v[2], v[3])};
}

analysis::Matrix embedding_matrix(const io::EmbeddingStore& store) {
  analysis::Matrix x(static_cast<Eigen::Index>(store.count()), static_cast<Eigen::Index>(store.dim));
  for (std::size_t i = 0; i < store.count(); ++i) {
    for (std::size_t j = 0; j < store.dim; ++j) {
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = store.data[i * store.dim + j];
    }
  }
  return x;
}

std::size_t preset_points(const std::string& preset) {
  if (preset == "desk") return 64;
  if (preset == "paper") return 2048;
  throw UsageError("unknown preset '" + preset + "' (desk|paper)");
}

}  // namespace

std::pair<std::size_t, std::size_t> parse_split(const std::string& text) {
  const auto colon = text.find(':');
  const auto bad = [&] { return UsageError("--split must look like 3:1, got '" + text + "'"); };
  if (colon == std::string::npos) throw bad();
  try {
    std::size_t used_a = 0, used_b = 0;
    const std::string sa = text.substr(0, colon), sb = text.substr(colon + 1);
    const long a = std::stol(sa, &used_a), b = std::stol(sb, &used_b);
    if (used_a != sa.size() || used_b != sb.size() || a <= 0 || b <= 0) throw bad();
    return {static_cast<std::size_t>(a), static_cast<std::size_t>(b)};
  } catch (const std::logic_error&) {
    throw bad();
  }
}

StageResult cmd_synth(const SynthOptions& o, std::uint64_t run_seed) {
  require_out(o.out, "synth");
  if (o.count == 0) throw UsageError("synth: --count must be at least 1");
  if (o.format != "gml" && o.format != "obj") throw UsageError("synth: --format must be gml or obj");
  const auto mix = synth::parse_mix(o.mix);
  const auto area = parse_bbox(o.bbox);

  StageResult r;
  r.seed = salted_seed(run_seed, "synth");
  r.config = {{"count", o.count}, {"mix", synth::format_mix(mix)}, {"bbox", o.bbox},
              {"format", o.format}, {"srs", o.srs},               {"out", o.out.generic_string()}};
  const auto ds = synth::generate_dataset(o.count, mix, area, r.seed);
  fs::create_directories(o.out);

  if (o.format == "gml") {
    std::vector<ingest::CityGmlBuilding> buildings;
    buildings.reserve(ds.specs.size());
    for (const auto& spec : ds.specs) buildings.push_back(synth::citygml_building(spec));
    std::ostringstream doc;
    ingest::write_citygml(doc, buildings, o.srs);
    const fs::path file = o.out / "buildings.gml";
    io::write_file_atomic(file, doc.str());
    r.outputs.push_back(file);
  } else {
    const fs::path dir = o.out / "obj";
    fs::create_directories(dir);
    for (const auto& rec : ds.records) {
      const fs::path file = dir / (safe_file_stem(rec.id) + ".obj");
      io::write_file_atomic(file, ingest::export_obj(rec.mesh));
      r.outputs.push_back(file);
    }
  }
  const fs::path labels = o.out / "labels.csv";
  io::write_file_atomic(labels, synth::labels_csv(ds.specs));
  r.outputs.push_back(labels);

  json families = json::object();
  for (std::size_t f : ds.family) families[mix[f].name()] = families.value(mix[f].name(), 0) + 1;
  r.counts = {{"buildings", ds.specs.size()}, {"families", families}};
  spdlog::info("synth: {} buildings in {} families", ds.specs.size(), mix.size());
  return r;
}

StageResult cmd_ingest(const IngestOptions& o) {
  require_out(o.out, "ingest");
  if (o.inputs.empty()) throw UsageError("ingest: no inputs given");
  static const std::set<std::string> kExtensions{".gml", ".xml", ".obj"};

  std::vector<fs::path> files;
  for (const auto& in : o.inputs) {
    if (fs::is_directory(in)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::recursive_directory_iterator(in)) {
        if (e.is_regular_file() && kExtensions.contains(lower(e.path().extension().string()))) found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else if (fs::is_regular_file(in)) {
      files.push_back(in);
    } else {
      throw DataError("ingest: no such input: " + in.string());
    }
  }
  if (files.empty()) throw UsageError("ingest: inputs contain no .gml, .xml or .obj files");

  std::vector<ingest::ParseResult> parsed(files.size());
  std::vector<std::exception_ptr> errors(files.size());
  parallel_for(files.size(), [&](std::size_t i) {
    try {
      const fs::path& file = files[i];
      if (lower(file.extension().string()) == ".obj") {
        ingest::BuildingRecord rec;
        rec.id = file.stem().string();
        try {
          rec.mesh = ingest::import_obj(io::read_file(file));
          rec.anchor_point = ingest::footprint_centroid(rec.mesh);
          parsed[i].buildings.push_back(std::move(rec));
          parsed[i].report.buildings_parsed = 1;
        } catch (const DataError& e) {
          parsed[i].report.buildings_skipped.push_back({rec.id, std::string("obj: ") + e.what()});
        }
      } else {
        std::ifstream in(file, std::ios::binary);
        if (!in) throw DataError("cannot open " + file.string());
        try {
          parsed[i] = ingest::parse_citygml(in);
        } catch (const ingest::XmlError& e) {
          throw DataError(file.string() + ": " + e.what());
        }
      }
    } catch (...) {
      errors[i] = std::current_exception();
    }
  });
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  ingest::ParseReport report;
  std::vector<ingest::BuildingRecord> buildings;
  std::set<std::string> seen;
  for (auto& p : parsed) {
    report.merge(p.report);
    for (auto& b : p.buildings) {
      if (!seen.insert(b.id).second) {
        --report.buildings_parsed;
        report.buildings_skipped.push_back({b.id, "duplicate_id"});
        continue;
      }
      buildings.push_back(std::move(b));
    }
  }

  std::vector<mesh::WatertightReport> checks(buildings.size());
  parallel_for(buildings.size(), [&](std::size_t i) { checks[i] = mesh::watertight_check(buildings[i].mesh); });
  std::vector<ingest::BuildingRecord> kept;
  json dropped = json::array();
  for (std::size_t i = 0; i < buildings.size(); ++i) {
    if (checks[i].is_watertight) {
      kept.push_back(std::move(buildings[i]));
    } else {
      dropped.push_back({{"id", buildings[i].id},
                         {"boundary_edges", checks[i].boundary_edges.size()},
                         {"non_manifold_edges", checks[i].non_manifold_edges.size()},
                         {"inconsistent_edges", checks[i].inconsistent_edges.size()}});
    }
  }

  fs::create_directories(o.out);
  const fs::path store = o.out / "buildings.bmsh";
  ingest::write_building_store(store, kept);

  json report_json = report;
  json file_list = json::array();
  for (const auto& f : files) file_list.push_back(f.generic_string());
  report_json["files"] = file_list;
  report_json["dropped_non_watertight"] = dropped;
  report_json["ingested"] = kept.size();
  const fs::path report_path = o.out / "parse_report.json";
  io::write_file_atomic(report_path, report_json.dump(2) + "\n");

  std::string entities = "building_id,x,y\n";
  for (const auto& b : kept) {
    entities += fmt::format("{},{},{}\n", io::csv_field(b.id), format_double(b.anchor_point.x()),
                            format_double(b.anchor_point.y()));
  }
  const fs::path entities_path = o.out / "entities.csv";
  io::write_file_atomic(entities_path, entities);

  StageResult r;
  r.config = {{"inputs", file_list}, {"out", o.out.generic_string()}};
  r.inputs = files;
  r.outputs = {store, ingest::attributes_sidecar(store), report_path, entities_path};
  r.counts = {{"files", files.size()},
              {"city_objects", report.city_objects()},
              {"buildings_parsed", report.buildings_parsed},
              {"buildings_skipped", report.buildings_skipped.size()},
              {"non_building_skipped", report.non_building_skipped},
              {"dropped_non_watertight", dropped.size()},
              {"ingested", kept.size()}};
  spdlog::info("ingest: {} ingested, {} skipped, {} dropped as not watertight", kept.size(),
               report.buildings_skipped.size(), dropped.size());
  return r;
}

StageResult cmd_sample(const SampleOptions& o, std::uint64_t run_seed) {
  require_in(o.store, "--store", "sample");
  require_out(o.out, "sample");
  const std::size_t points = o.points ? o.points : preset_points(o.preset);
  std::optional<std::pair<std::size_t, std::size_t>> split;
  if (!o.split.empty()) split = parse_split(o.split);

  const auto buildings = ingest::read_building_store(o.store);
  if (buildings.size() < 2) throw DataError("sample: the percentile filter needs at least 2 buildings");

  StageResult r;
  r.seed = salted_seed(run_seed, "sample");
  std::vector<PointCloud> raw(buildings.size());
  std::vector<double> radii(buildings.size());
  parallel_for(buildings.size(), [&](std::size_t i) {
    raw[i] = mesh::surface_sample(buildings[i].mesh, points, salted_seed(r.seed, buildings[i].id));
    raw[i].source_id = buildings[i].id;
    radii[i] = mesh::centroid_radius(raw[i]).radius;
  });
  const auto filter = mesh::percentile_filter(radii, o.lo_pct, o.hi_pct);

  io::CloudStore all;
  all.points_per_cloud = static_cast<std::uint32_t>(points);
  json dropped = json::array();
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (filter.keep[i]) {
      all.append(mesh::normalize_cloud(raw[i], filter.manifest));
    } else {
      dropped.push_back(buildings[i].id);
    }
  }

  fs::create_directories(o.out);
  const fs::path clouds = o.out / "clouds.bpcl";
  io::write_cloud_store(clouds, all);
  json norm = filter.manifest;
  norm["points_per_cloud"] = points;
  norm["dropped_ids"] = dropped;
  const fs::path norm_path = o.out / "normalization.json";
  io::write_file_atomic(norm_path, norm.dump(2) + "\n");
  r.inputs = {o.store, ingest::attributes_sidecar(o.store)};
  r.outputs = {clouds, io::ids_sidecar(clouds), norm_path};
  r.counts = {{"buildings", buildings.size()},
              {"kept", all.count()},
              {"dropped", dropped.size()},
              {"points_per_cloud", points},
              {"global_scale", filter.manifest.global_scale}};

  if (split) {
    std::vector<std::size_t> order(all.count());
    std::iota(order.begin(), order.end(), std::size_t{0});
    SplitMix64 rng(salted_seed(r.seed, "split"));
    shuffle(order, rng);
    const auto [a, b] = *split;
    const auto n_train = static_cast<std::size_t>(
        std::llround(static_cast<double>(all.count()) * static_cast<double>(a) / static_cast<double>(a + b)));
    std::vector<bool> is_train(all.count(), false);
    for (std::size_t i = 0; i < n_train; ++i) is_train[order[i]] = true;

    io::CloudStore train, test;
    train.points_per_cloud = test.points_per_cloud = all.points_per_cloud;
    std::string csv = "building_id,split\n";
    for (std::size_t i = 0; i < all.count(); ++i) {
      (is_train[i] ? train : test).append(all.cloud(i));
      csv += io::csv_field(all.ids[i]) + (is_train[i] ? ",train\n" : ",test\n");
    }
    const fs::path split_path = o.out / "split.csv", train_path = o.out / "train.bpcl", test_path = o.out / "test.bpcl";
    io::write_file_atomic(split_path, csv);
    io::write_cloud_store(train_path, train);
    io::write_cloud_store(test_path, test);
    for (const auto& p : {split_path, train_path, io::ids_sidecar(train_path), test_path, io::ids_sidecar(test_path)}) {
      r.outputs.push_back(p);
    }
    r.counts["train"] = train.count();
    r.counts["test"] = test.count();
  }

  r.config = {{"store", o.store.generic_string()}, {"preset", o.preset}, {"points", points},
              {"split", o.split},                  {"lo_pct", o.lo_pct}, {"hi_pct", o.hi_pct},
              {"out", o.out.generic_string()}};
  spdlog::info("sample: kept {} of {} clouds of {} points", all.count(), buildings.size(), points);
  return r;
}

StageResult cmd_train(const TrainOptions& o, std::uint64_t run_seed) {
  require_in(o.clouds, "--clouds", "train");
  require_out(o.out, "train");
  const auto store = io::read_cloud_store(o.clouds);
  if (store.count() == 0) throw DataError("train: the cloud store is empty");
  std::vector<PointCloud> dataset;
  dataset.reserve(store.count());
  for (std::size_t i = 0; i < store.count(); ++i) dataset.push_back(store.cloud(i));

  StageResult r;
  nn::TrainConfig cfg;
  nn::TrainState state;
  if (!o.resume.empty()) {
    require_in(o.resume, "--resume", "train");
    auto ck = nn::load_checkpoint(o.resume);
    cfg = std::move(ck.config);
    state = std::move(ck.state);
    if (o.codeword_dim && o.codeword_dim != cfg.arch.codeword_dim) {
      throw UsageError("train: --codeword-dim disagrees with the checkpoint being resumed");
    }
    if (o.given_epochs) cfg.epochs = o.epochs;
  } else {
    std::size_t dim = o.codeword_dim;
    if (o.preset == "desk") {
      cfg = nn::TrainConfig::desk(dim ? dim : 16);
    } else if (o.preset == "paper") {
      cfg = nn::TrainConfig::paper(dim ? dim : 512);
    } else {
      throw UsageError("train: unknown preset '" + o.preset + "' (desk|paper)");
    }
    if (o.given_epochs) cfg.epochs = o.epochs;
    if (o.lr > 0) cfg.learning_rate = o.lr;
    if (o.batch) cfg.batch_size = o.batch;
    cfg.seed = salted_seed(run_seed, "train");
  }
  fs::create_directories(o.out);
  const fs::path ckpt = o.out / "model.ckpt";
  cfg.checkpoint_every = o.checkpoint_every;
  cfg.checkpoint_path = ckpt;
  cfg.validate();
  if (o.resume.empty()) state = nn::initial_state(cfg);
  if (state.epoch > cfg.epochs) throw UsageError("train: the checkpoint is already past --epochs");

  const std::size_t start_epoch = state.epoch;
  state = nn::train(dataset, cfg, std::move(state), [&](std::size_t epoch, double loss) {
    if (epoch == cfg.epochs || epoch % 10 == 0 || epoch == start_epoch + 1) {
      spdlog::info("train: epoch {}/{} mean loss {:.6f}", epoch, cfg.epochs, loss);
    }
  });
  nn::save_checkpoint(ckpt, cfg, state);

  std::string csv = "epoch,mean_loss\n";
  for (std::size_t e = 0; e < state.loss_curve.size(); ++e) {
    csv += fmt::format("{},{}\n", e + 1, format_double(state.loss_curve[e]));
  }
  const fs::path loss_path = o.out / "loss.csv";
  io::write_file_atomic(loss_path, csv);

  r.seed = cfg.seed;
  json cfg_json = cfg;
  cfg_json.erase("checkpoint_path");
  r.config = {{"clouds", o.clouds.generic_string()}, {"preset", o.preset},
              {"resume", o.resume.generic_string()}, {"train", cfg_json},
              {"out", o.out.generic_string()}};
  r.inputs = {o.clouds, io::ids_sidecar(o.clouds)};
  if (!o.resume.empty()) {
    r.inputs.push_back(o.resume);
    r.inputs.push_back(nn::checkpoint_blob_path(o.resume));
  }
  r.outputs = {ckpt, nn::checkpoint_blob_path(ckpt), loss_path};
  r.counts = {{"clouds", store.count()},
              {"epochs", state.epoch},
              {"epochs_this_run", state.epoch - start_epoch},
              {"parameters", state.params.parameter_count()},
              {"codeword_dim", cfg.arch.codeword_dim}};
  if (!state.loss_curve.empty()) {
    r.counts["first_loss"] = state.loss_curve.front();
    r.counts["final_loss"] = state.loss_curve.back();
  }
  return r;
}

StageResult cmd_encode(const EncodeOptions& o) {
  require_in(o.checkpoint, "--checkpoint", "encode");
  require_in(o.clouds, "--clouds", "encode");
  require_out(o.out, "encode");
  const auto ck = nn::load_checkpoint(o.checkpoint);
  const auto store = io::read_cloud_store(o.clouds);

  io::EmbeddingStore emb;
  emb.dim = static_cast<std::uint32_t>(ck.config.arch.codeword_dim);
  emb.ids = store.ids;
  emb.data.resize(store.count() * emb.dim);
  parallel_for(store.count(), [&](std::size_t i) {
    const auto code = nn::encode<float>(ck.state.params, store.cloud(i));
    if (code.size() != emb.dim) throw DataError("encode: codeword size disagrees with the checkpoint");
    std::copy(code.begin(), code.end(), emb.data.begin() + static_cast<std::ptrdiff_t>(i * emb.dim));
  });
  make_parent(o.out);
  io::write_embedding_store(o.out, emb);

  StageResult r;
  r.config = {{"checkpoint", o.checkpoint.generic_string()}, {"clouds", o.clouds.generic_string()},
              {"out", o.out.generic_string()}};
  r.inputs = {o.checkpoint, nn::checkpoint_blob_path(o.checkpoint), o.clouds, io::ids_sidecar(o.clouds)};
  r.outputs = {o.out, io::ids_sidecar(o.out)};
  r.counts = {{"rows", emb.count()}, {"dim", emb.dim}};
  spdlog::info("encode: {} codewords of dimension {}", emb.count(), emb.dim);
  return r;
}

StageResult cmd_cluster(const ClusterOptions& o, std::uint64_t run_seed) {
  require_in(o.embeddings, "--embeddings", "cluster");
  require_out(o.out, "cluster");
  if (o.k && o.cut > 0) throw UsageError("cluster: give either --cut or --k, not both");
  if (!o.k && !(o.cut > 0)) throw UsageError("cluster: one of --cut or --k is required");
  const auto emb = io::read_embedding_store(o.embeddings);
  if (emb.count() == 0) throw DataError("cluster: the embedding store is empty");
  if (o.k > emb.count()) throw UsageError("cluster: --k exceeds the number of rows");

  StageResult r;
  r.seed = salted_seed(run_seed, "cluster");
  fs::create_directories(o.out);
  analysis::Matrix x = embedding_matrix(emb);
  const std::size_t q = std::min<std::size_t>({o.pca, emb.dim, emb.count()});
  if (q > 0) {
    const auto model = analysis::pca_fit(x, q);
    x = analysis::pca_transform(model, x);
    json pca = {{"components", q},
                {"explained_variance", model.explained_variance},
                {"total_variance", model.total_variance}};
    const fs::path pca_path = o.out / "pca.json";
    io::write_file_atomic(pca_path, pca.dump(2) + "\n");
    r.outputs.push_back(pca_path);
  }

  const auto dendrogram = analysis::ward_linkage(x);
  const auto labels =
      o.k ? analysis::cut_dendrogram_count(dendrogram, o.k) : analysis::cut_dendrogram(dendrogram, o.cut);
  const int clusters = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;

  std::string linkage = "cluster_a,cluster_b,distance,size\n";
  std::string counts = fmt::format("distance,clusters\n0,{}\n", emb.count());
  for (std::size_t m = 0; m < dendrogram.merges.size(); ++m) {
    const auto& mg = dendrogram.merges[m];
    linkage += fmt::format("{},{},{},{}\n", mg.a, mg.b, format_double(mg.distance), mg.size);
    counts += fmt::format("{},{}\n", format_double(mg.distance), emb.count() - m - 1);
  }
  std::string label_csv = "building_id,cluster\n";
  for (std::size_t i = 0; i < emb.count(); ++i) label_csv += fmt::format("{},{}\n", io::csv_field(emb.ids[i]), labels[i]);

  const fs::path linkage_path = o.out / "linkage.csv", labels_path = o.out / "labels.csv",
                 counts_path = o.out / "cluster_counts.csv";
  io::write_file_atomic(linkage_path, linkage);
  io::write_file_atomic(labels_path, label_csv);
  io::write_file_atomic(counts_path, counts);
  r.outputs.insert(r.outputs.end(), {linkage_path, labels_path, counts_path});

  if (o.sample) {
    std::string csv = "cluster,building_id\n";
    for (int c = 0; c < clusters; ++c) {
      for (std::size_t i : analysis::sample_cluster(labels, c, o.sample, salted_seed(r.seed, std::uint64_t(c)))) {
        csv += fmt::format("{},{}\n", c, io::csv_field(emb.ids[i]));
      }
    }
    const fs::path samples_path = o.out / "samples.csv";
    io::write_file_atomic(samples_path, csv);
    r.outputs.push_back(samples_path);
  }

  r.config = {{"embeddings", o.embeddings.generic_string()},
              {"pca", o.pca},
              {"pca_effective", q},
              {"cut", o.cut},
              {"k", o.k},
              {"sample", o.sample},
              {"out", o.out.generic_string()}};
  r.inputs = {o.embeddings, io::ids_sidecar(o.embeddings)};
  r.counts = {{"rows", emb.count()},
              {"dim", emb.dim},
              {"clusters", clusters},
              {"max_merge_distance", dendrogram.merges.empty() ? 0.0 : dendrogram.merges.back().distance}};
  spdlog::info("cluster: {} rows into {} clusters", emb.count(), clusters);
  return r;
}

StageResult cmd_tsne(const TsneOptions& o, std::uint64_t run_seed) {
  require_in(o.embeddings, "--embeddings", "tsne");
  require_out(o.out, "tsne");
  const auto emb = io::read_embedding_store(o.embeddings);
  analysis::Matrix x = embedding_matrix(emb);
  const std::size_t q = std::min<std::size_t>({o.pca, emb.dim, emb.count()});
  if (q > 0) x = analysis::pca_transform(analysis::pca_fit(x, q), x);

  analysis::TsneConfig cfg;
  cfg.perplexity = o.perplexity;
  cfg.iterations = o.iterations;
  cfg.seed = salted_seed(run_seed, "tsne");
  const auto res = analysis::tsne(x, cfg);

  std::string csv = "building_id,x,y\n";
  for (std::size_t i = 0; i < emb.count(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    csv += fmt::format("{},{},{}\n", io::csv_field(emb.ids[i]), format_double(res.embedding(row, 0)),
                       format_double(res.embedding(row, 1)));
  }
  make_parent(o.out);
  io::write_file_atomic(o.out, csv);

  StageResult r;
  r.seed = cfg.seed;
  r.config = {{"embeddings", o.embeddings.generic_string()},
              {"perplexity", o.perplexity},
              {"iterations", o.iterations},
              {"pca", o.pca},
              {"out", o.out.generic_string()}};
  r.inputs = {o.embeddings, io::ids_sidecar(o.embeddings)};
  r.outputs = {o.out};
  r.counts = {{"rows", emb.count()},
              {"initial_kl", res.initial_kl},
              {"kl_after_exaggeration", res.kl_after_exaggeration},
              {"final_kl", res.final_kl},
              {"learning_rate", res.learning_rate}};
  spdlog::info("tsne: KL {:.4f} -> {:.4f}", res.initial_kl, res.final_kl);
  return r;
}

StageResult cmd_group(const GroupOptions& o) {
  require_in(o.embeddings, "--embeddings", "group");
  require_in(o.entities, "--entities", "group");
  require_out(o.out, "group");
  if (!o.boundaries.empty() && o.tiles > 0) throw UsageError("group: give either --boundaries or --tiles, not both");
  if (o.tiles < 0) throw UsageError("group: --tiles must be positive");
  geo::CenterMethod method;
  if (o.center == "geometric") {
    method = geo::CenterMethod::geometric_median;
  } else if (o.center == "coordinate") {
    method = geo::CenterMethod::coordinate_median;
  } else {
    throw UsageError("group: --center must be geometric or coordinate");
  }
  geo::GroupConfig gc;
  gc.tau = o.tau;
  if (!o.sweep.empty()) gc.sweep = o.sweep;
  gc.validate();

  const auto emb = io::read_embedding_store(o.embeddings);
  const geo::EmbeddingTable table(emb);
  auto entities = geo::read_entities_csv(o.entities);
  geo::attach_embeddings(entities, emb.ids);
  // Entities filtered out upstream (e.g. by the radius percentile) have no codeword.
  const auto missing = std::erase_if(entities, [](const geo::GeoEntity& e) { return !e.embedding_row; });
  if (missing) spdlog::warn("group: {} entities have no embedding and are left out", missing);

  StageResult r;
  r.inputs = {o.embeddings, io::ids_sidecar(o.embeddings), o.entities};
  std::vector<geo::Boundary> boundaries;
  std::string source;
  std::size_t unassigned = 0;
  if (!o.boundaries.empty()) {
    require_in(o.boundaries, "--boundaries", "group");
    json doc;
    try {
      doc = json::parse(io::read_file(o.boundaries));
    } catch (const json::exception& e) {
      throw DataError(o.boundaries.string() + ": " + e.what());
    }
    auto m = geo::assign_to_polygons(entities, geo::read_boundary_geojson(doc));
    boundaries = std::move(m.boundaries);
    unassigned = m.unassigned;
    source = "geojson";
    r.inputs.push_back(o.boundaries);
  } else if (o.tiles > 0) {
    boundaries = geo::make_tiles(entities, geo::bounding_box(entities), o.tiles);
    source = "tiles";
  } else {
    const bool has_column = std::all_of(entities.begin(), entities.end(),
                                        [](const geo::GeoEntity& e) { return !e.boundary_id.empty(); });
    if (entities.empty() || !has_column) {
      throw UsageError("group: entities carry no boundary_id; pass --boundaries or --tiles");
    }
    boundaries = geo::boundaries_from_table(entities);
    source = "table";
  }

  std::map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < boundaries.size(); ++i) by_id[boundaries[i].id] = i;

  const std::vector<double> taus = o.sweep.empty() ? std::vector<double>{o.tau} : o.sweep;
  std::string sweep_csv = "tau,boundary_id,count,groups,k_ratio\n";
  json per_tau = json::array();
  std::size_t skipped = 0;
  for (double tau : taus) {
    const fs::path dir = o.sweep.empty() ? o.out : o.out / ("tau_" + format_double(tau));
    fs::create_directories(dir / "points");
    const auto run = geo::run_boundaries(boundaries, table, tau, method);
    skipped = run.skipped.size();
    for (const auto& s : run.skipped) spdlog::warn("group: boundary {} skipped: {}", s.boundary_id, s.reason);

    const fs::path assignment = dir / "assignment.csv", summary = dir / "summary.csv",
                   choropleth = dir / "choropleth.geojson";
    io::write_file_atomic(assignment, geo::assignment_csv(run));
    io::write_file_atomic(summary, geo::summary_csv(run));
    io::write_file_atomic(choropleth, geo::choropleth_geojson(run, boundaries).dump() + "\n");
    r.outputs.insert(r.outputs.end(), {assignment, summary, choropleth});
    for (const auto& res : run.results) {
      const fs::path pts = dir / "points" / (safe_file_stem(res.boundary_id) + ".geojson");
      io::write_file_atomic(pts, geo::points_geojson(res, boundaries[by_id.at(res.boundary_id)].members).dump() + "\n");
      r.outputs.push_back(pts);
    }

    std::size_t members = 0, groups = 0;
    for (const auto& row : run.summary()) {
      members += row.count;
      groups += row.groups;
      sweep_csv += fmt::format("{},{},{},{},{}\n", format_double(tau), io::csv_field(row.boundary_id), row.count,
                               row.groups, format_double(row.k_ratio));
    }
    per_tau.push_back({{"tau", tau},
                       {"boundaries", run.results.size()},
                       {"members", members},
                       {"groups", groups},
                       {"k_ratio", groups ? static_cast<double>(members) / static_cast<double>(groups) : 0.0}});
  }
  if (!o.sweep.empty()) {
    const fs::path sweep_path = o.out / "sweep.csv";
    io::write_file_atomic(sweep_path, sweep_csv);
    r.outputs.push_back(sweep_path);
  }

  json sweep = o.sweep;
  r.config = {{"embeddings", o.embeddings.generic_string()},
              {"entities", o.entities.generic_string()},
              {"tau", o.tau},
              {"sweep", sweep},
              {"boundaries", o.boundaries.generic_string()},
              {"tiles", o.tiles},
              {"center", o.center},
              {"out", o.out.generic_string()}};
  r.counts = {{"entities", entities.size()}, {"without_embedding", missing}, {"boundaries", boundaries.size()},
              {"boundary_source", source},    {"unassigned", unassigned},       {"skipped", skipped},
              {"per_tau", per_tau}};
  spdlog::info("group: {} entities in {} boundaries ({})", entities.size(), boundaries.size(), source);
  return r;
}

StageResult cmd_report(const ReportOptions& o, const nlohmann::json& manifest) {
  require_out(o.out, "report");
  if (o.labels.empty() != o.clusters.empty()) throw UsageError("report: --labels and --clusters go together");

  // Wall times and the run id stay in the manifest so the report is reproducible.
  json stages = json::array();
  double wall = 0;
  for (const auto& s : manifest.value("stages", json::array())) {
    stages.push_back({{"stage", s.value("stage", "")},
                      {"seed", s.value("seed", std::uint64_t{0})},
                      {"outputs", s.value("outputs", json::array()).size()},
                      {"counts", s.value("counts", json::object())}});
    wall += s.value("wall_seconds", 0.0);
  }
  json report = {{"tool_version", manifest.value("tool_version", "")}, {"stages", stages}};
  spdlog::info("report: {} stages, {:.1f} s of recorded wall time", stages.size(), wall);

  StageResult r;
  if (!o.labels.empty()) {
    require_in(o.labels, "--labels", "report");
    require_in(o.clusters, "--clusters", "report");
    std::map<std::string, std::string> family;
    for (const auto& l : synth::parse_labels_csv(io::read_file(o.labels), o.labels.string())) {
      family[l.building_id] = std::string(synth::to_string(l.footprint)) + "-" + std::string(synth::to_string(l.roof));
    }
    const auto table = io::read_csv(o.clusters);
    const auto id_col = table.column("building_id"), c_col = table.column("cluster");
    std::vector<int> clusters;
    std::vector<std::string> reference;
    std::map<int, std::map<std::string, std::size_t>> contingency;
    std::size_t unlabelled = 0;
    for (const auto& row : table.rows) {
      const auto it = family.find(row.at(id_col));
      if (it == family.end()) {
        ++unlabelled;
        continue;
      }
      const int c = static_cast<int>(io::parse_double(row.at(c_col), o.clusters.string()));
      clusters.push_back(c);
      reference.push_back(it->second);
      ++contingency[c][it->second];
    }
    if (clusters.empty()) throw DataError("report: no clustered building has a label");
    const double purity = analysis::label_purity(clusters, reference);
    json table_json = json::object();
    for (const auto& [c, m] : contingency) table_json[std::to_string(c)] = m;
    report["purity"] = {{"value", purity}, {"matched", clusters.size()}, {"unlabelled", unlabelled},
                        {"contingency", table_json}};
    r.inputs = {o.labels, o.clusters};
    r.counts["purity"] = purity;
    spdlog::info("report: label purity {:.4f} over {} buildings", purity, clusters.size());
  }

  make_parent(o.out);
  io::write_file_atomic(o.out, report.dump(2) + "\n");
  r.config = {{"labels", o.labels.generic_string()},
              {"clusters", o.clusters.generic_string()},
              {"out", o.out.generic_string()}};
  r.outputs = {o.out};
  r.counts["stages"] = stages.size();
  return r;
}

}  // namespace foldcity::cli
