#include "cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>

#include "lln/error.hpp"
#include "lln/io.hpp"
#include "lln/matcher.hpp"
#include "lln/model.hpp"
#include "lln/retrieval.hpp"
#include "lln/synthetic.hpp"
#include "lln/trainer.hpp"

namespace lln::cli {
namespace {

namespace fs = std::filesystem;

struct SynthOptions {
  std::string out_dir;
  std::uint64_t seed = 0;
  SyntheticConfig data;
  int train_views = 6;
};

struct ExtractOptions {
  std::string input;
  std::string out_dir;
  std::string out_manifest;
  int stride = 32;
  int channels = 64;
  std::uint64_t seed = 0;
};

struct TrainOptions {
  std::string manifest;
  std::string out;
  std::string init;
  std::string loss_csv;
  std::vector<int> kernels{3, 5, 7};
  int branch_channels = 32;
  bool no_branch_relu = false;
  TrainConfig config;
};

struct IndexOptions {
  std::string manifest;
  std::string model;
  std::string out_dir;
  std::string variant = "lln";
  std::string act_saliency = "l2";
  int landmarks = 0;  // 0: pick from grid size
  int stride = 32;
  int shortlist = 30;
  bool no_geometric = false;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct QueryOptions {
  std::string index;
  std::string manifest;
  std::string model;
  std::string out;
  std::uint64_t seed = 0;
};

struct EvalOptions {
  std::string results;
  std::string queries;
  std::string index;
  std::string out;
  std::string topk_out;
  std::vector<int> topk;
  std::int64_t vision_offset = 0;
  std::uint64_t seed = 0;
};

struct DumpOptions {
  std::string features;
  std::string model;
  std::string out;
  std::uint64_t seed = 0;
};

struct MatchesOptions {
  std::string index;
  std::string features;
  std::string query_id = "query";
  std::string map_id;
  std::string model;
  std::string out;
  std::uint64_t seed = 0;
};

fs::path parent_of(const std::string& file) {
  const fs::path p = fs::path(file).parent_path();
  return p.empty() ? fs::path(".") : p;
}

std::optional<LLNParams> optional_model(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return read_model(path);
}

void print_line(std::ostream& out, const std::string& s) { out << s << "\n"; }

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", v * 100.0);
  return buf;
}

int run_synth(const SynthOptions& o, std::ostream& out) {
  SyntheticConfig cfg = o.data;
  cfg.seed = o.seed;
  if (o.train_views < 1 || o.train_views > cfg.views) throw ConfigError("--train-views must be in [1, views]");
  const auto views = generate_synthetic(cfg);
  const fs::path dir(o.out_dir);
  fs::create_directories(dir / "features");
  DatasetManifest train, map, queries;
  for (const auto& v : views) {
    const std::string id = "loc" + std::to_string(v.location) + "_view" + std::to_string(v.view);
    const std::string rel = "features/" + id + ".fmap";
    write_feature_map(v.features, dir / rel);
    ManifestEntry e{id, rel, "loc" + std::to_string(v.location), v.location, std::nullopt};
    if (v.view < o.train_views) train.entries.push_back(e);
    if (v.view == 0) map.entries.push_back(e);
    if (v.view >= o.train_views) queries.entries.push_back(e);
  }
  write_manifest(train, dir / "train.jsonl");
  write_manifest(map, dir / "map.jsonl");
  write_manifest(queries, dir / "query.jsonl");
  print_line(out, "synth: wrote " + std::to_string(views.size()) + " feature maps to " + dir.string());
  return 0;
}

int run_extract(const ExtractOptions& o, std::ostream& out) {
  const DatasetManifest images = read_manifest(o.input);
  const fs::path base = parent_of(o.input);
  const fs::path dir(o.out_dir);
  fs::create_directories(dir);
  DatasetManifest result;
  for (const auto& e : images.entries) {
    const fs::path src = fs::path(e.path).is_absolute() ? fs::path(e.path) : base / e.path;
    const FeatureMap f = toy_extract(read_pgm(src), o.stride, o.channels, o.seed);
    const std::string name = e.id + ".fmap";
    write_feature_map(f, dir / name);
    result.entries.push_back(e);
    result.entries.back().path = (dir / name).string();
  }
  const fs::path manifest_path = o.out_manifest.empty() ? dir / "manifest.jsonl" : fs::path(o.out_manifest);
  // Entry paths are written relative to the manifest that lists them.
  const fs::path manifest_dir = fs::absolute(parent_of(manifest_path.string()));
  for (auto& r : result.entries) {
    r.path = fs::absolute(r.path).lexically_normal().lexically_relative(manifest_dir).string();
  }
  write_manifest(result, manifest_path);
  print_line(out, "extract-toy: " + std::to_string(result.entries.size()) + " feature maps, manifest " +
                      manifest_path.string());
  return 0;
}

int run_train(const TrainOptions& o, std::ostream& out) {
  const DatasetManifest manifest = read_manifest(o.manifest);
  const Dataset data = load_dataset(manifest, parent_of(o.manifest));
  if (data.size() == 0) throw DatasetError("manifest is empty");
  LLNParams init = o.init.empty() ? LLNParams::xavier(data.features.front().channels(), o.kernels, o.branch_channels,
                                                      o.config.seed, !o.no_branch_relu)
                                  : read_model(o.init);
  const TrainResult result = train(data, o.config, std::move(init), [&](int epoch, double mean) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "epoch %d mean_loss %.6f", epoch, mean);
    print_line(out, buf);
  });
  write_model(result.params, o.out);
  if (!o.loss_csv.empty()) write_loss_csv(result.history, o.loss_csv);
  print_line(out, "train: model written to " + o.out);
  return 0;
}

int run_index(const IndexOptions& o, std::ostream& out) {
  const DatasetManifest manifest = read_manifest(o.manifest);
  const auto images = load_images(manifest, parent_of(o.manifest));
  if (images.empty()) throw DatasetError("manifest is empty");
  IndexConfig cfg;
  cfg.variant = parse_variant(o.variant);
  cfg.landmarks = o.landmarks > 0 ? o.landmarks : default_landmark_count(images.front().features.cells());
  cfg.stride = o.stride;
  cfg.shortlist = o.shortlist;
  cfg.seed = o.seed;
  cfg.geometric_weighting = !o.no_geometric;
  if (o.act_saliency == "l2") {
    cfg.act_saliency = ActSaliency::L2Norm;
  } else if (o.act_saliency == "sum") {
    cfg.act_saliency = ActSaliency::ChannelSum;
  } else {
    throw ConfigError("--act-saliency must be l2 or sum");
  }
  const auto model = optional_model(o.model);
  const MapIndex index = build_index(images, model ? &*model : nullptr, cfg, o.threads);
  write_index(index, manifest, o.out_dir);
  print_line(out, "index: " + std::to_string(index.images.size()) + " images, variant " + to_string(cfg.variant) +
                      ", n=" + std::to_string(cfg.landmarks));
  return 0;
}

int run_query(const QueryOptions& o, std::ostream& out) {
  const MapIndex index = read_index(o.index);
  const DatasetManifest manifest = read_manifest(o.manifest);
  const auto images = load_images(manifest, parent_of(o.manifest));
  const auto model = optional_model(o.model);
  std::vector<QueryResult> results;
  for (const auto& im : images) results.push_back(query(describe_query(im, index, model ? &*model : nullptr), index));
  write_results_csv(results, o.out);
  print_line(out, "query: " + std::to_string(results.size()) + " queries ranked, results in " + o.out);
  return 0;
}

int run_eval(const EvalOptions& o, std::ostream& out) {
  const auto results = read_results_csv(o.results);
  const DatasetManifest queries = read_manifest(o.queries);
  const MapIndex index = read_index(o.index);
  GroundTruth truth;
  for (const auto& e : queries.entries) {
    if (e.frame) truth.query_frames[e.id] = *e.frame;
  }
  for (const auto& im : index.images) {
    if (im.frame) truth.map_frames[im.image_id] = *im.frame;
  }
  const PRCurve curve = evaluate(results, truth, o.vision_offset);
  if (!o.out.empty()) write_pr_csv(curve, o.out);
  if (!o.topk.empty()) {
    const auto table = precision_vs_topk(results, truth, o.vision_offset, o.topk);
    std::string csv = "k,precision\n";
    for (const auto& row : table) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%d,%.6f\n", row.k, row.precision);
      csv += buf;
    }
    if (!o.topk_out.empty()) {
      write_text(csv, o.topk_out);
    } else {
      out << csv;
    }
  }
  print_line(out, "precision_at_full_recall=" + percent(curve.precision_at_full_recall));
  return 0;
}

int run_dump(const DumpOptions& o, std::ostream& out) {
  const FeatureMap f = read_feature_map(o.features);
  const LLNParams model = read_model(o.model);
  dump_activation_map(lln_forward(f, model), o.out);
  print_line(out, "dump-activations: wrote " + o.out);
  return 0;
}

int run_matches(const MatchesOptions& o, std::ostream& out) {
  const MapIndex index = read_index(o.index);
  const auto map_pos = index.find(o.map_id);
  if (!map_pos) throw DatasetError("map image '" + o.map_id + "' is not in the index");
  if (index.config.variant == Variant::Holistic) throw ConfigError("holistic indices hold no landmarks to match");
  const auto model = optional_model(o.model);
  const ImageRecord im{o.query_id, std::nullopt, read_feature_map(o.features)};
  const ImageDescriptor q = describe_query(im, index, model ? &*model : nullptr);
  const LandmarkSet& map_set = index.images[*map_pos].landmarks;
  const SimilarityResult sim =
      image_similarity(q.landmarks, map_set, SimilarityOptions{index.config.geometric_weighting});
  write_matches_csv(sim, q.landmarks, map_set, o.out);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", sim.score);
  print_line(out, "export-matches: " + std::to_string(sim.pairs.size()) + " pairs, score " + buf);
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Landmark localization network: training, indexing and place recognition", "lln"};
  app.require_subcommand(1);
  app.set_config("--config", "", "INI/TOML file with option values (sections per subcommand)");

  SynthOptions synth;
  auto* s = app.add_subcommand("synth", "Write a synthetic planted-landmark dataset");
  s->add_option("--out-dir", synth.out_dir)->required();
  s->add_option("--seed", synth.seed);
  s->add_option("--locations", synth.data.locations);
  s->add_option("--views", synth.data.views);
  s->add_option("--train-views", synth.train_views);
  s->add_option("--grid-width", synth.data.grid_width);
  s->add_option("--grid-height", synth.data.grid_height);
  s->add_option("--channels", synth.data.channels);
  s->add_option("--structure-channels", synth.data.structure_channels);
  s->add_option("--prototypes", synth.data.prototypes);
  s->add_option("--distractors", synth.data.distractors);
  s->add_option("--max-shift", synth.data.max_shift);

  ExtractOptions extract;
  auto* e = app.add_subcommand("extract-toy", "Extract toy feature maps from PGM images");
  e->add_option("--input", extract.input, "JSON-lines manifest of PGM images")->required();
  e->add_option("--out-dir", extract.out_dir)->required();
  e->add_option("--out-manifest", extract.out_manifest);
  e->add_option("--stride", extract.stride);
  e->add_option("--channels", extract.channels);
  e->add_option("--seed", extract.seed);

  TrainOptions tr;
  auto* t = app.add_subcommand("train", "Train the landmark localization network");
  t->add_option("--manifest", tr.manifest)->required();
  t->add_option("--out", tr.out, "output model file")->default_val("model.llnw");
  t->add_option("--init", tr.init, "start from this model instead of Xavier initialisation");
  t->add_option("--loss-csv", tr.loss_csv);
  t->add_option("--epochs", tr.config.epochs);
  t->add_option("--seed", tr.config.seed);
  t->add_option("--lr", tr.config.learning_rate);
  t->add_option("--margin", tr.config.margin);
  t->add_option("--negatives", tr.config.num_negatives);
  t->add_option("--batch", tr.config.batch_size);
  t->add_option("--threads", tr.config.threads);
  t->add_option("--kernels", tr.kernels)->delimiter(',');
  t->add_option("--branch-channels", tr.branch_channels);
  t->add_flag("--no-branch-relu", tr.no_branch_relu);

  IndexOptions ix;
  auto* i = app.add_subcommand("index", "Build a map index");
  i->add_option("--manifest", ix.manifest)->required();
  i->add_option("--model", ix.model);
  i->add_option("--out-dir", ix.out_dir)->required();
  i->add_option("--variant", ix.variant)->check(CLI::IsMember({"holistic", "lln", "act", "rand", "all"}));
  i->add_option("--landmarks", ix.landmarks, "landmarks per image (default 75 for >= 144 cells, else 50)");
  i->add_option("--stride", ix.stride);
  i->add_option("--shortlist", ix.shortlist);
  i->add_option("--act-saliency", ix.act_saliency)->check(CLI::IsMember({"l2", "sum"}));
  i->add_flag("--no-geometric", ix.no_geometric);
  i->add_option("--seed", ix.seed);
  i->add_option("--threads", ix.threads);

  QueryOptions qo;
  auto* q = app.add_subcommand("query", "Rank map images for every query");
  q->add_option("--index", qo.index)->required();
  q->add_option("--manifest", qo.manifest)->required();
  q->add_option("--model", qo.model);
  q->add_option("--out", qo.out)->default_val("results.csv");
  q->add_option("--seed", qo.seed);

  EvalOptions ev;
  auto* p = app.add_subcommand("eval-pr", "Precision-recall evaluation of query results");
  p->add_option("--results", ev.results)->required();
  p->add_option("--queries", ev.queries, "query manifest with ground-truth frames")->required();
  p->add_option("--index", ev.index, "index directory (map frames)")->required();
  p->add_option("--vision-offset", ev.vision_offset);
  p->add_option("--out", ev.out);
  p->add_option("--topk", ev.topk)->delimiter(',');
  p->add_option("--topk-out", ev.topk_out);
  p->add_option("--seed", ev.seed);

  DumpOptions dump;
  auto* d = app.add_subcommand("dump-activations", "Render an activation map as PGM");
  d->add_option("--features", dump.features)->required();
  d->add_option("--model", dump.model)->required();
  d->add_option("--out", dump.out)->required();
  d->add_option("--seed", dump.seed);

  MatchesOptions mo;
  auto* m = app.add_subcommand("export-matches", "Write matched landmark pairs between a query and a map image");
  m->add_option("--index", mo.index)->required();
  m->add_option("--features", mo.features)->required();
  m->add_option("--query-id", mo.query_id);
  m->add_option("--map-id", mo.map_id)->required();
  m->add_option("--model", mo.model);
  m->add_option("--out", mo.out)->required();
  m->add_option("--seed", mo.seed);

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& ex) {
    std::string msg = ex.what();
    for (char& c : msg) {
      if (c == '\n') c = ' ';
    }
    err << "error: usage: " << msg << "\n";
    return 2;
  }

  try {
    if (s->parsed()) return run_synth(synth, out);
    if (e->parsed()) return run_extract(extract, out);
    if (t->parsed()) return run_train(tr, out);
    if (i->parsed()) return run_index(ix, out);
    if (q->parsed()) return run_query(qo, out);
    if (p->parsed()) return run_eval(ev, out);
    if (d->parsed()) return run_dump(dump, out);
    if (m->parsed()) return run_matches(mo, out);
  } catch (const Error& ex) {
    std::string msg = ex.what();
    for (char& c : msg) {
      if (c == '\n') c = ' ';
    }
    err << "error: " << ex.kind() << ": " << msg << "\n";
    return dynamic_cast<const ConfigError*>(&ex) ? 2 : 1;
  } catch (const std::exception& ex) {
    err << "error: internal: " << ex.what() << "\n";
    return 1;
  }
  err << "error: usage: no subcommand given\n";
  return 2;
}

}  // namespace lln::cli
