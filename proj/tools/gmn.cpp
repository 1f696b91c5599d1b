// gmn: command line front end for synthetic data, training, counting,
// evaluation, the crowd patch classifier and the HTTP service.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "gmn/annotations.hpp"
#include "gmn/checkpoint.hpp"
#include "gmn/counting.hpp"
#include "gmn/crowd.hpp"
#include "gmn/errors.hpp"
#include "gmn/evaluation.hpp"
#include "gmn/service.hpp"
#include "gmn/synthetic.hpp"
#include "gmn/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace gmn;

namespace {

BBox parse_box(const std::string& s) {
  std::stringstream in(s);
  std::vector<double> v;
  std::string part;
  while (std::getline(in, part, ',')) {
    try {
      v.push_back(std::stod(part));
    } catch (const std::exception&) {
      throw InvalidArgument("bad box component '" + part + "'");
    }
  }
  if (v.size() != 4) throw InvalidArgument("box must be x,y,w,h");
  return {v[0], v[1], v[2], v[3]};
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream in(s);
  std::string part;
  while (std::getline(in, part, ',')) out.push_back(std::stod(part));
  return out;
}

void write_json(const json& j, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << '\n';
    return;
  }
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << j.dump(2) << '\n';
}

SceneStyle style_from(const std::string& s) {
  if (s == "clean") return SceneStyle::Clean;
  if (s == "shifted") return SceneStyle::Shifted;
  throw InvalidArgument("style must be clean or shifted");
}

void print_log(const LogRecord& r) {
  std::cerr << "step " << r.step << " loss " << std::setprecision(5) << r.loss << " lr " << r.lr << '\n';
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out = "synthetic";
  int scenes = 20;
  int width = 320, height = 320;
  int min_instances = 5, max_instances = 15;
  int max_distractors = 3;
  double object_size = 36, min_separation = 52;
  std::string style = "clean";
  std::uint64_t seed = 0;
};

void run_synth(const SynthArgs& a) {
  SyntheticCorpusSpec spec;
  spec.scenes = a.scenes;
  spec.width = a.width;
  spec.height = a.height;
  spec.min_instances = a.min_instances;
  spec.max_instances = a.max_instances;
  spec.max_distractors = a.max_distractors;
  spec.object_size = a.object_size;
  spec.min_separation = a.min_separation;
  spec.style = style_from(a.style);
  spec.seed = a.seed;
  Manifest m = synthetic_manifest(spec);
  fs::create_directories(a.out);
  std::vector<BoxRecord> all;
  for (std::size_t i = 0; i < m.frames.size(); ++i) {
    std::ostringstream name;
    name << "scene_" << std::setw(4) << std::setfill('0') << i;
    const std::string png = name.str() + ".png";
    save_image(m.frames[i].image, (fs::path(a.out) / png).string());
    DotAnnotationSet dots;
    std::vector<BBox> boxes;
    const int cls = m.frames[i].boxes.front().class_id;
    for (auto rec : m.frames[i].boxes) {
      if (rec.class_id == cls) {
        dots.points.push_back(rec.box.center());
        boxes.push_back(rec.box);
      }
      rec.image = png;
      all.push_back(rec);
    }
    dots.object_radius_hint = mean_object_radius(boxes);
    save_dot_csv(dots, (fs::path(a.out) / (name.str() + ".csv")).string());
  }
  save_box_jsonl(all, (fs::path(a.out) / "boxes.jsonl").string());
  std::cerr << "wrote " << m.frames.size() << " scenes to " << a.out << '\n';
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string train_config;
  std::string manifest;
  std::string checkpoint;
  std::string out = "gmn.ckpt";
  std::string log;
  std::string width = "1/8";
  int steps = -1;
  int batch_size = -1;
  double lr = -1;
  int synthetic_scenes = 200;
  std::string style = "clean";
  std::uint64_t seed = 0;
};

TrainConfig config_from(const TrainArgs& a, TrainMode mode) {
  TrainConfig c = a.train_config.empty() ? TrainConfig{} : load_train_config(a.train_config);
  c.mode = mode;
  if (a.train_config.empty()) c.model = model_config_for_width(a.width);
  if (mode == TrainMode::Adapt && a.train_config.empty()) c.steps = 300;
  if (a.steps >= 0) c.steps = a.steps;
  if (a.batch_size > 0) c.batch_size = a.batch_size;
  if (a.lr > 0) c.learning_rate = a.lr;
  if (!a.log.empty()) c.log_path = a.log;
  c.checkpoint_path = a.out;
  c.seed = a.seed;
  return c;
}

Manifest manifest_from(const TrainArgs& a, const TrainConfig& c) {
  if (!a.manifest.empty()) return load_video_manifest(a.manifest);
  SyntheticCorpusSpec spec = c.synthetic.value_or(SyntheticCorpusSpec{});
  if (!c.synthetic) {
    spec.scenes = a.synthetic_scenes;
    spec.style = style_from(a.style);
    spec.seed = a.seed;
  }
  return synthetic_manifest(spec);
}

void run_pretrain(const TrainArgs& a) {
  const TrainConfig c = config_from(a, TrainMode::Pretrain);
  const Manifest m = manifest_from(a, c);
  GmnNetwork init{nullptr};
  if (!a.checkpoint.empty()) init = load_checkpoint(a.checkpoint).net;
  pretrain(c, m, init, print_log);
  std::cerr << "saved " << a.out << '\n';
}

void run_adapt(const TrainArgs& a) {
  if (a.checkpoint.empty()) throw InvalidArgument("adapt needs --checkpoint");
  const TrainConfig c = config_from(a, TrainMode::Adapt);
  const Manifest m = manifest_from(a, c);
  auto loaded = load_checkpoint(a.checkpoint);
  adapt(loaded.net, m, c, print_log);
  std::cerr << "saved " << a.out << '\n';
}

// ---------------------------------------------------------------------------

struct CountArgs {
  std::string checkpoint;
  std::string image;
  std::string exemplar_image;
  std::string box;
  std::string mode = "localmax";
  double threshold = kDefaultThreshold;
  double min_distance = -1;
  std::string out;
  std::string map_out;
  std::string heatmap_out;
};

void run_count(const CountArgs& a) {
  auto loaded = load_checkpoint(a.checkpoint);
  const Image image = load_image(a.image);
  const Image source = a.exemplar_image.empty() ? image : load_image(a.exemplar_image);
  const BBox box = parse_box(a.box);
  CountOptions o;
  o.mode = count_mode_from_string(a.mode);
  o.threshold = a.threshold;
  if (a.min_distance >= 0) o.min_distance = a.min_distance;
  const DensityMap map = similarity_for_exemplar(*loaded.net, image, source, box);
  json j = count_from_map(map, o);
  j["image"] = a.image;
  j["exemplar_box"] = {{"x", box.x}, {"y", box.y}, {"w", box.w}, {"h", box.h}};
  j["checkpoint_id"] = loaded.id;
  write_json(j, a.out);
  if (!a.map_out.empty()) save_gmnd(map, a.map_out);
  if (!a.heatmap_out.empty()) {
    const auto png = encode_heatmap_png(map);
    std::ofstream(a.heatmap_out, std::ios::binary).write(reinterpret_cast<const char*>(png.data()),
                                                          static_cast<std::streamsize>(png.size()));
  }
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::vector<std::string> detections;
  std::vector<std::string> annotations;
  double tolerance = 20;
  std::string thresholds = "0.5,0.75,1,1.25,1.5,1.75,2,2.25,2.5,2.75,3,3.25,3.5,3.75,4,4.5,5";
  double threshold = -1;
  std::string report;
  std::string sweep;
};

void run_eval(const EvalArgs& a) {
  if (a.detections.size() != a.annotations.size() || a.detections.empty()) {
    throw InvalidArgument("give one --annotations file per --detections file");
  }
  struct Item {
    std::string id;
    std::vector<Detection> dets;
    std::vector<Point> truth;
  };
  std::vector<Item> items;
  for (std::size_t i = 0; i < a.detections.size(); ++i) {
    std::ifstream in(a.detections[i]);
    if (!in) throw Error("cannot read " + a.detections[i]);
    const json j = json::parse(in);
    items.push_back({a.detections[i], j.at("detections").get<std::vector<Detection>>(),
                     load_dot_csv(a.annotations[i]).points});
  }
  // Greedy suppression runs in score order, so filtering a low-threshold
  // detection set by score reproduces a run at the higher threshold.
  auto at = [&](double t) {
    std::vector<MatchResult> matches;
    std::vector<std::pair<double, double>> counts;
    for (const auto& it : items) {
      std::vector<Point> kept;
      for (const auto& d : it.dets)
        if (d.score > t) kept.push_back({d.x, d.y});
      matches.push_back(match_detections(kept, it.truth, a.tolerance));
      counts.emplace_back(static_cast<double>(kept.size()), static_cast<double>(it.truth.size()));
    }
    EvalReport r = compute_metrics(matches, counts);
    for (std::size_t i = 0; i < items.size(); ++i) r.images[i].id = items[i].id;
    r.threshold = t;
    r.tolerance = a.tolerance;
    return r;
  };
  std::vector<SweepRow> rows;
  for (double t : parse_list(a.thresholds)) {
    const EvalReport r = at(t);
    rows.push_back({t, r.precision, r.recall, r.f1, r.mae});
  }
  const double chosen = a.threshold >= 0 ? a.threshold : select_threshold(rows);
  json report = at(chosen);
  report["selected_by_sweep"] = a.threshold < 0;
  write_json(report, a.report);
  if (!a.sweep.empty()) {
    std::ofstream(a.sweep) << sweep_to_csv(rows);
  }
}

// ---------------------------------------------------------------------------

struct CrowdArgs {
  std::string image;
  std::string dots;
  std::string out = "patches";
  std::string index;
  int synthetic = 0;
  std::string checkpoint;
  std::string exemplars;
  std::string width = "1/8";
  int steps = 1500;
  int batch_size = 16;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

void run_crowd_quantize(const CrowdArgs& a) {
  const Image image = load_image(a.image);
  const auto dots = load_dot_csv(a.dots, cv::Size(image.width(), image.height()));
  const auto patches = quantize_patches(image, dots.points);
  fs::create_directories(a.out);
  std::ofstream index(fs::path(a.out) / "index.jsonl");
  for (const auto& p : patches) {
    std::ostringstream name;
    name << "tile_" << p.y << "_" << p.x << ".png";
    save_image(p.pixels, (fs::path(a.out) / name.str()).string());
    json j = p;
    j["file"] = name.str();
    j["image"] = a.image;
    index << j.dump() << '\n';
  }
  std::cerr << "wrote " << patches.size() << " tiles to " << a.out << '\n';
}

std::vector<LabeledPatch> load_patch_index(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path);
  const PatchClassSpec spec;
  std::vector<LabeledPatch> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      LabeledPatch p;
      p.x = j.value("x", 0);
      p.y = j.value("y", 0);
      p.count = j.at("count").get<int>();
      p.class_index = spec.class_of(p.count);
      p.pixels = load_image((fs::path(path).parent_path() / j.at("file").get<std::string>()).string());
      out.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw ParseError(e.what(), n);
    }
  }
  return out;
}

void run_crowd_train(const CrowdArgs& a) {
  const PatchClassSpec spec;
  const auto patches = a.synthetic > 0 ? synthetic_crowd_patches(a.synthetic, spec, a.seed) : load_patch_index(a.index);
  PatchMatcherConfig c;
  c.model = model_config_for_width(a.width);
  c.steps = a.steps;
  c.batch_size = a.batch_size;
  c.learning_rate = a.lr;
  c.seed = a.seed;
  GmnNetwork net = train_patch_matcher(patches, c, [](int step, double loss) {
    if (step % 50 == 0) std::cerr << "step " << step << " loss " << loss << '\n';
  });
  CheckpointMeta meta;
  meta.step = c.steps;
  meta.extra = {{"task", "crowd-patch"}};
  save_checkpoint(*net, a.checkpoint, meta);
  // One exemplar per class, taken from the training patches.
  fs::create_directories(a.exemplars);
  std::vector<bool> have(spec.n_classes, false);
  for (const auto& p : patches) {
    if (have[p.class_index]) continue;
    have[p.class_index] = true;
    save_image(p.pixels, (fs::path(a.exemplars) / ("class_" + std::to_string(p.class_index) + ".png")).string());
  }
  for (int k = 0; k < spec.n_classes; ++k) {
    if (!have[k]) std::cerr << "warning: no training patch for class " << k << '\n';
  }
}

void run_crowd_count(const CrowdArgs& a) {
  const PatchClassSpec spec;
  auto loaded = load_checkpoint(a.checkpoint);
  std::vector<Image> exemplars;
  for (int k = 0; k < spec.n_classes; ++k) {
    exemplars.push_back(patch_exemplar(load_image((fs::path(a.exemplars) / ("class_" + std::to_string(k) + ".png")).string())));
  }
  const Image image = load_image(a.image);
  json tiles = json::array();
  std::vector<int> classes;
  for (const auto& p : quantize_patches(image, {}, spec)) {
    const int k = classify_patch(*loaded.net, p.pixels, exemplars, spec);
    classes.push_back(k);
    tiles.push_back({{"x", p.x}, {"y", p.y}, {"class", k}});
  }
  write_json({{"image", a.image}, {"count", count_from_classes(classes, spec)}, {"tiles", tiles}}, "-");
}

// ---------------------------------------------------------------------------

struct ServeArgs {
  std::string checkpoint;
  std::string host = "127.0.0.1";
  int port = 8080;
  int cache_mb = 64;
  int workers = 2;
};

HttpServer* g_server = nullptr;

void run_serve(const ServeArgs& a) {
  auto loaded = load_checkpoint(a.checkpoint);
  ServiceConfig cfg;
  cfg.cache_bytes = static_cast<std::size_t>(a.cache_mb) << 20;
  cfg.workers = a.workers;
  CountService service(loaded.net, loaded.id, cfg);
  HttpServer server(service);
  const int port = server.bind(a.host, a.port);
  std::cerr << "listening on http://" << a.host << ":" << port << " (checkpoint " << loaded.id.substr(0, 12)
            << ")\n";
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_server) g_server->stop();
  });
  server.listen_after_bind();
  g_server = nullptr;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generic matching network: count repeated objects from one exemplar"};
  app.set_config("--config", "", "TOML/INI file with flag values");
  app.require_subcommand(1);
  std::uint64_t seed = 0;

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Render a synthetic scene corpus (PNG, dot CSV, box JSONL)");
  s->add_option("--out", synth.out, "Output directory");
  s->add_option("--scenes", synth.scenes)->check(CLI::PositiveNumber);
  s->add_option("--width", synth.width);
  s->add_option("--height", synth.height);
  s->add_option("--min-instances", synth.min_instances);
  s->add_option("--max-instances", synth.max_instances);
  s->add_option("--max-distractors", synth.max_distractors);
  s->add_option("--object-size", synth.object_size);
  s->add_option("--min-separation", synth.min_separation);
  s->add_option("--style", synth.style)->check(CLI::IsMember({"clean", "shifted"}));
  s->add_option("--seed", seed);

  TrainArgs pre, ada;
  auto add_train = [&](CLI::App* sub, TrainArgs& t) {
    sub->add_option("--train-config", t.train_config, "TrainConfig JSON file")->check(CLI::ExistingFile);
    sub->add_option("--manifest", t.manifest, "box-jsonl video manifest (default: synthetic corpus)");
    sub->add_option("--out", t.out, "Checkpoint to write");
    sub->add_option("--log", t.log, "JSONL training log");
    sub->add_option("--width", t.width, "Channel width multiplier, e.g. 1/8");
    sub->add_option("--steps", t.steps);
    sub->add_option("--batch-size", t.batch_size);
    sub->add_option("--lr", t.lr);
    sub->add_option("--synthetic-scenes", t.synthetic_scenes);
    sub->add_option("--style", t.style)->check(CLI::IsMember({"clean", "shifted"}));
    sub->add_option("--seed", seed);
  };
  auto* p = app.add_subcommand("pretrain", "Train every parameter on sampled pairs");
  add_train(p, pre);
  p->add_option("--init", pre.checkpoint, "Start from this checkpoint")->check(CLI::ExistingFile);
  auto* ad = app.add_subcommand("adapt", "Insert adapters and train only adapters and norms");
  add_train(ad, ada);
  ad->add_option("--checkpoint", ada.checkpoint)->required()->check(CLI::ExistingFile);

  CountArgs cnt;
  auto* c = app.add_subcommand("count", "Count instances of an exemplar in an image");
  c->add_option("--checkpoint", cnt.checkpoint)->required()->check(CLI::ExistingFile);
  c->add_option("--image", cnt.image)->required()->check(CLI::ExistingFile);
  c->add_option("--exemplar-image", cnt.exemplar_image, "Image holding the exemplar (default: --image)");
  c->add_option("--exemplar-box", cnt.box, "x,y,w,h")->required();
  c->add_option("--mode", cnt.mode)->check(CLI::IsMember({"localmax", "local-max", "integral"}));
  c->add_option("--threshold", cnt.threshold);
  c->add_option("--min-distance", cnt.min_distance, "Suppression distance in pixels (default 8)");
  c->add_option("--out", cnt.out, "Detections JSON (default stdout)");
  c->add_option("--map-out", cnt.map_out, "Write the similarity map as GMND");
  c->add_option("--heatmap-out", cnt.heatmap_out, "Write the similarity map as a PNG heatmap");
  c->add_option("--seed", seed);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Score detections against dot annotations");
  e->add_option("--detections", ev.detections)->required();
  e->add_option("--annotations", ev.annotations)->required();
  e->add_option("--tolerance", ev.tolerance, "Matching radius R in pixels");
  e->add_option("--thresholds", ev.thresholds, "Comma-separated sweep values");
  e->add_option("--threshold", ev.threshold, "Report at this T (default: best F1 of the sweep)");
  e->add_option("--report", ev.report, "EvalReport JSON (default stdout)");
  e->add_option("--sweep", ev.sweep, "Sweep CSV (T,P,R,F1,MAE)");
  e->add_option("--seed", seed);

  CrowdArgs cq, ct, cc;
  auto* q = app.add_subcommand("crowd-quantize", "Tile an annotated image into labelled 64px patches");
  q->add_option("--image", cq.image)->required()->check(CLI::ExistingFile);
  q->add_option("--dots", cq.dots)->required()->check(CLI::ExistingFile);
  q->add_option("--out", cq.out);
  q->add_option("--seed", seed);
  auto* t = app.add_subcommand("crowd-train", "Train the same-class patch matcher");
  t->add_option("--index", ct.index, "index.jsonl from crowd-quantize");
  t->add_option("--synthetic", ct.synthetic, "Train on this many synthetic texture patches instead");
  t->add_option("--checkpoint", ct.checkpoint, "Checkpoint to write")->required();
  t->add_option("--exemplars", ct.exemplars, "Directory for per-class exemplars")->required();
  t->add_option("--width", ct.width);
  t->add_option("--steps", ct.steps);
  t->add_option("--batch-size", ct.batch_size);
  t->add_option("--lr", ct.lr);
  t->add_option("--seed", seed);
  auto* k = app.add_subcommand("crowd-count", "Count an image by classifying its tiles");
  k->add_option("--checkpoint", cc.checkpoint)->required()->check(CLI::ExistingFile);
  k->add_option("--exemplars", cc.exemplars)->required()->check(CLI::ExistingDirectory);
  k->add_option("--image", cc.image)->required()->check(CLI::ExistingFile);
  k->add_option("--seed", seed);

  ServeArgs sv;
  auto* v = app.add_subcommand("serve", "Run the HTTP counting service");
  v->add_option("--checkpoint", sv.checkpoint)->required()->check(CLI::ExistingFile);
  v->add_option("--host", sv.host);
  v->add_option("--port", sv.port);
  v->add_option("--cache-mb", sv.cache_mb);
  v->add_option("--workers", sv.workers);
  v->add_option("--seed", seed);

  CLI11_PARSE(app, argc, argv);
  torch::manual_seed(seed);
  try {
    if (*s) {
      synth.seed = seed;
      run_synth(synth);
    } else if (*p) {
      pre.seed = seed;
      run_pretrain(pre);
    } else if (*ad) {
      ada.seed = seed;
      run_adapt(ada);
    } else if (*c) {
      run_count(cnt);
    } else if (*e) {
      run_eval(ev);
    } else if (*q) {
      run_crowd_quantize(cq);
    } else if (*t) {
      if (ct.index.empty() && ct.synthetic <= 0) throw InvalidArgument("crowd-train needs --index or --synthetic");
      ct.seed = seed;
      run_crowd_train(ct);
    } else if (*k) {
      run_crowd_count(cc);
    } else if (*v) {
      run_serve(sv);
    }
  } catch (const ParseError& err) {
    std::cerr << "parse error: " << err.what() << '\n';
    return 3;
  } catch (const InvalidArgument& err) {
    std::cerr << "invalid argument: " << err.what() << '\n';
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  }
  return 0;
}
