// Copyright 2026 The tissueseg Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Command-line entry point for the whole pipeline.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "tissueseg/dataset.hpp"
#include "tissueseg/error.hpp"
#include "tissueseg/gate.hpp"
#include "tissueseg/image_io.hpp"
#include "tissueseg/ingest.hpp"
#include "tissueseg/kernels.hpp"
#include "tissueseg/label_service.hpp"
#include "tissueseg/metrics.hpp"
#include "tissueseg/mlps.hpp"
#include "tissueseg/parallel.hpp"
#include "tissueseg/pda.hpp"
#include "tissueseg/pseudomask.hpp"
#include "tissueseg/synthetic.hpp"
#include "tissueseg/wsi.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tissueseg;

namespace {

// Training flags that override a config file, which in turn overrides the
// published defaults. Only flags given on the command line take effect.
class ConfigFlags {
 public:
  explicit ConfigFlags(CLI::App* app) : app_(app) {}

  template <typename T>
  void add(const std::string& name, const std::string& help, T shown,
           std::function<void(TrainConfig&, T)> set) {
    auto value = std::make_shared<T>(shown);
    CLI::Option* opt = app_->add_option(name, *value, help)->capture_default_str();
    setters_.push_back([opt, value, set](TrainConfig& c) {
      if (opt->count() > 0) set(c, *value);
    });
  }

  void flag(const std::string& name, const std::string& help,
            std::function<void(TrainConfig&)> set) {
    CLI::Option* opt = app_->add_flag(name, help);
    setters_.push_back([opt, set](TrainConfig& c) {
      if (opt->count() > 0) set(c);
    });
  }

  void apply(TrainConfig& c) const {
    for (const auto& s : setters_) s(c);
  }

 private:
  CLI::App* app_;
  std::vector<std::function<void(TrainConfig&)>> setters_;
};

void add_common_training_flags(ConfigFlags& f, const TrainConfig& d) {
  f.add<int>("--epochs", "Training epochs", d.epochs, [](TrainConfig& c, int v) { c.epochs = v; });
  f.add<int>("--batch-size", "Mini-batch size", d.batch_size,
             [](TrainConfig& c, int v) { c.batch_size = v; });
  f.add<double>("--lr", "Initial learning rate (polynomial decay)", d.lr0,
                [](TrainConfig& c, double v) { c.lr0 = v; });
  f.add<double>("--poly-power", "Polynomial decay power", d.poly_power,
                [](TrainConfig& c, double v) { c.poly_power = v; });
  f.add<double>("--momentum", "SGD momentum", d.momentum,
                [](TrainConfig& c, double v) { c.momentum = v; });
  f.add<double>("--weight-decay", "L2 weight decay", d.weight_decay,
                [](TrainConfig& c, double v) { c.weight_decay = v; });
  f.add<double>("--grad-clip", "Global gradient-norm clip (0 disables)", d.grad_clip,
                [](TrainConfig& c, double v) { c.grad_clip = v; });
  f.add<double>("--hflip-p", "Horizontal flip probability", d.aug.hflip_p,
                [](TrainConfig& c, double v) { c.aug.hflip_p = v; });
  f.add<double>("--vflip-p", "Vertical flip probability", d.aug.vflip_p,
                [](TrainConfig& c, double v) { c.aug.vflip_p = v; });
  f.flag("--blur", "Enable Gaussian blur augmentation", [](TrainConfig& c) { c.aug.blur = true; });
  f.flag("--no-blur", "Disable Gaussian blur augmentation",
         [](TrainConfig& c) { c.aug.blur = false; });
  f.flag("--no-normalize", "Skip per-channel standardization",
         [](TrainConfig& c) { c.aug.normalize = false; });
  f.add<std::uint64_t>("--seed", "Random seed", d.seed,
                       [](TrainConfig& c, std::uint64_t v) { c.seed = v; });
}

struct Dataset {
  Manifest manifest;
  TissueTaxonomy taxonomy;
};

TissueTaxonomy load_taxonomy(const fs::path& root, const std::string& explicit_path) {
  const fs::path path = explicit_path.empty() ? root / "taxonomy.json" : fs::path(explicit_path);
  if (!fs::exists(path)) {
    throw Error(ErrorCode::kConfigError,
                "no taxonomy at " + path.string() + " (pass --taxonomy)");
  }
  return TissueTaxonomy::load(path);
}

Dataset open_dataset(const fs::path& root, const std::string& taxonomy_path, double min_fraction) {
  Dataset d;
  d.taxonomy = load_taxonomy(root, taxonomy_path);
  const int c = d.taxonomy.num_classes();
  if (fs::exists(root / "manifest.jsonl")) {
    d.manifest = validate_manifest(read_manifest(root / "manifest.jsonl"), c);
  } else {
    d.manifest = load_luad_layout(root, c, min_fraction);
  }
  return d;
}

TrainConfig resolve_config(const std::string& config_file, const std::string& dataset, int phase,
                           const ConfigFlags& flags) {
  TrainConfig c = config_file.empty() ? default_config(parse_dataset_kind(dataset), phase)
                                      : TrainConfig::load(config_file);
  flags.apply(c);
  c.phase = phase;
  c.validate();
  return c;
}

void write_run_json(const fs::path& dir, const std::string& command, const json& body) {
  fs::create_directories(dir);
  json j = body;
  j["command"] = command;
  std::ofstream out(dir / "run.json");
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + (dir / "run.json").string());
  out << j.dump(2) << "\n";
}

void check_same_taxonomy(const TissueTaxonomy& a, const TissueTaxonomy& b) {
  if (a.class_names() != b.class_names()) {
    throw Error(ErrorCode::kTaxonomyMismatch, "checkpoints were trained on different taxonomies");
  }
}

json accuracy_json(const ClassificationAccuracy& a) {
  return {{"per_class", a.per_class}, {"mean_per_class", a.mean_per_class}, {"exact", a.exact}};
}

// ---------------------------------------------------------------- commands

struct DataArgs {
  std::string root;
  std::string taxonomy;
  double min_fraction = kDefaultMinFraction;

  void add(CLI::App* app, bool required = true) {
    auto* o = app->add_option("--data", root, "Dataset root (manifest.jsonl or LUAD layout)");
    if (required) o->required();
    app->add_option("--taxonomy", taxonomy, "Taxonomy JSON (default <data>/taxonomy.json)");
    app->add_option("--min-fraction", min_fraction,
                    "Minimum class area fraction for labels derived from masks")
        ->capture_default_str();
  }
  Dataset open() const { return open_dataset(root, taxonomy, min_fraction); }
};

struct TrainClsArgs {
  DataArgs data;
  std::string out;
  std::string config;
  std::string dataset = "luad";
};

void run_train_cls(const TrainClsArgs& a, const TrainConfig& cfg, bool attention) {
  const Dataset d = a.data.open();
  const auto train = load_split(d.manifest, "train");
  PdaClassifier model(d.taxonomy.num_classes(), attention);
  model.initialize(cfg.seed);
  fs::create_directories(a.out);
  std::ofstream log(fs::path(a.out) / "train_log.jsonl");
  const auto logs = train_phase1(model, train, cfg, [&](const Phase1EpochLog& l) {
    log << json(l).dump() << "\n";
    log.flush();
    std::fprintf(stderr, "epoch %d loss %.4f mu %.4f exact %.3f\n", l.epoch, l.loss, l.mu,
                 l.acc_exact);
  });
  model.save(a.out, d.taxonomy, {{"train_config", cfg}});
  json summary = {{"epochs", logs.size()}, {"final_mu", model.schedule().mu}};
  for (const std::string split : {"val", "test"}) {
    const auto samples = load_split(d.manifest, split);
    if (!samples.empty()) summary[split + "_accuracy"] = accuracy_json(evaluate_classifier(model, samples));
  }
  write_run_json(a.out, "train-cls", {{"config", cfg}, {"data", a.data.root}, {"summary", summary}});
  std::cout << summary.dump(2) << "\n";
}

struct GenPseudoArgs {
  DataArgs data;
  std::string cls;
  std::string out;
  std::vector<std::string> taps{"b4_3", "b5_2", "bn7"};
  bool no_relu = false;
};

void run_gen_pseudo(const GenPseudoArgs& a) {
  const Dataset d = a.data.open();
  TissueTaxonomy cls_tax;
  auto model = PdaClassifier::load(a.cls, &cls_tax);
  check_same_taxonomy(d.taxonomy, cls_tax);
  GradCamConfig gc;
  gc.taps.clear();
  for (const auto& t : a.taps) gc.taps.push_back(parse_tap(t));
  gc.relu_on_map = !a.no_relu;
  const auto report = generate_dataset(d.manifest, *model, a.out, gc);
  json q = json::array();
  for (const auto& e : report.quarantined) q.push_back({{"patch_id", e.patch_id}, {"reason", e.reason}});
  const json summary = {{"patches", report.patches},
                        {"files_written", report.files_written},
                        {"files_skipped", report.files_skipped},
                        {"quarantined", q}};
  write_run_json(a.out, "gen-pseudo",
                 {{"data", a.data.root}, {"classifier", a.cls}, {"taps", a.taps}, {"summary", summary}});
  std::cout << summary.dump(2) << "\n";
}

struct TrainSegArgs {
  DataArgs data;
  std::string pseudo;
  std::string out;
  std::string config;
  std::string dataset = "luad";
  std::string supervised_split;
};

void run_train_seg(const TrainSegArgs& a, TrainConfig cfg) {
  const Dataset d = a.data.open();
  std::vector<Phase2Sample> samples;
  if (!a.supervised_split.empty()) {
    cfg.lambdas = {0.0, 0.0, 1.0};
    for (auto& s : load_split(d.manifest, a.supervised_split)) {
      if (!s.mask) continue;
      Phase2Sample p;
      p.targets = supervised_targets(*s.mask, s.patch.patch_id);
      p.patch = std::move(s.patch);
      samples.push_back(std::move(p));
    }
    if (samples.empty()) {
      throw Error(ErrorCode::kConfigError, "split " + a.supervised_split + " has no pixel masks");
    }
  } else {
    if (a.pseudo.empty()) throw CLI::RequiredError("--pseudo (or --supervised)");
    MlpsLossConfig loss;
    loss.lambdas = cfg.lambdas;
    samples = load_phase2_samples(d.manifest, a.pseudo, loss);
  }
  Segmenter model(d.taxonomy.num_classes());
  model.initialize(cfg.seed);
  fs::create_directories(a.out);
  std::ofstream log(fs::path(a.out) / "train_log.jsonl");
  const auto logs = train_phase2(model, samples, cfg, [&](const Phase2EpochLog& l) {
    log << json(l).dump() << "\n";
    log.flush();
    std::fprintf(stderr, "epoch %d loss %.4f lr %.5f\n", l.epoch, l.loss, l.lr);
  });
  model.save(a.out, d.taxonomy, {{"train_config", cfg}});
  const json summary = {{"epochs", logs.size()}, {"final_loss", logs.back().loss},
                        {"samples", samples.size()}};
  write_run_json(a.out, "train-seg", {{"config", cfg},
                                      {"data", a.data.root},
                                      {"pseudo", a.pseudo},
                                      {"supervised_split", a.supervised_split},
                                      {"summary", summary}});
  std::cout << summary.dump(2) << "\n";
}

struct ModelArgs {
  std::string seg;
  std::string cls;
  double eps = kDefaultGateEpsilon;
  bool no_gate = false;

  void add(CLI::App* app) {
    app->add_option("--seg", seg, "Segmenter checkpoint directory")->required();
    app->add_option("--cls", cls, "Classifier checkpoint directory")->required();
    app->add_option("--eps", eps, "Gate threshold: channels with class probability <= eps close")
        ->capture_default_str();
    app->add_flag("--no-gate", no_gate, "Disable the classification gate");
  }
  GateOptions gate() const { return {!no_gate, eps}; }
};

struct LoadedModels {
  std::unique_ptr<Segmenter> seg;
  std::unique_ptr<PdaClassifier> cls;
  TissueTaxonomy taxonomy;
};

LoadedModels load_models(const ModelArgs& a) {
  LoadedModels m;
  TissueTaxonomy cls_tax;
  m.seg = Segmenter::load(a.seg, &m.taxonomy);
  m.cls = PdaClassifier::load(a.cls, &cls_tax);
  check_same_taxonomy(m.taxonomy, cls_tax);
  return m;
}

struct InferPatchArgs {
  ModelArgs models;
  std::string image;
  DataArgs data;
  std::string split = "test";
  std::string out;
};

void run_infer_patch(const InferPatchArgs& a) {
  const LoadedModels m = load_models(a.models);
  const GateOptions gate = a.models.gate();
  if (!a.image.empty()) {
    const Patch patch = load_patch(a.image, fs::path(a.image).stem().string());
    const auto r = segment_patch(patch, *m.seg, *m.cls, m.taxonomy, gate);
    if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
    write_mask_png(a.out, r.mask);
    std::cout << json{{"patch_id", patch.patch_id},
                      {"class_probs", r.class_probs},
                      {"gate_fallback", r.gate_fallback},
                      {"classes_present", classes_present(r.mask, m.taxonomy.num_classes())}}
                     .dump()
              << "\n";
    return;
  }
  const Dataset d = a.data.open();
  check_same_taxonomy(d.taxonomy, m.taxonomy);
  const auto records = d.manifest.split(a.split);
  fs::create_directories(a.out);
  std::vector<json> lines(records.size());
  parallel_for(records.size(), [&](std::size_t i) {
    const ManifestRecord& r = *records[i];
    const Patch patch = load_patch(r.path, r.patch_id, r.slide_id, r.origin);
    const auto seg = segment_patch(patch, *m.seg, *m.cls, m.taxonomy, gate);
    write_mask_png(fs::path(a.out) / (r.patch_id + ".png"), seg.mask);
    lines[i] = {{"patch_id", r.patch_id},
                {"class_probs", seg.class_probs},
                {"gate_fallback", seg.gate_fallback}};
  });
  std::ofstream pred(fs::path(a.out) / "predictions.jsonl");
  for (const auto& l : lines) pred << l.dump() << "\n";
  write_run_json(a.out, "infer-patch", {{"seg", a.models.seg},
                                        {"cls", a.models.cls},
                                        {"eps", a.models.eps},
                                        {"gate", !a.models.no_gate},
                                        {"split", a.split},
                                        {"patches", records.size()}});
  std::cout << json{{"patches", records.size()}, {"out", a.out}}.dump() << "\n";
}

struct InferWsiArgs {
  ModelArgs models;
  std::string slide;
  std::string tiles;
  std::string out;
  int tile = 224;
  int stride = 112;
  bool double_sums = false;
  bool probs = false;
};

void run_infer_wsi(const InferWsiArgs& a) {
  const LoadedModels m = load_models(a.models);
  WsiOptions o;
  o.tile = a.tile;
  o.stride = a.stride;
  o.gate = a.models.gate();
  o.double_sums = a.double_sums;
  const WsiResult r = a.slide.empty()
                          ? segment_tile_directory(a.tiles, *m.seg, *m.cls, m.taxonomy, o)
                          : segment_slide(read_rgb_png(a.slide).to_tensor(), *m.seg, *m.cls,
                                          m.taxonomy, o);
  write_wsi_outputs(a.out, r, m.taxonomy, a.probs);
  std::cout << json(r.report).dump(2) << "\n";
}

struct EvaluateArgs {
  DataArgs data;
  std::string split = "test";
  std::string pred;
  std::string out;
  std::string csv;
};

void write_scores_row(std::ostream& out, const std::string& id, const Scores& s) {
  out << id << "," << s.pixels_evaluated << "," << s.miou << "," << s.fwiou << "," << s.acc;
  for (std::size_t k = 0; k < s.iou_per_class.size(); ++k) {
    out << ",";
    if (s.class_evaluated[k]) out << s.iou_per_class[k];
  }
  out << "\n";
}

void run_evaluate(const EvaluateArgs& a) {
  const Dataset d = a.data.open();
  const int c = d.taxonomy.num_classes();
  const auto records = d.manifest.split(a.split);
  std::vector<ConfusionMatrix> parts(records.size());
  std::vector<std::uint8_t> used(records.size(), 0);
  parallel_for(records.size(), [&](std::size_t i) {
    const ManifestRecord& r = *records[i];
    if (r.mask_path.empty()) return;
    const SegmentationMask gt = read_mask_png(r.mask_path);
    const fs::path pred_path = fs::path(a.pred) / (r.patch_id + ".png");
    if (!fs::exists(pred_path)) throw Error(ErrorCode::kMissingFile, pred_path.string());
    parts[i] = confusion(gt, read_mask_png(pred_path), c);
    used[i] = 1;
  });
  ConfusionMatrix total(c);
  int patches = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!used[i]) continue;
    total += parts[i];
    ++patches;
  }
  const Scores s = scores(total);
  json per_class = json::object();
  for (int k = 0; k < c; ++k) {
    per_class[d.taxonomy.class_names()[k]] =
        s.class_evaluated[k] ? json(s.iou_per_class[k]) : json();
  }
  const json result = {{"split", a.split},
                       {"patches", patches},
                       {"per_class", per_class},
                       {"miou", s.miou},
                       {"fwiou", s.fwiou},
                       {"acc", s.acc},
                       {"pixels_evaluated", s.pixels_evaluated},
                       {"confusion", total.counts()}};
  if (!a.out.empty()) {
    std::ofstream out(a.out);
    if (!out) throw Error(ErrorCode::kIoError, "cannot write " + a.out);
    out << result.dump(2) << "\n";
  }
  if (!a.csv.empty()) {
    std::ofstream out(a.csv);
    if (!out) throw Error(ErrorCode::kIoError, "cannot write " + a.csv);
    out << "patch_id,pixels_evaluated,miou,fwiou,acc";
    for (const auto& name : d.taxonomy.class_names()) out << ",iou_" << name;
    out << "\n";
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (used[i] && parts[i].total() > 0) write_scores_row(out, records[i]->patch_id, scores(parts[i]));
    }
    write_scores_row(out, "ALL", s);
  }
  std::cout << result.dump(2) << "\n";
}

struct SynthBcssArgs {
  std::string bcss;
  std::string out;
  std::string taxonomy;
  BcssSynthesisOptions opts;
};

void run_synth_bcss(const SynthBcssArgs& a) {
  const TissueTaxonomy tax = load_taxonomy(a.bcss, a.taxonomy);
  const Manifest m = synthesize_bcss(a.bcss, a.out, tax.num_classes(), a.opts);
  tax.save(fs::path(a.out) / "taxonomy.json");
  std::cout << json{{"records", m.records.size()}, {"splits", m.split_counts}}.dump() << "\n";
}

struct MakeSyntheticArgs {
  std::string out;
  SyntheticSplits splits;
  SyntheticOptions opts;
  std::string layout = "random";
};

void run_make_synthetic(MakeSyntheticArgs a) {
  if (a.layout == "single") {
    a.opts.layout = SyntheticLayout::kSingle;
  } else if (a.layout == "half") {
    a.opts.layout = SyntheticLayout::kHalfHalf;
  }
  const Manifest m = write_synthetic_dataset(a.out, a.splits, a.opts);
  std::cout << json{{"records", m.records.size()}, {"splits", m.split_counts}}.dump() << "\n";
}

struct LabelServeArgs {
  std::vector<std::string> sessions;
  std::string host = "127.0.0.1";
  int port = 8080;
};

void run_label_serve(const LabelServeArgs& a) {
  std::vector<LabelSessionConfig> configs;
  for (const auto& s : a.sessions) configs.push_back(LabelSessionConfig::load(s));
  LabelService service(std::move(configs));
  std::fprintf(stderr, "label service on http://%s:%d\n", a.host.c_str(), a.port);
  if (!service.listen(a.host, a.port)) {
    throw Error(ErrorCode::kIoError, "cannot listen on " + a.host + ":" + std::to_string(a.port));
  }
}

int report_error(const std::string& code, const std::string& message) {
  std::cerr << json{{"error", code}, {"message", message}}.dump() << "\n";
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  kernels::init_threading();
  CLI::App app{"Weakly supervised tissue segmentation"};
  app.require_subcommand(1);

  // train-cls
  TrainClsArgs cls_args;
  bool no_attention = false;
  auto* train_cls = app.add_subcommand("train-cls", "Phase 1: train the patch classifier");
  cls_args.data.add(train_cls);
  train_cls->add_option("--out", cls_args.out, "Checkpoint directory")->required();
  train_cls->add_option("--config", cls_args.config, "TrainConfig JSON file");
  train_cls->add_option("--dataset", cls_args.dataset, "Defaults to use: luad (20 epochs) or bcss (40)")
      ->check(CLI::IsMember({"luad", "bcss"}))
      ->capture_default_str();
  ConfigFlags cls_flags(train_cls);
  const TrainConfig d1 = default_config(DatasetKind::kLuad, 1);
  add_common_training_flags(cls_flags, d1);
  cls_flags.add<double>("--sigma", "Dropout coefficient decay rate", d1.pda.sigma,
                        [](TrainConfig& c, double v) { c.pda.sigma = v; });
  cls_flags.add<double>("--lower-bound", "Dropout coefficient lower bound l", d1.pda.lower_bound,
                        [](TrainConfig& c, double v) { c.pda.lower_bound = v; });
  cls_flags.add<int>("--warmup", "Epochs before deactivation starts", d1.pda.warmup_epochs,
                     [](TrainConfig& c, int v) { c.pda.warmup_epochs = v; });
  cls_flags.add<double>("--constant-mu", "Fixed dropout coefficient after warmup", 1.0,
                        [](TrainConfig& c, double v) { c.pda.constant_mu = v; });
  cls_flags.flag("--no-pda", "Pin the dropout coefficient to 1",
                 [](TrainConfig& c) { c.pda.enabled = false; });
  train_cls->add_flag("--no-attention", no_attention, "Plain classifier head without attention");

  // gen-pseudo
  GenPseudoArgs gp_args;
  auto* gen_pseudo = app.add_subcommand("gen-pseudo", "Write Grad-CAM pseudo masks for train");
  gp_args.data.add(gen_pseudo);
  gen_pseudo->add_option("--cls", gp_args.cls, "Classifier checkpoint directory")->required();
  gen_pseudo->add_option("--out", gp_args.out, "Output directory")->required();
  gen_pseudo->add_option("--taps", gp_args.taps, "Feature taps")
      ->check(CLI::IsMember({"b4_3", "b5_2", "bn7"}))
      ->capture_default_str();
  gen_pseudo->add_flag("--no-relu", gp_args.no_relu, "Skip the ReLU on Grad-CAM maps");

  // train-seg
  TrainSegArgs seg_args;
  auto* train_seg = app.add_subcommand("train-seg", "Phase 2: train the segmenter");
  seg_args.data.add(train_seg);
  train_seg->add_option("--pseudo", seg_args.pseudo, "Pseudo-mask directory from gen-pseudo");
  train_seg->add_option("--out", seg_args.out, "Checkpoint directory")->required();
  train_seg->add_option("--config", seg_args.config, "TrainConfig JSON file");
  train_seg->add_option("--dataset", seg_args.dataset, "Defaults to use: luad or bcss")
      ->check(CLI::IsMember({"luad", "bcss"}))
      ->capture_default_str();
  train_seg->add_option("--supervised", seg_args.supervised_split,
                        "Train on this split's pixel masks instead of pseudo masks");
  ConfigFlags seg_flags(train_seg);
  const TrainConfig d2 = default_config(DatasetKind::kLuad, 2);
  add_common_training_flags(seg_flags, d2);
  seg_flags.add<std::vector<double>>(
      "--lambdas", "Loss weights for b4_3 b5_2 bn7",
      std::vector<double>(d2.lambdas.begin(), d2.lambdas.end()),
      [](TrainConfig& c, std::vector<double> v) {
        if (v.size() != 3) throw CLI::ValidationError("--lambdas", "expects three values");
        c.lambdas = {v[0], v[1], v[2]};
      });

  // infer-patch
  InferPatchArgs ip_args;
  auto* infer_patch = app.add_subcommand("infer-patch", "Segment patches");
  ip_args.models.add(infer_patch);
  auto* image_opt = infer_patch->add_option("--image", ip_args.image, "Single patch PNG");
  ip_args.data.add(infer_patch, false);
  infer_patch->add_option("--split", ip_args.split, "Split to segment with --data")
      ->capture_default_str();
  infer_patch->add_option("--out", ip_args.out, "Mask PNG (--image) or output directory")
      ->required();

  // infer-wsi
  InferWsiArgs iw_args;
  auto* infer_wsi = app.add_subcommand("infer-wsi", "Segment a whole slide by overlapping tiles");
  iw_args.models.add(infer_wsi);
  auto* slide_opt = infer_wsi->add_option("--slide", iw_args.slide, "Flat RGB PNG of the slide");
  auto* tiles_opt = infer_wsi->add_option("--tiles", iw_args.tiles,
                                          "Tile directory with origins.jsonl");
  slide_opt->excludes(tiles_opt);
  infer_wsi->add_option("--out", iw_args.out, "Output directory")->required();
  infer_wsi->add_option("--tile", iw_args.tile, "Tile size")->capture_default_str();
  infer_wsi->add_option("--stride", iw_args.stride, "Tile stride (at most tile/2)")
      ->capture_default_str();
  infer_wsi->add_flag("--double-sums", iw_args.double_sums, "64-bit probability sums");
  infer_wsi->add_flag("--probs", iw_args.probs, "Also write per-class probability rasters");

  // evaluate
  EvaluateArgs ev_args;
  auto* evaluate = app.add_subcommand("evaluate", "Score predicted masks against ground truth");
  ev_args.data.add(evaluate);
  evaluate->add_option("--split", ev_args.split, "Split to score")->capture_default_str();
  evaluate->add_option("--pred", ev_args.pred, "Directory of <patch_id>.png masks")->required();
  evaluate->add_option("--out", ev_args.out, "JSON report path");
  evaluate->add_option("--csv", ev_args.csv, "CSV report path");

  // synth-bcss
  SynthBcssArgs sb_args;
  auto* synth_bcss = app.add_subcommand("synth-bcss", "Crop weakly labeled patches from BCSS ROIs");
  synth_bcss->add_option("--bcss", sb_args.bcss, "BCSS root with rois/ and masks/")->required();
  synth_bcss->add_option("--out", sb_args.out, "Output dataset root")->required();
  synth_bcss->add_option("--taxonomy", sb_args.taxonomy, "Taxonomy JSON (default <bcss>/taxonomy.json)");
  synth_bcss->add_option("--patch-size", sb_args.opts.patch_size, "Crop size")->capture_default_str();
  synth_bcss->add_option("--samples", sb_args.opts.samples_per_roi, "Crops per region")
      ->capture_default_str();
  synth_bcss->add_option("--seed", sb_args.opts.seed, "Random seed")->capture_default_str();
  synth_bcss->add_option("--min-fraction", sb_args.opts.min_fraction, "Minimum class area fraction")
      ->capture_default_str();
  synth_bcss->add_option("--val-fraction", sb_args.opts.val_fraction, "Share of regions for val")
      ->capture_default_str();
  synth_bcss->add_option("--test-fraction", sb_args.opts.test_fraction, "Share of regions for test")
      ->capture_default_str();

  // make-synthetic
  MakeSyntheticArgs ms_args;
  ms_args.opts.seed = 7;
  auto* make_synth = app.add_subcommand("make-synthetic", "Write a procedural texture dataset");
  make_synth->add_option("--out", ms_args.out, "Output dataset root")->required();
  make_synth->add_option("--classes", ms_args.opts.num_classes, "Number of classes (2-8)")
      ->capture_default_str();
  make_synth->add_option("--train", ms_args.splits.train, "Training patches")->capture_default_str();
  make_synth->add_option("--val", ms_args.splits.val, "Validation patches")->capture_default_str();
  make_synth->add_option("--test", ms_args.splits.test, "Test patches")->capture_default_str();
  make_synth->add_option("--patch-size", ms_args.opts.patch_size, "Patch size")->capture_default_str();
  make_synth->add_option("--seed", ms_args.opts.seed, "Random seed")->capture_default_str();
  make_synth->add_option("--min-fraction", ms_args.opts.min_fraction, "Minimum class area fraction")
      ->capture_default_str();
  make_synth->add_option("--layout", ms_args.layout, "Region layout")
      ->check(CLI::IsMember({"random", "single", "half"}))
      ->capture_default_str();

  // label-serve
  LabelServeArgs ls_args;
  auto* label_serve = app.add_subcommand("label-serve", "Run the patch-labeling HTTP service");
  label_serve->add_option("--session", ls_args.sessions, "Session config JSON (repeatable)")
      ->required();
  label_serve->add_option("--host", ls_args.host, "Bind address")->capture_default_str();
  label_serve->add_option("--port", ls_args.port, "Port")->capture_default_str();

  TrainConfig cls_cfg;
  TrainConfig seg_cfg;
  try {
    app.parse(argc, argv);
    if (*infer_patch && image_opt->count() == 0 && ip_args.data.root.empty()) {
      throw CLI::RequiredError("--image or --data");
    }
    if (*infer_wsi && slide_opt->count() == 0 && tiles_opt->count() == 0) {
      throw CLI::RequiredError("--slide or --tiles");
    }
    if (*infer_wsi && slide_opt->count() > 0) {
      TileGrid{iw_args.tile, iw_args.tile, iw_args.stride, iw_args.stride, iw_args.tile,
               iw_args.tile}
          .validate();
    }
    if (*train_cls) cls_cfg = resolve_config(cls_args.config, cls_args.dataset, 1, cls_flags);
    if (*train_seg) seg_cfg = resolve_config(seg_args.config, seg_args.dataset, 2, seg_flags);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const Error& e) {
    // Invalid configuration values are usage errors.
    std::cerr << json{{"error", error_code_name(e.code())}, {"message", e.what()}}.dump() << "\n";
    return 2;
  }

  try {
    if (*train_cls) run_train_cls(cls_args, cls_cfg, !no_attention);
    if (*gen_pseudo) run_gen_pseudo(gp_args);
    if (*train_seg) run_train_seg(seg_args, seg_cfg);
    if (*infer_patch) run_infer_patch(ip_args);
    if (*infer_wsi) run_infer_wsi(iw_args);
    if (*evaluate) run_evaluate(ev_args);
    if (*synth_bcss) run_synth_bcss(sb_args);
    if (*make_synth) run_make_synthetic(ms_args);
    if (*label_serve) run_label_serve(ls_args);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const Error& e) {
    return report_error(std::string(error_code_name(e.code())), e.what());
  } catch (const std::exception& e) {
    return report_error("InternalError", e.what());
  }
  return 0;
}
