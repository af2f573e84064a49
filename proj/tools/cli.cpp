#include "cli.hpp"

#include <cstdio>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "protoseg/checkpoint.hpp"
#include "protoseg/config_io.hpp"
#include "protoseg/dataset.hpp"
#include "protoseg/episodes.hpp"
#include "protoseg/error.hpp"
#include "protoseg/loss_metrics.hpp"
#include "protoseg/training.hpp"
#include "protoseg/volume.hpp"

namespace protoseg::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Everything a command needs, resolved from defaults, the config file and flags.
struct RunConfig {
  std::uint64_t seed = 0;
  PhantomConfig phantom;
  int n_subjects = 12;
  SplitFractions split;
  TrainConfig train;
  BaselineConfig baseline;
  int folds = 4;
  int val_subjects = 1;
  double target_spacing = 1.0;
  bool normalize = true;
};

json parse_text(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::kFormat, what + ": " + e.what());
  }
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kNotFound, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_text(ss.str(), path.string());
}

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out << j.dump(2) << "\n";
  if (!out) fail(ErrorCode::kIo, "write failed for " + path.string());
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out << text;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::kIo, "cannot create " + dir.string() + ": " + ec.message());
}

json to_json(const RunConfig& c) {
  return {{"seed", c.seed},
          {"phantom", parse_text(config_to_json(c.phantom), "phantom")},
          {"n_subjects", c.n_subjects},
          {"split", parse_text(config_to_json(c.split), "split")},
          {"train", parse_text(config_to_json(c.train), "train")},
          {"baseline", parse_text(config_to_json(c.baseline), "baseline")},
          {"crossval", {{"k", c.folds}, {"val_subjects", c.val_subjects}}},
          {"preprocess", {{"target_spacing", c.target_spacing}, {"normalize", c.normalize}}}};
}

void merge_file(const fs::path& path, RunConfig& c) {
  const json j = read_json_file(path);
  if (!j.is_object()) fail(ErrorCode::kFormat, path.string() + ": config must be a JSON object");
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& k = it.key();
      const json& v = it.value();
      if (k == "seed") c.seed = v.get<std::uint64_t>();
      else if (k == "phantom") merge_config(v.dump(), c.phantom);
      else if (k == "n_subjects") c.n_subjects = v.get<int>();
      else if (k == "split") merge_config(v.dump(), c.split);
      else if (k == "train") merge_config(v.dump(), c.train);
      else if (k == "baseline") merge_config(v.dump(), c.baseline);
      else if (k == "crossval") {
        c.folds = v.value("k", c.folds);
        c.val_subjects = v.value("val_subjects", c.val_subjects);
      } else if (k == "preprocess") {
        c.target_spacing = v.value("target_spacing", c.target_spacing);
        c.normalize = v.value("normalize", c.normalize);
      } else {
        fail(ErrorCode::kFormat, path.string() + ": unknown key '" + k + "'");
      }
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kFormat, path.string() + ": " + e.what());
  }
}

// The run seed drives every component seed so a run is reproducible from (config, seed).
void apply_seed(RunConfig& c) {
  c.phantom.seed = c.seed;
  c.train.seed = c.seed;
  c.train.encoder.seed = c.seed;
  c.train.episode.seed = c.seed;
  c.baseline.seed = c.seed;
  c.baseline.encoder.seed = c.seed;
}

Dims parse_dims(const std::string& s) {
  std::vector<std::int64_t> v;
  std::string cur;
  for (char ch : s + ",") {
    if (ch == ',' || ch == 'x' || ch == 'X') {
      try {
        std::size_t used = 0;
        v.push_back(std::stoll(cur, &used));
        if (used != cur.size()) throw std::invalid_argument(cur);
      } catch (const std::exception&) {
        fail(ErrorCode::kInvalidArgument, "bad size '" + s + "' (expected e.g. 64,64,16)");
      }
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (v.size() != 3) fail(ErrorCode::kInvalidArgument, "size needs three components: " + s);
  return {v[0], v[1], v[2]};
}

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::string patch_size;
  std::optional<int> ways;
  std::optional<int> shots;
  std::string tiling;
  std::string framing;
  std::optional<std::int64_t> iterations;
};

RunConfig resolve(const CommonFlags& f) {
  RunConfig c;
  if (!f.config.empty()) merge_file(f.config, c);
  if (f.seed) c.seed = *f.seed;
  apply_seed(c);
  if (!f.patch_size.empty()) {
    const Dims d = parse_dims(f.patch_size);
    c.train.patch.size = d;
    c.baseline.patch.size = d;
  }
  if (f.ways) c.train.episode.ways = *f.ways;
  if (f.shots) c.train.episode.shots = *f.shots;
  if (!f.tiling.empty()) {
    c.train.tiling = tiling_mode_from_string(f.tiling);
    c.baseline.tiling = c.train.tiling;
  }
  if (!f.framing.empty()) c.train.episode.framing = class_framing_from_string(f.framing);
  if (f.iterations) {
    c.train.max_iterations = *f.iterations;
    c.baseline.max_iterations = *f.iterations;
  }
  return c;
}

void add_common(CLI::App* cmd, CommonFlags& f, bool model_flags) {
  cmd->add_option("--config", f.config, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "Run seed (drives every component seed)");
  cmd->add_option("--out", f.out, "Output directory")->capture_default_str();
  if (!model_flags) return;
  cmd->add_option("--patch-size", f.patch_size, "Patch size, e.g. 64,64,16");
  cmd->add_option("--ways", f.ways, "Classes per episode");
  cmd->add_option("--shots", f.shots, "Support patches per class");
  cmd->add_option("--tiling", f.tiling, "Inference tiling")->check(CLI::IsMember({"clamped", "drop-partial"}));
  cmd->add_option("--framing", f.framing, "Class framing")
      ->check(CLI::IsMember({"vessel-as-class", "subject-as-class"}));
  cmd->add_option("--iterations", f.iterations, "Maximum training iterations");
}

std::vector<Subject> load_subjects(const fs::path& dir, bool normalize) {
  std::vector<Subject> s = load_dataset(dir);
  if (normalize) normalize_subjects(s);
  return s;
}

SubjectSplit resolve_split(const std::string& split_path, const fs::path& fallback_dir,
                           const std::vector<Subject>& subjects, const RunConfig& c) {
  if (!split_path.empty()) return load_split(split_path);
  if (!fallback_dir.empty() && fs::exists(fallback_dir / "split.json")) return load_split(fallback_dir / "split.json");
  return split_subjects(subject_ids(subjects), c.split, c.seed);
}

json report_json(const MetricsReport& r) { return parse_text(report_to_json(r), "report"); }

// ---------------------------------------------------------------------------

struct PreprocessFlags {
  std::string in;
  std::optional<double> target_spacing;
  std::string affine_dir;
};

// Subjects found in a directory: the manifest when present, else <id>_image.* / <id>_mask.* pairs.
std::vector<std::pair<std::string, std::pair<fs::path, fs::path>>> discover(const fs::path& dir) {
  std::vector<std::pair<std::string, std::pair<fs::path, fs::path>>> out;
  if (!fs::is_directory(dir)) fail(ErrorCode::kNotFound, "input directory " + dir.string() + " does not exist");
  if (fs::exists(dir / "manifest.json")) {
    const json j = read_json_file(dir / "manifest.json");
    try {
      for (const auto& s : j.at("subjects")) {
        out.push_back({s.at("id").get<std::string>(),
                       {dir / s.at("image").get<std::string>(), dir / s.at("mask").get<std::string>()}});
      }
    } catch (const json::exception& e) {
      fail(ErrorCode::kFormat, "manifest: " + std::string(e.what()));
    }
    return out;
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& p : files) {
    const std::string name = p.filename().string();
    const auto pos = name.find("_image.");
    if (pos == std::string::npos || name.ends_with(".json")) continue;
    const std::string id = name.substr(0, pos);
    const fs::path mask = dir / (id + "_mask" + name.substr(pos + 6));
    if (!fs::exists(mask)) fail(ErrorCode::kNotFound, "no mask for " + p.string());
    out.push_back({id, {p, mask}});
  }
  return out;
}

int cmd_preprocess(const CommonFlags& f, const PreprocessFlags& pf, std::ostream& out) {
  RunConfig c = resolve(f);
  if (pf.target_spacing) c.target_spacing = *pf.target_spacing;
  if (!(c.target_spacing > 0.0)) fail(ErrorCode::kInvalidArgument, "target spacing must be positive");
  const auto entries = discover(pf.in);
  if (entries.empty()) fail(ErrorCode::kInsufficientData, "no subjects found in " + pf.in);

  std::vector<Subject> subjects;
  json notes = json::array();
  std::optional<GridSpec> ref;
  for (const auto& [id, files] : entries) {
    Volume3D img = load_volume(files.first);
    LabelMask mask = load_mask(files.second);
    if (img.dims() != mask.dims()) fail(ErrorCode::kFormat, id + ": image and mask dims differ");
    if (!ref) ref = grid_of(img);
    bool registered = false;
    if (!pf.affine_dir.empty()) {
      const fs::path aff = fs::path(pf.affine_dir) / (id + ".txt");
      if (fs::exists(aff)) {
        const AffineTransform t = load_affine(aff);
        img = apply_affine(img, t, *ref);
        mask = apply_affine(mask, t, *ref);
        registered = true;
      }
    }
    auto ri = resample_isotropic(img, c.target_spacing);
    auto rm = resample_isotropic(mask, c.target_spacing);
    Volume3D vol = c.normalize ? normalize_intensity(ri.image) : ri.image;
    notes.push_back({{"id", id},
                     {"dims", {vol.dims().x, vol.dims().y, vol.dims().z}},
                     {"registered", registered},
                     {"degenerate", ri.degenerate || rm.degenerate}});
    out << id << ": " << to_string(img.dims()) << " -> " << to_string(vol.dims()) << "\n";
    subjects.push_back({id, std::move(vol), std::move(rm.image)});
  }
  ensure_dir(f.out);
  json extra = {{"preprocess", {{"target_spacing", c.target_spacing}, {"normalize", c.normalize}}},
                {"subject_notes", notes}};
  save_dataset(f.out, subjects, extra.dump());
  write_json_file(fs::path(f.out) / "config.json", to_json(c));
  return 0;
}

int cmd_phantom(const CommonFlags& f, std::optional<int> n_subjects, std::ostream& out) {
  RunConfig c = resolve(f);
  if (n_subjects) c.n_subjects = *n_subjects;
  if (c.n_subjects < 0) fail(ErrorCode::kInvalidArgument, "n-subjects must be >= 0");
  validate(c.phantom);
  const auto subjects = generate_phantom_subjects(c.phantom, c.n_subjects);
  json seeds = json::array();
  for (int i = 0; i < c.n_subjects; ++i) seeds.push_back(subject_seed(c.phantom.seed, static_cast<std::size_t>(i)));
  json extra = {{"phantom", parse_text(config_to_json(c.phantom), "phantom")}, {"seeds", seeds}};
  save_dataset(f.out, subjects, extra.dump());
  write_json_file(fs::path(f.out) / "config.json", to_json(c));
  out << "wrote " << subjects.size() << " phantom subjects to " << f.out << "\n";
  return 0;
}

void progress(std::ostream& out, const HistoryEntry& e) {
  if (!e.val_dc) return;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "iter %lld loss %.5f lr %.6g val_dc %.4f\n", static_cast<long long>(e.iteration),
                e.loss, e.lr, *e.val_dc);
  out << buf;
}

int cmd_train(const CommonFlags& f, const std::string& data, const std::string& split_path, const std::string& model,
              std::ostream& out) {
  RunConfig c = resolve(f);
  const auto subjects = load_subjects(data, c.normalize);
  const SubjectSplit split = resolve_split(split_path, {}, subjects, c);
  ensure_dir(f.out);
  const fs::path dir = f.out;
  save_split(split, dir / "split.json");
  write_json_file(dir / "config.json", to_json(c));

  const auto train = select_subjects(subjects, split.train);
  const auto val = select_subjects(subjects, split.val);
  TrainOptions opts;
  opts.log_path = dir / "train_log.jsonl";
  opts.on_iteration = [&](const HistoryEntry& e) { progress(out, e); };

  TrainResult res;
  if (model == "supervised") {
    validate(c.baseline);
    res = train_supervised_baseline(make_training_data(train, val, c.baseline.patch, c.baseline.seed), c.baseline,
                                    opts);
  } else {
    validate(c.train);
    res = train_fewshot(make_training_data(train, val, c.train.patch, c.train.seed), c.train, opts);
  }
  save_checkpoint(res.checkpoint, dir / "checkpoint.bin");
  write_json_file(dir / "summary.json", {{"model", res.checkpoint.kind},
                                         {"iterations_run", res.iterations_run},
                                         {"early_stopped", res.early_stopped},
                                         {"best_iteration", res.checkpoint.iteration},
                                         {"best_val_dc", res.checkpoint.best_val_dc}});
  out << "checkpoint " << (dir / "checkpoint.bin").string() << " (best val DC " << res.checkpoint.best_val_dc
      << " at iteration " << res.checkpoint.iteration << ")\n";
  return 0;
}

// Everything needed to run inference with a stored checkpoint.
struct Model {
  Checkpoint ckpt;
  json meta;
  PatchSpec patch;
  TilingMode tiling = TilingMode::kClamped;
  bool supervised = false;
};

Model load_model(const std::string& path, const CommonFlags& f) {
  Model m;
  m.ckpt = load_checkpoint(path);
  if (!f.config.empty()) {
    const RunConfig c = resolve(f);
    m.ckpt = load_checkpoint(path, m.ckpt.kind == "supervised" ? c.baseline.encoder : c.train.encoder);
  }
  m.supervised = m.ckpt.kind == "supervised";
  m.meta = parse_text(m.ckpt.meta, "checkpoint meta");
  try {
    merge_config(m.meta.at("patch").dump(), m.patch);
    m.tiling = tiling_mode_from_string(m.meta.at("tiling").get<std::string>());
  } catch (const json::exception& e) {
    fail(ErrorCode::kFormat, "checkpoint meta: " + std::string(e.what()));
  }
  if (!f.tiling.empty()) m.tiling = tiling_mode_from_string(f.tiling);
  if (!f.patch_size.empty()) m.patch.size = parse_dims(f.patch_size);
  return m;
}

SupportSet model_support(const Model& m, const std::vector<Subject>& support_subjects, const CommonFlags& f) {
  try {
    const int ways = f.ways.value_or(m.meta.at("ways").get<int>());
    const int shots = f.shots.value_or(m.meta.at("shots").get<int>());
    const ClassFraming framing = f.framing.empty()
                                     ? class_framing_from_string(m.meta.at("framing").get<std::string>())
                                     : class_framing_from_string(f.framing);
    const std::uint64_t support_seed = f.seed ? subject_seed(*f.seed, 0x5EED)
                                              : m.meta.at("support_seed").get<std::uint64_t>();
    const auto pool = build_patch_pool(support_subjects, m.patch, m.meta.at("pool_seed").get<std::uint64_t>());
    return make_support(pool, ways, shots, framing, support_seed);
  } catch (const json::exception& e) {
    fail(ErrorCode::kFormat, "checkpoint meta: " + std::string(e.what()));
  }
}

double cosine_scale(const Model& m) { return m.meta.value("cosine_scale", kDefaultCosineScale); }

int cmd_evaluate(const CommonFlags& f, const std::string& ckpt_path, const std::string& data,
                 const std::string& split_path, std::ostream& out) {
  const Model m = load_model(ckpt_path, f);
  const RunConfig c = resolve(f);
  const auto subjects = load_subjects(data, c.normalize);
  const SubjectSplit split = resolve_split(split_path, fs::path(ckpt_path).parent_path(), subjects, c);
  const auto test = select_subjects(subjects, split.test);
  if (test.empty()) fail(ErrorCode::kInsufficientData, "split has no test subjects");

  MetricsReport rep;
  json support_ids = json::array();
  if (m.supervised) {
    rep = evaluate_volumes_supervised(m.ckpt.params, test, m.patch.size, m.tiling, "supervised baseline");
  } else {
    const SupportSet support = model_support(m, select_subjects(subjects, split.train), f);
    for (const auto& id : support.ids) support_ids.push_back({{"subject", id.subject}, {"origin", {id.origin.x, id.origin.y, id.origin.z}}});
    char label[64];
    std::snprintf(label, sizeof(label), "%zu-way %zu-shot", support.classes.size(), support.classes.front().size());
    rep = evaluate_volumes(m.ckpt.params, support, test, m.patch.size, m.tiling, cosine_scale(m), label);
  }
  ensure_dir(f.out);
  const fs::path dir = f.out;
  json j = report_json(rep);
  j["support"] = support_ids;
  j["tiling"] = to_string(m.tiling);
  j["checkpoint"] = ckpt_path;
  write_json_file(dir / "report.json", j);
  const std::string table = format_table({rep});
  write_text_file(dir / "report.txt", table);
  write_json_file(dir / "config.json", to_json(c));
  out << table;
  return 0;
}

int cmd_crossval(const CommonFlags& f, const std::string& data, std::optional<int> k, std::ostream& out) {
  RunConfig c = resolve(f);
  if (k) c.folds = *k;
  validate(c.train);
  const auto subjects = load_subjects(data, c.normalize);
  const auto folds = make_folds(subject_ids(subjects), c.folds, c.seed);
  ensure_dir(f.out);
  const fs::path dir = f.out;
  save_folds(folds, dir / "folds.json");
  write_json_file(dir / "config.json", to_json(c));

  const CrossValResult res = cross_validate(subjects, folds, c.train, c.val_subjects);
  for (std::size_t i = 0; i < res.folds.size(); ++i) {
    write_json_file(dir / ("fold_" + std::to_string(i) + ".json"), report_json(res.folds[i]));
  }
  json agg = report_json(res.aggregate);
  write_json_file(dir / "aggregate.json", agg);
  std::vector<MetricsReport> rows = res.folds;
  rows.push_back(res.aggregate);
  const std::string table = format_table(rows) + "DC " + format_pm(res.aggregate.dice) + "\n";
  write_text_file(dir / "report.txt", table);
  out << table;
  return 0;
}

struct SegmentFlags {
  std::string checkpoint;
  std::string volume;
  std::string support_data;
  std::string split;
  std::string gt;
  std::string format = ".nii.gz";
};

std::string stem_of(const fs::path& p) {
  std::string name = p.filename().string();
  for (const char* ext : {".nii.gz", ".nii", ".raw"}) {
    const std::string e(ext);
    if (name.size() > e.size() && name.ends_with(e)) return name.substr(0, name.size() - e.size());
  }
  return p.stem().string();
}

int cmd_segment(const CommonFlags& f, const SegmentFlags& sf, std::ostream& out) {
  const Model m = load_model(sf.checkpoint, f);
  const RunConfig c = resolve(f);
  Volume3D vol = load_volume(sf.volume);
  if (c.normalize) vol = normalize_intensity(vol);

  LabelMask pred;
  if (m.supervised) {
    pred = segment_volume_supervised(m.ckpt.params, vol, m.patch.size, m.tiling);
  } else {
    if (sf.support_data.empty()) fail(ErrorCode::kInvalidArgument, "few-shot segmentation needs --support-data");
    const auto subjects = load_subjects(sf.support_data, c.normalize);
    const SubjectSplit split = resolve_split(sf.split, fs::path(sf.checkpoint).parent_path(), subjects, c);
    const SupportSet support = model_support(m, select_subjects(subjects, split.train), f);
    pred = segment_volume(m.ckpt.params, support, vol, m.patch.size, m.tiling, cosine_scale(m));
  }
  ensure_dir(f.out);
  const fs::path dir = f.out;
  const std::string stem = stem_of(sf.volume);
  save_volume(pred, dir / (stem + "_pred" + sf.format));
  json summary = {{"volume", sf.volume},
                  {"dims", {pred.dims().x, pred.dims().y, pred.dims().z}},
                  {"foreground_voxels", count_foreground(pred)},
                  {"tiling", to_string(m.tiling)}};
  if (!sf.gt.empty()) {
    const LabelMask gt = load_mask(sf.gt);
    if (gt.dims() != pred.dims()) fail(ErrorCode::kInvalidArgument, "ground truth dims differ from the volume");
    // Overlap coding: 1 = ground truth and prediction, 2 = ground truth only, 3 = prediction only.
    LabelMask overlap(pred.dims(), pred.spacing());
    for (std::size_t i = 0; i < overlap.size(); ++i) {
      const bool g = gt[i] != 0, p = pred[i] != 0;
      overlap[i] = static_cast<std::uint8_t>(g && p ? 1 : g ? 2 : p ? 3 : 0);
    }
    save_volume(overlap, dir / (stem + "_overlap" + sf.format));
    const CaseMetrics cm = evaluate_case(stem, binarize(pred), binarize(gt));
    summary["metrics"] = {{"dice", cm.dice}, {"sensitivity", cm.sensitivity}, {"precision", cm.precision},
                          {"iou", cm.iou}};
    summary["overlap_codes"] = {{"1", "ground truth and prediction"}, {"2", "ground truth only"},
                                {"3", "prediction only"}};
  }
  write_json_file(dir / "segment.json", summary);
  out << "wrote " << (dir / (stem + "_pred" + sf.format)).string() << "\n";
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"protoseg: few-shot volumetric vessel segmentation"};
  app.require_subcommand(1);

  CommonFlags f;
  PreprocessFlags pf;
  SegmentFlags sf;
  std::optional<int> n_subjects, k;
  std::string data, split, model = "fewshot", checkpoint;

  auto* pre = app.add_subcommand("preprocess", "Register (optional), resample and normalise a dataset");
  add_common(pre, f, false);
  pre->add_option("--in", pf.in, "Input dataset directory")->required();
  pre->add_option("--target-spacing", pf.target_spacing, "Isotropic spacing in mm");
  pre->add_option("--affine-dir", pf.affine_dir, "Directory of <id>.txt affine files");

  auto* ph = app.add_subcommand("phantom", "Generate a synthetic vessel dataset");
  add_common(ph, f, false);
  ph->add_option("--n-subjects", n_subjects, "Number of phantom subjects");

  auto* tr = app.add_subcommand("train", "Train a few-shot model or the supervised baseline");
  add_common(tr, f, true);
  tr->add_option("--data", data, "Dataset directory")->required();
  tr->add_option("--split", split, "Split file (default: seeded split of the dataset)");
  tr->add_option("--model", model, "Model kind")->check(CLI::IsMember({"fewshot", "supervised"}));

  auto* ev = app.add_subcommand("evaluate", "Volume-level metrics on the test subjects");
  add_common(ev, f, true);
  ev->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  ev->add_option("--data", data, "Dataset directory")->required();
  ev->add_option("--split", split, "Split file (default: split.json beside the checkpoint)");

  auto* cv = app.add_subcommand("crossval", "k-fold cross-validation");
  add_common(cv, f, true);
  cv->add_option("--data", data, "Dataset directory")->required();
  cv->add_option("--k", k, "Number of folds");

  auto* sg = app.add_subcommand("segment", "Segment one volume");
  add_common(sg, f, true);
  sg->add_option("--checkpoint", sf.checkpoint, "Checkpoint file")->required();
  sg->add_option("--volume", sf.volume, "Volume to segment")->required();
  sg->add_option("--support-data", sf.support_data, "Dataset providing support patches");
  sg->add_option("--split", sf.split, "Split file selecting support subjects");
  sg->add_option("--gt", sf.gt, "Ground-truth mask for the overlap export");
  sg->add_option("--format", sf.format, "Output extension")->check(CLI::IsMember({".nii", ".nii.gz", ".raw"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << "run with --help for usage\n";
    return 2;
  }

  try {
    if (pre->parsed()) return cmd_preprocess(f, pf, out);
    if (ph->parsed()) return cmd_phantom(f, n_subjects, out);
    if (tr->parsed()) return cmd_train(f, data, split, model, out);
    if (ev->parsed()) return cmd_evaluate(f, checkpoint, data, split, out);
    if (cv->parsed()) return cmd_crossval(f, data, k, out);
    if (sg->parsed()) return cmd_segment(f, sf, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace protoseg::cli
