// Acceptance suite: one PASS/FAIL line per criterion. Exit status is nonzero if any
// criterion fails. `--only 1,4` restricts the run to the listed criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "protoseg/dataset.hpp"
#include "protoseg/encoder.hpp"
#include "protoseg/loss_metrics.hpp"
#include "protoseg/patching.hpp"
#include "protoseg/phantom.hpp"
#include "protoseg/prototype_head.hpp"
#include "protoseg/training.hpp"

using namespace protoseg;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

// ---------------------------------------------------------------------------
// 1. Prototype pooling against a direct triple loop.

std::vector<double> brute_pool(const std::vector<FeatureMap>& f, const std::vector<LabelMask>& m, int cls,
                               bool complement) {
  const int dim = f[0].channels();
  std::vector<double> acc(static_cast<std::size_t>(dim), 0.0);
  int used = 0;
  for (std::size_t n = 0; n < f.size(); ++n) {
    const Dims d = m[n].dims();
    std::vector<double> sum(static_cast<std::size_t>(dim), 0.0);
    double count = 0.0;
    for (std::int64_t z = 0; z < d.z; ++z)
      for (std::int64_t y = 0; y < d.y; ++y)
        for (std::int64_t x = 0; x < d.x; ++x) {
          const bool in = (m[n](x, y, z) == cls) != complement;
          if (!in) continue;
          count += 1.0;
          const auto v = static_cast<std::size_t>(x + d.x * (y + d.y * z));
          for (int c = 0; c < dim; ++c) sum[static_cast<std::size_t>(c)] += f[n](c, v);
        }
    if (count == 0.0) continue;
    ++used;
    for (int c = 0; c < dim; ++c) acc[static_cast<std::size_t>(c)] += sum[static_cast<std::size_t>(c)] / count;
  }
  if (used == 0) return {};
  for (double& a : acc) a /= used;
  return acc;
}

Outcome criterion1() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int> side(1, 4), dimd(1, 4), shots(1, 3), label(0, 2);
  std::normal_distribution<double> g(0.0, 1.0);
  int instances = 0, checked = 0, errors_expected = 0;
  double max_err = 0.0;
  bool ok = true;
  while (instances < 250) {
    const Dims d{side(rng), side(rng), side(rng)};
    const int dim = dimd(rng), n = shots(rng);
    std::vector<FeatureMap> f;
    std::vector<LabelMask> m;
    for (int i = 0; i < n; ++i) {
      FeatureMap fm(dim, d);
      for (double& v : fm.data()) v = g(rng);
      LabelMask lm(d);
      for (auto& v : lm.data()) v = static_cast<std::uint8_t>(label(rng));
      f.push_back(std::move(fm));
      m.push_back(std::move(lm));
    }
    ++instances;
    for (int cls = 1; cls <= 2; ++cls) {
      for (bool complement : {false, true}) {
        const auto expect = brute_pool(f, m, cls, complement);
        try {
          const Prototype p = complement ? background_prototype(f, m, cls) : masked_average_pool(f, m, cls);
          if (expect.empty() || p.vector.size() != expect.size()) {
            ok = false;
            continue;
          }
          for (std::size_t c = 0; c < expect.size(); ++c) max_err = std::max(max_err, std::abs(p.vector[c] - expect[c]));
          ++checked;
        } catch (const Error&) {
          if (!expect.empty()) ok = false;
          ++errors_expected;
        }
      }
    }
  }
  const double secs = seconds_since(t0);
  ok = ok && max_err <= 1e-6 && checked >= 200 && secs < 5.0;
  return {ok, fmt("%d instances, %d pooled prototypes compared, %d empty-class rejections, max abs err %.2e, %.2fs",
                  instances, checked, errors_expected, max_err, secs)};
}

// ---------------------------------------------------------------------------
// 2. Hybrid loss gradient through a tiny encoder vs central differences.

Outcome criterion2() {
  const auto t0 = Clock::now();
  double worst_norm_err = 0.0, worst_elem_err = 0.0;
  std::size_t n_params = 0;
  const int seeds = 20;
  for (int s = 0; s < seeds; ++s) {
    EncoderConfig ec;
    ec.levels = 1;
    ec.base_channels = 4;
    ec.feature_dim = 2;
    ec.seed = static_cast<std::uint64_t>(s);
    Parameters params = init_params(ec);
    n_params = params.count();
    // Perturb the normalisation affines and biases away from their defaults.
    std::mt19937_64 rng(1000 + static_cast<std::uint64_t>(s));
    std::normal_distribution<double> g(0.0, 0.3);
    for (auto& t : params.tensors)
      if (t.name.find("weight") == std::string::npos)
        for (double& v : t.values) v += g(rng);

    const Dims d{4, 4, 2};
    auto random_patch = [&](int label) {
      LabeledPatch p{Volume3D(d), LabelMask(d)};
      std::normal_distribution<double> n(0.0, 1.0);
      for (float& v : p.image.data()) v = static_cast<float>(n(rng));
      std::bernoulli_distribution fg(0.4);
      for (auto& v : p.mask.data()) v = static_cast<std::uint8_t>(fg(rng) ? label : 0);
      p.mask[0] = static_cast<std::uint8_t>(label);
      p.mask[1] = 0;
      return p;
    };
    EpisodeBatch batch;
    batch.support = {{random_patch(1)}};
    batch.query = {random_patch(1)};

    const EpisodeLoss analytic = episode_loss_and_gradient(params, batch);
    Parameters numeric = params.zeros_like();
    const double h = 1e-4;
    for (std::size_t ti = 0; ti < params.tensors.size(); ++ti) {
      for (std::size_t j = 0; j < params.tensors[ti].values.size(); ++j) {
        Parameters p = params;
        p.tensors[ti].values[j] += h;
        const double up = episode_loss(p, batch);
        p.tensors[ti].values[j] -= 2 * h;
        const double down = episode_loss(p, batch);
        numeric.tensors[ti].values[j] = (up - down) / (2 * h);
      }
    }
    Parameters diff = analytic.grad;
    diff.add_scaled(numeric, -1.0);
    // Same 1e-6 floor as the per-element check: a saturated episode (probability under
    // the CE clamp everywhere) has a gradient of ~1e-10 where differencing noise dominates.
    const double denom =
        std::max({std::sqrt(analytic.grad.squared_norm()), std::sqrt(numeric.squared_norm()), 1e-6});
    worst_norm_err = std::max(worst_norm_err, std::sqrt(diff.squared_norm()) / denom);
    for (std::size_t ti = 0; ti < params.tensors.size(); ++ti) {
      for (std::size_t j = 0; j < params.tensors[ti].values.size(); ++j) {
        const double a = analytic.grad.tensors[ti].values[j], n = numeric.tensors[ti].values[j];
        worst_elem_err = std::max(worst_elem_err, std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6}));
      }
    }
  }
  const double secs = seconds_since(t0);
  const bool ok = worst_norm_err <= 1e-3 && worst_elem_err <= 1e-3 && n_params <= 5000 && secs < 60.0;
  return {ok, fmt("%d seeds, %zu params, worst rel err %.2e (gradient norm), %.2e (per element), floor 1e-6, %.1fs",
                  seeds, n_params, worst_norm_err, worst_elem_err, secs)};
}

// ---------------------------------------------------------------------------
// 3. Metric identities and confusion-matrix oracle.

Outcome criterion3() {
  std::mt19937_64 rng(303);
  std::uniform_int_distribution<int> side(1, 6);
  std::uniform_real_distribution<double> density(0.0, 1.0), u(0.0, 1.0);
  double worst_identity = 0.0, worst_oracle = 0.0;
  const int pairs = 1500;
  for (int i = 0; i < pairs; ++i) {
    const Dims d{side(rng), side(rng), side(rng)};
    const double pd = i % 10 == 0 ? 0.0 : density(rng), gd = i % 15 == 0 ? 0.0 : density(rng);
    LabelMask pred(d), gt(d);
    for (auto& v : pred.data()) v = u(rng) < pd ? 1 : 0;
    for (auto& v : gt.data()) v = u(rng) < gd ? 1 : 0;
    const double dc = dice_coefficient(pred, gt), j = iou(pred, gt);
    worst_identity = std::max(worst_identity, std::abs(dc - 2 * j / (1 + j)));

    double tp = 0, fp = 0, fn = 0;
    for (std::size_t k = 0; k < pred.size(); ++k) {
      tp += (pred[k] && gt[k]);
      fp += (pred[k] && !gt[k]);
      fn += (!pred[k] && gt[k]);
    }
    auto r = [](double a, double b) { return b == 0 ? 1.0 : a / b; };
    worst_oracle = std::max({worst_oracle, std::abs(dc - r(2 * tp, 2 * tp + fp + fn)),
                             std::abs(sensitivity(pred, gt) - r(tp, tp + fn)),
                             std::abs(precision(pred, gt) - r(tp, tp + fp)), std::abs(j - r(tp, tp + fp + fn))});
  }
  const bool ok = worst_identity <= 1e-12 && worst_oracle <= 1e-12;
  return {ok, fmt("%d random mask pairs, max |DC - 2IoU/(1+IoU)| %.1e, max oracle deviation %.1e", pairs,
                  worst_identity, worst_oracle)};
}

// ---------------------------------------------------------------------------
// 4. Tiling round trip, clamped coverage, drop-partial count.

Outcome criterion4() {
  std::mt19937_64 rng(404);
  std::uniform_int_distribution<int> psz(1, 5), mult(1, 4), extra(0, 6);
  std::bernoulli_distribution bit(0.3);
  int exact = 0, covered = 0;
  const int masks = 120;
  for (int i = 0; i < masks; ++i) {
    const Dims p{psz(rng), psz(rng), psz(rng)};
    const Dims d{p.x * mult(rng), p.y * mult(rng), p.z * mult(rng)};
    LabelMask m(d);
    for (auto& v : m.data()) v = bit(rng) ? 1 : 0;
    bool all_modes = true;
    for (TilingMode mode : {TilingMode::kClamped, TilingMode::kDropPartial}) {
      const TilingPlan plan = tile_non_overlapping(d, p, mode);
      std::vector<LabelMask> parts;
      for (const auto& t : plan.origins) parts.push_back(crop(m, t, p));
      all_modes = all_modes && reconstruct(plan, parts) == m;
    }
    exact += all_modes;

    // Arbitrary dims: every voxel covered by at least one clamped tile.
    const Dims e{p.x + extra(rng), p.y + extra(rng), p.z + extra(rng)};
    const TilingPlan plan = tile_non_overlapping(e, p, TilingMode::kClamped);
    std::vector<int> hits(static_cast<std::size_t>(e.product()), 0);
    for (const auto& o : plan.origins)
      for (std::int64_t z = o.z; z < o.z + p.z; ++z)
        for (std::int64_t y = o.y; y < o.y + p.y; ++y)
          for (std::int64_t x = o.x; x < o.x + p.x; ++x) ++hits[static_cast<std::size_t>(x + e.x * (y + e.y * z))];
    const auto ceil_div = [](std::int64_t a, std::int64_t b) { return (a + b - 1) / b; };
    const bool count_ok = static_cast<std::int64_t>(plan.size()) ==
                          ceil_div(e.x, p.x) * ceil_div(e.y, p.y) * ceil_div(e.z, p.z);
    covered += count_ok && std::all_of(hits.begin(), hits.end(), [](int h) { return h >= 1; });
  }
  const std::size_t n54 = tile_non_overlapping({230, 230, 102}, {64, 64, 16}, TilingMode::kDropPartial).size();
  const std::size_t n112 = tile_non_overlapping({230, 230, 102}, {64, 64, 16}, TilingMode::kClamped).size();
  const bool ok = exact == masks && covered == masks && n54 == 54;
  return {ok, fmt("%d/%d exact round trips (both modes), %d/%d clamped plans cover every voxel, "
                  "230x230x102 / 64x64x16: drop-partial %zu patches, clamped %zu",
                  exact, masks, covered, masks, n54, n112)};
}

// ---------------------------------------------------------------------------
// 5. Cosine scale invariance and softmax shift invariance.

Outcome criterion5() {
  std::mt19937_64 rng(505);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> lam(0.01, 100.0), shift(-50.0, 50.0);
  double worst_scale = 0.0, worst_shift = 0.0;
  bool labels_same = true;
  int decisive = 0, near_ties = 0;
  const int instances = 200;
  for (int i = 0; i < instances; ++i) {
    const Dims d{3, 4, 2};
    const int dim = 1 + i % 4;
    FeatureMap q(dim, d);
    for (double& v : q.data()) v = g(rng);
    std::vector<Prototype> protos;
    for (int k = 0; k < 3; ++k) {
      Prototype p{k, std::vector<double>(static_cast<std::size_t>(dim)), 1};
      for (double& v : p.vector) v = g(rng);
      protos.push_back(p);
    }
    const SimilarityMap base = similarity(q, protos);
    FeatureMap qs = q;
    const double l = lam(rng);
    for (double& v : qs.data()) v *= l;
    const SimilarityMap scaled = similarity(qs, protos);
    for (std::size_t k = 0; k < base.scores.size(); ++k) {
      worst_scale = std::max(worst_scale, std::abs(base.scores.data()[k] - scaled.scores.data()[k]));
    }

    SimilarityMap shifted = base;
    for (std::size_t v = 0; v < base.scores.voxels(); ++v) {
      const double s = shift(rng);
      for (int k = 0; k < base.scores.channels(); ++k) shifted.scores(k, v) += s;
    }
    const Prediction a = predict(base), b = predict(shifted);
    for (std::size_t k = 0; k < a.probabilities.size(); ++k) {
      worst_shift = std::max(worst_shift, std::abs(a.probabilities.data()[k] - b.probabilities.data()[k]));
    }
    // Hard labels are compared where the top two scores are separated; exact or
    // sub-ulp ties can legitimately resolve differently after rounding.
    for (std::size_t v = 0; v < base.scores.voxels(); ++v) {
      std::vector<double> col;
      for (int k = 0; k < base.scores.channels(); ++k) col.push_back(base.scores(k, v));
      std::sort(col.rbegin(), col.rend());
      if (col.size() > 1 && col[0] - col[1] < 1e-9) {
        ++near_ties;
        continue;
      }
      ++decisive;
      labels_same = labels_same && a.hard_mask.data()[v] == b.hard_mask.data()[v];
    }
  }
  const bool ok = worst_scale <= 1e-6 && worst_shift <= 1e-6 && labels_same;
  return {ok, fmt("%d instances, max similarity change under feature scaling %.1e, "
                  "max probability change under per-voxel shift %.1e, hard labels %s on %d decisive voxels "
                  "(%d near-ties skipped)",
                  instances, worst_scale, worst_shift, labels_same ? "unchanged" : "CHANGED", decisive, near_ties)};
}

// ---------------------------------------------------------------------------
// Shared phantom benchmark for 6, 7 and 9.

struct Bench {
  std::vector<Subject> train, val, test;
};

Bench phantom_bench(std::uint64_t seed) {
  PhantomConfig pc;
  pc.seed = seed;
  auto all = generate_phantom_subjects(pc, 12);
  normalize_subjects(all);
  Bench b;
  b.train.assign(all.begin(), all.begin() + 8);
  b.val.assign(all.begin() + 8, all.begin() + 10);
  b.test.assign(all.begin() + 10, all.end());
  return b;
}

TrainConfig bench_config(int ways, int shots, ClassFraming framing, std::int64_t iterations, std::uint64_t seed) {
  TrainConfig c;
  c.patch.size = {16, 16, 8};
  c.episode.ways = ways;
  c.episode.shots = shots;
  c.episode.queries = 1;
  c.episode.framing = framing;
  c.max_iterations = iterations;
  c.val_interval = 100;
  c.early_stop_patience = 500;
  c.seed = seed;
  c.encoder.seed = seed;
  return c;
}

struct FewShotRun {
  MetricsReport trained;
  MetricsReport untrained;
  TrainResult result;
};

FewShotRun run_fewshot(const std::vector<Subject>& train, const std::vector<Subject>& val,
                       const std::vector<Subject>& test, const TrainConfig& cfg) {
  const TrainingData data = make_training_data(train, val, cfg.patch, cfg.seed);
  FewShotRun r;
  r.result = train_fewshot(data, cfg);
  const SupportSet support = default_support(data.train, cfg);
  r.trained = evaluate_volumes(r.result.checkpoint.params, support, test, cfg.patch.size, cfg.tiling,
                               cfg.head.cosine_scale, "trained");
  r.untrained = evaluate_volumes(init_params(cfg.encoder), support, test, cfg.patch.size, cfg.tiling,
                                 cfg.head.cosine_scale, "untrained");
  return r;
}

constexpr std::int64_t kBenchIterations = 2000;

Outcome criterion6(std::string* report_out) {
  const auto t0 = Clock::now();
  const Bench b = phantom_bench(6006);
  const TrainConfig cfg = bench_config(1, 5, ClassFraming::kVesselAsClass, kBenchIterations, 6);
  const FewShotRun r = run_fewshot(b.train, b.val, b.test, cfg);
  std::vector<CaseMetrics> bg;
  for (const auto& s : b.test) bg.push_back(evaluate_case(s.id, LabelMask(s.mask.dims()), s.mask));
  const double bg_dc = aggregate(bg).dice.mean;
  if (report_out) *report_out = report_to_json(r.trained);
  const double secs = seconds_since(t0);
  const double dc = r.trained.dice.mean, un = r.untrained.dice.mean;
  const bool ok = dc >= 0.60 && dc > bg_dc && dc - un >= 0.3 && secs < 15 * 60;
  return {ok, fmt("test DC %s (trained, %lld iterations, best val DC %.3f at %lld) vs all-background %.2f, "
                  "untrained encoder %s; margin %.3f; %.0fs",
                  format_pm(r.trained.dice, 3).c_str(), static_cast<long long>(r.result.iterations_run),
                  r.result.checkpoint.best_val_dc, static_cast<long long>(r.result.checkpoint.iteration), bg_dc,
                  format_pm(r.untrained.dice, 3).c_str(), dc - un, secs)};
}

// Three independent benchmark replicates (fresh phantoms and training seeds); the
// ranking is taken on the mean over replicates of the per-run mean test DC.
constexpr std::int64_t kRankingIterations = 1000;

Outcome criterion7() {
  const auto t0 = Clock::now();
  double sum1 = 0.0, sum3 = 0.0;
  std::string runs;
  for (int r = 0; r < 3; ++r) {
    const Bench b = phantom_bench(7001 + static_cast<std::uint64_t>(r));
    const std::uint64_t seed = 71 + static_cast<std::uint64_t>(r);
    const FewShotRun one = run_fewshot(
        b.train, b.val, b.test, bench_config(1, 5, ClassFraming::kSubjectAsClass, kRankingIterations, seed));
    const FewShotRun three = run_fewshot(
        b.train, b.val, b.test, bench_config(3, 5, ClassFraming::kSubjectAsClass, kRankingIterations, seed));
    sum1 += one.trained.dice.mean;
    sum3 += three.trained.dice.mean;
    runs += fmt(" [replicate %d: 1-way %.3f, 3-way %.3f]", r, one.trained.dice.mean, three.trained.dice.mean);
  }
  const double d1 = sum1 / 3, d3 = sum3 / 3;
  const bool ok = d3 <= d1;
  return {ok, fmt("subject-as-class mean test DC over 3 replicates: 1-way 5-shot %.3f, 3-way 5-shot %.3f;%s; %.0fs", d1,
                  d3, runs.c_str(), seconds_since(t0))};
}

Outcome criterion8() {
  const auto t0 = Clock::now();
  const Bench b = phantom_bench(8008);
  const std::vector<Subject> one_subject(b.train.begin(), b.train.begin() + 1);
  std::string per_seed;
  double fs_sum = 0.0, bl_sum = 0.0;
  int wins = 0;
  for (std::uint64_t seed : {81, 82, 83}) {
    const TrainConfig fc = bench_config(1, 5, ClassFraming::kVesselAsClass, 500, seed);
    const FewShotRun fs = run_fewshot(one_subject, b.val, b.test, fc);

    BaselineConfig bc;
    bc.patch.size = {16, 16, 8};
    bc.max_iterations = 500;
    bc.val_interval = 100;
    bc.early_stop_patience = 500;
    bc.seed = seed;
    bc.encoder.seed = seed;
    const TrainingData data = make_training_data(one_subject, b.val, bc.patch, seed);
    const TrainResult br = train_supervised_baseline(data, bc);
    const MetricsReport bl =
        evaluate_volumes_supervised(br.checkpoint.params, b.test, bc.patch.size, bc.tiling, "baseline");
    fs_sum += fs.trained.dice.mean;
    bl_sum += bl.dice.mean;
    wins += fs.trained.dice.mean > bl.dice.mean;
    per_seed += fmt(" [seed %llu: few-shot %.3f, baseline %.3f]", static_cast<unsigned long long>(seed),
                    fs.trained.dice.mean, bl.dice.mean);
  }
  const bool ok = wins == 3;
  return {ok, fmt("one labelled subject; mean test DC few-shot %.3f vs supervised baseline %.3f; few-shot wins %d/3;%s; "
                  "%.0fs",
                  fs_sum / 3, bl_sum / 3, wins, per_seed.c_str(), seconds_since(t0))};
}

Outcome criterion9(const std::string& first_report) {
  const auto t0 = Clock::now();
  std::string a = first_report, b;
  if (a.empty()) criterion6(&a);
  criterion6(&b);
  const bool ok = !a.empty() && a == b;
  return {ok, fmt("repeated end-to-end phantom run: metric reports %s (%zu bytes); %.0fs",
                  ok ? "identical" : "DIFFER", a.size(), seconds_since(t0))};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      std::string tok;
      while (std::getline(ss, tok, ',')) only.insert(std::stoi(tok));
    }
  }
  auto wanted = [&](int c) { return only.empty() || only.count(c) > 0; };

  const char* names[] = {"",
                         "prototype pooling matches brute force",
                         "end-to-end gradient check",
                         "metric identities",
                         "tiling round trip and counts",
                         "cosine and softmax invariances",
                         "phantom few-shot end to end",
                         "3-way vs 1-way ranking",
                         "supervised baseline ranking",
                         "determinism"};
  int failed = 0;
  std::string report6;
  for (int c = 1; c <= 9; ++c) {
    if (!wanted(c)) continue;
    Outcome o;
    try {
      switch (c) {
        case 1: o = criterion1(); break;
        case 2: o = criterion2(); break;
        case 3: o = criterion3(); break;
        case 4: o = criterion4(); break;
        case 5: o = criterion5(); break;
        case 6: o = criterion6(&report6); break;
        case 7: o = criterion7(); break;
        case 8: o = criterion8(); break;
        case 9: o = criterion9(report6); break;
      }
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("criterion %d %s: %s: %s\n", c, o.pass ? "PASS" : "FAIL", names[c], o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
