#include "protoseg/prototype_head.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"

namespace protoseg {

namespace {

void check_support(std::span<const FeatureMap> features, std::span<const LabelMask> masks) {
  if (features.empty() || features.size() != masks.size()) {
    fail(ErrorCode::kInvalidArgument, "support features and masks must be non-empty and of equal length");
  }
  const int d = features[0].channels();
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (features[i].channels() != d) fail(ErrorCode::kInvalidArgument, "support features differ in channel count");
    if (features[i].dims() != masks[i].dims()) {
      fail(ErrorCode::kInvalidArgument, "feature map " + to_string(features[i].dims()) +
                                            " and mask " + to_string(masks[i].dims()) + " are not aligned");
    }
  }
}

bool selected(std::uint8_t label, int class_id, bool complement) {
  return complement ? label != class_id : label == class_id;
}

Prototype pool(std::span<const FeatureMap> features, std::span<const LabelMask> masks, int class_id,
               bool complement) {
  check_support(features, masks);
  const int d = features[0].channels();
  Prototype proto{complement ? 0 : class_id, std::vector<double>(static_cast<std::size_t>(d), 0.0), 0};
  std::vector<double> inner(static_cast<std::size_t>(d));
  for (std::size_t i = 0; i < features.size(); ++i) {
    const auto m = masks[i].data();
    std::size_t n = 0;
    std::fill(inner.begin(), inner.end(), 0.0);
    for (std::size_t v = 0; v < m.size(); ++v) {
      if (!selected(m[v], class_id, complement)) continue;
      ++n;
      for (int c = 0; c < d; ++c) inner[static_cast<std::size_t>(c)] += features[i](c, v);
    }
    if (n == 0) continue;
    for (int c = 0; c < d; ++c) proto.vector[static_cast<std::size_t>(c)] += inner[static_cast<std::size_t>(c)] / static_cast<double>(n);
    ++proto.support_count;
  }
  if (proto.support_count == 0) {
    fail(ErrorCode::kInsufficientData, std::string(complement ? "no background" : "no class") +
                                           " voxels in any support mask for class " + std::to_string(class_id));
  }
  for (double& x : proto.vector) x /= proto.support_count;
  return proto;
}

}  // namespace

Prototype masked_average_pool(std::span<const FeatureMap> features, std::span<const LabelMask> masks,
                              int class_id) {
  return pool(features, masks, class_id, false);
}

Prototype background_prototype(std::span<const FeatureMap> features, std::span<const LabelMask> masks,
                               int class_id) {
  return pool(features, masks, class_id, true);
}

void pool_backward(std::span<const LabelMask> masks, int class_id, bool complement,
                   std::span<const double> dproto, std::span<FeatureMap> dfeatures) {
  if (masks.size() != dfeatures.size()) fail(ErrorCode::kInvalidArgument, "pool_backward: length mismatch");
  std::vector<std::size_t> counts(masks.size(), 0);
  int contributing = 0;
  for (std::size_t i = 0; i < masks.size(); ++i) {
    for (std::uint8_t l : masks[i].data()) counts[i] += selected(l, class_id, complement) ? 1 : 0;
    contributing += counts[i] > 0 ? 1 : 0;
  }
  if (contributing == 0) return;
  for (std::size_t i = 0; i < masks.size(); ++i) {
    if (counts[i] == 0) continue;
    const double w = 1.0 / (static_cast<double>(contributing) * static_cast<double>(counts[i]));
    const auto m = masks[i].data();
    FeatureMap& g = dfeatures[i];
    for (std::size_t v = 0; v < m.size(); ++v) {
      if (!selected(m[v], class_id, complement)) continue;
      for (int c = 0; c < g.channels(); ++c) g(c, v) += w * dproto[static_cast<std::size_t>(c)];
    }
  }
}

SimilarityMap similarity(const FeatureMap& query, std::span<const Prototype> prototypes, double alpha) {
  if (!(alpha > 0.0)) fail(ErrorCode::kInvalidArgument, "cosine scale must be positive");
  if (prototypes.empty()) fail(ErrorCode::kInvalidArgument, "no prototypes");
  const int d = query.channels();
  std::vector<double> pnorm;
  for (const auto& p : prototypes) {
    if (static_cast<int>(p.vector.size()) != d) {
      fail(ErrorCode::kInvalidArgument, "prototype dimension differs from feature channels");
    }
    double s = 0.0;
    for (double x : p.vector) s += x * x;
    if (!(s > 0.0) || !std::isfinite(s)) fail(ErrorCode::kInvalidArgument, "zero-norm or non-finite prototype");
    pnorm.push_back(std::sqrt(s));
  }
  const auto k = static_cast<int>(prototypes.size());
  SimilarityMap out{Tensor(k, query.dims()), {}, alpha};
  for (const auto& p : prototypes) out.class_ids.push_back(p.class_id);
  const std::size_t nv = query.voxels();
  for (std::size_t v = 0; v < nv; ++v) {
    double fn = 0.0;
    for (int c = 0; c < d; ++c) fn += query(c, v) * query(c, v);
    fn = std::sqrt(fn);
    for (int j = 0; j < k; ++j) {
      const auto& pv = prototypes[static_cast<std::size_t>(j)].vector;
      double dot = 0.0;
      for (int c = 0; c < d; ++c) dot += query(c, v) * pv[static_cast<std::size_t>(c)];
      out.scores(j, v) = alpha * dot / std::max(fn * pnorm[static_cast<std::size_t>(j)], kCosineEps);
    }
  }
  return out;
}

SimilarityGradient similarity_backward(const FeatureMap& query, std::span<const Prototype> prototypes,
                                       double alpha, const Tensor& dscores) {
  const int d = query.channels();
  const auto k = static_cast<int>(prototypes.size());
  if (dscores.channels() != k || dscores.dims() != query.dims()) {
    fail(ErrorCode::kInvalidArgument, "similarity_backward: gradient shape mismatch");
  }
  SimilarityGradient g{FeatureMap(d, query.dims()), {}};
  std::vector<double> pnorm;
  for (const auto& p : prototypes) {
    double s = 0.0;
    for (double x : p.vector) s += x * x;
    pnorm.push_back(std::sqrt(s));
    g.prototypes.emplace_back(static_cast<std::size_t>(d), 0.0);
  }
  std::vector<double> f(static_cast<std::size_t>(d));
  for (std::size_t v = 0; v < query.voxels(); ++v) {
    double fn2 = 0.0;
    for (int c = 0; c < d; ++c) {
      f[static_cast<std::size_t>(c)] = query(c, v);
      fn2 += f[static_cast<std::size_t>(c)] * f[static_cast<std::size_t>(c)];
    }
    const double fn = std::sqrt(fn2);
    for (int j = 0; j < k; ++j) {
      const double gs = dscores(j, v);
      if (gs == 0.0) continue;
      const auto& p = prototypes[static_cast<std::size_t>(j)].vector;
      auto& dp = g.prototypes[static_cast<std::size_t>(j)];
      const double pn = pnorm[static_cast<std::size_t>(j)];
      double dot = 0.0;
      for (int c = 0; c < d; ++c) dot += f[static_cast<std::size_t>(c)] * p[static_cast<std::size_t>(c)];
      const double denom = fn * pn;
      if (denom <= kCosineEps) {
        // Guarded branch: score = alpha * dot / eps.
        const double s = alpha * gs / kCosineEps;
        for (int c = 0; c < d; ++c) {
          g.query(c, v) += s * p[static_cast<std::size_t>(c)];
          dp[static_cast<std::size_t>(c)] += s * f[static_cast<std::size_t>(c)];
        }
        continue;
      }
      const double cosv = dot / denom;
      const double s = alpha * gs;
      for (int c = 0; c < d; ++c) {
        const auto ci = static_cast<std::size_t>(c);
        g.query(c, v) += s * (p[ci] / denom - cosv * f[ci] / fn2);
        dp[ci] += s * (f[ci] / denom - cosv * p[ci] / (pn * pn));
      }
    }
  }
  return g;
}

Tensor softmax_channels(const Tensor& logits) {
  Tensor out(logits.channels(), logits.dims());
  const int k = logits.channels();
  for (std::size_t v = 0; v < logits.voxels(); ++v) {
    double mx = logits(0, v);
    for (int j = 1; j < k; ++j) mx = std::max(mx, logits(j, v));
    double sum = 0.0;
    for (int j = 0; j < k; ++j) {
      const double e = std::exp(logits(j, v) - mx);
      out(j, v) = e;
      sum += e;
    }
    for (int j = 0; j < k; ++j) out(j, v) /= sum;
  }
  return out;
}

Prediction predict(const SimilarityMap& sim) {
  const int k = sim.scores.channels();
  if (k < 2) fail(ErrorCode::kInvalidArgument, "prediction needs at least two classes");
  Prediction p{softmax_channels(sim.scores), sim.class_ids, LabelMask(sim.scores.dims())};
  for (std::size_t v = 0; v < p.probabilities.voxels(); ++v) {
    int best = 0;
    for (int j = 1; j < k; ++j) {
      if (p.probabilities(j, v) > p.probabilities(best, v)) best = j;
    }
    p.hard_mask[v] = static_cast<std::uint8_t>(sim.class_ids[static_cast<std::size_t>(best)]);
  }
  return p;
}

std::string prototypes_to_json(std::span<const Prototype> prototypes) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& p : prototypes) {
    arr.push_back({{"class_id", p.class_id}, {"support_count", p.support_count}, {"vector", p.vector}});
  }
  return nlohmann::json{{"prototypes", arr}}.dump(2);
}

void save_prototypes(std::span<const Prototype> prototypes, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out << prototypes_to_json(prototypes) << "\n";
}

std::vector<Prototype> load_prototypes(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kNotFound, "cannot open " + path.string());
  std::vector<Prototype> out;
  try {
    const auto j = nlohmann::json::parse(in);
    for (const auto& e : j.at("prototypes")) {
      out.push_back({e.at("class_id").get<int>(), e.at("vector").get<std::vector<double>>(),
                     e.at("support_count").get<int>()});
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, "bad prototype file: " + std::string(e.what()));
  }
  return out;
}

}  // namespace protoseg
