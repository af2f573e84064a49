#include "protoseg/episodes.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "json.hpp"

namespace protoseg {

std::map<std::string, std::vector<std::size_t>> group_by_subject(const PatchPool& pool) {
  std::map<std::string, std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < pool.size(); ++i) out[pool[i].id.subject].push_back(i);
  return out;
}

const char* to_string(ClassFraming f) {
  return f == ClassFraming::kVesselAsClass ? "vessel-as-class" : "subject-as-class";
}

ClassFraming class_framing_from_string(const std::string& s) {
  if (s == "vessel-as-class") return ClassFraming::kVesselAsClass;
  if (s == "subject-as-class") return ClassFraming::kSubjectAsClass;
  fail(ErrorCode::kInvalidArgument, "unknown class framing '" + s + "'");
}

std::size_t Episode::support_size() const {
  std::size_t n = 0;
  for (const auto& c : support) n += c.size();
  return n;
}

namespace {

// First `k` entries of `v` become a uniform random k-subset, in random order.
template <typename T>
void partial_shuffle(std::vector<T>& v, std::size_t k, std::mt19937_64& rng) {
  for (std::size_t i = 0; i < k && i < v.size(); ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, v.size() - 1);
    std::swap(v[i], v[pick(rng)]);
  }
}

void check_config(const EpisodeConfig& cfg) {
  if (cfg.ways < 1 || cfg.shots < 1 || cfg.queries < 1) {
    fail(ErrorCode::kInvalidArgument, "episode ways/shots/queries must be >= 1");
  }
  if (cfg.framing == ClassFraming::kVesselAsClass && cfg.ways != 1) {
    fail(ErrorCode::kInvalidArgument, "vessel-as-class framing has exactly one way");
  }
}

}  // namespace

Episode build_episode(const PatchPool& pool, const EpisodeConfig& cfg, std::mt19937_64& rng) {
  check_config(cfg);
  const auto k = static_cast<std::size_t>(cfg.shots);
  const auto q = static_cast<std::size_t>(cfg.queries);
  Episode ep;
  ep.ways = cfg.ways;

  if (cfg.framing == ClassFraming::kVesselAsClass) {
    if (pool.size() < k + q) {
      fail(ErrorCode::kInsufficientData, "pool of " + std::to_string(pool.size()) +
                                             " patches cannot supply " + std::to_string(k) +
                                             " shots + " + std::to_string(q) + " queries");
    }
    std::vector<std::size_t> idx(pool.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    partial_shuffle(idx, k + q, rng);
    ep.support.emplace_back(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
    for (std::size_t i = 0; i < q; ++i) ep.query.push_back({idx[k + i], 1});
    return ep;
  }

  const auto groups = group_by_subject(pool);
  std::vector<const std::vector<std::size_t>*> eligible;
  for (const auto& [subject, members] : groups) {
    if (members.size() >= k + q) eligible.push_back(&members);
  }
  if (eligible.size() < static_cast<std::size_t>(cfg.ways)) {
    fail(ErrorCode::kInsufficientData,
         std::to_string(eligible.size()) + " subjects hold >= " + std::to_string(k + q) +
             " patches; " + std::to_string(cfg.ways) + " ways requested");
  }
  partial_shuffle(eligible, static_cast<std::size_t>(cfg.ways), rng);

  std::vector<EpisodeQuery> leftovers;
  for (int c = 0; c < cfg.ways; ++c) {
    std::vector<std::size_t> members = *eligible[static_cast<std::size_t>(c)];
    partial_shuffle(members, members.size(), rng);
    ep.support.emplace_back(members.begin(), members.begin() + static_cast<std::ptrdiff_t>(k));
    for (std::size_t i = k; i < members.size(); ++i) leftovers.push_back({members[i], c + 1});
  }
  partial_shuffle(leftovers, q, rng);
  ep.query.assign(leftovers.begin(), leftovers.begin() + static_cast<std::ptrdiff_t>(q));
  return ep;
}

Episode build_episode(const PatchPool& pool, const EpisodeConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  return build_episode(pool, cfg, rng);
}

SubjectSplit split_subjects(std::vector<std::string> subjects, SplitFractions f, std::uint64_t seed) {
  if (subjects.size() < 3) fail(ErrorCode::kInsufficientData, "need at least 3 subjects to split");
  if (std::set<std::string>(subjects.begin(), subjects.end()).size() != subjects.size()) {
    fail(ErrorCode::kInvalidArgument, "duplicate subject ids");
  }
  const double fr[3] = {f.train, f.val, f.test};
  if (fr[0] < 0 || fr[1] < 0 || fr[2] < 0 || std::abs(fr[0] + fr[1] + fr[2] - 1.0) > 1e-6) {
    fail(ErrorCode::kInvalidArgument, "split fractions must be >= 0 and sum to 1");
  }
  const auto n = subjects.size();
  std::size_t sizes[3];
  double rem[3];
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = fr[i] * static_cast<double>(n);
    sizes[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    rem[i] = exact - static_cast<double>(sizes[i]);
    assigned += sizes[i];
  }
  int order[3] = {0, 1, 2};
  std::stable_sort(order, order + 3, [&](int a, int b) { return rem[a] > rem[b]; });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) sizes[order[i % 3]] += 1;

  std::mt19937_64 rng(seed);
  std::shuffle(subjects.begin(), subjects.end(), rng);
  SubjectSplit out;
  auto it = subjects.begin();
  auto take = [&](std::vector<std::string>& dst, std::size_t m) {
    dst.assign(it, it + static_cast<std::ptrdiff_t>(m));
    it += static_cast<std::ptrdiff_t>(m);
  };
  take(out.train, sizes[0]);
  take(out.val, sizes[1]);
  take(out.test, sizes[2]);
  return out;
}

std::vector<Fold> make_folds(std::vector<std::string> subjects, int k, std::uint64_t seed) {
  if (k < 2) fail(ErrorCode::kInvalidArgument, "cross-validation needs k >= 2");
  if (static_cast<std::size_t>(k) > subjects.size()) {
    fail(ErrorCode::kInsufficientData, "k exceeds the number of subjects");
  }
  std::mt19937_64 rng(seed);
  std::shuffle(subjects.begin(), subjects.end(), rng);
  std::vector<Fold> folds(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    folds[i % static_cast<std::size_t>(k)].test.push_back(subjects[i]);
  }
  for (auto& fold : folds) {
    const std::set<std::string> test(fold.test.begin(), fold.test.end());
    for (const auto& s : subjects)
      if (!test.count(s)) fold.train.push_back(s);
  }
  return folds;
}

namespace {

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kNotFound, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, "malformed " + path.string() + ": " + e.what());
  }
}

void write_json(const nlohmann::json& j, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out << j.dump(2) << "\n";
}

}  // namespace

void save_split(const SubjectSplit& s, const std::filesystem::path& path) {
  write_json({{"train", s.train}, {"val", s.val}, {"test", s.test}}, path);
}

SubjectSplit load_split(const std::filesystem::path& path) {
  const auto j = read_json(path);
  try {
    return {j.at("train").get<std::vector<std::string>>(), j.at("val").get<std::vector<std::string>>(),
            j.at("test").get<std::vector<std::string>>()};
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, "bad split manifest: " + std::string(e.what()));
  }
}

void save_folds(const std::vector<Fold>& folds, const std::filesystem::path& path) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& f : folds) arr.push_back({{"train", f.train}, {"test", f.test}});
  write_json({{"folds", arr}}, path);
}

std::vector<Fold> load_folds(const std::filesystem::path& path) {
  const auto j = read_json(path);
  std::vector<Fold> out;
  try {
    for (const auto& f : j.at("folds")) {
      out.push_back({f.at("train").get<std::vector<std::string>>(),
                     f.at("test").get<std::vector<std::string>>()});
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, "bad folds manifest: " + std::string(e.what()));
  }
  return out;
}

}  // namespace protoseg
