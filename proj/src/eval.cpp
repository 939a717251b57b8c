#include "lupi/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

namespace lupi {

double EvalReport::rank_k(std::size_t k) const {
  if (cmc.empty() || k == 0) return 0.0;
  return cmc[std::min(k, cmc.size()) - 1];
}

namespace {

void check_records(const std::vector<EmbeddingRecord>& recs, Modality want,
                   const char* role) {
  if (recs.empty()) fail(std::string("evaluate: empty ") + role + " list");
  const std::size_t d = recs[0].feature.size();
  for (const auto& r : recs) {
    if (r.feature.size() != d)
      fail(std::string("evaluate: mixed feature dimensions in ") + role);
    if (r.modality != want)
      fail(std::string("evaluate: ") + role + " record of modality " +
           modality_name(r.modality) + " under a " + modality_name(want) + " protocol");
  }
}

double sq_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    acc += diff * diff;
  }
  return acc;
}

}  // namespace

EvalReport evaluate(const std::vector<EmbeddingRecord>& queries,
                    const std::vector<EmbeddingRecord>& gallery,
                    const EvalProtocol& protocol) {
  if (protocol.num_trials == 0) fail("evaluate: num_trials must be at least 1");
  check_records(queries, protocol.query_modality, "query");
  check_records(gallery, protocol.gallery_modality, "gallery");
  if (queries[0].feature.size() != gallery[0].feature.size())
    fail("evaluate: query and gallery feature dimensions differ");

  std::set<int> gallery_ids;
  for (const auto& g : gallery) gallery_ids.insert(g.identity);
  for (const auto& q : queries)
    if (gallery_ids.find(q.identity) == gallery_ids.end())
      fail("evaluate: query identity " + std::to_string(q.identity) +
           " absent from the gallery");

  // Gallery grouped by (identity, camera) for per-trial shot sampling.
  std::map<std::pair<int, int>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < gallery.size(); ++i)
    groups[{gallery[i].identity, gallery[i].camera}].push_back(i);

  const bool same_modality = protocol.query_modality == protocol.gallery_modality;
  const bool drop_same_cam = protocol.exclude_same_camera || same_modality;
  const std::size_t per_group = protocol.shot_mode == ShotMode::kSingle ? 1 : 10;

  EvalReport report;
  report.protocol = protocol;
  report.num_queries = queries.size();

  std::vector<std::vector<double>> trial_curves;
  double map_acc = 0.0;
  for (std::size_t trial = 0; trial < protocol.num_trials; ++trial) {
    Rng rng = make_stream(protocol.rng_seed, stream::kEvalTrial, trial);
    std::vector<std::size_t> sampled;
    for (const auto& [key, members] : groups) {
      if (members.size() <= per_group) {
        sampled.insert(sampled.end(), members.begin(), members.end());
      } else {
        std::vector<std::size_t> pool = members;
        for (std::size_t i = 0; i < per_group; ++i) {
          const auto j = static_cast<std::size_t>(rng.uniform_int(
              static_cast<std::int64_t>(i), static_cast<std::int64_t>(pool.size()) - 1));
          std::swap(pool[i], pool[j]);
          sampled.push_back(pool[i]);
        }
      }
    }
    std::sort(sampled.begin(), sampled.end());
    if (trial == 0) report.gallery_size = sampled.size();

    std::vector<std::size_t> first_hit(queries.size(), 0);  // 0 = never
    double ap_sum = 0.0;
    std::size_t max_len = 0;
    for (std::size_t qi = 0; qi < queries.size(); ++qi) {
      const EmbeddingRecord& q = queries[qi];
      std::vector<std::pair<double, std::size_t>> ranked;
      ranked.reserve(sampled.size());
      for (std::size_t gi : sampled) {
        const EmbeddingRecord& g = gallery[gi];
        if (drop_same_cam && g.identity == q.identity && g.camera == q.camera) continue;
        ranked.emplace_back(sq_distance(q.feature, g.feature), gi);
      }
      std::sort(ranked.begin(), ranked.end());
      max_len = std::max(max_len, ranked.size());

      std::size_t correct_seen = 0;
      double ap = 0.0;
      for (std::size_t pos = 0; pos < ranked.size(); ++pos) {
        if (gallery[ranked[pos].second].identity == q.identity) {
          ++correct_seen;
          ap += static_cast<double>(correct_seen) / static_cast<double>(pos + 1);
          if (first_hit[qi] == 0) first_hit[qi] = pos + 1;
        }
      }
      if (correct_seen > 0) ap /= static_cast<double>(correct_seen);
      ap_sum += ap;
    }

    std::vector<double> cmc(max_len, 0.0);
    for (std::size_t qi = 0; qi < queries.size(); ++qi) {
      if (first_hit[qi] == 0) continue;
      for (std::size_t k = first_hit[qi] - 1; k < max_len; ++k) cmc[k] += 1.0;
    }
    for (auto& v : cmc) v /= static_cast<double>(queries.size());

    const double trial_map = ap_sum / static_cast<double>(queries.size());
    report.per_trial_rank1.push_back(cmc.empty() ? 0.0 : cmc[0]);
    report.per_trial_map.push_back(trial_map);
    map_acc += trial_map;
    trial_curves.push_back(std::move(cmc));
  }

  std::size_t longest = 0;
  for (const auto& c : trial_curves) longest = std::max(longest, c.size());
  report.cmc.assign(longest, 0.0);
  for (const auto& c : trial_curves)
    for (std::size_t k = 0; k < longest; ++k)
      report.cmc[k] += k < c.size() ? c[k] : c.back();
  for (auto& v : report.cmc) v /= static_cast<double>(protocol.num_trials);
  report.map = map_acc / static_cast<double>(protocol.num_trials);
  return report;
}

// ---- MMD ----------------------------------------------------------------------

namespace {

double kernel_sum(const std::vector<double>& a, const std::vector<double>& b,
                  const std::vector<double>& bandwidths) {
  const double d2 = sq_distance(a, b);
  double acc = 0.0;
  for (double bw : bandwidths) acc += std::exp(-d2 / (2.0 * bw * bw));
  return acc;
}

bool lex_less(const std::vector<std::vector<double>>& a,
              const std::vector<std::vector<double>>& b) {
  if (a.size() != b.size()) return a.size() < b.size();
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i]) continue;
    return a[i] < b[i];
  }
  return false;
}

}  // namespace

double mmd_squared_unbiased(const std::vector<std::vector<double>>& x,
                            const std::vector<std::vector<double>>& y,
                            const std::vector<double>& bandwidths) {
  if (x.size() < 2 || y.size() < 2) fail("mmd: both sets need at least 2 points");
  if (bandwidths.empty()) fail("mmd: at least one bandwidth required");
  for (double bw : bandwidths)
    if (!(bw > 0.0)) fail("mmd: bandwidths must be positive");
  const std::size_t dim = x[0].size();
  for (const auto& v : x)
    if (v.size() != dim) fail("mmd: inconsistent dimensions in X");
  for (const auto& v : y)
    if (v.size() != dim) fail("mmd: inconsistent dimensions in Y");

  // Canonical argument order makes mmd(X, Y) == mmd(Y, X) bit for bit.
  const auto* first = &x;
  const auto* second = &y;
  if (lex_less(y, x)) std::swap(first, second);

  const auto& a = *first;
  const auto& b = *second;
  const double m = static_cast<double>(a.size());
  const double n = static_cast<double>(b.size());

  double saa = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = i + 1; j < a.size(); ++j) saa += kernel_sum(a[i], a[j], bandwidths);
  double sbb = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i)
    for (std::size_t j = i + 1; j < b.size(); ++j) sbb += kernel_sum(b[i], b[j], bandwidths);
  double sab = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) sab += kernel_sum(a[i], b[j], bandwidths);

  return 2.0 * saa / (m * (m - 1.0)) + 2.0 * sbb / (n * (n - 1.0)) - 2.0 * sab / (m * n);
}

double mmd(const std::vector<std::vector<double>>& x,
           const std::vector<std::vector<double>>& y,
           const std::vector<double>& bandwidths) {
  return std::sqrt(std::max(0.0, mmd_squared_unbiased(x, y, bandwidths)));
}

// ---- histograms ------------------------------------------------------------------

DistanceHistograms distance_histograms(const std::vector<EmbeddingRecord>& records) {
  std::vector<std::size_t> vis, inf;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].modality == Modality::kVisible) vis.push_back(i);
    else if (records[i].modality == Modality::kInfrared) inf.push_back(i);
  }
  if (vis.empty() || inf.empty())
    fail("distance_histograms: both modalities must be present");

  DistanceHistograms h;
  h.positive.assign(DistanceHistograms::kBins, 0);
  h.negative.assign(DistanceHistograms::kBins, 0);
  for (std::size_t i : vis) {
    for (std::size_t j : inf) {
      double dot = 0.0;
      for (std::size_t k = 0; k < records[i].feature.size(); ++k)
        dot += records[i].feature[k] * records[j].feature[k];
      const double dist = 1.0 - dot;  // in [0, 2] for unit features
      const auto bin = static_cast<std::size_t>(std::clamp(
          dist / 2.0 * static_cast<double>(DistanceHistograms::kBins), 0.0,
          static_cast<double>(DistanceHistograms::kBins - 1)));
      if (records[i].identity == records[j].identity) {
        ++h.positive[bin];
        ++h.positive_count;
        h.positive_mean += dist;
      } else {
        ++h.negative[bin];
        ++h.negative_count;
        h.negative_mean += dist;
      }
    }
  }
  if (h.positive_count > 0) h.positive_mean /= static_cast<double>(h.positive_count);
  if (h.negative_count > 0) h.negative_mean /= static_cast<double>(h.negative_count);
  return h;
}

// ---- serialization -----------------------------------------------------------------

namespace {

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::string eval_report_json(const EvalReport& report) {
  std::ostringstream os;
  os << "{\n";
  os << "  \"protocol\": {"
     << "\"query_modality\": \"" << modality_name(report.protocol.query_modality)
     << "\", \"gallery_modality\": \"" << modality_name(report.protocol.gallery_modality)
     << "\", \"shot_mode\": \""
     << (report.protocol.shot_mode == ShotMode::kSingle ? "single" : "multi")
     << "\", \"exclude_same_camera\": "
     << (report.protocol.exclude_same_camera ? "true" : "false")
     << ", \"num_trials\": " << report.protocol.num_trials
     << ", \"rng_seed\": " << report.protocol.rng_seed << "},\n";
  os << "  \"num_queries\": " << report.num_queries << ",\n";
  os << "  \"gallery_size\": " << report.gallery_size << ",\n";
  os << "  \"map\": " << fmt_double(report.map) << ",\n";
  auto arr = [&os](const char* name, const std::vector<double>& v, const char* tail) {
    os << "  \"" << name << "\": [";
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) os << ", ";
      os << fmt_double(v[i]);
    }
    os << "]" << tail << "\n";
  };
  arr("cmc", report.cmc, ",");
  arr("per_trial_rank1", report.per_trial_rank1, ",");
  arr("per_trial_map", report.per_trial_map, "");
  os << "}\n";
  return os.str();
}

std::string histograms_csv(const DistanceHistograms& h) {
  std::ostringstream os;
  os << "bin_left,bin_right,pos_count,neg_count\n";
  for (std::size_t b = 0; b < DistanceHistograms::kBins; ++b) {
    const double left = 2.0 * static_cast<double>(b) / DistanceHistograms::kBins;
    const double right = 2.0 * static_cast<double>(b + 1) / DistanceHistograms::kBins;
    os << fmt_double(left) << "," << fmt_double(right) << "," << h.positive[b] << ","
       << h.negative[b] << "\n";
  }
  return os.str();
}

}  // namespace lupi
