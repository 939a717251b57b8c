#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "lupi/eval.hpp"

using namespace lupi;

namespace {

std::vector<double> unit(std::vector<double> v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  const double n = std::sqrt(sq);
  for (double& x : v) x /= n;
  return v;
}

EmbeddingRecord rec(std::vector<double> f, int id, int cam, Modality m) {
  return EmbeddingRecord{unit(std::move(f)), id, cam, m};
}

std::vector<double> random_unit(std::size_t d, Rng& rng) {
  std::vector<double> v(d);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return unit(std::move(v));
}

// Independent O(n^2) scorer for galleries with one record per (id, camera):
// no sampling, plain scans, no shared code with evaluate().
struct BruteScores {
  std::vector<double> cmc;
  double map = 0.0;
};

BruteScores brute_score(const std::vector<EmbeddingRecord>& queries,
                        const std::vector<EmbeddingRecord>& gallery, bool drop_same_cam) {
  BruteScores out;
  std::size_t longest = 0;
  std::vector<std::size_t> hits;
  for (const auto& q : queries) {
    struct Entry {
      double d;
      std::size_t idx;
      int id;
    };
    std::vector<Entry> entries;
    for (std::size_t gi = 0; gi < gallery.size(); ++gi) {
      const auto& g = gallery[gi];
      if (drop_same_cam && g.identity == q.identity && g.camera == q.camera) continue;
      double d = 0.0;
      for (std::size_t k = 0; k < q.feature.size(); ++k)
        d += (q.feature[k] - g.feature[k]) * (q.feature[k] - g.feature[k]);
      entries.push_back({d, gi, g.identity});
    }
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
      return a.d != b.d ? a.d < b.d : a.idx < b.idx;
    });
    longest = std::max(longest, entries.size());
    std::size_t first = 0, correct = 0;
    double ap = 0.0;
    for (std::size_t pos = 0; pos < entries.size(); ++pos) {
      if (entries[pos].id == q.identity) {
        ++correct;
        ap += static_cast<double>(correct) / static_cast<double>(pos + 1);
        if (first == 0) first = pos + 1;
      }
    }
    if (correct > 0) ap /= static_cast<double>(correct);
    out.map += ap;
    hits.push_back(first);
  }
  out.map /= static_cast<double>(queries.size());
  out.cmc.assign(longest, 0.0);
  for (std::size_t h : hits)
    if (h > 0)
      for (std::size_t k = h - 1; k < longest; ++k) out.cmc[k] += 1.0;
  for (auto& v : out.cmc) v /= static_cast<double>(queries.size());
  return out;
}

}  // namespace

TEST_CASE("evaluate basics") {
  SUBCASE("exact match first: CMC(1)=1, mAP=1") {
    std::vector<EmbeddingRecord> q{rec({1.0, 0.0}, 5, 0, Modality::kInfrared)};
    std::vector<EmbeddingRecord> g{rec({1.0, 0.0}, 5, 2, Modality::kVisible),
                                   rec({0.0, 1.0}, 6, 2, Modality::kVisible)};
    EvalProtocol p;
    p.num_trials = 1;
    EvalReport r = evaluate(q, g, p);
    CHECK(r.rank_k(1) == 1.0);
    CHECK(r.map == 1.0);
    CHECK(r.cmc.back() == 1.0);
  }

  SUBCASE("hand AP: wrong, correct, wrong, correct gives 0.5") {
    std::vector<EmbeddingRecord> q{rec({1.0, 0.0}, 1, 0, Modality::kInfrared)};
    std::vector<EmbeddingRecord> g{
        rec({1.0, 0.05}, 2, 1, Modality::kVisible),   // nearest, wrong
        rec({1.0, 0.2}, 1, 1, Modality::kVisible),    // correct
        rec({1.0, 0.5}, 3, 1, Modality::kVisible),    // wrong
        rec({1.0, 1.0}, 1, 2, Modality::kVisible),    // correct
    };
    EvalProtocol p;
    p.num_trials = 1;
    EvalReport r = evaluate(q, g, p);
    CHECK(r.map == 0.5);  // (1/2 + 2/4) / 2
    CHECK(r.rank_k(1) == 0.0);
    CHECK(r.rank_k(2) == 1.0);
  }

  SUBCASE("query identity absent from the gallery is rejected by name") {
    std::vector<EmbeddingRecord> q{rec({1.0, 0.0}, 42, 0, Modality::kInfrared)};
    std::vector<EmbeddingRecord> g{rec({1.0, 0.0}, 1, 0, Modality::kVisible)};
    CHECK_THROWS_WITH_AS(evaluate(q, g, {}), doctest::Contains("42"), Error);
  }

  SUBCASE("modality mismatch with the protocol is rejected") {
    std::vector<EmbeddingRecord> q{rec({1.0, 0.0}, 1, 0, Modality::kVisible)};
    std::vector<EmbeddingRecord> g{rec({1.0, 0.0}, 1, 0, Modality::kVisible)};
    EvalProtocol p;  // expects infrared queries
    CHECK_THROWS_AS(evaluate(q, g, p), Error);
  }
}

TEST_CASE("evaluate matches the brute-force scorer exactly") {
  Rng rng(404);
  for (int inst = 0; inst < 50; ++inst) {
    const std::size_t d = 3 + static_cast<std::size_t>(rng.uniform_int(0, 3));
    const int num_ids = 2 + static_cast<int>(rng.uniform_int(0, 3));
    const bool exclude = rng.uniform() < 0.5;

    // One gallery record per (identity, camera): sampling is a no-op, so the
    // brute scorer needs no trial machinery.
    std::vector<EmbeddingRecord> gallery;
    for (int id = 0; id < num_ids; ++id)
      for (int cam = 0; cam < 2; ++cam)
        gallery.push_back(rec(random_unit(d, rng), id, cam, Modality::kVisible));
    while (gallery.size() > 20) gallery.pop_back();

    std::vector<EmbeddingRecord> queries;
    const std::size_t nq = 1 + static_cast<std::size_t>(rng.uniform_int(0, 11));
    for (std::size_t i = 0; i < nq; ++i)
      queries.push_back(rec(random_unit(d, rng), static_cast<int>(rng.uniform_int(0, num_ids - 1)),
                            static_cast<int>(rng.uniform_int(0, 2)), Modality::kInfrared));

    EvalProtocol p;
    p.exclude_same_camera = exclude;
    p.num_trials = 1;  // sampling is a no-op for this gallery layout
    p.shot_mode = inst % 2 == 0 ? ShotMode::kSingle : ShotMode::kMulti;
    EvalReport r = evaluate(queries, gallery, p);
    BruteScores b = brute_score(queries, gallery, exclude);

    REQUIRE(r.cmc.size() == b.cmc.size());
    for (std::size_t k = 0; k < r.cmc.size(); ++k) CHECK(r.cmc[k] == b.cmc[k]);
    CHECK(r.map == b.map);
  }
}

TEST_CASE("evaluate protocol properties") {
  Rng rng(77);
  std::vector<EmbeddingRecord> queries, gallery;
  for (int id = 0; id < 6; ++id) {
    for (int i = 0; i < 2; ++i)
      queries.push_back(rec(random_unit(8, rng), id, 10 + i, Modality::kInfrared));
    for (int cam = 0; cam < 2; ++cam)
      for (int i = 0; i < 3; ++i)
        gallery.push_back(rec(random_unit(8, rng), id, cam, Modality::kVisible));
  }

  SUBCASE("CMC is monotone non-decreasing and mAP lies in [0,1]") {
    EvalProtocol p;
    p.num_trials = 4;
    EvalReport r = evaluate(queries, gallery, p);
    for (std::size_t k = 1; k < r.cmc.size(); ++k) CHECK(r.cmc[k] >= r.cmc[k - 1]);
    for (std::size_t k = 0; k < r.cmc.size(); ++k) CHECK(r.cmc[k] >= r.rank_k(1));
    CHECK(r.map >= 0.0);
    CHECK(r.map <= 1.0);
    CHECK(r.cmc.back() == 1.0);
  }

  SUBCASE("deterministic given the protocol seed") {
    EvalProtocol p;
    p.num_trials = 3;
    p.rng_seed = 9;
    EvalReport a = evaluate(queries, gallery, p);
    EvalReport b = evaluate(queries, gallery, p);
    CHECK(eval_report_json(a) == eval_report_json(b));
  }

  SUBCASE("invariant under a common rotation of all features") {
    EvalProtocol p;
    p.num_trials = 2;
    EvalReport base = evaluate(queries, gallery, p);

    // Compose a few Givens rotations.
    auto rotate = [](std::vector<double> f) {
      const double cs[3] = {0.8, 0.6, -0.9};
      const double sn[3] = {0.6, -0.8, std::sqrt(1.0 - 0.81)};
      const std::size_t ax[3][2] = {{0, 3}, {1, 7}, {2, 5}};
      for (int r = 0; r < 3; ++r) {
        const double a = f[ax[r][0]], b = f[ax[r][1]];
        f[ax[r][0]] = cs[r] * a - sn[r] * b;
        f[ax[r][1]] = sn[r] * a + cs[r] * b;
      }
      return f;
    };
    auto rq = queries;
    auto rg = gallery;
    for (auto& r : rq) r.feature = rotate(r.feature);
    for (auto& r : rg) r.feature = rotate(r.feature);
    EvalReport rot = evaluate(rq, rg, p);
    REQUIRE(rot.cmc.size() == base.cmc.size());
    for (std::size_t k = 0; k < base.cmc.size(); ++k)
      CHECK(rot.cmc[k] == doctest::Approx(base.cmc[k]).epsilon(1e-9));
    CHECK(rot.map == doctest::Approx(base.map).epsilon(1e-9));
  }

  SUBCASE("multi-shot equals single-shot when identities have one image each") {
    std::vector<EmbeddingRecord> g1;
    for (int id = 0; id < 6; ++id) g1.push_back(rec(random_unit(8, rng), id, 0, Modality::kVisible));
    EvalProtocol ps;
    ps.num_trials = 2;
    EvalProtocol pm = ps;
    ps.shot_mode = ShotMode::kSingle;
    pm.shot_mode = ShotMode::kMulti;
    EvalReport rs = evaluate(queries, g1, ps);
    EvalReport rm = evaluate(queries, g1, pm);
    CHECK(rs.map == rm.map);
    REQUIRE(rs.cmc.size() == rm.cmc.size());
    for (std::size_t k = 0; k < rs.cmc.size(); ++k) CHECK(rs.cmc[k] == rm.cmc[k]);
  }

  SUBCASE("same-modality protocols always drop same-camera entries") {
    // Query id 0 cam 0; gallery has a same-camera perfect match and a
    // different-camera weaker match. Same-modality protocol must ignore the
    // same-camera one.
    std::vector<EmbeddingRecord> q{rec({1.0, 0.0}, 0, 0, Modality::kVisible)};
    std::vector<EmbeddingRecord> g{rec({1.0, 0.0}, 0, 0, Modality::kVisible),
                                   rec({0.0, 1.0}, 0, 1, Modality::kVisible),
                                   rec({0.9, 0.1}, 1, 1, Modality::kVisible)};
    EvalProtocol p;
    p.query_modality = Modality::kVisible;
    p.gallery_modality = Modality::kVisible;
    p.exclude_same_camera = false;  // still excluded: same modality
    p.num_trials = 1;
    EvalReport r = evaluate(q, g, p);
    CHECK(r.rank_k(1) == 0.0);  // the id-1 record outranks the remaining true match
    CHECK(r.rank_k(2) == 1.0);
  }
}

TEST_CASE("mmd") {
  Rng rng(5);
  auto gauss_set = [&](double mean, std::size_t n, std::uint64_t seed) {
    Rng r(seed);
    std::vector<std::vector<double>> v(n);
    for (auto& row : v) row = {mean + r.normal()};
    return v;
  };

  SUBCASE("identical multisets floor to zero") {
    auto x = gauss_set(0.0, 50, 1);
    CHECK(mmd(x, x, {1.0}) == 0.0);
  }

  SUBCASE("exactly symmetric") {
    auto x = gauss_set(0.0, 40, 2);
    auto y = gauss_set(1.0, 30, 3);
    CHECK(mmd(x, y, {0.5, 1.0}) == mmd(y, x, {0.5, 1.0}));
    CHECK(mmd_squared_unbiased(x, y, {1.0}) == mmd_squared_unbiased(y, x, {1.0}));
  }

  SUBCASE("rejections") {
    auto x = gauss_set(0.0, 1, 4);
    auto y = gauss_set(0.0, 5, 5);
    CHECK_THROWS_AS(mmd(x, y, {1.0}), Error);
    CHECK_THROWS_AS(mmd(y, y, {}), Error);
    CHECK_THROWS_AS(mmd(y, y, {0.0}), Error);
  }

  SUBCASE("estimator sits within 3 standard errors of a Monte-Carlo reference") {
    const std::size_t n = 500;
    std::vector<double> reps;
    double mean = 0.0;
    for (std::uint64_t r = 0; r < 100; ++r) {
      const double v = mmd(gauss_set(0.0, n, 1000 + 2 * r), gauss_set(3.0, n, 1001 + 2 * r), {1.0});
      reps.push_back(v);
      mean += v;
    }
    mean /= 100.0;
    double var = 0.0;
    for (double v : reps) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / 99.0);
    const double est = mmd(gauss_set(0.0, n, 7777), gauss_set(3.0, n, 8888), {1.0});
    CHECK(std::abs(est - mean) <= 3.0 * sd);
  }

  SUBCASE("monotone in the mean shift (light version)") {
    std::size_t wins = 0;
    for (std::uint64_t s = 0; s < 8; ++s) {
      const auto base = gauss_set(0.0, 200, 100 + 3 * s);
      const double m1 = mmd(base, gauss_set(0.5, 200, 101 + 3 * s), {1.0});
      const double m2 = mmd(base, gauss_set(1.5, 200, 102 + 3 * s), {1.0});
      const double m3 = mmd(base, gauss_set(3.0, 200, 103 + 3 * s), {1.0});
      if (m1 < m2 && m2 < m3) ++wins;
    }
    CHECK(wins >= 7);
  }
}

TEST_CASE("distance histograms") {
  SUBCASE("identical features put all mass in the first bin") {
    std::vector<EmbeddingRecord> recs{rec({1.0, 0.0}, 0, 0, Modality::kVisible),
                                      rec({1.0, 0.0}, 0, 1, Modality::kInfrared),
                                      rec({1.0, 0.0}, 1, 2, Modality::kInfrared)};
    DistanceHistograms h = distance_histograms(recs);
    CHECK(h.positive[0] == 1);
    CHECK(h.negative[0] == 1);
    CHECK(h.positive_mean == doctest::Approx(0.0));
  }

  SUBCASE("orthogonal identities: positives at 0, negatives at 1") {
    std::vector<EmbeddingRecord> recs{rec({1.0, 0.0}, 0, 0, Modality::kVisible),
                                      rec({0.0, 1.0}, 1, 0, Modality::kVisible),
                                      rec({1.0, 0.0}, 0, 1, Modality::kInfrared),
                                      rec({0.0, 1.0}, 1, 1, Modality::kInfrared)};
    DistanceHistograms h = distance_histograms(recs);
    CHECK(h.positive_mean == doctest::Approx(0.0));
    CHECK(h.negative_mean == doctest::Approx(1.0));
    const std::size_t mid = DistanceHistograms::kBins / 2;
    CHECK(h.negative[mid] == 2);
  }

  SUBCASE("mass conservation") {
    Rng rng(3);
    std::vector<EmbeddingRecord> recs;
    for (int i = 0; i < 7; ++i)
      recs.push_back(rec(random_unit(4, rng), i % 3, i, i % 2 == 0 ? Modality::kVisible
                                                                   : Modality::kInfrared));
    DistanceHistograms h = distance_histograms(recs);
    std::uint64_t pos = 0, neg = 0;
    for (std::size_t b = 0; b < DistanceHistograms::kBins; ++b) {
      pos += h.positive[b];
      neg += h.negative[b];
    }
    CHECK(pos == h.positive_count);
    CHECK(neg == h.negative_count);
    CHECK(pos + neg == 4 * 3);  // |V| * |I|
  }

  SUBCASE("single modality rejected") {
    std::vector<EmbeddingRecord> recs{rec({1.0, 0.0}, 0, 0, Modality::kVisible)};
    CHECK_THROWS_AS(distance_histograms(recs), Error);
  }

  SUBCASE("csv shape") {
    std::vector<EmbeddingRecord> recs{rec({1.0, 0.0}, 0, 0, Modality::kVisible),
                                      rec({1.0, 0.0}, 0, 1, Modality::kInfrared)};
    const std::string csv = histograms_csv(distance_histograms(recs));
    CHECK(csv.rfind("bin_left,bin_right,pos_count,neg_count\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 51);  // header + 50 bins
  }
}
