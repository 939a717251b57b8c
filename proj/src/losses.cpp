#include "lupi/losses.hpp"

#include <algorithm>
#include <cmath>

namespace lupi {

namespace {

// Mining distances are plain values; only the selected pairs re-enter the
// graph, so gradients flow exclusively through the mined triplets.
std::vector<double> raw_sq_distances(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.shape()[0], n = b.shape()[0], d = a.shape()[1];
  std::vector<double> out(m * n);
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < d; ++p) {
        const double diff = av[i * d + p] - bv[j * d + p];
        acc += diff * diff;
      }
      out[i * n + j] = acc;
    }
  return out;
}

void check_feature_matrix(const Tensor& t, const std::vector<int>& labels,
                          const char* role) {
  if (t.shape().size() != 2)
    fail(std::string("triplet_term: ") + role + " must be a (rows, d) matrix, got " +
         shape_str(t.shape()));
  if (t.shape()[0] != labels.size())
    fail(std::string("triplet_term: ") + role + " has " + std::to_string(t.shape()[0]) +
         " rows but " + std::to_string(labels.size()) + " labels");
}

Tensor rowwise_euclidean(const Tensor& a, const Tensor& b) {
  Tensor diff = sub(a, b);
  return sqrt(sum_last_axis(mul(diff, diff)));
}

std::vector<int> sorted_labels(const std::vector<int>& labels) {
  std::vector<int> s = labels;
  std::sort(s.begin(), s.end());
  return s;
}

}  // namespace

TripletResult triplet_term(const Tensor& anchors, const std::vector<int>& anchor_labels,
                           const Tensor& positives,
                           const std::vector<int>& positive_labels,
                           const Tensor& negatives,
                           const std::vector<int>& negative_labels, double margin) {
  check_feature_matrix(anchors, anchor_labels, "anchors");
  check_feature_matrix(positives, positive_labels, "positives");
  check_feature_matrix(negatives, negative_labels, "negatives");
  if (anchors.shape()[1] != positives.shape()[1] ||
      anchors.shape()[1] != negatives.shape()[1])
    fail("triplet_term: feature dims differ, " + shape_str(anchors.shape()) + " vs " +
         shape_str(positives.shape()) + " vs " + shape_str(negatives.shape()));
  if (margin < 0.0) fail("triplet_term: margin must be non-negative");

  const std::vector<double> dp = raw_sq_distances(anchors, positives);
  const std::vector<double> dn = raw_sq_distances(anchors, negatives);
  const std::size_t na = anchor_labels.size();
  const std::size_t np = positive_labels.size();
  const std::size_t nn = negative_labels.size();

  std::vector<std::size_t> kept, pos_pick, neg_pick;
  std::size_t skipped = 0;
  for (std::size_t i = 0; i < na; ++i) {
    std::size_t best_p = np;
    double worst = -1.0;
    for (std::size_t j = 0; j < np; ++j) {
      if (positive_labels[j] != anchor_labels[i]) continue;
      if (dp[i * np + j] > worst) {
        worst = dp[i * np + j];
        best_p = j;
      }
    }
    std::size_t best_n = nn;
    double closest = 1e300;
    for (std::size_t j = 0; j < nn; ++j) {
      if (negative_labels[j] == anchor_labels[i]) continue;
      if (dn[i * nn + j] < closest) {
        closest = dn[i * nn + j];
        best_n = j;
      }
    }
    if (best_p == np || best_n == nn) {
      ++skipped;
      continue;
    }
    kept.push_back(i);
    pos_pick.push_back(best_p);
    neg_pick.push_back(best_n);
  }
  if (kept.empty()) fail("triplet_term: every anchor was skipped (no valid triplet)");

  Tensor d_ap = rowwise_euclidean(rows(anchors, kept), rows(positives, pos_pick));
  Tensor d_an = rowwise_euclidean(rows(anchors, kept), rows(negatives, neg_pick));
  Tensor hinge = max_scalar(sub(add(d_ap, margin), d_an), 0.0);
  return TripletResult{mean(hinge), skipped};
}

TripletResult dual_triplet(const EmbeddingBatch& fv, const EmbeddingBatch& ft,
                           const EmbeddingBatch& fz, double margin) {
  if (sorted_labels(fv.labels) != sorted_labels(ft.labels) ||
      sorted_labels(fv.labels) != sorted_labels(fz.labels))
    fail("dual_triplet: the three batches carry different identity multisets");
  TripletResult a = triplet_term(fv.features, fv.labels, ft.features, ft.labels,
                                 fz.features, fz.labels, margin);
  TripletResult b = triplet_term(ft.features, ft.labels, fz.features, fz.labels,
                                 fv.features, fv.labels, margin);
  TripletResult c = triplet_term(fz.features, fz.labels, fv.features, fv.labels,
                                 ft.features, ft.labels, margin);
  return TripletResult{add(add(a.value, b.value), c.value),
                       a.skipped_anchors + b.skipped_anchors + c.skipped_anchors};
}

TripletResult cross_modal_triplet(const EmbeddingBatch& fa, const EmbeddingBatch& fb,
                                  double margin) {
  if (sorted_labels(fa.labels) != sorted_labels(fb.labels))
    fail("cross_modal_triplet: the two batches carry different identity multisets");
  TripletResult a = triplet_term(fa.features, fa.labels, fb.features, fb.labels,
                                 fb.features, fb.labels, margin);
  TripletResult b = triplet_term(fb.features, fb.labels, fa.features, fa.labels,
                                 fa.features, fa.labels, margin);
  return TripletResult{add(a.value, b.value), a.skipped_anchors + b.skipped_anchors};
}

Tensor color_free(const EmbeddingBatch& fv, const EmbeddingBatch& fz, double alpha_c,
                  double cf_threshold) {
  const std::size_t b = fv.labels.size();
  if (b == 0 || fz.labels.size() != b)
    fail("color_free: unpaired batches (" + std::to_string(b) + " vs " +
         std::to_string(fz.labels.size()) + " rows)");
  if (fv.features.shape() != fz.features.shape())
    fail("color_free: feature shape mismatch " + shape_str(fv.features.shape()) + " vs " +
         shape_str(fz.features.shape()));

  Tensor acc = Tensor::scalar(0.0);
  for (std::size_t i = 0; i < b; ++i) {
    Tensor delta = mean(abs(sub(rows(fv.features, {i}), rows(fz.features, {i}))));
    if (delta.item() > cf_threshold) {
      acc = add(acc, delta);
    } else {
      Tensor lp_v = log_softmax(rows(fv.logits, {i}));
      Tensor lp_z = log_softmax(rows(fz.logits, {i}));
      Tensor kl = sum(mul(exp(lp_v), sub(lp_v, lp_z)));
      acc = add(acc, mul(kl, alpha_c));
    }
  }
  return mul(acc, 1.0 / static_cast<double>(b));
}

Tensor identity_loss(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.shape().size() != 2)
    fail("identity_loss: logits must be (rows, C), got " + shape_str(logits.shape()));
  const std::size_t b = logits.shape()[0], c = logits.shape()[1];
  if (labels.size() != b)
    fail("identity_loss: " + std::to_string(labels.size()) + " labels for " +
         std::to_string(b) + " rows");
  std::vector<double> onehot(b * c, 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c)
      fail("identity_loss: label " + std::to_string(labels[i]) + " outside [0, " +
           std::to_string(c) + ")");
    onehot[i * c + static_cast<std::size_t>(labels[i])] = 1.0;
  }
  Tensor mask = Tensor::from_data({b, c}, std::move(onehot));
  return mul(sum(mul(log_softmax(logits), mask)), -1.0 / static_cast<double>(b));
}

TotalLoss total_loss(const EmbeddingBatch& fv, const EmbeddingBatch& ft,
                     const EmbeddingBatch& fz, const LossConfig& cfg) {
  TripletResult tri = dual_triplet(fv, ft, fz, cfg.margin);
  Tensor cf = color_free(fv, fz, cfg.alpha_c, cfg.cf_threshold);

  const double bv = static_cast<double>(fv.labels.size());
  const double bt = static_cast<double>(ft.labels.size());
  const double bz = static_cast<double>(fz.labels.size());
  Tensor id_sum = add(add(mul(identity_loss(fv.logits, fv.labels), bv),
                          mul(identity_loss(ft.logits, ft.labels), bt)),
                      mul(identity_loss(fz.logits, fz.labels), bz));
  Tensor id = mul(id_sum, 1.0 / (bv + bt + bz));

  Tensor value = add(add(tri.value, mul(cf, cfg.lambda)), id);
  TotalLoss out;
  out.value = value;
  out.breakdown.triplet = tri.value.item();
  out.breakdown.color_free = cf.item();
  out.breakdown.identity = id.item();
  out.breakdown.total = value.item();
  out.breakdown.skipped_anchors = tri.skipped_anchors;
  return out;
}

}  // namespace lupi
