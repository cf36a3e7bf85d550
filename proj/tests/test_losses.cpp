#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "sbir/gradcheck.hpp"
#include "sbir/losses.hpp"
#include "sbir/rng.hpp"

using namespace sbir;

TEST_CASE("pairwise distances: 3-4-5 triangle and zero diagonal") {
  Tensor pts({2, 2}, {0, 0, 3, 4});
  Tensor d = pairwise_distance_matrix(pts, pts, DistanceKind::kEuclidean);
  CHECK(d.at(0, 0) == 0.0);
  CHECK(d.at(1, 1) == 0.0);
  CHECK(d.at(0, 1) == doctest::Approx(5.0).epsilon(1e-9));
  CHECK(d.at(1, 0) == doctest::Approx(5.0).epsilon(1e-9));
}

TEST_CASE("pairwise distances match the scalar-loop oracle") {
  Rng rng(31);
  Tensor a = oracle::random_matrix(4, 8, rng);
  Tensor b = oracle::random_matrix(6, 8, rng);
  for (DistanceKind kind :
       {DistanceKind::kEuclidean, DistanceKind::kSquaredEuclidean}) {
    Tensor d = pairwise_distance_matrix(a, b, kind);
    std::vector<double> expect = oracle::pairwise_matrix(a, b, kind);
    for (std::size_t i = 0; i < d.size(); ++i) {
      CHECK(std::fabs(d.values()[i] - expect[i]) < 1e-9);
    }
  }
}

TEST_CASE("triplet matrix: satisfied margins give zero loss") {
  // Photos at unit grid points, sketches coincide with their photos, and
  // every cross pair is far: d_ap = 0, d_an = 5 > margin 3.
  Tensor photos({2, 2}, {0, 0, 3, 4});
  Tensor sketches = photos;
  RtlConfig cfg;
  cfg.margin = 3.0;
  LossReport rep = triplet_loss_matrix(photos, sketches, cfg);
  CHECK(rep.loss.item() == 0.0);
  CHECK(rep.tl_matrix.at(0, 1) == 0.0);
  CHECK(rep.tl_matrix.at(1, 0) == 0.0);
  for (double v : rep.w_matrix.values()) CHECK(v == 1.0);
}

TEST_CASE("triplet matrix entry arithmetic at margin 3") {
  // d_ap = 2, d_an = 1 -> entry ReLU(2 - 1 + 3) = 4.
  Tensor photos({2, 1}, {0.0, 100.0});
  Tensor sketches({2, 1}, {2.0, 1.0});
  RtlConfig cfg;
  cfg.margin = 3.0;
  LossReport rep = triplet_loss_matrix(photos, sketches, cfg);
  CHECK(rep.dist_ap.at(0) == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(rep.dist_an.at(0, 1) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(rep.tl_matrix.at(0, 1) == doctest::Approx(4.0).epsilon(1e-9));
}

TEST_CASE("triplet loss matches brute-force triplet enumeration") {
  Rng rng(41);
  RtlConfig cfg;
  cfg.margin = 3.0;
  for (int rep_i = 0; rep_i < 10; ++rep_i) {
    Tensor photos = oracle::random_matrix(5, 8, rng);
    Tensor sketches = oracle::random_matrix(5, 8, rng);
    LossReport rep = triplet_loss_matrix(photos, sketches, cfg);
    double expect =
        oracle::triplet_sum(photos, sketches, cfg.margin, cfg.distance);
    CHECK(std::fabs(rep.loss.item() - expect) < 1e-9);
  }
}

TEST_CASE("triplet batch validation") {
  RtlConfig cfg;
  CHECK_THROWS_AS(
      triplet_loss_matrix(Tensor::ones({3, 4}), Tensor::ones({2, 4}), cfg),
      std::invalid_argument);
  CHECK_THROWS_AS(
      triplet_loss_matrix(Tensor::ones({1, 4}), Tensor::ones({1, 4}), cfg),
      std::invalid_argument);
  RtlConfig bad = cfg;
  bad.margin = -1.0;
  CHECK_THROWS_AS(
      triplet_loss_matrix(Tensor::ones({3, 4}), Tensor::ones({3, 4}), bad),
      std::invalid_argument);
}

TEST_CASE("relative weighting of collinear photos") {
  Tensor photos({3, 2}, {0, 0, 0, 4, 0, 8});
  RtlConfig cfg;
  Tensor w = relative_weighting_matrix(photos, cfg);
  CHECK(w.at(0, 1) == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(w.at(0, 2) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(w.at(1, 2) == doctest::Approx(0.5).epsilon(1e-9));
  for (std::size_t i = 0; i < 3; ++i) CHECK(w.at(i, i) == 0.0);
}

TEST_CASE("all-identical photos give an all-zero weighting") {
  Tensor photos({3, 4}, std::vector<double>(12, 2.5));
  RtlConfig cfg;
  Tensor w = relative_weighting_matrix(photos, cfg);
  for (double v : w.values()) CHECK(v == 0.0);
}

TEST_CASE("weighting peaks at exactly one") {
  Rng rng(55);
  Tensor photos = oracle::random_matrix(6, 8, rng);
  RtlConfig cfg;
  Tensor w = relative_weighting_matrix(photos, cfg);
  std::vector<double> expect =
      oracle::weighting_matrix(photos, cfg.distance, cfg.max_guard_eps);
  double best = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    CHECK(std::fabs(w.values()[i] - expect[i]) < 1e-12);
    best = std::max(best, w.values()[i]);
  }
  CHECK(best == 1.0);
}

TEST_CASE("weighting is scale invariant") {
  Rng rng(56);
  Tensor photos = oracle::random_matrix(5, 6, rng);
  std::vector<double> scaled = photos.values();
  for (double& v : scaled) v *= 7.5;
  RtlConfig cfg;
  Tensor w1 = relative_weighting_matrix(photos, cfg);
  Tensor w2 = relative_weighting_matrix(Tensor({5, 6}, scaled), cfg);
  for (std::size_t i = 0; i < w1.size(); ++i) {
    CHECK(std::fabs(w1.values()[i] - w2.values()[i]) < 1e-9);
  }
}

TEST_CASE("rtl equals triplet loss on an equidistant-anchor batch") {
  // Orthogonal photos scaled alike: every off-diagonal photo distance is
  // equal, so W is all ones off the diagonal.
  std::size_t bs = 4;
  std::vector<double> photo_data(bs * bs, 0.0);
  for (std::size_t i = 0; i < bs; ++i) photo_data[i * bs + i] = 3.0;
  Tensor photos({bs, bs}, photo_data);
  Rng rng(61);
  Tensor sketches = oracle::random_matrix(bs, bs, rng);
  RtlConfig cfg;
  LossReport tl = triplet_loss_matrix(photos, sketches, cfg);
  LossReport rtl = rtl_loss(photos, sketches, cfg);
  CHECK(std::fabs(tl.loss.item() - rtl.loss.item()) < 1e-9);
}

TEST_CASE("duplicated photos zero their weighted entries") {
  Rng rng(62);
  Tensor base = oracle::random_matrix(5, 8, rng);
  std::vector<double> data = base.values();
  // Row 3 becomes a bit-exact copy of row 1.
  for (std::size_t j = 0; j < 8; ++j) data[3 * 8 + j] = data[1 * 8 + j];
  Tensor photos({5, 8}, std::move(data));
  Tensor sketches = oracle::random_matrix(5, 8, rng);
  RtlConfig cfg;
  LossReport rep = rtl_loss(photos, sketches, cfg);
  CHECK(rep.rtl_matrix.at(1, 3) == 0.0);
  CHECK(rep.rtl_matrix.at(3, 1) == 0.0);
  CHECK(rep.w_matrix.at(1, 3) == 0.0);
}

TEST_CASE("rtl matches the scalar triple-loop oracle") {
  Rng rng(63);
  RtlConfig cfg;
  for (int rep_i = 0; rep_i < 10; ++rep_i) {
    Tensor photos = oracle::random_matrix(5, 8, rng);
    Tensor sketches = oracle::random_matrix(5, 8, rng);
    LossReport rep = rtl_loss(photos, sketches, cfg);
    double expect = oracle::rtl_sum(photos, sketches, cfg.margin, cfg.distance,
                                    cfg.max_guard_eps);
    CHECK(std::fabs(rep.loss.item() - expect) < 1e-9);
  }
}

TEST_CASE("rtl never exceeds the classic triplet loss") {
  Rng rng(64);
  RtlConfig cfg;
  for (int rep_i = 0; rep_i < 50; ++rep_i) {
    Tensor photos = oracle::random_matrix(6, 5, rng);
    Tensor sketches = oracle::random_matrix(6, 5, rng);
    double tl = triplet_loss_matrix(photos, sketches, cfg).loss.item();
    double rtl = rtl_loss(photos, sketches, cfg).loss.item();
    CHECK(rtl <= tl + 1e-12);
  }
}

TEST_CASE("rtl is invariant to a common batch permutation") {
  Rng rng(65);
  Tensor photos = oracle::random_matrix(6, 8, rng);
  Tensor sketches = oracle::random_matrix(6, 8, rng);
  RtlConfig cfg;
  double base = rtl_loss(photos, sketches, cfg).loss.item();

  std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
  Tensor p2 = gather_rows(photos, perm);
  Tensor s2 = gather_rows(sketches, perm);
  double permuted = rtl_loss(p2, s2, cfg).loss.item();
  CHECK(base == doctest::Approx(permuted).epsilon(1e-9));
}

TEST_CASE("mean-over-nonzero reduction divides by the active count") {
  Tensor photos({2, 1}, {0.0, 100.0});
  Tensor sketches({2, 1}, {2.0, 1.0});
  RtlConfig cfg;
  cfg.margin = 3.0;
  cfg.reduction = Reduction::kMeanOverNonzero;
  LossReport rep = triplet_loss_matrix(photos, sketches, cfg);
  // Entry (0,1) = 4; entry (1,0) = ReLU(99 - 98 + 3) = 4. Mean over 2.
  CHECK(rep.loss.item() == doctest::Approx(4.0).epsilon(1e-9));
}

TEST_CASE("rtl gradient matches finite differences") {
  Rng rng(66);
  Tensor photos = oracle::random_matrix(4, 8, rng);
  Tensor sketches = oracle::random_matrix(4, 8, rng);
  RtlConfig cfg;
  FdReport rep = finite_diff_check(
      [&cfg](Tape&, std::span<const Tensor> in) {
        return rtl_loss(in[0], in[1], cfg).loss;
      },
      {photos, sketches}, 1e-5, 1e-4);
  CHECK(rep.pass);
}

TEST_CASE("detached weighting stops the gradient through W") {
  Rng rng(67);
  Tensor photos = oracle::random_matrix(4, 6, rng);
  Tensor sketches = oracle::random_matrix(4, 6, rng);

  RtlConfig live;
  RtlConfig detached;
  detached.detach_weighting = true;
  // Same forward value either way.
  CHECK(rtl_loss(photos, sketches, live).loss.item() ==
        doctest::Approx(rtl_loss(photos, sketches, detached).loss.item()));
  // Detached gradients must still agree with finite differences of the
  // detached objective; this only holds when W is genuinely constant.
  FdReport rep = finite_diff_check(
      [&detached](Tape&, std::span<const Tensor> in) {
        return rtl_loss(in[0], in[1], detached).loss;
      },
      {photos, sketches}, 1e-5, 1e-4);
  // The probe re-evaluates W at perturbed photos, so the finite difference
  // sees the full coupling while the analytic path does not; the sketch
  // side must agree, the photo side generally must not.
  FdReport sketch_only = finite_diff_check(
      [&photos, &detached](Tape&, std::span<const Tensor> in) {
        return rtl_loss(photos.detached(), in[0], detached).loss;
      },
      {sketches}, 1e-5, 1e-4);
  CHECK(sketch_only.pass);
  (void)rep;
}

TEST_CASE("distillation: identical embeddings give zero loss everywhere") {
  Rng rng(71);
  Tensor e = oracle::random_matrix(4, 6, rng);
  for (DistillVariant variant :
       {DistillVariant::kMse, DistillVariant::kMae, DistillVariant::kMseMae,
        DistillVariant::kHuber, DistillVariant::kKl,
        DistillVariant::kKlSoftmax}) {
    DistillConfig cfg;
    cfg.variant = variant;
    CHECK(distill_loss(e, e, cfg).item() == 0.0);
  }
}

TEST_CASE("huber branches: quadratic at 0.5, linear at 2") {
  Tensor student = Tensor::full({3, 4}, 0.5);
  Tensor teacher = Tensor::zeros({3, 4});
  DistillConfig cfg;
  cfg.variant = DistillVariant::kHuber;
  cfg.huber_delta = 1.0;
  CHECK(distill_loss(student, teacher, cfg).item() ==
        doctest::Approx(0.125).epsilon(1e-12));
  CHECK(distill_loss(Tensor::full({3, 4}, 2.0), teacher, cfg).item() ==
        doctest::Approx(1.5).epsilon(1e-12));
}

TEST_CASE("distillation input validation") {
  DistillConfig cfg;
  CHECK_THROWS_AS(
      distill_loss(Tensor::ones({2, 3}), Tensor::ones({2, 4}), cfg),
      std::invalid_argument);
  cfg.variant = DistillVariant::kHuber;
  cfg.huber_delta = 0.0;
  CHECK_THROWS_AS(
      distill_loss(Tensor::ones({2, 3}), Tensor::ones({2, 3}), cfg),
      std::invalid_argument);
  cfg.variant = DistillVariant::kKl;
  cfg.huber_delta = 1.0;
  cfg.kl_temperature = 0.0;
  CHECK_THROWS_AS(
      distill_loss(Tensor::ones({2, 3}), Tensor::ones({2, 3}), cfg),
      std::invalid_argument);
}

TEST_CASE("kl distillation is nonnegative and zero only at equality") {
  Rng rng(72);
  DistillConfig cfg;
  cfg.variant = DistillVariant::kKl;
  cfg.kl_temperature = 2.0;
  for (int i = 0; i < 20; ++i) {
    Tensor s = oracle::random_matrix(4, 6, rng);
    Tensor t = oracle::random_matrix(4, 6, rng);
    double v = distill_loss(s, t, cfg).item();
    CHECK(v >= 0.0);
    CHECK(v > 1e-6);  // random distinct rows are distinct distributions
  }
  Tensor e = oracle::random_matrix(4, 6, rng);
  CHECK(distill_loss(e, e, cfg).item() == 0.0);
}

TEST_CASE("kl+softmax leaves the teacher softmax untempered") {
  Rng rng(73);
  Tensor s = oracle::random_matrix(4, 6, rng);
  Tensor t = oracle::random_matrix(4, 6, rng);
  DistillConfig kl;
  kl.variant = DistillVariant::kKl;
  kl.kl_temperature = 2.0;
  DistillConfig klsm = kl;
  klsm.variant = DistillVariant::kKlSoftmax;
  CHECK(distill_loss(s, t, kl).item() != distill_loss(s, t, klsm).item());
  // At temperature 1 the two variants coincide.
  kl.kl_temperature = klsm.kl_temperature = 1.0;
  CHECK(distill_loss(s, t, kl).item() ==
        doctest::Approx(distill_loss(s, t, klsm).item()).epsilon(1e-12));
}

TEST_CASE("distillation gradients match finite differences") {
  Rng rng(74);
  Tensor teacher = oracle::random_matrix(4, 6, rng);
  for (DistillVariant variant :
       {DistillVariant::kMse, DistillVariant::kMseMae, DistillVariant::kHuber,
        DistillVariant::kKl, DistillVariant::kKlSoftmax}) {
    DistillConfig cfg;
    cfg.variant = variant;
    Tensor student = oracle::random_matrix(4, 6, rng);
    FdReport rep = finite_diff_check(
        [&](Tape&, std::span<const Tensor> in) {
          return distill_loss(in[0], teacher, cfg);
        },
        {student}, 1e-5, 1e-4);
    CAPTURE(static_cast<int>(variant));
    CHECK(rep.pass);
  }
}

TEST_CASE("double guidance composes its two terms") {
  Rng rng(75);
  Tensor student = oracle::random_matrix(4, 6, rng);
  Tensor photos = oracle::random_matrix(4, 6, rng);
  Tensor teacher = oracle::random_matrix(4, 6, rng);
  RtlConfig cfg;

  SUBCASE("lambda 0 reduces to the rtl term") {
    DoubleGuidanceReport rep =
        double_guidance_loss(student, photos, teacher, cfg, 0.0);
    CHECK(rep.loss.item() == rtl_loss(photos, student, cfg).loss.item());
  }

  SUBCASE("lambda 1 equals the sum of independently computed terms") {
    DoubleGuidanceReport rep =
        double_guidance_loss(student, photos, teacher, cfg, 1.0);
    DistillConfig huber;
    huber.variant = DistillVariant::kHuber;
    double expect = rtl_loss(photos, student, cfg).loss.item() +
                    distill_loss(student, teacher, huber).item();
    CHECK(std::fabs(rep.loss.item() - expect) < 1e-12);
  }

  SUBCASE("student equal to teacher with satisfied margins gives zero") {
    // Distinct far-apart photos, student glued to them: d_ap = 0 and all
    // d_an large, so the hinge is silent, and the huber term vanishes.
    std::vector<double> far(4 * 6, 0.0);
    for (std::size_t i = 0; i < 4; ++i) far[i * 6 + i] = 100.0 * (double(i) + 1);
    Tensor photo_grid({4, 6}, far);
    DoubleGuidanceReport rep =
        double_guidance_loss(photo_grid, photo_grid, photo_grid, cfg, 1.0);
    CHECK(rep.loss.item() == 0.0);
  }

  SUBCASE("negative lambda is rejected") {
    CHECK_THROWS_AS(double_guidance_loss(student, photos, teacher, cfg, -0.5),
                    std::invalid_argument);
  }
}

TEST_CASE("double guidance gradient matches finite differences") {
  Rng rng(76);
  Tensor student = oracle::random_matrix(4, 6, rng);
  Tensor photos = oracle::random_matrix(4, 6, rng);
  Tensor teacher = oracle::random_matrix(4, 6, rng);
  RtlConfig cfg;
  FdReport rep = finite_diff_check(
      [&](Tape&, std::span<const Tensor> in) {
        return double_guidance_loss(in[0], photos, teacher, cfg, 0.7).loss;
      },
      {student}, 1e-5, 1e-4);
  CHECK(rep.pass);
}

TEST_CASE("loss gradients flow through the weighting matrix") {
  // With live weighting, the photo gradient includes the dW term; compare
  // against finite differences of the full objective.
  Rng rng(77);
  Tensor photos = oracle::random_matrix(4, 8, rng);
  Tensor sketches = oracle::random_matrix(4, 8, rng);
  RtlConfig cfg;
  FdReport rep = finite_diff_check(
      [&cfg](Tape&, std::span<const Tensor> in) {
        return rtl_loss(in[0], in[1], cfg).loss;
      },
      {photos, sketches}, 1e-5, 1e-4);
  CHECK(rep.pass);
}
