#include <doctest.h>

#include <cmath>
#include <random>

#include "pwes/objectives.hpp"
#include "gradcheck.hpp"

using namespace pwes;

TEST_CASE("video-level MIL loss over the full class set") {
  Vec perfect(3);
  perfect << 1.0, 0.4, 1.0;
  CHECK(mil_loss_full(perfect, {1, 0, 1}) == doctest::Approx(0.0).epsilon(1e-5));

  Vec p(3);
  p << 0.5, 0.9, 0.5;
  CHECK(mil_loss_full(p, {1, 0, 1}) ==
        doctest::Approx(-2.0 * std::log(0.5)));

  // direct summation oracle
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (int it = 0; it < 20; ++it) {
    Vec q(3);
    std::vector<double> y(3);
    double want = 0.0;
    for (int c = 0; c < 3; ++c) {
      q[c] = u(rng);
      y[static_cast<size_t>(c)] = rng() % 2 ? 1.0 : 0.0;
      want -= y[static_cast<size_t>(c)] * std::log(q[c]);
    }
    CHECK(mil_loss_full(q, y) == doctest::Approx(want));
  }
  CHECK_THROWS_AS(mil_loss_full(p, {1, 0}), ShapeError);
}

TEST_CASE("foreground-only MIL loss") {
  Vec p(2);
  p << std::exp(-1.0), 0.3;
  CHECK(mil_loss_fg(p, {0, 0}) == 0.0);
  CHECK(mil_loss_fg(p, {1, 0}) == doctest::Approx(1.0));
}

TEST_CASE("snippet classification loss") {
  Mat probs(2, 3);
  probs << 1.0, 0.0, 0.0, 0.5, 0.5, 0.5;
  CombinedLabels labels;
  labels.labels = Mat::Zero(2, 3);

  SUBCASE("no labeled rows returns zero") {
    labels.labeled_row = {0, 0};
    labels.num_labeled = 0;
    CHECK(snippet_cls_loss(probs, labels) == 0.0);
  }
  SUBCASE("exact one-row values") {
    labels.labels(0, 0) = 1.0;
    labels.labeled_row = {1, 0};
    labels.num_labeled = 1;
    // positive term at probability 1 vanishes (clamped); the two negative
    // terms at probability 0 vanish as well
    CHECK(snippet_cls_loss(probs, labels) ==
          doctest::Approx(0.0).epsilon(1e-5));

    labels.labels.setZero();
    labels.labels(1, 1) = 1.0;
    labels.labeled_row = {0, 1};
    const double pos = -0.25 * std::log(0.5);
    const double neg = -0.25 * std::log(0.5);
    CHECK(snippet_cls_loss(probs, labels) ==
          doctest::Approx(pos + 2.0 * neg));
  }
  SUBCASE("random instance against the elementwise oracle") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.05, 0.95);
    Mat s(6, 3);
    CombinedLabels l;
    l.labels = Mat::Zero(6, 3);
    l.labeled_row.assign(6, 0);
    for (int t = 0; t < 6; ++t) {
      for (int c = 0; c < 3; ++c) s(t, c) = u(rng);
      if (rng() % 2) {
        l.labels(t, static_cast<int>(rng() % 3)) = 1.0;
        l.labeled_row[static_cast<size_t>(t)] = 1;
        ++l.num_labeled;
      }
    }
    double want = 0.0;
    for (int t = 0; t < 6; ++t) {
      if (!l.labeled_row[static_cast<size_t>(t)]) continue;
      for (int c = 0; c < 3; ++c) {
        const double p = s(t, c);
        if (l.labels(t, c) > 0.0)
          want -= (1.0 - p) * (1.0 - p) * std::log(p);
        else
          want -= p * p * std::log(1.0 - p);
      }
    }
    want /= l.num_labeled;
    CHECK(snippet_cls_loss(s, l) == doctest::Approx(want));
  }
}

TEST_CASE("snippet loss decreases toward the labels along straight lines") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.1, 0.9);
  for (int it = 0; it < 20; ++it) {
    CombinedLabels l;
    l.labels = Mat::Zero(4, 3);
    l.labeled_row.assign(4, 1);
    l.num_labeled = 4;
    Mat start(4, 3);
    for (int t = 0; t < 4; ++t) {
      l.labels(t, static_cast<int>(rng() % 3)) = 1.0;
      for (int c = 0; c < 3; ++c) start(t, c) = u(rng);
    }
    double prev = snippet_cls_loss(start, l);
    for (int step = 1; step <= 8; ++step) {
      const double a = step / 10.0;
      const Mat mid = (1.0 - a) * start + a * l.labels;
      const double cur = snippet_cls_loss(mid, l);
      CHECK(cur <= prev + 1e-12);
      prev = cur;
    }
  }
}

TEST_CASE("combined labels merge point and pseudo sources") {
  Mat point = Mat::Zero(4, 2);
  point(1, 0) = 1.0;
  Mat pseudo = Mat::Zero(4, 3);
  pseudo(2, 1) = 1.0;
  pseudo(0, 2) = 1.0;
  const auto l = CombinedLabels::from(point, &pseudo);
  CHECK(l.num_labeled == 3);
  CHECK(l.labels(1, 0) == 1.0);
  CHECK(l.labels(2, 1) == 1.0);
  CHECK(l.labels(0, 2) == 1.0);
  CHECK(l.labeled_row == std::vector<char>{1, 1, 1, 0});

  const auto point_only = CombinedLabels::from(point, nullptr);
  CHECK(point_only.num_labeled == 1);
}

TEST_CASE("guide loss measures attention versus foreground probability") {
  Mat tcam(2, 3);
  tcam << 0.1, 0.2, 0.3, 0.4, 0.5, 0.6;
  Vec matched(2);
  matched << 0.7, 0.4;  // exactly 1 - background column
  CHECK(guide_loss(matched, tcam) == doctest::Approx(0.0));

  CHECK(guide_loss(Vec::Ones(2), Mat::Ones(2, 3)) == doctest::Approx(1.0));

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vec a(5);
  Mat s(5, 3);
  double want = 0.0;
  for (int t = 0; t < 5; ++t) {
    a[t] = u(rng);
    for (int c = 0; c < 3; ++c) s(t, c) = u(rng);
    want += std::abs(a[t] - (1.0 - s(t, 2)));
  }
  CHECK(guide_loss(a, s) == doctest::Approx(want / 5.0));
}

TEST_CASE("sparsity and mutual losses") {
  CHECK(sparsity_loss(Vec::Zero(4), Vec::Zero(4)) == 0.0);
  CHECK(sparsity_loss(Vec::Ones(4), Vec::Ones(4)) == doctest::Approx(1.0));
  Vec r(2), f(2);
  r << 0.2, 0.4;
  f << 0.6, 0.8;
  CHECK(sparsity_loss(r, f) == doctest::Approx(0.5 * (0.3 + 0.7)));

  CHECK(mutual_loss(r, r) == 0.0);
  CHECK(mutual_loss(Vec::Zero(1), Vec::Ones(1)) == doctest::Approx(1.0));
}

TEST_CASE("joint loss weighting") {
  LossWeights w;
  CHECK(joint_loss({}, w) == 0.0);
  LossComponents ones{1, 1, 1, 1, 1, 1, 1};
  CHECK(joint_loss(ones, w) == doctest::Approx(5.9));

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  for (int it = 0; it < 20; ++it) {
    LossComponents c{u(rng), u(rng), u(rng), u(rng), u(rng), u(rng), u(rng)};
    const double want = w.lambda1 * (c.mil1 + c.mil2) + w.lambda2 * c.scl +
                        w.lambda3 * c.fcl + w.lambda4 * c.gui +
                        w.lambda5 * c.sps + c.aml;
    CHECK(joint_loss(c, w) == doctest::Approx(want));
  }
}

TEST_CASE("contrastive loss closed forms") {
  // single anchor, one positive at similarity 1, one negative at 0
  MemoryBank bank({1, 1, 1});
  RegionVectorSet peer;
  peer.video_id = "peer";
  peer.per_class.resize(3);
  peer.per_class[0].present = true;
  Vec pos(2);
  pos << 1.0, 0.0;
  peer.per_class[0].vectors = {pos, pos};
  peer.per_class[0].partial = false;
  peer.per_class[2].present = true;
  Vec negv(2);
  negv << 0.0, 1.0;
  peer.per_class[2].vectors = {negv, negv};
  bank.update(peer);

  RegionVectorSet mine;
  mine.video_id = "mine";
  mine.per_class.resize(3);
  mine.per_class[0].present = true;
  mine.per_class[0].vectors = {Vec(pos * 3.0)};  // normalization handles scale
  mine.per_class[0].partial = true;

  // two identical positives and two identical negatives
  const double e1 = std::exp(1.0), e0 = 1.0;
  const double want = -std::log(2.0 * e1 / (2.0 * e1 + 2.0 * e0));
  CHECK(contrastive_loss(mine, bank, 1.0) == doctest::Approx(want));

  CHECK_THROWS_AS(contrastive_loss(mine, bank, 0.0), ConfigError);

  // empty negative set: ratio is one, loss zero
  MemoryBank pos_only({1, 1, 1});
  RegionVectorSet only;
  only.video_id = "peer";
  only.per_class.resize(3);
  only.per_class[0].present = true;
  only.per_class[0].vectors = {pos, pos};
  pos_only.update(only);
  CHECK(contrastive_loss(mine, pos_only, 1.0) == doctest::Approx(0.0));

  // empty bank: every anchor skipped
  MemoryBank empty({1, 1, 1});
  CHECK(contrastive_loss(mine, empty, 1.0) == 0.0);
}

TEST_CASE("contrastive loss strictly decreases as a positive aligns") {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> g;
  for (int it = 0; it < 30; ++it) {
    Vec anchor(4);
    for (int d = 0; d < 4; ++d) anchor[d] = g(rng);
    anchor.normalize();

    RegionVectorSet mine;
    mine.video_id = "mine";
    mine.per_class.resize(3);
    mine.per_class[0].present = true;
    mine.per_class[0].vectors = {anchor};

    // orthonormal direction for rotating the positive toward the anchor
    Vec w(4);
    for (int d = 0; d < 4; ++d) w[d] = g(rng);
    w -= anchor * anchor.dot(w);
    if (w.norm() < 1e-6) continue;
    w.normalize();

    double prev = std::numeric_limits<double>::infinity();
    for (double deg = 80.0; deg > 5.0; deg -= 15.0) {
      const double theta = deg * M_PI / 180.0;
      const Vec positive = std::cos(theta) * anchor + std::sin(theta) * w;

      MemoryBank bank({1, 1, 1});
      RegionVectorSet peer;
      peer.video_id = "peer";
      peer.per_class.resize(3);
      peer.per_class[0].present = true;
      peer.per_class[0].vectors = {positive, positive};
      peer.per_class[2].present = true;
      Vec negv = -anchor;
      peer.per_class[2].vectors = {negv, negv};
      bank.update(peer);

      const double cur = contrastive_loss(mine, bank, 1.0);
      CHECK(cur < prev);
      prev = cur;
    }
  }
}

TEST_CASE("gradients of every component match central finite differences") {
  const double tol = 1e-4;
  struct Case {
    const char* name;
    LossWeights w;
    bool contrastive;
  };
  auto only = [](double LossWeights::*field) {
    LossWeights w;
    w.lambda1 = w.lambda2 = w.lambda3 = w.lambda4 = w.lambda5 = 0.0;
    w.mutual_weight = 0.0;
    w.*field = 1.0;
    return w;
  };
  std::vector<Case> cases = {
      {"mil", only(&LossWeights::lambda1), false},
      {"snippet", only(&LossWeights::lambda2), false},
      {"contrastive", only(&LossWeights::lambda3), true},
      {"guide", only(&LossWeights::lambda4), false},
      {"sparsity", only(&LossWeights::lambda5), false},
      {"mutual", only(&LossWeights::mutual_weight), false},
      {"joint", LossWeights{}, true},
  };
  for (const auto& c : cases) {
    CAPTURE(c.name);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto s = gradcheck::make_smooth_scenario(seed * 131, c.contrastive);
      const auto res = gradcheck::check(s, c.w, c.contrastive);
      CAPTURE(res.worst);
      CHECK(res.max_rel < tol);
    }
  }
}
