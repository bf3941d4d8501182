#include <doctest.h>

#include <random>

#include "pwes/mplg.hpp"
#include "oracles.hpp"

using namespace pwes;

namespace {

struct Instance {
  Mat fused;         // T x D'
  Mat point_labels;  // T x C
  Mat tcam_fg;       // T x C
  Vec attn;          // T
};

Instance random_instance(std::uint64_t seed, int max_t = 64, int max_d = 16) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> g;
  Instance in;
  const int T = 4 + static_cast<int>(rng() % (max_t - 3));
  const int D = 2 + static_cast<int>(rng() % (max_d - 1));
  const int C = 2;
  in.fused.resize(T, D);
  for (int t = 0; t < T; ++t)
    for (int d = 0; d < D; ++d) in.fused(t, d) = g(rng);
  in.point_labels = Mat::Zero(T, C);
  const int n_labeled = 1 + static_cast<int>(rng() % 3);
  for (int i = 0; i < n_labeled; ++i)
    in.point_labels(static_cast<int>(rng() % T),
                    static_cast<int>(rng() % C)) = 1.0;
  in.tcam_fg.resize(T, C);
  for (int t = 0; t < T; ++t)
    for (int c = 0; c < C; ++c) in.tcam_fg(t, c) = u(rng);
  in.attn.resize(T);
  for (int t = 0; t < T; ++t) in.attn[t] = u(rng);
  return in;
}

oracle::Grid to_grid(const Mat& m) {
  oracle::Grid g(static_cast<size_t>(m.rows()),
                 oracle::Row(static_cast<size_t>(m.cols())));
  for (Eigen::Index t = 0; t < m.rows(); ++t)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      g[static_cast<size_t>(t)][static_cast<size_t>(c)] = m(t, c);
  return g;
}

oracle::Row to_row(const Vec& v) {
  return {v.data(), v.data() + v.size()};
}

}  // namespace

TEST_CASE("similarity of labeled snippets reaches the normalized maximum") {
  const auto in = random_instance(1);
  std::vector<int> labeled;
  for (Eigen::Index t = 0; t < in.point_labels.rows(); ++t)
    if (in.point_labels.row(t).sum() > 0.0)
      labeled.push_back(static_cast<int>(t));
  const auto sim = foreground_similarity(in.fused, labeled);
  for (size_t n = 0; n < labeled.size(); ++n)
    CHECK(sim.sim(labeled[n], static_cast<Eigen::Index>(n)) ==
          doctest::Approx(1.0));
  for (int t : labeled) CHECK(sim.sim_max[t] == doctest::Approx(1.0));
}

TEST_CASE("degenerate similarity range keeps the attention unchanged") {
  Mat fused(4, 3);
  for (int t = 0; t < 4; ++t) fused.row(t) << 1.0, 2.0, 3.0;
  const auto sim = foreground_similarity(fused, {1});
  for (int t = 0; t < 4; ++t) CHECK(sim.sim_max[t] == 1.0);
  Vec a(4);
  a << 0.1, 0.9, 0.4, 0.2;
  CHECK((refine_attention(a, sim.sim_max).array() == a.array()).all());
}

TEST_CASE("similarity matches a direct cosine computation") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  Mat fused(6, 4);
  for (int t = 0; t < 6; ++t)
    for (int d = 0; d < 4; ++d) fused(t, d) = g(rng);
  const auto sim = foreground_similarity(fused, {2});
  for (int t = 0; t < 6; ++t) {
    const double cs = fused.row(t).dot(fused.row(2)) /
                      (fused.row(t).norm() * fused.row(2).norm());
    CHECK(sim.sim(t, 0) == doctest::Approx(cs));
  }
  CHECK_THROWS_AS(foreground_similarity(fused, {}), DataError);
}

TEST_CASE("attention refinement is an entrywise product") {
  Vec a(2), s(2);
  a << 0.5, 0.8;
  s << 0.2, 1.0;
  const Vec r = refine_attention(a, s);
  CHECK(r[0] == doctest::Approx(0.1));
  CHECK(r[1] == doctest::Approx(0.8));
  CHECK(refine_attention(a, Vec::Zero(2)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("top-k foreground mask") {
  Vec a(4);
  a << 0.9, 0.1, 0.5, 0.4;
  CHECK(topk_foreground_mask(a, 2) == std::vector<char>{1, 0, 1, 0});
  CHECK(topk_foreground_mask(Vec::Constant(4, 0.3), 2) ==
        std::vector<char>{1, 1, 0, 0});
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vec r(20);
  for (int t = 0; t < 20; ++t) r[t] = u(rng);
  const auto mask = topk_foreground_mask(r, 6);
  std::vector<char> expect(20, 0);
  for (int t : oracle::topk_set(to_row(r), 6)) expect[static_cast<size_t>(t)] = 1;
  CHECK(mask == expect);
}

TEST_CASE("class prototypes are per-class means with absence flags") {
  Mat fused(4, 2);
  fused << 1, 2, 3, 4, 5, 6, 7, 8;
  Mat y = Mat::Zero(4, 2);
  y(1, 0) = 1.0;
  const auto single = class_prototypes(fused, y);
  CHECK(single.centers(0, 0) == 3.0);
  CHECK(single.centers(0, 1) == 4.0);
  CHECK(single.absent == std::vector<char>{0, 1});

  y(3, 0) = 1.0;
  const auto mean2 = class_prototypes(fused, y);
  CHECK(mean2.centers(0, 0) == 5.0);
  CHECK(mean2.centers(0, 1) == 6.0);
}

TEST_CASE("class weights: softmax of distances, absent class rules") {
  Mat fused(1, 2);
  fused << 0.0, 0.0;
  Prototypes p;
  p.centers.resize(2, 2);
  p.centers << 1.0, 0.0, -1.0, 0.0;  // equidistant from the origin
  p.absent = {0, 0};
  const Mat w = class_weights(fused, p);
  CHECK(w(0, 0) == doctest::Approx(0.5));
  CHECK(w(0, 1) == doctest::Approx(0.5));

  p.absent = {0, 1};
  const Mat w1 = class_weights(fused, p);
  CHECK(w1(0, 0) == 1.0);
  CHECK(w1(0, 1) == 0.0);

  // direct softmax-of-distances oracle
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  Mat x(5, 3);
  Prototypes pr;
  pr.centers.resize(2, 3);
  pr.absent = {0, 0};
  for (int t = 0; t < 5; ++t)
    for (int d = 0; d < 3; ++d) x(t, d) = g(rng);
  for (int c = 0; c < 2; ++c)
    for (int d = 0; d < 3; ++d) pr.centers(c, d) = g(rng);
  const Mat wr = class_weights(x, pr);
  for (int t = 0; t < 5; ++t) {
    const double d0 = (x.row(t) - pr.centers.row(0)).norm();
    const double d1 = (x.row(t) - pr.centers.row(1)).norm();
    const double e0 = std::exp(d0), e1 = std::exp(d1);
    CHECK(wr(t, 0) == doctest::Approx(e0 / (e0 + e1)));
    CHECK(wr(t, 1) == doctest::Approx(e1 / (e0 + e1)));
  }
}

TEST_CASE("TCAM refinement masks rows and modulates classes") {
  Mat s(3, 2);
  s << 0.9, 0.1, 0.8, 0.2, 0.7, 0.3;
  SUBCASE("identity") {
    const Mat r = refine_tcam(s, {1, 1, 1}, Mat::Ones(3, 2));
    CHECK((r.array() == s.array()).all());
  }
  SUBCASE("masked rows vanish") {
    const Mat r = refine_tcam(s, {1, 0, 1}, Mat::Ones(3, 2));
    CHECK(r.row(1).cwiseAbs().maxCoeff() == 0.0);
    CHECK(r(0, 0) == 0.9);
  }
  SUBCASE("elementwise product") {
    Mat w(3, 2);
    w << 0.5, 0.5, 0.25, 0.75, 1.0, 0.0;
    const Mat r = refine_tcam(s, {1, 1, 1}, w);
    for (int t = 0; t < 3; ++t)
      for (int c = 0; c < 2; ++c)
        CHECK(r(t, c) == doctest::Approx(s(t, c) * w(t, c)));
  }
}

TEST_CASE("temporal pruning uses the original column means") {
  Mat orig = Mat::Constant(2, 1, 0.5);
  Mat refined(2, 1);
  refined << 0.6, 0.4;
  const Mat pruned = temporal_prune(refined, orig);
  CHECK(pruned(0, 0) == 0.6);
  CHECK(pruned(1, 0) == 0.0);

  // entries at or above every column mean survive untouched
  Mat high = Mat::Constant(3, 2, 0.9);
  Mat base = Mat::Constant(3, 2, 0.2);
  CHECK((temporal_prune(high, base).array() == high.array()).all());
}

TEST_CASE("foreground label thresholding") {
  Mat s(3, 2);
  s << 0.95, 0.2, 0.75, 0.2, 0.9, 0.9;
  const Mat y = foreground_labels(s, 0.8);
  CHECK(y(0, 0) == 1.0);
  CHECK(y.row(1).sum() == 0.0);  // below threshold
  CHECK(y(2, 0) == 1.0);        // tie resolves to the lower class
  CHECK(y(2, 1) == 0.0);
  CHECK_THROWS_AS(foreground_labels(s, 1.5), ConfigError);
}

TEST_CASE("background labels take the lowest attention outside foreground") {
  Vec a(10);
  for (int t = 0; t < 10; ++t) a[t] = 0.1 * (t + 1);
  const auto bkg = background_labels(a, 2, std::vector<char>(10, 0));
  for (int t = 0; t < 10; ++t) CHECK(static_cast<bool>(bkg[t]) == (t < 4));

  // 2k = T clamps to T - k
  Vec b(6);
  b << 0.6, 0.5, 0.4, 0.3, 0.2, 0.1;
  const auto clamped = background_labels(b, 3, std::vector<char>(6, 0));
  int count = 0;
  for (char c : clamped) count += c;
  CHECK(count == 3);
}

TEST_CASE("full mining pass equals the straight-line reference") {
  MplgConfig cfg;
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    const auto in = random_instance(seed);
    const auto got = mplg(in.fused, in.point_labels, in.tcam_fg, in.attn, cfg);
    const auto want = oracle::mplg_reference(
        to_grid(in.fused), to_grid(in.point_labels), to_grid(in.tcam_fg),
        to_row(in.attn), cfg.k_ratio, cfg.theta);
    REQUIRE(got.labels.rows() == static_cast<Eigen::Index>(want.labels.size()));
    for (Eigen::Index t = 0; t < got.labels.rows(); ++t)
      for (Eigen::Index c = 0; c < got.labels.cols(); ++c)
        CHECK(got.labels(t, c) ==
              want.labels[static_cast<size_t>(t)][static_cast<size_t>(c)]);
    ++checked;
  }
  CHECK(checked == 60);
}

TEST_CASE("mining output satisfies the structural count bounds") {
  MplgConfig cfg;
  for (std::uint64_t seed = 100; seed < 140; ++seed) {
    const auto in = random_instance(seed);
    const int T = static_cast<int>(in.attn.size());
    const int k = cfg.scope(T);
    const auto out = mplg(in.fused, in.point_labels, in.tcam_fg, in.attn, cfg);

    int bkg = 0, fg_rows = 0;
    for (int t = 0; t < T; ++t) {
      const double fg = out.labels.row(t).head(2).sum();
      const double bg = out.labels(t, 2);
      if (out.row_source[static_cast<size_t>(t)] != LabelSource::kPoint)
        CHECK(fg <= 1.0);          // at most one mined class per row
      CHECK(fg * bg == 0.0);       // never both foreground and background
      bkg += bg > 0.0 ? 1 : 0;
      fg_rows += fg > 0.0 ? 1 : 0;
    }
    // the quota min(2k, T-k), unless forced point rows leave too few
    // non-foreground rows to fill it
    CHECK(bkg == std::min({2 * k, T - k, T - fg_rows}));

    // annotated rows keep their annotated classes and sources
    for (int t = 0; t < T; ++t)
      for (int c = 0; c < 2; ++c)
        if (in.point_labels(t, c) > 0.0) {
          CHECK(out.labels(t, c) == 1.0);
          CHECK(out.row_source[static_cast<size_t>(t)] == LabelSource::kPoint);
        }
  }
}

TEST_CASE("raising the threshold never adds a foreground label") {
  for (std::uint64_t seed = 200; seed < 220; ++seed) {
    const auto in = random_instance(seed);
    MplgConfig lo, hi;
    lo.theta = 0.5;
    hi.theta = 0.9;
    const auto yl = mplg(in.fused, in.point_labels, in.tcam_fg, in.attn, lo);
    const auto yh = mplg(in.fused, in.point_labels, in.tcam_fg, in.attn, hi);
    for (Eigen::Index t = 0; t < yl.labels.rows(); ++t)
      for (Eigen::Index c = 0; c < 2; ++c)
        if (yh.labels(t, c) > 0.0) CHECK(yl.labels(t, c) > 0.0);
  }
}

TEST_CASE("mining is deterministic and rejects unannotated videos") {
  const auto in = random_instance(7);
  MplgConfig cfg;
  const auto a = mplg(in.fused, in.point_labels, in.tcam_fg, in.attn, cfg);
  const auto b = mplg(in.fused, in.point_labels, in.tcam_fg, in.attn, cfg);
  CHECK((a.labels.array() == b.labels.array()).all());

  const Mat none = Mat::Zero(in.point_labels.rows(), 2);
  CHECK_THROWS_AS(mplg(in.fused, none, in.tcam_fg, in.attn, cfg), DataError);
}

TEST_CASE("config validation") {
  MplgConfig cfg;
  cfg.k_ratio = 0.4;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.k_ratio = 0.3;
  cfg.theta = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.theta = 0.8;
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.scope(10) == 3);
  CHECK(cfg.scope(3) == 1);
}
