#include <doctest.h>

#include <random>

#include "pwes/metrics.hpp"
#include "oracles.hpp"

using namespace pwes;

namespace {

Proposal make(int on, int off, double score, int k_src = 1) {
  Proposal p;
  p.onset = on;
  p.offset = off;
  p.confidence = {score, 0.0};
  p.k_src = k_src;
  return p;
}

}  // namespace

TEST_CASE("greedy matching basics") {
  const std::vector<FrameInterval> gts = {{10, 29}};
  SUBCASE("exact hit") {
    const auto r = match({make(10, 29, 0.9)}, gts, 0.5);
    CHECK(r.tp == 1);
    CHECK(r.fp == 0);
    CHECK(r.fn == 0);
  }
  SUBCASE("one-to-one: a second overlap is a false positive") {
    const auto r = match({make(10, 29, 0.9), make(12, 31, 0.8)}, gts, 0.5);
    CHECK(r.tp == 1);
    CHECK(r.fp == 1);
    CHECK(r.fn == 0);
  }
  SUBCASE("below the IoU bar") {
    const auto r = match({make(28, 47, 0.9)}, gts, 0.5);
    CHECK(r.tp == 0);
    CHECK(r.fp == 1);
    CHECK(r.fn == 1);
  }
  SUBCASE("invalid threshold") {
    CHECK_THROWS_AS(match({}, gts, 0.0), ConfigError);
  }
}

TEST_CASE("matching equals the reference greedy trace") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int it = 0; it < 200; ++it) {
    std::vector<Proposal> props;
    std::vector<oracle::RefProposal> refs;
    const int np = static_cast<int>(rng() % 7);
    for (int i = 0; i < np; ++i) {
      const int on = static_cast<int>(rng() % 60);
      const int off = on + static_cast<int>(rng() % 30);
      props.push_back(make(on, off, u(rng)));
      refs.push_back({on, off, 1, props.back().score()});
    }
    std::vector<FrameInterval> gts;
    std::vector<std::pair<int, int>> ref_gts;
    const int ng = static_cast<int>(rng() % 5);
    for (int i = 0; i < ng; ++i) {
      const int on = static_cast<int>(rng() % 60);
      const int off = on + static_cast<int>(rng() % 30);
      gts.push_back({on, off});
      ref_gts.emplace_back(on, off);
    }
    const auto got = match(props, gts, 0.5);
    const auto want = oracle::match(refs, ref_gts, 0.5);
    CHECK(got.tp == want.tp);
    CHECK(got.fp == want.fp);
    CHECK(got.fn == want.fn);
    CHECK(got.tp + got.fn == static_cast<int>(gts.size()));
    CHECK(got.tp + got.fp == static_cast<int>(props.size()));
  }
}

TEST_CASE("matching is invariant under uniform confidence rescaling") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.1, 1.0);
  std::vector<Proposal> props;
  for (int i = 0; i < 6; ++i)
    props.push_back(make(i * 10, i * 10 + 12, u(rng)));
  const std::vector<FrameInterval> gts = {{0, 12}, {30, 44}, {50, 60}};
  const auto base = match(props, gts, 0.5);
  for (auto& p : props) p.confidence[0] *= 0.125;
  const auto scaled = match(props, gts, 0.5);
  CHECK(base.tp == scaled.tp);
  CHECK(base.pairs == scaled.pairs);
}

TEST_CASE("counts fold into precision, recall, and F1") {
  Counts c;
  c.tp = 3;
  c.fp = 1;
  c.fn = 2;
  CHECK(c.precision() == doctest::Approx(0.75));
  CHECK(c.recall() == doctest::Approx(0.6));
  CHECK(c.f1() == doctest::Approx(2.0 * 0.75 * 0.6 / 1.35));
  Counts zero;
  CHECK(zero.f1() == 0.0);
}

TEST_CASE("perfect proposals give a perfect report") {
  // 30 fps, g = 8: a one-snippet GT is an ME, longer ones are MaEs
  VideoEval v;
  v.video_id = "v";
  v.gts = {{0, 7}, {40, 79}};
  v.proposals = {make(0, 7, 0.9, 1), make(40, 79, 0.8, 1)};
  const auto rep = f1_variants({v}, {1}, 30.0);
  CHECK(rep.overall.f1() == doctest::Approx(1.0));
  CHECK(rep.me_union.f1() == doctest::Approx(1.0));
  CHECK(rep.me_union_1s.f1() == doctest::Approx(1.0));
  CHECK(rep.me_optimal.f1() == doctest::Approx(1.0));
  CHECK(rep.optimal_top == 1);
  CHECK(rep.recall_defined);
}

TEST_CASE("missing ME proposals zero the short-duration score") {
  VideoEval v;
  v.video_id = "v";
  v.gts = {{0, 7}, {40, 79}};                 // one ME, one MaE
  v.proposals = {make(40, 79, 0.8, 1)};       // MaE found, ME missed
  const auto rep = f1_variants({v}, {1}, 30.0);
  CHECK(rep.me_union.f1() == 0.0);
  CHECK(rep.overall.tp == 1);
  CHECK(rep.overall.fn == 1);
}

TEST_CASE("optimal top value maximizes the overall score") {
  // k=1 carries the two true spans; k=2 adds two junk proposals
  VideoEval v;
  v.video_id = "v";
  v.gts = {{0, 15}, {80, 119}};
  v.proposals = {make(0, 15, 0.9, 1), make(80, 119, 0.85, 1),
                 make(200, 239, 0.7, 2), make(300, 339, 0.6, 2)};
  const auto rep = f1_variants({v}, {1, 2}, 30.0);
  CHECK(rep.optimal_top == 1);
  CHECK(rep.overall.fp == 0);
  CHECK(rep.overall.tp == 2);
}

TEST_CASE("hand-counted three-video report") {
  // video a: 1 ME GT, hit; 1 junk proposal
  VideoEval a;
  a.video_id = "a";
  a.gts = {{8, 15}};
  a.proposals = {make(8, 15, 0.9, 1), make(100, 139, 0.2, 1)};
  // video b: 1 MaE GT, hit
  VideoEval b;
  b.video_id = "b";
  b.gts = {{0, 39}};
  b.proposals = {make(0, 39, 0.8, 1)};
  // video c: 1 ME GT, missed entirely
  VideoEval c;
  c.video_id = "c";
  c.gts = {{16, 23}};
  c.proposals = {};
  const auto rep = f1_variants({a, b, c}, {1}, 30.0);
  CHECK(rep.overall.tp == 2);
  CHECK(rep.overall.fp == 1);
  CHECK(rep.overall.fn == 1);
  CHECK(rep.overall.recall() == doctest::Approx(2.0 / 3.0));
  CHECK(rep.overall.precision() == doctest::Approx(2.0 / 3.0));
  // ME view: 2 ME GTs, 1 short proposal that hits
  CHECK(rep.me_union.tp == 1);
  CHECK(rep.me_union.fn == 1);
  CHECK(rep.me_union.fp == 0);
  CHECK(rep.per_video.at("a").tp == 1);
  CHECK(rep.per_video.at("c").fn == 1);
}

TEST_CASE("empty ground truth flags undefined recall") {
  VideoEval v;
  v.video_id = "v";
  v.proposals = {make(0, 15, 0.5, 1)};
  const auto rep = f1_variants({v}, {1}, 30.0);
  CHECK(!rep.recall_defined);
  CHECK(rep.overall.fp == 1);
}

TEST_CASE("report table prints every column") {
  VideoEval v;
  v.video_id = "v";
  v.gts = {{0, 7}};
  v.proposals = {make(0, 7, 0.9, 1)};
  const auto text = report_table(f1_variants({v}, {1}, 30.0));
  CHECK(text.find("F1(0.5)") != std::string::npos);
  CHECK(text.find("REC") != std::string::npos);
  CHECK(text.find("1.000") != std::string::npos);
}
