#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <random>

#include "deft/evalbench.hpp"
#include "test_util.hpp"

using namespace deft;
using testutil::random_tensor;

namespace {

Tensor unit_rows(Tensor m) {
  for (int i = 0; i < m.dim(0); ++i) {
    double n = 0.0;
    for (int j = 0; j < m.dim(1); ++j) n += m.at(i, j) * m.at(i, j);
    n = std::sqrt(n);
    for (int j = 0; j < m.dim(1); ++j) m.at(i, j) /= n;
  }
  return m;
}

// Exhaustive mutual-argmax search, written independently of mnn_match.
std::vector<std::pair<int, int>> oracle_mnn(const Tensor& a, const Tensor& b) {
  std::vector<std::pair<int, int>> out;
  for (int i = 0; i < a.dim(0); ++i) {
    int arg = 0;
    for (int j = 1; j < b.dim(0); ++j) {
      double sj = 0, sa = 0;
      for (int k = 0; k < a.dim(1); ++k) {
        sj += a.at(i, k) * b.at(j, k);
        sa += a.at(i, k) * b.at(arg, k);
      }
      if (sj > sa) arg = j;
    }
    int back = 0;
    for (int i2 = 1; i2 < a.dim(0); ++i2) {
      double s2 = 0, sb = 0;
      for (int k = 0; k < a.dim(1); ++k) {
        s2 += a.at(i2, k) * b.at(arg, k);
        sb += a.at(back, k) * b.at(arg, k);
      }
      if (s2 > sb) back = i2;
    }
    if (back == i) out.emplace_back(i, arg);
  }
  return out;
}

std::vector<Point2> random_points(std::mt19937_64& rng, int n, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<Point2> out;
  for (int i = 0; i < n; ++i) out.push_back({d(rng), d(rng)});
  return out;
}

Homography random_homography(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> small(-0.08, 0.08);
  std::uniform_real_distribution<double> shift(-4.0, 4.0);
  Mat3 m;
  m(0, 0) = 1.0 + small(rng);
  m(0, 1) = small(rng);
  m(0, 2) = shift(rng);
  m(1, 0) = small(rng);
  m(1, 1) = 1.0 + small(rng);
  m(1, 2) = shift(rng);
  m(2, 0) = 0.005 * small(rng);
  m(2, 1) = 0.005 * small(rng);
  return Homography(m);
}

}  // namespace

TEST_CASE("mnn_match pairs identical orthonormal sets by index") {
  Tensor d({4, 4});
  for (int i = 0; i < 4; ++i) d.at(i, i) = 1.0;
  MatchSet m = mnn_match(d, d);
  REQUIRE(m.size() == 4);
  for (int i = 0; i < 4; ++i) {
    CHECK(m.pairs[static_cast<size_t>(i)] == std::pair{i, i});
    CHECK(m.similarity[static_cast<size_t>(i)] == 1.0);
  }
}

TEST_CASE("one-sided nearest neighbors are excluded") {
  // b0 is nearest to both a0 and a1, but its own best is a0; a1 matches nothing.
  Tensor a({2, 2});
  a.at(0, 0) = 1.0;                      // a0 = (1, 0)
  a.at(1, 0) = 0.9; a.at(1, 1) = std::sqrt(1 - 0.81);  // a1 leans the same way
  Tensor b({2, 2});
  b.at(0, 0) = 1.0;                      // b0 = (1, 0)
  b.at(1, 0) = -1.0;                     // b1 points away
  MatchSet m = mnn_match(a, b);
  REQUIRE(m.size() == 1);
  CHECK(m.pairs[0] == std::pair{0, 0});
}

TEST_CASE("mnn_match equals the exhaustive oracle and is symmetric") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 8; ++trial) {
    Tensor a = unit_rows(random_tensor({15, 6}, rng));
    Tensor b = unit_rows(random_tensor({12, 6}, rng));
    MatchSet m = mnn_match(a, b);
    CHECK(m.pairs == oracle_mnn(a, b));
    MatchSet back = mnn_match(b, a);
    REQUIRE(back.size() == m.size());
    for (auto [i, j] : m.pairs)
      CHECK(std::count(back.pairs.begin(), back.pairs.end(), std::pair{j, i}) == 1);
  }
}

TEST_CASE("mma counts fractions of correct matches") {
  // Hand-built: 10 matches, 7 correct under identity warp with th=3.
  std::vector<Point2> ka, kb;
  MatchSet m;
  for (int i = 0; i < 10; ++i) {
    ka.push_back({i * 10.0, 0.0});
    double err = i < 7 ? 1.0 : 8.0;
    kb.push_back({i * 10.0 + err, 0.0});
    m.pairs.emplace_back(i, i);
    m.similarity.push_back(1.0);
  }
  MmaResult r = mma(m, ka, kb, Warp::identity(), 3.0);
  REQUIRE(r.valid);
  CHECK(r.value == Catch::Approx(0.7));
  CHECK(r.correct == 7);
  CHECK(r.putative == 10);

  MmaResult perfect = mma(m, ka, ka, Warp::identity(), 3.0);
  CHECK(perfect.value == 1.0);

  MmaResult empty = mma(MatchSet{}, ka, kb, Warp::identity(), 3.0);
  CHECK_FALSE(empty.valid);
  CHECK(empty.value == 0.0);
}

TEST_CASE("mma equals a per-match loop oracle on random data") {
  std::mt19937_64 rng(2);
  Homography h = random_homography(rng);
  auto ka = random_points(rng, 30, 0.0, 50.0);
  auto kb = random_points(rng, 30, 0.0, 50.0);
  MatchSet m;
  for (int i = 0; i < 30; ++i) {
    m.pairs.emplace_back(i, i);
    m.similarity.push_back(0.5);
  }
  Warp warp = Warp::from_homography(h);
  MmaResult r = mma(m, ka, kb, warp, 3.0);
  int correct = 0;
  for (int i = 0; i < 30; ++i) {
    Point2 w = warp_homography(ka[static_cast<size_t>(i)], h);
    if (std::hypot(w.x - kb[static_cast<size_t>(i)].x, w.y - kb[static_cast<size_t>(i)].y) < 3.0)
      ++correct;
  }
  CHECK(r.correct == correct);
  CHECK(r.value == Catch::Approx(static_cast<double>(correct) / 30.0));
}

TEST_CASE("estimate_homography recovers a known H from exact correspondences") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    Homography h = random_homography(rng);
    auto pa = random_points(rng, 12, 0.0, 60.0);
    std::vector<Point2> pb;
    for (const Point2& p : pa) pb.push_back(warp_homography(p, h));
    auto est = estimate_homography_points(pa, pb);
    REQUIRE(est.has_value());
    CHECK(mean_corner_error(*est, h, 64, 64) < 1e-6);
  }
}

TEST_CASE("estimate_homography fails on collinear or insufficient points") {
  std::vector<Point2> line;
  for (int i = 0; i < 12; ++i) line.push_back({static_cast<double>(i), 2.0 * i + 1.0});
  CHECK_FALSE(estimate_homography_points(line, line).has_value());

  std::vector<Point2> three{{0, 0}, {10, 0}, {0, 10}};
  CHECK_FALSE(estimate_homography_points(three, three).has_value());
}

TEST_CASE("estimate_homography rejects 50% outliers with a fixed seed") {
  std::mt19937_64 rng(4);
  Homography h = random_homography(rng);
  auto inlier_pts = random_points(rng, 20, 0.0, 60.0);
  std::vector<Point2> pa, pb;
  for (const Point2& p : inlier_pts) {
    pa.push_back(p);
    pb.push_back(warp_homography(p, h));
  }
  // Outliers displaced far from the model.
  std::uniform_real_distribution<double> far(25.0, 60.0);
  for (int i = 0; i < 20; ++i) {
    Point2 p = {far(rng), far(rng)};
    pa.push_back(p);
    pb.push_back({warp_homography(p, h).x + far(rng), warp_homography(p, h).y - far(rng)});
  }
  auto est = estimate_homography_points(pa, pb);
  REQUIRE(est.has_value());
  CHECK(mean_corner_error(*est, h, 64, 64) < 1e-6);
}

TEST_CASE("estimate_homography is deterministic under a fixed seed") {
  std::mt19937_64 rng(5);
  Homography h = random_homography(rng);
  auto pa = random_points(rng, 25, 0.0, 40.0);
  std::vector<Point2> pb;
  for (const Point2& p : pa) {
    Point2 q = warp_homography(p, h);
    pb.push_back({q.x + 0.3 * std::sin(p.x), q.y + 0.3 * std::cos(p.y)});
  }
  auto e1 = estimate_homography_points(pa, pb);
  auto e2 = estimate_homography_points(pa, pb);
  REQUIRE(e1.has_value());
  REQUIRE(e2.has_value());
  for (int i = 0; i < 9; ++i)
    CHECK(e1->h.m[static_cast<size_t>(i)] == e2->h.m[static_cast<size_t>(i)]);
}

TEST_CASE("mha correctness via corner arithmetic") {
  std::mt19937_64 rng(6);
  Homography h = random_homography(rng);
  CHECK(mha_correct(h, h, 64, 48, 3.0));
  CHECK(mha_correct(h, h, 64, 48, 1e-9));

  Homography shifted = Homography::translation(10.0, 0.0).compose(h);
  CHECK_FALSE(mha_correct(shifted, h, 64, 48, 3.0));
  // Pure post-translation moves every corner by exactly |t|.
  CHECK(mean_corner_error(shifted, h, 64, 48) == Catch::Approx(10.0).margin(1e-9));
  Homography near = Homography::translation(2.9, 0.0).compose(h);
  CHECK(mha_correct(near, h, 64, 48, 3.0));
  Homography over = Homography::translation(3.1, 0.0).compose(h);
  CHECK_FALSE(mha_correct(over, h, 64, 48, 3.0));

  CHECK_FALSE(mha_correct(std::nullopt, h, 64, 48, 3.0));
}

TEST_CASE("matching score: identity pair and halved covisibility") {
  std::mt19937_64 rng(7);
  auto kps = random_points(rng, 20, 5.0, 58.0);
  MatchSet m;
  for (int i = 0; i < 20; ++i) {
    m.pairs.emplace_back(i, i);
    m.similarity.push_back(1.0);
  }
  ImageSize size{64, 64};
  MatchingScoreResult r = matching_score(m, kps, kps, Warp::identity(), size, size, 3.0);
  REQUIRE(r.valid);
  CHECK(r.value == 1.0);
  CHECK(r.covisible_a == 20);

  // Shift half the keypoints outside image B.
  Warp shift = Warp::from_homography(Homography::translation(40.0, 0.0));
  // With x+40, keypoints with x >= 24 leave the 64-wide image.
  int inside = 0;
  for (const Point2& p : kps)
    if (p.x + 40.0 <= 63.0) ++inside;
  MatchingScoreResult half = matching_score(m, kps, kps, shift, size, size, 3.0);
  CHECK(half.covisible_a == inside);
}

TEST_CASE("repeatability: identical, disjoint, and random oracle") {
  std::mt19937_64 rng(8);
  auto kps = random_points(rng, 15, 5.0, 58.0);
  ImageSize size{64, 64};
  CHECK(repeatability(kps, kps, Warp::identity(), size, size, 3.0) == 1.0);

  std::vector<Point2> far;
  for (const Point2& p : kps) far.push_back({p.x, p.y});
  std::vector<Point2> a{{5, 5}, {10, 10}};
  std::vector<Point2> b{{50, 50}, {55, 40}};
  CHECK(repeatability(a, b, Warp::identity(), size, size, 3.0) == 0.0);

  // Brute-force oracle on a random perturbed pair.
  auto ka = random_points(rng, 12, 5.0, 58.0);
  std::vector<Point2> kb;
  std::uniform_real_distribution<double> noise(-4.0, 4.0);
  for (const Point2& p : ka) kb.push_back({p.x + noise(rng), p.y + noise(rng)});
  double got = repeatability(ka, kb, Warp::identity(), size, size, 3.0);
  auto frac = [&](const std::vector<Point2>& from, const std::vector<Point2>& to) {
    int hit = 0;
    for (const Point2& p : from) {
      bool ok = false;
      for (const Point2& q : to)
        if (std::hypot(p.x - q.x, p.y - q.y) < 3.0) ok = true;
      if (ok) ++hit;
    }
    return static_cast<double>(hit) / from.size();
  };
  CHECK(got == Catch::Approx(0.5 * (frac(ka, kb) + frac(kb, ka))).margin(1e-12));
}

TEST_CASE("metrics are monotonically non-decreasing in the threshold") {
  std::mt19937_64 rng(9);
  Homography h = random_homography(rng);
  auto ka = random_points(rng, 25, 5.0, 58.0);
  std::vector<Point2> kb;
  std::uniform_real_distribution<double> noise(-5.0, 5.0);
  for (const Point2& p : ka) {
    Point2 q = warp_homography(p, h);
    kb.push_back({q.x + noise(rng), q.y + noise(rng)});
  }
  MatchSet m;
  for (int i = 0; i < 25; ++i) {
    m.pairs.emplace_back(i, i);
    m.similarity.push_back(0.9);
  }
  Warp warp = Warp::from_homography(h);
  ImageSize size{64, 64};
  double prev_mma = -1, prev_ms = -1, prev_rep = -1;
  for (double th : {0.5, 1.0, 2.0, 4.0, 8.0, 16.0}) {
    double v_mma = mma(m, ka, kb, warp, th).value;
    double v_ms = matching_score(m, ka, kb, warp, size, size, th).value;
    double v_rep = repeatability(ka, kb, warp, size, size, th);
    CHECK(v_mma >= prev_mma);
    CHECK(v_ms >= prev_ms);
    CHECK(v_rep >= prev_rep);
    prev_mma = v_mma;
    prev_ms = v_ms;
    prev_rep = v_rep;
  }
}

TEST_CASE("matching score relates to mma through the count ratio") {
  std::mt19937_64 rng(10);
  Homography h = random_homography(rng);
  auto ka = random_points(rng, 30, 4.0, 60.0);
  std::vector<Point2> kb;
  std::uniform_real_distribution<double> noise(-4.0, 4.0);
  for (const Point2& p : ka) {
    Point2 q = warp_homography(p, h);
    kb.push_back({q.x + noise(rng), q.y + noise(rng)});
  }
  MatchSet m;
  for (int i = 0; i < 30; ++i) {
    m.pairs.emplace_back(i, i);
    m.similarity.push_back(0.8);
  }
  Warp warp = Warp::from_homography(h);
  ImageSize size{64, 64};
  MmaResult a = mma(m, ka, kb, warp, 3.0);
  MatchingScoreResult s = matching_score(m, ka, kb, warp, size, size, 3.0);
  if (a.valid && s.valid) {
    int denom = std::min(s.covisible_a, s.covisible_b);
    CHECK(s.value == Catch::Approx(a.value * a.putative / denom).margin(1e-12));
    CHECK(s.correct == a.correct);  // both count the same correct matches
  }
}
