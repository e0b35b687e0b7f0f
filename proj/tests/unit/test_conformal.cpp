#include <doctest.h>

#include <algorithm>
#include <sstream>

#include "certiguard/conformal.hpp"

using namespace certiguard;
using namespace certiguard::conformal;

TEST_SUITE("conformal") {

TEST_CASE("quantile_index ranks") {
  CHECK(quantile_index(19, 0.05).rank == 19);
  CHECK(quantile_index(10, 0.25).rank == 9);
  const auto over = quantile_index(5, 0.05);
  CHECK(over.overflow());
  CHECK(over.rank == 6);
  CHECK_FALSE(quantile_index(10, 0.25).overflow());
}

TEST_CASE("quantile_index rejects bad input") {
  CHECK_THROWS_AS(quantile_index(0, 0.25), std::invalid_argument);
  CHECK_THROWS_AS(quantile_index(10, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(quantile_index(10, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(quantile_index(10, -0.1), std::invalid_argument);
}

TEST_CASE("rank stays in [1, k+1] and is monotone in alpha") {
  Rng rng(11);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t k = 1 + rng.below(300);
    const double a1 = rng.uniform(1e-4, 0.999);
    const double a2 = rng.uniform(1e-4, 0.999);
    const auto r1 = quantile_index(k, std::min(a1, a2)).rank;
    const auto r2 = quantile_index(k, std::max(a1, a2)).rank;
    CHECK(r1 >= 1);
    CHECK(r1 <= k + 1);
    CHECK(r2 <= r1);
  }
}

TEST_CASE("conformal_bound examples") {
  CHECK(conformal_bound(ScoreSet({0.1, 0.2, 0.3}, 0.25)).value() == doctest::Approx(0.3));
  CHECK(conformal_bound(ScoreSet({0.5}, 0.5)).value() == doctest::Approx(0.5));
  CHECK_FALSE(conformal_bound(ScoreSet({0.1, 0.2}, 0.1)).is_finite());
  CHECK_THROWS_AS(conformal_bound(ScoreSet({}, 0.25)), std::invalid_argument);
  CHECK_THROWS_AS(ScoreSet({-0.1}, 0.25), std::invalid_argument);
}

TEST_CASE("conformal_bound ignores input order") {
  CHECK(conformal_bound(ScoreSet({0.3, 0.1, 0.2}, 0.25)) ==
        conformal_bound(ScoreSet({0.1, 0.2, 0.3}, 0.25)));
}

TEST_CASE("Bound arithmetic") {
  const auto inf = Bound::unbounded();
  CHECK_THROWS_AS(inf.value(), std::logic_error);
  CHECK(inf.covers(1e300));
  CHECK_FALSE(inf.plus(1.0).is_finite());
  CHECK(Bound::finite(0.2).plus(0.1).value() == doctest::Approx(0.3));
  CHECK_FALSE(Bound::max(Bound::finite(1.0), inf).is_finite());
  CHECK(Bound::max(Bound::finite(1.0), Bound::finite(2.0)).value() == 2.0);
  CHECK(bound_from_json(to_json(inf)) == inf);
  CHECK(bound_from_json(to_json(Bound::finite(0.25))) == Bound::finite(0.25));
}

TEST_CASE("eps-net examples") {
  const auto one = build_eps_net(Box{{0.0}, {1.0}}, 0.25);
  REQUIRE(one.points.size() == 2);
  CHECK(one.points[0](0) == doctest::Approx(0.25));
  CHECK(one.points[1](0) == doctest::Approx(0.75));

  const auto single = build_eps_net(Box{{0.0}, {1.0}}, 2.0);
  REQUIRE(single.points.size() == 1);
  CHECK(single.points[0](0) == doctest::Approx(0.5));

  CHECK_THROWS_AS(build_eps_net(Box{{0.0}, {1.0}}, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(build_eps_net(Box{{0.0}, {1.0}}, -1.0), std::invalid_argument);
}

TEST_CASE("eps-net covers the box") {
  const Box box{{0.0, 0.0}, {1.5, 3.0}};
  const auto net = build_eps_net(box, 0.1);
  CHECK(net.spacing <= 0.1 * std::sqrt(2.0) + 1e-12);
  Rng rng(3);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) worst = std::max(worst, covering_distance(net, box.sample(rng)));
  CHECK(worst <= 0.1 + 1e-12);
  // Corners are the farthest points from a cell-centred grid.
  for (double x : {0.0, 1.5}) {
    for (double y : {0.0, 3.0}) {
      Eigen::VectorXd c(2);
      c << x, y;
      CHECK(covering_distance(net, c) <= 0.1 + 1e-12);
    }
  }
}

TEST_CASE("empirical_coverage examples") {
  CHECK(empirical_coverage(Bound::unbounded(), std::vector<double>{5.0, 6.0}) == 1.0);
  CHECK(empirical_coverage(Bound::finite(0.5), std::vector<double>{0.1, 0.6, 0.4, 0.5}) ==
        doctest::Approx(0.75));
}

TEST_CASE("combined bound adds the covering slack") {
  CHECK(combined_error_bound(Bound::finite(0.32), 1.0, 0.01).value() == doctest::Approx(0.34));
  CHECK_FALSE(combined_error_bound(Bound::unbounded(), 1.0, 0.01).is_finite());
}

TEST_CASE("one-point net with synthetic scores") {
  const auto net = build_eps_net(Box{{0.0}, {1.0}}, 2.0);
  int calls = 0;
  const auto cal = calibrate(
      net, [&](const Eigen::VectorXd&, Rng&) { return 0.01 * (++calls); },
      [](double s) {
        Eigen::VectorXd v(1);
        v << 0.5 + s;
        return v;
      },
      CalibrationOptions{10, 0.25, 0.0, 0, 1});
  REQUIRE(cal.per_point.size() == 1);
  CHECK(cal.per_point[0].bound.value() == doctest::Approx(0.09));
  CHECK(cal.sup_bound.value() == doctest::Approx(0.09));
}

TEST_CASE("perfect perception gives the covering term alone") {
  const auto net = build_eps_net(Box{{0.0, 0.0}, {1.0, 1.0}}, 0.1);
  const auto cal = calibrate(
      net, [](const Eigen::VectorXd& x, Rng&) { return x; },
      [](const Eigen::VectorXd& y) { return y; }, CalibrationOptions{20, 0.25, 1.5, 0, 1});
  CHECK(cal.sup_bound.value() == 0.0);
  CHECK(cal.combined_bound.value() == doctest::Approx(2.5 * 0.1));
}

TEST_CASE("calibrate rejects too few samples") {
  const auto net = build_eps_net(Box{{0.0}, {1.0}}, 2.0);
  CHECK(min_samples_for(0.25) == 3);
  CHECK_THROWS_AS(calibrate(
                      net, [](const Eigen::VectorXd& x, Rng&) { return x; },
                      [](const Eigen::VectorXd& y) { return y; },
                      CalibrationOptions{2, 0.25, 0.0, 0, 1}),
                  std::invalid_argument);
}

TEST_CASE("calibration is independent of the worker count") {
  const auto net = build_eps_net(Box{{0.0, 0.0}, {1.0, 1.0}}, 0.2);
  auto sampler = [](const Eigen::VectorXd& x, Rng& rng) {
    Eigen::VectorXd y = x;
    y(0) += rng.normal(0.0, 0.1);
    return y;
  };
  auto id = [](const Eigen::VectorXd& y) { return y; };
  const auto a = calibrate(net, sampler, id, CalibrationOptions{30, 0.25, 1.0, 9, 1});
  const auto b = calibrate(net, sampler, id, CalibrationOptions{30, 0.25, 1.0, 9, 3});
  CHECK(a.combined_bound == b.combined_bound);
  const auto round = calibration_from_json(to_json(a));
  CHECK(round.combined_bound == a.combined_bound);
  CHECK(round.per_point.size() == a.per_point.size());
}

TEST_CASE("score histogram csv") {
  std::ostringstream os;
  write_score_histogram_csv(os, std::vector<double>{0.01, 0.03, 0.05}, 0.04);
  CHECK(os.str().rfind("score,count\n", 0) == 0);
}

}
