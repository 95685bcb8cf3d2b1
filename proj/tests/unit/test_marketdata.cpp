#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <cstdint>
#include <sstream>

#include "volregime/marketdata.hpp"

namespace vr = volregime;

namespace {

vr::PriceSeries from_text(const std::string& text, vr::SourceFormat fmt = vr::SourceFormat::Auto) {
  std::istringstream in(text);
  return vr::parse_prices(in, fmt);
}

std::vector<vr::ReturnObservation> synthetic_returns(std::size_t n) {
  std::vector<vr::ReturnObservation> out;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = 0.001 * static_cast<double>(i + 1);
    out.push_back({vr::Date{}, r, r * r});
  }
  return out;
}

std::vector<vr::WindowSample> n_samples(std::size_t n, std::size_t w = 1) {
  return vr::build_windows(synthetic_returns(n + w), w);
}

}  // namespace

TEST(LoadPrices, ThreeRowTwoColumnFile) {
  const auto s = vr::load_prices(std::string(VOLREGIME_TEST_FIXTURES) + "/date_close.csv");
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s.points[0].close, 100.0);
  EXPECT_EQ(s.points[1].close, 110.0);
  EXPECT_EQ(s.points[2].close, 99.0);
  EXPECT_FALSE(s.reordered);
}

TEST(LoadPrices, StooqGoldenFixtureUsesCloseColumn) {
  const auto s = vr::load_prices(std::string(VOLREGIME_TEST_FIXTURES) + "/stooq_5rows.csv",
                                 vr::SourceFormat::Stooq);
  ASSERT_EQ(s.size(), 5u);
  EXPECT_EQ(vr::format_date(s.points.front().date), "2024-01-02");
  EXPECT_EQ(vr::format_date(s.points.back().date), "2024-01-08");
  EXPECT_EQ(s.points[0].close, 4742.83);
  EXPECT_EQ(s.points[4].close, 4763.54);

  // Reference values computed independently (Python math.log on the same closes).
  const auto r = vr::compute_returns(s);
  const double expected[] = {-0.00804861430897457, -0.003434296699869414, 0.0018240092336748459,
                             0.014015987132365047};
  ASSERT_EQ(r.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(r[i].log_return, expected[i], 1e-15);
}

TEST(LoadPrices, ZeroCloseIsValidationError) {
  try {
    from_text("Date,Close\n2024-01-02,100\n2024-01-03,0\n");
    FAIL() << "expected throw";
  } catch (const vr::Error& e) {
    EXPECT_EQ(e.kind(), vr::ErrorKind::Validation);
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
}

TEST(LoadPrices, MalformedRowReportsLineNumber) {
  try {
    from_text("Date,Close\n2024-01-02,100\n2024-01-03,abc\n");
    FAIL() << "expected throw";
  } catch (const vr::ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  try {
    from_text("Date,Close\n2024-13-02,100\n");
    FAIL() << "expected throw";
  } catch (const vr::ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  EXPECT_THROW(from_text("Date,Close\n2024-01-02,100,7\n"), vr::ParseError);
}

TEST(LoadPrices, HeaderMustMatchRequestedLayout) {
  EXPECT_THROW(from_text("Date,Price\n2024-01-02,1\n"), vr::ParseError);
  EXPECT_THROW(from_text("Date,Close\n2024-01-02,1\n", vr::SourceFormat::Stooq), vr::ParseError);
}

TEST(LoadPrices, UnsortedRowsAreSortedWithFlag) {
  const auto s = from_text("Date,Close\n2024-01-03,110\n2024-01-02,100\n2024-01-04,99\n");
  EXPECT_TRUE(s.reordered);
  EXPECT_EQ(s.points[0].close, 100.0);
  EXPECT_EQ(s.points[1].close, 110.0);
}

TEST(LoadPrices, DuplicateDateRejected) {
  try {
    from_text("Date,Close\n2024-01-02,100\n2024-01-02,101\n");
    FAIL();
  } catch (const vr::Error& e) {
    EXPECT_EQ(e.kind(), vr::ErrorKind::Validation);
  }
}

TEST(LoadPrices, MissingFile) {
  EXPECT_THROW(vr::load_prices("/nonexistent/prices.csv"), vr::Error);
}

TEST(ComputeReturns, ConstantPriceGivesZero) {
  const auto r = vr::compute_returns(from_text("Date,Close\n2024-01-02,100\n2024-01-03,100\n"));
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0].log_return, 0.0);
  EXPECT_EQ(r[0].realized_variance, 0.0);
}

TEST(ComputeReturns, HighPrecisionReferenceValues) {
  // ln(1.1), ln(1.1)^2 and ln(0.9) from a 30-digit evaluation.
  auto up = vr::compute_returns(from_text("Date,Close\n2024-01-02,100\n2024-01-03,110\n"));
  EXPECT_NEAR(up[0].log_return, 0.0953101798043248600, 1e-16);
  EXPECT_NEAR(up[0].realized_variance, 0.00908403037433273442, 1e-16);
  auto down = vr::compute_returns(from_text("Date,Close\n2024-01-02,100\n2024-01-03,90\n"));
  EXPECT_NEAR(down[0].log_return, -0.105360515657826301, 1e-16);
}

TEST(ComputeReturns, VarianceIsExactSquare) {
  const auto s = vr::load_prices(std::string(VOLREGIME_TEST_FIXTURES) + "/stooq_5rows.csv");
  for (const auto& o : vr::compute_returns(s)) {
    EXPECT_EQ(o.realized_variance, o.log_return * o.log_return);
    EXPECT_GE(o.realized_variance, 0.0);
  }
}

TEST(ComputeReturns, TooShort) {
  try {
    vr::compute_returns(from_text("Date,Close\n2024-01-02,100\n"));
    FAIL();
  } catch (const vr::Error& e) {
    EXPECT_EQ(e.kind(), vr::ErrorKind::EmptyInput);
  }
}

TEST(BuildWindows, CountsMatchEnumeration) {
  const auto ten = synthetic_returns(10);
  EXPECT_EQ(vr::build_windows(ten, 7).size(), 3u);

  const auto eight = synthetic_returns(8);
  const auto one = vr::build_windows(eight, 7);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].target_index(), 7u);
  EXPECT_EQ(one[0].target, eight[7].realized_variance);

  try {
    vr::build_windows(synthetic_returns(7), 7);
    FAIL();
  } catch (const vr::Error& e) {
    EXPECT_EQ(e.kind(), vr::ErrorKind::EmptyInput);
  }
}

TEST(BuildWindows, ContiguityProperty) {
  const auto obs = synthetic_returns(40);
  for (std::size_t w : {1u, 3u, 7u, 22u}) {
    const auto samples = vr::build_windows(obs, w);
    ASSERT_EQ(samples.size(), obs.size() - w);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto& s = samples[i];
      ASSERT_EQ(s.history.size(), w);
      EXPECT_EQ(s.start_index(), i);
      for (std::size_t k = 0; k < w; ++k)
        EXPECT_EQ(s.history[k].log_return, obs[i + k].log_return);
      EXPECT_EQ(s.target, obs[s.end_index + 1].realized_variance);
    }
  }
}

TEST(SplitChronological, FloorArithmetic) {
  auto a = vr::split_chronological(n_samples(100), 0.7);
  EXPECT_EQ(a.train.size(), 70u);
  EXPECT_EQ(a.test.size(), 30u);
  auto b = vr::split_chronological(n_samples(3), 0.7);
  EXPECT_EQ(b.train.size(), 2u);
  EXPECT_EQ(b.test.size(), 1u);
  auto c = vr::split_chronological(n_samples(100), 0.29);
  EXPECT_EQ(c.train.size(), 29u);
}

TEST(SplitChronological, Preconditions) {
  try {
    vr::split_chronological(n_samples(10), 1.2);
    FAIL();
  } catch (const vr::Error& e) {
    EXPECT_EQ(e.kind(), vr::ErrorKind::Precondition);
  }
  EXPECT_THROW(vr::split_chronological(n_samples(10), 0.0), vr::Error);
  try {
    vr::split_chronological({}, 0.7);
    FAIL();
  } catch (const vr::Error& e) {
    EXPECT_EQ(e.kind(), vr::ErrorKind::EmptyInput);
  }
}

TEST(SplitChronological, BoundarySeparatesTargets) {
  for (std::size_t n : {2u, 5u, 17u, 100u}) {
    for (double f : {0.1, 0.5, 0.7, 0.9}) {
      const auto s = vr::split_chronological(n_samples(n, 7), f);
      for (const auto& t : s.train) EXPECT_LE(t.target_index(), s.spec.boundary_index);
      for (const auto& t : s.test) EXPECT_GT(t.target_index(), s.spec.boundary_index);
      if (!s.train.empty() && !s.test.empty()) {
        EXPECT_LT(s.train.back().target_index(), s.test.front().target_index());
      }
    }
  }
}

TEST(TrainingQuantile, NearestRank) {
  std::vector<vr::WindowSample> train;
  for (int i = 1; i <= 10; ++i) {
    vr::WindowSample s;
    s.target = i * 1e-4;
    train.push_back(s);
  }
  EXPECT_EQ(vr::training_quantile(train, 0.0), 1e-4);
  EXPECT_EQ(vr::training_quantile(train, 1.0), 10 * 1e-4);
  EXPECT_EQ(vr::training_quantile(train, 0.8), 8 * 1e-4);
  EXPECT_THROW(vr::training_quantile(std::vector<vr::WindowSample>{}, 0.8), vr::Error);
}

TEST(TrainingQuantile, MatchesBruteForceRank) {
  // Oracle: the smallest value v such that at least ceil(q n) of the values are <= v.
  std::vector<double> values;
  for (int i = 0; i < 37; ++i) values.push_back(((i * 7919) % 101) * 1e-5);
  for (double q : {0.05, 0.25, 0.5, 0.8, 0.95}) {
    const auto need = static_cast<std::size_t>(std::ceil(q * 37 - 1e-9));
    double oracle = 1e9;
    for (double v : values) {
      std::size_t le = 0;
      for (double u : values) le += u <= v;
      if (le >= need && v < oracle) oracle = v;
    }
    EXPECT_EQ(vr::nearest_rank_quantile(values, q), oracle) << q;
  }
}

TEST(MarketData, DeterministicDerivation) {
  const auto path = std::string(VOLREGIME_TEST_FIXTURES) + "/stooq_5rows.csv";
  const auto a = vr::compute_returns(vr::load_prices(path));
  const auto b = vr::compute_returns(vr::load_prices(path));
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].date, b[i].date);
    EXPECT_EQ(std::bit_cast<std::uint64_t>(a[i].log_return),
              std::bit_cast<std::uint64_t>(b[i].log_return));
    EXPECT_EQ(std::bit_cast<std::uint64_t>(a[i].realized_variance),
              std::bit_cast<std::uint64_t>(b[i].realized_variance));
  }
}
