#include <catch_amalgamated.hpp>

#include "vrfear/metrics.hpp"
#include "vrfear/random.hpp"

using namespace vrfear;

namespace {

// Frame counts for levels 0..5 in the reference label distribution.
constexpr std::array<int, 6> kPublishedCounts{5818, 2939, 808, 325, 105, 4};

}  // namespace

TEST_CASE("perfect predictions", "[metrics]") {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int> truths(1 + rng.below(200));
    for (int& t : truths) t = static_cast<int>(rng.below(6));
    const auto r = evaluate(truths, truths, 6);
    CHECK(r.accuracy == 1.0);
    for (const auto& m : r.per_class) {
      if (m.f1_undefined) continue;
      CHECK(m.f1 == 1.0);
      CHECK(m.precision == 1.0);
      CHECK(m.recall == 1.0);
    }
  }
}

TEST_CASE("hand-countable case", "[metrics]") {
  const std::vector<int> truths{0, 0, 1, 1}, preds{0, 1, 0, 1};
  const auto r = evaluate(preds, truths, 2);
  CHECK(r.accuracy == 0.5);
  CHECK(r.per_class[0].recall == 0.5);
  CHECK(r.per_class[1].recall == 0.5);
  CHECK(r.per_class[0].precision == 0.5);
  CHECK(r.confusion == std::vector<std::vector<std::int64_t>>{{1, 1}, {1, 1}});
  CHECK(r.macro_f1 == 0.5);
}

TEST_CASE("always predicting level 0 on the reference distribution", "[metrics]") {
  std::vector<int> truths;
  for (int l = 0; l < 6; ++l) truths.insert(truths.end(), static_cast<std::size_t>(kPublishedCounts[static_cast<std::size_t>(l)]), l);
  const std::vector<int> zeros(truths.size(), 0);
  const auto r = evaluate(zeros, truths, 6);
  CHECK(std::abs(r.accuracy - 0.5818) <= 1e-4);
  CHECK(r.per_class[0].recall == 1.0);
  CHECK(r.per_class[3].recall == 0.0);
  CHECK_FALSE(r.per_class[3].f1_undefined);
}

TEST_CASE("report invariants on random sets", "[metrics]") {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const int k = 2 + static_cast<int>(rng.below(5));
    std::vector<int> truths(1 + rng.below(300)), preds(truths.size());
    for (std::size_t i = 0; i < truths.size(); ++i) {
      truths[i] = static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
      preds[i] = rng.uniform() < 0.5 ? truths[i] : static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
    }
    const auto r = evaluate(preds, truths, k);
    std::int64_t trace = 0;
    for (int c = 0; c < k; ++c) {
      std::int64_t row = 0;
      for (auto v : r.confusion[static_cast<std::size_t>(c)]) row += v;
      CHECK(row == std::count(truths.begin(), truths.end(), c));
      trace += r.confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)];
    }
    CHECK(r.accuracy == static_cast<double>(trace) / static_cast<double>(truths.size()));

    double weighted = 0.0;
    for (const auto& m : r.per_class) weighted += m.recall * static_cast<double>(m.support);
    CHECK(r.weighted_recall == Catch::Approx(weighted / static_cast<double>(truths.size())));
    CHECK(r.weighted_recall == r.accuracy);

    // Reordering the (prediction, truth) pairs changes nothing.
    std::vector<std::size_t> order(truths.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(std::span<std::size_t>(order));
    std::vector<int> t2, p2;
    for (auto i : order) {
      t2.push_back(truths[i]);
      p2.push_back(preds[i]);
    }
    const auto r2 = evaluate(p2, t2, k);
    CHECK(r2.confusion == r.confusion);
    CHECK(r2.macro_f1 == r.macro_f1);
  }
}

TEST_CASE("metrics errors", "[metrics]") {
  const std::vector<int> a{0, 1}, b{0};
  const auto code = [](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code();
    }
    return std::string("ok");
  };
  CHECK(code([&] { evaluate(a, b, 2); }) == "length_mismatch");
  CHECK(code([&] { evaluate(std::vector<int>{}, std::vector<int>{}, 2); }) == "empty_input");
  CHECK(code([&] { evaluate(std::vector<int>{2}, std::vector<int>{0}, 2); }) == "label_out_of_range");
}

TEST_CASE("report serialisation", "[metrics]") {
  const std::vector<int> truths{0, 1, 1, 2}, preds{0, 1, 2, 2};
  const auto r = evaluate(preds, truths, 3);
  const auto j = report_to_json(r);
  CHECK(j["accuracy"] == 0.75);
  CHECK(j["per_class"].size() == 3);
  CHECK(j["weighted"]["recall"] == 0.75);
  const auto text = report_to_text(r);
  CHECK(text.find("accuracy  0.7500") != std::string::npos);
  CHECK(text.find("confusion") != std::string::npos);
}
