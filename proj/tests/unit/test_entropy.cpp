#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "efaprune/entropy.hpp"
#include "test_support.hpp"

using namespace efaprune;
using testing::error_code_of;

namespace {

std::vector<double> random_weights(std::size_t n, std::uint64_t seed) {
  const Tensor t = testing::random_tensor({n}, seed);
  return {t.values().begin(), t.values().end()};
}

}  // namespace

TEST_CASE("histogram entropy of simple vectors") {
  SUBCASE("point mass has zero entropy") {
    const std::vector<double> w(27, 0.3);
    CHECK(filter_entropy(w, 10) == 0.0);
    const auto h = weight_histogram(w, 11);
    CHECK(h.probabilities[5] == 1.0);
  }
  SUBCASE("one weight per bin is uniform") {
    const std::vector<double> w{0, 1, 2, 3};
    const auto h = weight_histogram(w, 4);
    for (double p : h.probabilities) CHECK(p == 0.25);
    CHECK(histogram_entropy(h) == doctest::Approx(std::log(4.0)));
  }
  SUBCASE("nine weights in three bins") {
    const std::vector<double> w{0, 0.1, 0.2, 0.5, 1, 1.4, 1.6, 2.9, 3};
    const auto h = weight_histogram(w, 3);
    CHECK(h.bin_edges == std::vector<double>{0, 1, 2, 3});
    CHECK(h.probabilities[0] == doctest::Approx(4.0 / 9));
    CHECK(h.probabilities[1] == doctest::Approx(3.0 / 9));
    CHECK(h.probabilities[2] == doctest::Approx(2.0 / 9));
  }
  SUBCASE("1000 distinct values in 1000 bins") {
    std::vector<double> w(1000);
    std::iota(w.begin(), w.end(), 0.0);
    CHECK(filter_entropy(w, 1000) == doctest::Approx(std::log(1000.0)).epsilon(1e-12));
  }
  SUBCASE("{0,0,1,2} in three bins") {
    const double expected = -(0.5 * std::log(0.5) + 2 * 0.25 * std::log(0.25));
    CHECK(filter_entropy(std::vector<double>{0, 0, 1, 2}, 3) == doctest::Approx(expected));
    CHECK(expected == doctest::Approx(1.0397).epsilon(1e-4));
  }
  SUBCASE("invalid input") {
    CHECK(error_code_of([] { filter_entropy(std::vector<double>{}, 4); }) == ErrorCode::invalid_argument);
    CHECK(error_code_of([] { filter_entropy(std::vector<double>{1, 2}, 1); }) == ErrorCode::invalid_argument);
    CHECK(error_code_of([] { filter_entropy(std::vector<double>{1, NAN}, 4); }) == ErrorCode::numerical);
  }
}

TEST_CASE("values outside supplied edges fall into the end bins") {
  const std::vector<double> edges{0, 1, 2};
  const auto h = weight_histogram(std::vector<double>{-5, 0.5, 7, 2}, 2, &edges);
  CHECK(h.probabilities == std::vector<double>{0.5, 0.5});
}

TEST_CASE("layer cross-entropy examples") {
  SUBCASE("disjoint halves") {
    const double ce = layer_cross_entropy(std::vector<double>{1, 1}, std::vector<double>{-1, 1}, 2);
    CHECK(ce == doctest::Approx(std::log(2.0)).epsilon(1e-9));
  }
  SUBCASE("missing bin hits the smoothing floor") {
    const double expected = 0.5 * -std::log(kCrossEntropySmoothing) + 0.5 * -std::log(0.5 + kCrossEntropySmoothing);
    const double ce = layer_cross_entropy(std::vector<double>{5, 12}, std::vector<double>{0, 12}, 4);
    CHECK(ce == doctest::Approx(expected).epsilon(1e-12));
    CHECK(ce == doctest::Approx(14.16208).epsilon(1e-6));
  }
  SUBCASE("self cross-entropy equals the shared-bin entropy") {
    const auto w = random_weights(500, 3);
    CHECK(layer_cross_entropy(w, w, 50) == doctest::Approx(shared_bin_entropy(w, w, 50)).epsilon(1e-9));
  }
  SUBCASE("norm choice") {
    CHECK(parse_weight_norm("l1") == WeightNorm::l1);
    CHECK(std::string(weight_norm_name(WeightNorm::max)) == "max");
    CHECK(error_code_of([] { parse_weight_norm("l3"); }) == ErrorCode::invalid_argument);
    // Unit scaling makes the result independent of the raw magnitudes.
    const auto a = random_weights(200, 4), b = random_weights(300, 5);
    std::vector<double> a3 = a, b7 = b;
    for (double& v : a3) v *= 4.0;
    for (double& v : b7) v *= 0.5;
    for (WeightNorm n : {WeightNorm::l1, WeightNorm::l2, WeightNorm::max})
      CHECK(layer_cross_entropy(a3, b7, 64, n) == doctest::Approx(layer_cross_entropy(a, b, 64, n)));
  }
}

TEST_CASE("entropy properties on random filters") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 9 + rng() % 300;
    const std::size_t m = 2 + rng() % 100;
    auto w = random_weights(n, 100 + trial);
    const double h = filter_entropy(w, m);
    CAPTURE(trial);
    CHECK(h >= 0.0);
    CHECK(h <= std::log(static_cast<double>(m)) + 1e-12);
    CHECK(h <= std::log(static_cast<double>(n)) + 1e-12);

    std::shuffle(w.begin(), w.end(), rng);
    CHECK(filter_entropy(w, m) == doctest::Approx(h).epsilon(1e-12));

    std::vector<double> scaled = w;
    for (double& v : scaled) v *= 2.0;
    CHECK(filter_entropy(scaled, m) == doctest::Approx(h).epsilon(1e-12));
    std::vector<double> mirrored = w;
    for (double& v : mirrored) v = -v;
    CHECK(filter_entropy(mirrored, m) == doctest::Approx(h).epsilon(1e-12));
  }
}

TEST_CASE("cross-entropy is never below the shared-bin entropy") {
  for (int trial = 0; trial < 200; ++trial) {
    const auto a = random_weights(50 + trial, 1000 + trial);
    auto b = random_weights(80 + 2 * trial, 5000 + trial);
    if (trial % 2)
      for (double& v : b) v = v * v;
    for (std::size_t m : {4, 32, 1000}) {
      const double ce = layer_cross_entropy(a, b, m);
      CHECK(ce + 1e-9 >= shared_bin_entropy(a, b, m));
    }
  }
}

TEST_CASE("entropy report structure") {
  const ModelSpec model = testing::small_cnn({2, 6, 6}, 3, {4, 5, 6}, 2);
  const EntropyReport rep = entropy_report(model, 32, WeightNorm::l1);
  CHECK(rep.bin_count == 32);
  CHECK(rep.norm == WeightNorm::l1);
  REQUIRE(rep.layers.size() == 3);
  CHECK_FALSE(rep.layers[0].cross_entropy.has_value());
  CHECK(rep.layers[0].predecessor.empty());
  const std::size_t widths[] = {4, 5, 6};
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& l = rep.layers[i];
    CHECK(l.filter_entropies.size() == widths[i]);
    const Tensor& w = model.parameters.at(l.layer + ".weight");
    const std::size_t per = w.size() / w.dim(0);
    for (std::size_t j = 0; j < widths[i]; ++j)
      CHECK(l.filter_entropies[j] == filter_entropy(w.values().subspan(j * per, per), 32));
    if (i > 0) {
      CHECK(l.predecessor == rep.layers[i - 1].layer);
      REQUIRE(l.cross_entropy.has_value());
      CHECK(*l.cross_entropy == layer_cross_entropy(w.values(),
                                                    model.parameters.at(l.predecessor + ".weight").values(), 32,
                                                    WeightNorm::l1));
    }
  }
}
