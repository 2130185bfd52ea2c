#include <gtest/gtest.h>

#include "foldattn/verify.hpp"

using namespace foldattn;

TEST(Verify, EverySuitePasses) {
  for (const auto& name : suite_names()) {
    const auto results = run_suite(name, 3);
    EXPECT_FALSE(results.empty()) << name;
    for (const auto& r : results) {
      EXPECT_EQ(r.suite, name);
      EXPECT_TRUE(r.passed) << r.suite << ": " << r.name << " " << r.detail;
    }
  }
}

TEST(Verify, AllConcatenatesSuites) {
  std::size_t total = 0;
  for (const auto& name : suite_names()) total += run_suite(name, 1).size();
  EXPECT_EQ(run_suite("all", 1).size(), total);
}

TEST(Verify, UnknownSuiteThrows) { EXPECT_THROW(run_suite("nope"), std::invalid_argument); }

TEST(Verify, RandomSpecsAreValid) {
  Rng rng(9);
  for (int i = 0; i < 100; ++i) {
    const auto spec = random_encoder_spec(rng);
    EXPECT_NO_THROW(spec.validate());
    EXPECT_LE(spec.layers.size(), 4u);
    EXPECT_LE(spec.model_dim, 32u);
  }
}
