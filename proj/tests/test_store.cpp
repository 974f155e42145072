#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <sstream>

#include "pbsm/store_io.hpp"

using namespace pbsm;

namespace {

template <std::size_t D>
void expect_identical(const SurrogateStore<D>& a, const SurrogateStore<D>& b) {
  ASSERT_EQ(a.size(), b.size());
  EXPECT_EQ(a.m, b.m);
  EXPECT_EQ(a.k_default, b.k_default);
  EXPECT_EQ(std::memcmp(&a.eta, &b.eta, sizeof(double)), 0);
  EXPECT_EQ(a.provenance, b.provenance);
  EXPECT_EQ(a.model.id, b.model.id);
  EXPECT_EQ(a.model.C, b.model.C);
  EXPECT_EQ(a.model.params, b.model.params);
  EXPECT_EQ(a.design.generator, b.design.generator);
  EXPECT_EQ(a.design.level, b.design.level);
  EXPECT_EQ(a.design.spacing, b.design.spacing);
  EXPECT_EQ(std::memcmp(a.design.points.data(), b.design.points.data(), a.size() * D * sizeof(double)), 0);
  EXPECT_EQ(std::memcmp(a.observations.data(), b.observations.data(), a.observations.size() * sizeof(double)), 0);
  EXPECT_EQ(std::memcmp(a.functional_values.data(), b.functional_values.data(), a.size() * sizeof(double)), 0);
}

SurrogateStore<1> radius_store() {
  ForwardSampler<1> f = [](const Point<1>& t) {
    return ForwardSample{{std::exp(-t[0]) / 3.0, std::sqrt(2.0) * t[0], -1e-300}, 0.1 + t[0] / 7.0, std::nullopt};
  };
  PreprocessOptions opt;
  opt.provenance = hex64(fnv1a("radius test"));
  opt.eta = 1e-8;
  return preprocess(build_design_dyadic_1d(0.0, 1.0, 4), models::radius(6.0), f, opt);
}

}  // namespace

TEST(Store, Fnv1a) {
  // reference values of 64-bit FNV-1a
  EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");
}

TEST(Store, RoundTrip1d) {
  const auto store = radius_store();
  std::stringstream buffer;
  write_store(buffer, store);
  const auto loaded = read_store<1>(buffer);
  expect_identical(store, loaded);
  EXPECT_EQ(evaluate_surrogate<1>({0.31}, store), evaluate_surrogate<1>({0.31}, loaded));

  std::stringstream again;
  write_store(again, loaded);
  std::stringstream first;
  write_store(first, store);
  EXPECT_EQ(first.str(), again.str());
}

TEST(Store, RoundTrip2d) {
  ForwardSampler<2> f = [](const Point<2>& c) {
    return ForwardSample{{c[0] * 0.1, c[1] / 3.0}, 1.0 + std::hypot(c[0], c[1]), std::nullopt};
  };
  PreprocessOptions opt;
  opt.k_default = 3;
  const auto store = preprocess(build_design_triangular_2d(5.0, 0.25, 0.9), models::anomaly(6.0, 0.25, 5.0), f, opt);
  std::stringstream buffer;
  write_store(buffer, store);
  const auto loaded = read_store<2>(buffer);
  expect_identical(store, loaded);
  EXPECT_EQ(loaded.model.domain.radius, 4.75);
  EXPECT_EQ(evaluate_surrogate<2>({1.0, -2.0}, store), evaluate_surrogate<2>({1.0, -2.0}, loaded));
}

TEST(Store, FileRoundTrip) {
  const auto store = radius_store();
  const auto path = std::filesystem::temp_directory_path() / "pbsm_store_roundtrip.pbsm";
  save_store(path, store);
  expect_identical(store, load_store<1>(path));
  std::filesystem::remove(path);
  EXPECT_THROW(load_store<1>(path), MissingArtifact);
}

TEST(Store, RejectsMalformedInput) {
  std::stringstream bad_magic("NOT-A-STORE\n");
  EXPECT_THROW(read_store<1>(bad_magic), FormatError);

  const auto store = radius_store();
  std::stringstream buffer;
  write_store(buffer, store);
  const std::string bytes = buffer.str();

  std::stringstream truncated(bytes.substr(0, bytes.size() - 5));
  EXPECT_THROW(read_store<1>(truncated), FormatError);

  std::stringstream wrong_dim(bytes);
  EXPECT_THROW(read_store<2>(wrong_dim), FormatError);

  std::string tampered = bytes;
  tampered.replace(tampered.find("\nC "), 3, "\nC 9");
  std::stringstream tampered_stream(tampered);
  EXPECT_THROW(read_store<1>(tampered_stream), FormatError);
}
