#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <limits>
#include <sstream>

#include "tbps/rtf.hpp"

using namespace tbps;

TEST_CASE("round trip preserves shape and bit patterns") {
  std::vector<float> v{0.0f, -0.0f, 1.5f, -3.25e-20f, std::numeric_limits<float>::max(),
                       std::numeric_limits<float>::denorm_min()};
  const Tensor<float> t(Shape{2, 3}, v);
  std::stringstream ss;
  rtf::write(ss, t);
  const auto back = rtf::read(ss);
  CHECK(back.shape() == t.shape());
  CHECK(std::memcmp(back.data().data(), t.data().data(), v.size() * sizeof(float)) == 0);
}

TEST_CASE("header is ASCII and payload little-endian") {
  const Tensor<float> t(Shape{1}, std::vector<float>{1.0f});
  std::stringstream ss;
  rtf::write(ss, t);
  const std::string s = ss.str();
  CHECK(s.substr(0, 9) == "RTF1 1 1\n");
  REQUIRE(s.size() == 13);
  // 1.0f = 0x3f800000
  CHECK(static_cast<unsigned char>(s[9]) == 0x00);
  CHECK(static_cast<unsigned char>(s[12]) == 0x3f);
}

TEST_CASE("three-dimensional tensors") {
  Tensor<float> t(Shape{2, 2, 3});
  for (std::size_t i = 0; i < t.numel(); ++i) t.mutable_data()[i] = static_cast<float>(i);
  std::stringstream ss;
  rtf::write(ss, t);
  CHECK(ss.str().rfind("RTF1 3 2 2 3\n", 0) == 0);
  CHECK(rtf::read(ss).to_vector() == t.to_vector());
}

TEST_CASE("malformed input is a data error") {
  for (const std::string bad : {"", "RTF2 1 1\n....", "RTF1 0\n", "RTF1 2 3\n", "RTF1 1 -2\n", "RTF1 1 1 7\n...."}) {
    std::stringstream ss(bad);
    CHECK_THROWS_AS(rtf::read(ss), DataError);
  }
  std::stringstream truncated(std::string("RTF1 1 4\n") + std::string(10, '\0'));
  CHECK_THROWS_AS(rtf::read(truncated, "x.rtf"), DataError);
}

TEST_CASE("file helpers") {
  const auto path = std::filesystem::temp_directory_path() / "tbps_rtf_test.rtf";
  const Tensor<float> t(Shape{3}, std::vector<float>{1, 2, 3});
  rtf::save(path, t);
  CHECK(rtf::load(path).to_vector() == t.to_vector());
  std::filesystem::remove(path);
  try {
    rtf::load(path);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("tbps_rtf_test.rtf") != std::string::npos);
  }
}
