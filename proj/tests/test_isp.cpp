#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "ivsp/bayer.hpp"

using namespace ivsp;

namespace {

BayerFrame random_frame(int64_t h, int64_t w, uint64_t seed, BayerPattern p = BayerPattern::RGGB) {
  BayerFrame f(h, w, p);
  Rng rng(seed);
  for (float& v : f.mosaic) v = static_cast<float>(rng.uniform(0.02, 0.98));
  return f;
}

}  // namespace

TEST_CASE("pattern geometry") {
  CHECK(channel_at(BayerPattern::RGGB, 0, 0) == 0);
  CHECK(channel_at(BayerPattern::RGGB, 0, 1) == 1);
  CHECK(channel_at(BayerPattern::RGGB, 1, 0) == 1);
  CHECK(channel_at(BayerPattern::RGGB, 1, 1) == 2);
  CHECK(channel_at(BayerPattern::BGGR, 0, 0) == 2);
  CHECK(channel_at(BayerPattern::GRBG, 0, 1) == 0);
  CHECK(channel_at(BayerPattern::GBRG, 1, 0) == 0);
  CHECK(pattern_from_name("GRBG") == BayerPattern::GRBG);
  CHECK_THROWS_AS(pattern_from_name("XYZW"), DataError);
}

TEST_CASE("frame invariants") {
  CHECK_THROWS_AS(BayerFrame(3, 4), ShapeError);  // odd height
  BayerFrame f(2, 2);
  f.wb_gains = {1.0f, 0.0f, 1.0f};
  CHECK_THROWS_AS(f.validate(), DataError);
  f.wb_gains = {1.0f, 1.0f, 1.0f};
  f.mosaic[0] = 1.5f;
  CHECK_THROWS_AS(f.validate(), DataError);
}

TEST_CASE("white balance with unit gains is the identity") {
  BayerFrame f = random_frame(4, 4, 1);
  BayerFrame g = white_balance(f);
  for (size_t i = 0; i < f.mosaic.size(); ++i) CHECK(g.mosaic[i] == f.mosaic[i]);
  CHECK(g.clamp_overflow.empty());
}

TEST_CASE("white balance multiplies R sites only under gains (2,1,1)") {
  BayerFrame f(4, 4, BayerPattern::RGGB);
  for (float& v : f.mosaic) v = 0.25f;
  f.wb_gains = {2.0f, 1.0f, 1.0f};
  BayerFrame g = white_balance(f);
  for (int64_t y = 0; y < 4; ++y)
    for (int64_t x = 0; x < 4; ++x) {
      float expect = channel_at(f.pattern, y, x) == 0 ? 0.5f : 0.25f;
      CHECK(g.at(y, x) == expect);
    }
}

TEST_CASE("white balance round-trip without clamping") {
  BayerFrame f = random_frame(6, 6, 2);
  for (float& v : f.mosaic) v *= 0.4f;  // keep gains*value below 1
  f.wb_gains = {2.1f, 1.0f, 1.7f};
  BayerFrame back = inverse_white_balance(white_balance(f));
  for (size_t i = 0; i < f.mosaic.size(); ++i)
    CHECK(back.mosaic[i] == doctest::Approx(f.mosaic[i]).epsilon(1e-6));
}

TEST_CASE("clamped sites are restored exactly in session") {
  BayerFrame f(2, 2, BayerPattern::RGGB);
  f.mosaic = {0.9f, 0.2f, 0.2f, 0.3f};
  f.wb_gains = {2.0f, 1.0f, 1.0f};
  BayerFrame wb = white_balance(f);
  CHECK(wb.at(0, 0) == 1.0f);  // 1.8 clamped
  CHECK(wb.clamp_overflow.size() == 1);
  BayerFrame back = inverse_white_balance(wb);
  CHECK(back.at(0, 0) == 0.9f);  // exact, from the retained overflow value
  // persisted inversion (overflow dropped) accepts the loss
  wb.clamp_overflow.clear();
  BayerFrame lossy = inverse_white_balance(wb);
  CHECK(lossy.at(0, 0) == doctest::Approx(0.5f));
}

TEST_CASE("unknown pattern is an error") {
  BayerFrame f = random_frame(4, 4, 3);
  f.pattern = static_cast<BayerPattern>(9);
  CHECK_THROWS_AS(white_balance(f), DataError);
}

TEST_CASE("constant mosaic demosaics to constant channels") {
  for (BayerPattern p : {BayerPattern::RGGB, BayerPattern::BGGR, BayerPattern::GRBG,
                         BayerPattern::GBRG}) {
    BayerFrame f(6, 6, p);
    for (float& v : f.mosaic) v = 0.37f;
    Tensor rgb = demosaic_bilinear(f);
    for (float v : rgb.data()) CHECK(v == doctest::Approx(0.37f));
  }
}

TEST_CASE("remosaic of demosaic recovers the mosaic exactly") {
  for (BayerPattern p : {BayerPattern::RGGB, BayerPattern::GRBG}) {
    BayerFrame f = random_frame(8, 10, 4, p);
    BayerFrame back = remosaic(demosaic_bilinear(f), p);
    for (size_t i = 0; i < f.mosaic.size(); ++i) CHECK(back.mosaic[i] == f.mosaic[i]);
  }
}

TEST_CASE("4x4 ramp: interior G estimate is the mean of its 4 G neighbors") {
  BayerFrame f(4, 4, BayerPattern::RGGB);
  for (int64_t i = 0; i < 16; ++i) f.mosaic[static_cast<size_t>(i)] = static_cast<float>(i) / 16.0f;
  Tensor rgb = demosaic_bilinear(f);
  // (1,1) is a B site; its G estimate averages mosaic (0,1),(2,1),(1,0),(1,2)
  float expect = (1.0f + 9.0f + 4.0f + 6.0f) / 4.0f / 16.0f;
  CHECK(rgb.raw()[1 * 16 + 1 * 4 + 1] == doctest::Approx(expect));
  // (1,2) is a G site in a GB row: R comes from the vertical pair, B horizontal
  float r_expect = (2.0f + 10.0f) / 2.0f / 16.0f;
  float b_expect = (5.0f + 7.0f) / 2.0f / 16.0f;
  CHECK(rgb.raw()[0 * 16 + 1 * 4 + 2] == doctest::Approx(r_expect));
  CHECK(rgb.raw()[2 * 16 + 1 * 4 + 2] == doctest::Approx(b_expect));
}

TEST_CASE("demosaic output stays inside the mosaic value range") {
  BayerFrame f = random_frame(8, 8, 5);
  float lo = 1.0f, hi = 0.0f;
  for (float v : f.mosaic) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  Tensor rgb = demosaic_bilinear(f);
  for (float v : rgb.data()) {
    CHECK(v >= lo);
    CHECK(v <= hi);
  }
}

TEST_CASE("demosaic is 180-degree equivariant") {
  BayerFrame f = random_frame(6, 8, 6, BayerPattern::RGGB);
  BayerFrame rot(6, 8, rotate180(f.pattern));
  for (int64_t y = 0; y < 6; ++y)
    for (int64_t x = 0; x < 8; ++x) rot.at(y, x) = f.at(5 - y, 7 - x);
  Tensor a = demosaic_bilinear(f);
  Tensor b = demosaic_bilinear(rot);
  for (int c = 0; c < 3; ++c)
    for (int64_t y = 0; y < 6; ++y)
      for (int64_t x = 0; x < 8; ++x)
        CHECK(b.raw()[c * 48 + y * 8 + x] ==
              doctest::Approx(a.raw()[c * 48 + (5 - y) * 8 + (7 - x)]));
}

TEST_CASE("odd extents are rejected") {
  BayerFrame f = random_frame(4, 4, 7);
  f.height = 3;
  f.mosaic.resize(12);
  CHECK_THROWS_AS(demosaic_bilinear(f), ShapeError);
}

TEST_CASE("gamma fixed points and reference value") {
  Tensor x(Shape{3}, std::vector<float>{0.0f, 1.0f, 0.5f});
  Tensor y = gamma_encode(x);
  CHECK(y.raw()[0] == 0.0f);
  CHECK(y.raw()[1] == 1.0f);
  CHECK(y.raw()[2] == doctest::Approx(0.72974).epsilon(1e-5));
}

TEST_CASE("gamma round-trip within 1e-6 on a dense grid") {
  std::vector<float> vals;
  for (int i = 0; i <= 10000; ++i) vals.push_back(static_cast<float>(i) / 10000.0f);
  Tensor x(Shape{static_cast<int64_t>(vals.size())}, vals);
  Tensor back = gamma_decode(gamma_encode(x));
  CHECK(testutil::max_abs_diff(x, back) < 1e-6);
}

TEST_CASE("gamma rejects negative input") {
  Tensor x(Shape{2}, std::vector<float>{0.5f, -0.1f});
  CHECK_THROWS_AS(gamma_encode(x), NumericError);
}

TEST_CASE("preprocessing chain recovers the mosaic bit-exactly at its depth") {
  BayerFrame f = random_frame(8, 8, 8);
  for (float& v : f.mosaic) v *= 0.45f;  // no WB clamping
  f.bit_depth = 12;
  quantize_frame(f);
  f.wb_gains = {1.9f, 1.0f, 1.4f};

  BayerFrame wb = white_balance(f);
  Tensor x = gamma_encode(demosaic_bilinear(wb));

  // invert: decode, remosaic, undo white balance, re-quantize
  Tensor linear = gamma_decode(x);
  BayerFrame rem = remosaic(linear, f.pattern);
  rem.wb_gains = f.wb_gains;
  rem.clamp_overflow = wb.clamp_overflow;
  BayerFrame back = inverse_white_balance(rem);
  back.bit_depth = f.bit_depth;
  quantize_frame(back);
  for (size_t i = 0; i < f.mosaic.size(); ++i) CHECK(back.mosaic[i] == f.mosaic[i]);
}
