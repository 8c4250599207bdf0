#include <gtest/gtest.h>

#include <string>

#include "sqz/config.hpp"

using namespace sqz;

namespace {

json small_doc() { return read_json_file(SQZ_SMALL_CONFIG); }

std::string error_of(const json& doc) {
  try {
    parse_config(doc);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(Config, ShippedConfigsParse) {
  const auto cfg = load_config(SQZ_DEFAULT_CONFIG);
  EXPECT_DOUBLE_EQ(cfg.crystal.length_m, 2e-3);
  EXPECT_NEAR(cfg.crystal.noncollinear_angle_rad, 1.8 * std::numbers::pi / 180.0, 1e-15);
  EXPECT_TRUE(cfg.solve_theta0);
  EXPECT_NEAR(cfg.pump.center_wavelength_m, 397.5e-9, 1e-20);
  EXPECT_NEAR(cfg.pump.waist_m, 49e-6, 1e-18);
  EXPECT_EQ(cfg.pump.chirp_s2, 0.0);
  ASSERT_TRUE(cfg.analysis.calibration_target_db.has_value());
  EXPECT_DOUBLE_EQ(*cfg.analysis.calibration_target_db, -0.35);
  EXPECT_FALSE(cfg.analysis.gain.has_value());
  EXPECT_EQ(cfg.analysis.hg_orders, (std::vector<int>{0, 1, 2, 3}));
  EXPECT_EQ(cfg.seed, 20240917u);
  EXPECT_NO_THROW(load_config(SQZ_SMALL_CONFIG));
}

TEST(Config, UnitlessPhysicalQuantityRejected) {
  auto doc = small_doc();
  doc["pump"]["waist"] = 49e-6;
  const auto msg = error_of(doc);
  EXPECT_NE(msg.find("pump.waist"), std::string::npos) << msg;
  EXPECT_NE(msg.find("unit"), std::string::npos) << msg;
}

TEST(Config, UnitParsing) {
  EXPECT_DOUBLE_EQ(parse_quantity("49 um", Dimension::length, "x"), 49e-6);
  EXPECT_DOUBLE_EQ(parse_quantity("2 mm", Dimension::length, "x"), 2e-3);
  EXPECT_DOUBLE_EQ(parse_quantity("180 deg", Dimension::angle, "x"), std::numbers::pi);
  EXPECT_DOUBLE_EQ(parse_quantity("500 fs^2", Dimension::chirp, "x"), 5e-28);
  EXPECT_DOUBLE_EQ(parse_quantity("-0.35 dB", Dimension::decibel, "x"), -0.35);
  EXPECT_THROW(parse_quantity("2 Hz", Dimension::length, "x"), ConfigError);
  EXPECT_THROW(parse_quantity("two mm", Dimension::length, "x"), ConfigError);
  EXPECT_THROW(parse_quantity("2 mm extra", Dimension::length, "x"), ConfigError);
}

TEST(Config, MissingSectionNamed) {
  auto doc = small_doc();
  doc.erase("pump");
  const auto msg = error_of(doc);
  EXPECT_NE(msg.find("pump"), std::string::npos) << msg;
}

TEST(Config, UnknownKeyNamed) {
  auto doc = small_doc();
  doc["grid"]["q_pionts"] = 10;
  const auto msg = error_of(doc);
  EXPECT_NE(msg.find("q_pionts"), std::string::npos) << msg;
}

TEST(Config, ExactlyOneGainSource) {
  auto both = small_doc();
  both["analysis"]["g"] = 1e-20;
  EXPECT_NE(error_of(both).find("exactly one"), std::string::npos);
  auto neither = small_doc();
  neither["analysis"].erase("calibration_target_db");
  EXPECT_NE(error_of(neither).find("exactly one"), std::string::npos);
}

TEST(Config, OverridesSwapGainSource) {
  const auto cfg = load_config(SQZ_SMALL_CONFIG, {"analysis.g=0", "pump.waist=60 um"});
  ASSERT_TRUE(cfg.analysis.gain.has_value());
  EXPECT_EQ(*cfg.analysis.gain, 0.0);
  EXPECT_FALSE(cfg.analysis.calibration_target_db.has_value());
  EXPECT_NEAR(cfg.pump.waist_m, 60e-6, 1e-18);
  const auto back = load_config(SQZ_SMALL_CONFIG, {"analysis.g=0", "analysis.calibration_target_db=-1 dB"});
  EXPECT_FALSE(back.analysis.gain.has_value());
  EXPECT_DOUBLE_EQ(*back.analysis.calibration_target_db, -1.0);
  EXPECT_THROW(load_config(SQZ_SMALL_CONFIG, {"analysis.g"}), ConfigError);
  EXPECT_THROW(load_config(SQZ_SMALL_CONFIG, {"analysis.bogus=1"}), ConfigError);
}

TEST(Config, InvalidValuesRejected) {
  auto doc = small_doc();
  doc["analysis"]["efficiency"] = 1.5;
  EXPECT_NE(error_of(doc).find("analysis.efficiency"), std::string::npos);
  doc = small_doc();
  doc["analysis"]["calibration_target_db"] = "0.5 dB";
  EXPECT_NE(error_of(doc).find("calibration_target_db"), std::string::npos);
  doc = small_doc();
  doc["noise"]["duration"] = "2 s";
  EXPECT_NE(error_of(doc).find("noise.duration"), std::string::npos);
  EXPECT_THROW(load_config("/nonexistent/sqz.json"), IoError);
}

TEST(Config, HashesAreStable) {
  const auto a = load_config(SQZ_SMALL_CONFIG);
  const auto b = load_config(SQZ_SMALL_CONFIG, {"noise.seed=5", "analysis.bootstrap_rounds=10"});
  const auto c = load_config(SQZ_SMALL_CONFIG, {"pump.waist=60 um"});
  EXPECT_EQ(kernel_hash(a), kernel_hash(b));
  EXPECT_NE(kernel_hash(a), kernel_hash(c));
  EXPECT_EQ(kernel_hash(a).size(), 16u);
  EXPECT_EQ(hex64(stable_hash("")), "cbf29ce484222325");
  EXPECT_EQ(hex64(stable_hash("a")), "af63dc4c8601ec8c");
}
