// SPDX-License-Identifier: Apache-2.0
#include "ocular/error.hpp"
#include "ocular/pipeline.hpp"
#include "ocular/session.hpp"
#include "ocular/synthrig.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <set>

using namespace ocular;
using namespace ocular::session;
using ocular::testing::TempDir;

namespace {

std::size_t count_files(const fs::path& dir) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir)) n += e.is_regular_file();
  return n;
}

}  // namespace

TEST(Labels, ClassVocabulary) {
  EXPECT_EQ(LabelClass::parse("glint:L:3").str(), "glint:L:3");
  EXPECT_EQ(LabelClass::parse("glint:R:0").led, (calib::LedId{"R", 0}));
  EXPECT_EQ(LabelClass::parse("marker:scene_back").kind, LabelClass::Kind::scene_marker);
  const LabelClass cam = LabelClass::parse("marker:cam:L1");
  EXPECT_EQ(cam.kind, LabelClass::Kind::camera_marker);
  EXPECT_EQ(cam.camera, "L1");
  const LabelClass corner = LabelClass::parse("corner:2:5");
  EXPECT_EQ(corner.row, 2);
  EXPECT_EQ(corner.col, 5);
  for (const char* bad : {"glint:L:9", "glint:X:0", "glint:L", "marker:front", "corner:a:1", "corner:-1:2", "", "foo"}) {
    EXPECT_THROW(LabelClass::parse(bad), InputError) << bad;
  }
}

TEST(Labels, JsonRoundTrip) {
  std::vector<LabelRecord> in = {
      {0, 12, "glint:L:1", 101.25, 88.5, "alice", "2026-01-01T00:00:00Z", 0},
      {4, 3, "marker:cam:R0", 320.125, 240.0, "bob", "2026-01-02T10:00:00Z", 3},
  };
  const auto out = labels_from_json(labels_to_json(in), "test");
  ASSERT_EQ(out.size(), in.size());
  for (std::size_t k = 0; k < in.size(); ++k) {
    EXPECT_EQ(out[k].stream_id, in[k].stream_id);
    EXPECT_EQ(out[k].frame_index, in[k].frame_index);
    EXPECT_EQ(out[k].cls, in[k].cls);
    EXPECT_EQ(out[k].x_px, in[k].x_px);
    EXPECT_EQ(out[k].y_px, in[k].y_px);
    EXPECT_EQ(out[k].labeler, in[k].labeler);
    EXPECT_EQ(out[k].ts_utc, in[k].ts_utc);
    EXPECT_EQ(out[k].revision, in[k].revision);
  }
  EXPECT_EQ(labels_to_json(in).find("\"revision\": 0"), std::string::npos);
  EXPECT_THROW(labels_from_json("[{\"stream_id\": 0}]", "broken.json"), FormatError);
  EXPECT_THROW(labels_from_json("not json", "broken.json"), FormatError);
}

TEST(Calibration, JsonRoundTripWithinTwelveDigits) {
  const auto rig = synthrig::make_default_rig(3).calibration;
  const std::string text = calibration_to_json(rig);
  const auto back = calibration_from_json(text, "calibration.json");
  EXPECT_EQ(calibration_to_json(back), text);
  EXPECT_EQ(back.root_camera, rig.root_camera);
  for (const auto& [id, cam] : rig.cameras) {
    const auto& b = back.camera(id);
    EXPECT_LT((b.model.parameters() - cam.model.parameters()).cwiseAbs().maxCoeff(), 1e-9) << id;
    EXPECT_LT(geom::rotation_angle_between(b.pose, cam.pose), 1e-10) << id;
    EXPECT_LT((b.pose.translation() - cam.pose.translation()).norm(), 1e-9) << id;
  }
  for (const char* key : {"\"root_camera\"", "\"cameras\"", "\"model_kind\"", "\"pose\"", "\"q\"", "\"t_mm\"",
                          "\"leds\"", "\"meta\"", "\"wavelength_nm\"", "\"fps_nominal\""}) {
    EXPECT_NE(text.find(key), std::string::npos) << key;
  }
}

TEST(Calibration, Round12) {
  EXPECT_EQ(round12(0.1 + 0.2), 0.3);
  EXPECT_EQ(round12(123456.7890123456), 123456.789012);
  EXPECT_EQ(round12(0.0), 0.0);
  EXPECT_EQ(round12(-1.0 / 3.0), -0.333333333333);
}

TEST(Manifest, RolesAndValidation) {
  EXPECT_EQ(camera_for_role("eye_L0"), "L0");
  EXPECT_EQ(camera_for_role("scene"), "scene");
  EXPECT_EQ(role_for_camera("R1"), "eye_R1");
  EXPECT_TRUE(is_known_role("eye_R0"));
  EXPECT_FALSE(is_known_role("eye_X9"));

  SessionManifest m;
  m.session_id = "s";
  m.created_utc = "2026-01-01T00:00:00Z";
  m.streams = {{0, "eye_L0", 240, 240, 45.0, {}, false, ""}, {1, "scene", 640, 480, 45.0, {}, false, ""}};
  EXPECT_NO_THROW(m.validate());
  const auto back = manifest_from_json(manifest_to_json(m), "manifest.json");
  EXPECT_EQ(manifest_to_json(back), manifest_to_json(m));
  EXPECT_EQ(back.stream_for_camera("scene").id, 1);

  auto dup = m;
  dup.streams[1].id = 0;
  EXPECT_THROW(dup.validate(), FormatError);
  dup = m;
  dup.streams[1].role = "eye_L0";
  EXPECT_THROW(dup.validate(), FormatError);
  dup = m;
  dup.streams[1].role = "thermal";
  EXPECT_THROW(dup.validate(), FormatError);
}

TEST(Images, PgmRoundTripAndRejection) {
  TempDir tmp("pgm");
  Image img{3, 2, {0, 1, 2, 253, 254, 255}};
  write_pgm(tmp / "a.pgm", img);
  const Image back = read_pgm(tmp / "a.pgm");
  EXPECT_EQ(back.width, 3);
  EXPECT_EQ(back.height, 2);
  EXPECT_EQ(back.pixels, img.pixels);
  std::ofstream(tmp / "bad.pgm") << "P2\n3 2\n255\n0 1 2 3 4 5\n";
  EXPECT_THROW(read_pgm(tmp / "bad.pgm"), FormatError);
  const auto png = encode_png(img);
  ASSERT_GE(png.size(), 8u);
  EXPECT_EQ(png[1], 'P');
  EXPECT_EQ(png[2], 'N');
  EXPECT_EQ(png[3], 'G');
}

TEST(Index, RowRoundTrip) {
  TempDir tmp("idx");
  IndexRow r{42, 1234567, -5, frame_file_name(42)};
  EXPECT_EQ(r.file, "frames/000042.pgm");
  write_atomic(tmp / "index.csv", index_header() + "\n" + index_row(r) + "\n");
  const auto rows = read_index(tmp / "index.csv");
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].frame_index, 42u);
  EXPECT_EQ(rows[0].device_ts_us, 1234567u);
  EXPECT_EQ(rows[0].host_ts_us, -5);
  EXPECT_EQ(index_header(), "frame_index,device_ts_us,host_ts_us,file");
}

class SimulatedSession : public ::testing::Test {
 protected:
  void SetUp() override {
    pipeline::SimulateOptions o;
    o.seed = 7;
    o.gaze_seconds = 1.0;
    pipeline::simulate_session(tmp_.path() / "s", o);
  }
  fs::path dir() const { return tmp_.path() / "s"; }
  TempDir tmp_{"session"};
};

TEST_F(SimulatedSession, ValidatesAndIndexMatchesFiles) {
  const ValidationReport r = validate_session(dir());
  const Session s = Session::load(dir());
  EXPECT_EQ(s.manifest().streams.size(), 5u);
  EXPECT_GT(r.labels, 0u);
  for (const auto& st : s.manifest().streams) {
    const auto& idx = s.index(st.id);
    EXPECT_EQ(idx.size(), count_files(stream_dir(dir(), st.id) / "frames")) << st.id;
    EXPECT_EQ(r.frames.at(st.id), idx.size());
    for (std::size_t k = 1; k < idx.size(); ++k) EXPECT_GT(idx[k].device_ts_us, idx[k - 1].device_ts_us);
    const Image img = s.frame(st.id, idx.front().frame_index);
    EXPECT_EQ(img.width, st.width);
    EXPECT_EQ(img.height, st.height);
  }
  EXPECT_TRUE(fs::exists(dir() / kTruthFile));
}

TEST_F(SimulatedSession, MissingFrameFileIsNamed) {
  const Session s = Session::load(dir());
  const int id = s.manifest().streams.front().id;
  const fs::path victim = stream_dir(dir(), id) / s.index(id)[3].file;
  fs::remove(victim);
  try {
    validate_session(dir());
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find(victim.filename().string()), std::string::npos) << e.what();
  }
}

TEST_F(SimulatedSession, TruncatedFrameIsRejected) {
  const Session s = Session::load(dir());
  const int id = s.manifest().streams.front().id;
  const fs::path victim = stream_dir(dir(), id) / s.index(id)[0].file;
  fs::resize_file(victim, fs::file_size(victim) - 10);
  EXPECT_THROW(validate_session(dir()), FormatError);
}

TEST_F(SimulatedSession, NonMonotoneIndexIsRejected) {
  const Session s = Session::load(dir());
  const int id = s.manifest().streams.front().id;
  auto rows = s.index(id);
  std::swap(rows[1].device_ts_us, rows[2].device_ts_us);
  std::string text = index_header() + "\n";
  for (const auto& r : rows) text += index_row(r) + "\n";
  write_atomic(stream_dir(dir(), id) / "index.csv", text);
  EXPECT_THROW(validate_session(dir()), FormatError);
}

TEST_F(SimulatedSession, BrokenManifestNamesThePath) {
  write_atomic(dir() / kManifestFile, "{\"session_id\": 5}");
  try {
    validate_session(dir());
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("manifest.json"), std::string::npos) << e.what();
  }
}

TEST_F(SimulatedSession, SelfDescribingAfterMove) {
  const fs::path moved = tmp_.path() / "elsewhere";
  fs::rename(dir(), moved);
  EXPECT_NO_THROW(validate_session(moved));
  EXPECT_FALSE(Session::load(moved).labels().empty());
}

TEST(Simulate, RefusesNonEmptyDirectory) {
  TempDir tmp("nonempty");
  std::ofstream(tmp / "x") << "x";
  EXPECT_THROW(pipeline::simulate_session(tmp.path(), {}), Error);
}
