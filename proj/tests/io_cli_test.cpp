#include <gtest/gtest.h>

#include <sstream>

#include "h4d/cli.hpp"
#include "test_util.hpp"

namespace h4d {
namespace {

using testing::tmp_path;

int run_cli(std::vector<std::string> args, std::string* out_text = nullptr, std::string* err_text = nullptr) {
  std::ostringstream out, err;
  const int code = cli::run(std::move(args), out, err);
  if (out_text) *out_text = out.str();
  if (err_text) *err_text = err.str();
  return code;
}

Detection random_detection(Rng& rng, bool full) {
  Detection d;
  d.bbox = {rng.uniform(0, 500), rng.uniform(0, 500), rng.uniform(1, 100), rng.uniform(1, 200)};
  d.keypoints.uv = Eigen::Matrix2Xd::Random(2, kNumJoints) * 300.0;
  d.keypoints.conf = (Eigen::VectorXd::Random(kNumJoints).array() * 0.5 + 0.5).matrix();
  if (full) {
    d.smpl = SmplParams{testing::random_pose(rng, 3.0), testing::random_shape(rng)};
    d.cam_t = Vec3(rng.normal(), rng.normal(), rng.uniform(2, 9));
    Eigen::VectorXd e(16);
    for (int i = 0; i < 16; ++i) e[i] = rng.normal();
    d.embedding = e / e.norm();
  }
  d.score = rng.uniform();
  return d;
}

TEST(RecordIoTest, DetectionsRoundTripBitExact) {
  Rng rng(1);
  std::vector<DetectionFrame> frames;
  for (int t = 0; t < 20; ++t) {
    DetectionFrame f{3 * t + 1, {}};
    for (int i = 0; i < t % 4; ++i) f.detections.push_back(random_detection(rng, i % 2 == 0));
    frames.push_back(f);
  }
  const std::string path = tmp_path("dets_roundtrip.jsonl");
  write_detections(path, frames);
  const std::vector<DetectionFrame> back = read_detections(path);
  EXPECT_EQ(detections_to_jsonl(back), detections_to_jsonl(frames));
  EXPECT_EQ(back[5].detections[0].smpl->pose.rotations[3], frames[5].detections[0].smpl->pose.rotations[3]);
  EXPECT_EQ(back[5].detections[0].keypoints.uv, frames[5].detections[0].keypoints.uv);
}

TEST(RecordIoTest, TracksRoundTripBitExact) {
  Rng rng(2);
  std::vector<TrackFrame> frames;
  for (int t = 0; t < 10; ++t) {
    TrackFrame f{t, {}};
    for (int i = 0; i < 3; ++i) {
      TrackRecord r;
      r.id = 10 * i + t % 2;
      r.bbox = {rng.normal(), rng.normal(), 5, 6};
      r.amodal = i == 1;
      if (i != 2) {
        r.smpl = SmplParams{testing::random_pose(rng), testing::random_shape(rng)};
        r.cam_t = Vec3(rng.normal(), rng.normal(), rng.normal());
      }
      if (i == 0) {
        r.keypoints = Keypoints2D{Eigen::Matrix2Xd::Random(2, 24), Eigen::VectorXd::Ones(24)};
        r.joints3d = Eigen::Matrix3Xd::Random(3, 24);
      }
      f.tracks.push_back(r);
    }
    frames.push_back(f);
  }
  const std::string text = tracks_to_jsonl(frames);
  write_text_file(tmp_path("tracks_roundtrip.jsonl"), text);
  EXPECT_EQ(tracks_to_jsonl(read_tracks(tmp_path("tracks_roundtrip.jsonl"))), text);
}

TEST(RecordIoTest, UnknownFieldsIgnoredAndNotWritten) {
  const Json j = parse_json(
      R"({"frame": 3, "extra": [1, 2], "detections": [{"bbox": [1, 2, 3, 4], "kp2d": [], "smpl": null,
          "cam_t": null, "embedding": null, "score": 0.7, "colour": "red"}]})",
      "test");
  const DetectionFrame f = detection_frame_from_json(j);
  EXPECT_EQ(f.frame, 3);
  ASSERT_EQ(f.detections.size(), 1u);
  EXPECT_EQ(f.detections[0].score, 0.7);
  const std::string out = dump_json(detection_frame_to_json(f));
  EXPECT_EQ(out.find("colour"), std::string::npos);
  EXPECT_EQ(out.find("extra"), std::string::npos);
}

TEST(RecordIoTest, InvalidRecordsRejected) {
  auto det = [](const std::string& body) { return detection_frame_from_json(parse_json(body, "test")); };
  EXPECT_THROW(det(R"({"frame": 0, "detections": [{"bbox": [0, 0, 0, 4]}]})"), InvariantViolation);
  EXPECT_THROW(det(R"({"frame": 0, "detections": [{"bbox": [0, 0, 1, 4], "embedding": [0.5, 0.5]}]})"),
               InvariantViolation);
  EXPECT_THROW(det(R"({"frame": 0, "detections": [{"bbox": [0, 0, 1]}]})"), ParseError);
  EXPECT_THROW(det(R"({"frame": 0, "detections": [{"bbox": [0, 0, 1, 1], "kp2d": [[1, 2]]}]})"), ParseError);
  EXPECT_THROW(det(R"({"frame": 0})"), ParseError);

  Json smpl = smpl_to_json(SmplParams{});
  smpl["global_orient"][0] = 2.0;
  Json bad = Json{{"frame", 0}, {"detections", Json::array({Json{{"bbox", {0, 0, 1, 1}}, {"smpl", smpl}}})}};
  EXPECT_THROW(detection_frame_from_json(bad), InvariantViolation);

  EXPECT_THROW(track_frame_from_json(parse_json(
                   R"({"frame": 0, "tracks": [{"id": 1, "bbox": [0, 0, 1, 1]}, {"id": 1, "bbox": [0, 0, 1, 1]}]})",
                   "test")),
               InvariantViolation);

  write_text_file(tmp_path("nonmonotone.jsonl"), "{\"frame\": 2, \"tracks\": []}\n{\"frame\": 2, \"tracks\": []}\n");
  EXPECT_THROW(read_tracks(tmp_path("nonmonotone.jsonl")), ParseError);
  write_text_file(tmp_path("garbage.jsonl"), "{\"frame\": 2, \"tracks\": [\n");
  EXPECT_THROW(read_tracks(tmp_path("garbage.jsonl")), ParseError);
}

// --- command line ------------------------------------------------------------

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    model = tmp_path("cli_model.json");
    intrinsics = tmp_path("cli_intrinsics.json");
    tracker_cfg = tmp_path("cli_tracker.json");
    ASSERT_EQ(run_cli({"make-model", "--out", model}), 0);
    write_text_file(intrinsics, R"({"f": 1000, "cx": 640, "cy": 360})");
    write_text_file(tracker_cfg, "{}");
  }

  std::string scene(const std::string& name, int people, int frames, const std::string& extra = "") {
    const std::string cfg = tmp_path(name + "_scene.json");
    write_text_file(cfg, "{\"n_people\": " + std::to_string(people) + ", \"n_frames\": " + std::to_string(frames) +
                             ", \"seed\": 3" + extra + "}");
    EXPECT_EQ(run_cli({"synth", "--config", cfg, "--model", model, "--out-gt", tmp_path(name + "_gt.jsonl"),
                       "--out-det", tmp_path(name + "_det.jsonl")}),
              0);
    return tmp_path(name);
  }

  std::string model, intrinsics, tracker_cfg;
};

TEST_F(CliTest, NoiselessPipelineScoresPerfectly) {
  const std::string s = scene("clean", 3, 40);
  ASSERT_EQ(run_cli({"track", "--model", model, "--detections", s + "_det.jsonl", "--intrinsics", intrinsics,
                     "--config", tracker_cfg, "--out", s + "_tracks.jsonl"}),
            0);
  ASSERT_EQ(run_cli({"eval-track", "--pred", s + "_tracks.jsonl", "--gt", s + "_gt.jsonl", "--report",
                     s + "_report.json"}),
            0);
  const Json rep = read_json_file(s + "_report.json");
  EXPECT_EQ(rep.at("schema"), 1);
  EXPECT_EQ(rep.at("IDs"), 0);
  EXPECT_EQ(rep.at("MOTA").get<double>(), 1.0);
  EXPECT_EQ(rep.at("IDF1").get<double>(), 1.0);
  EXPECT_DOUBLE_EQ(rep.at("HOTA").get<double>(), 1.0);
}

TEST_F(CliTest, EvalPoseOfGroundTruthAgainstItself) {
  const std::string s = scene("self", 2, 5);
  ASSERT_EQ(run_cli({"eval-pose", "--pred", s + "_gt.jsonl", "--gt", s + "_gt.jsonl", "--report", s + "_pose.json"}), 0);
  const Json rep = read_json_file(s + "_pose.json");
  EXPECT_EQ(rep.at("MPJPE").get<double>(), 0.0);
  EXPECT_LT(rep.at("PA-MPJPE").get<double>(), 1e-8);
  EXPECT_EQ(rep.at("PCK@0.05").get<double>(), 1.0);
  EXPECT_EQ(rep.at("PCK@0.1").get<double>(), 1.0);
}

TEST_F(CliTest, FitThenEvalPose) {
  const std::string s = scene("fit", 1, 2);
  ASSERT_EQ(run_cli({"fit", "--model", model, "--keypoints", s + "_det.jsonl", "--intrinsics", intrinsics, "--out",
                     s + "_fits.jsonl", "--max-iters", "60", "--threads", "2"}),
            0);
  const std::vector<Json> fits = read_jsonl_file(s + "_fits.jsonl");
  ASSERT_EQ(fits.size(), 2u);
  EXPECT_LT(fits[0].at("fits")[0].at("reprojection_error_px").get<double>(), 0.5);
  ASSERT_EQ(run_cli({"eval-pose", "--pred", s + "_fits.jsonl", "--gt", s + "_gt.jsonl", "--report", s + "_pose.json"}),
            0);
  const Json rep = read_json_file(s + "_pose.json");
  EXPECT_EQ(rep.at("counts").at("matched"), 2);
  EXPECT_EQ(rep.at("PCK@0.05").get<double>(), 1.0);
}

TEST_F(CliTest, ZeroConfidenceKeypointsExitTwo) {
  std::string line = R"({"frame": 0, "detections": [{"bbox": [0, 0, 10, 10], "kp2d": [)";
  for (int i = 0; i < kNumJoints; ++i) line += std::string(i ? "," : "") + "[100, 100, 0]";
  line += "]}]}\n";
  write_text_file(tmp_path("zero_conf.jsonl"), line);
  std::string err;
  EXPECT_EQ(run_cli({"fit", "--model", model, "--keypoints", tmp_path("zero_conf.jsonl"), "--intrinsics", intrinsics,
                     "--out", tmp_path("zero_conf_out.jsonl")},
                    nullptr, &err),
            2);
  EXPECT_NE(err.find("error:"), std::string::npos);
  EXPECT_EQ(std::count(err.begin(), err.end(), '\n'), 1);
}

TEST_F(CliTest, NumericalFailureExitsThree) {
  // A skeleton mirrored through the principal point is only explained by a
  // body behind the camera, so the initial fit state is infeasible.
  const std::string s = scene("inverted", 1, 1);
  std::vector<DetectionFrame> frames = read_detections(s + "_det.jsonl");
  Keypoints2D& kp = frames[0].detections[0].keypoints;
  kp.uv = (Eigen::Vector2d(1280.0, 720.0).replicate(1, kp.uv.cols()) - kp.uv).eval();
  write_detections(s + "_mirrored.jsonl", frames);
  std::string err;
  EXPECT_EQ(run_cli({"fit", "--model", model, "--keypoints", s + "_mirrored.jsonl", "--intrinsics", intrinsics, "--out",
                     s + "_fits.jsonl"},
                    nullptr, &err),
            3);
  EXPECT_NE(err.find("error:"), std::string::npos);
}

TEST_F(CliTest, BadInvocationsExitTwo) {
  EXPECT_EQ(run_cli({}), 2);
  EXPECT_EQ(run_cli({"teleport"}), 2);
  EXPECT_EQ(run_cli({"eval-track", "--pred", tmp_path("missing.jsonl"), "--gt", tmp_path("missing.jsonl"), "--report",
                     tmp_path("r.json")}),
            2);
  write_text_file(tmp_path("bad_cfg.json"), R"({"dropout": 2})");
  EXPECT_EQ(run_cli({"synth", "--config", tmp_path("bad_cfg.json"), "--out-gt", tmp_path("a"), "--out-det",
                     tmp_path("b")}),
            2);
  std::string out;
  EXPECT_EQ(run_cli({"--help"}, &out), 0);
  EXPECT_NE(out.find("eval-track"), std::string::npos);
}

TEST_F(CliTest, MultiSequenceEvaluationIsThreadIndependent) {
  std::vector<std::string> args{"eval-track"};
  for (int i = 0; i < 3; ++i) {
    const std::string s = scene("multi" + std::to_string(i), 2, 15, ", \"dropout\": 0.3");
    ASSERT_EQ(run_cli({"track", "--model", model, "--detections", s + "_det.jsonl", "--intrinsics", intrinsics,
                       "--config", tracker_cfg, "--out", s + "_tracks.jsonl"}),
              0);
    args.insert(args.end(), {"--pred", s + "_tracks.jsonl", "--gt", s + "_gt.jsonl"});
  }
  auto one = args, many = args;
  one.insert(one.end(), {"--report", tmp_path("multi_1.json"), "--threads", "1"});
  many.insert(many.end(), {"--report", tmp_path("multi_4.json"), "--threads", "4", "--dump-csv", tmp_path("hota.csv")});
  ASSERT_EQ(run_cli(one), 0);
  ASSERT_EQ(run_cli(many), 0);
  EXPECT_EQ(read_text_file(tmp_path("multi_1.json")), read_text_file(tmp_path("multi_4.json")));
  EXPECT_EQ(read_json_file(tmp_path("multi_1.json")).at("sequences"), 3);
  EXPECT_EQ(read_text_file(tmp_path("hota.csv")).rfind("alpha,HOTA", 0), 0u);
  args.pop_back();  // unpaired --gt
  args.insert(args.end(), {"--report", tmp_path("unpaired.json")});
  EXPECT_EQ(run_cli(args), 2);
}

TEST_F(CliTest, PipelinesAreByteDeterministic) {
  const std::string a = scene("det_a", 2, 20, ", \"kp_noise_px\": 2, \"dropout\": 0.2, \"app_noise\": 0.1");
  const std::string b = scene("det_b", 2, 20, ", \"kp_noise_px\": 2, \"dropout\": 0.2, \"app_noise\": 0.1");
  EXPECT_EQ(read_text_file(a + "_det.jsonl"), read_text_file(b + "_det.jsonl"));
  EXPECT_EQ(read_text_file(a + "_gt.jsonl"), read_text_file(b + "_gt.jsonl"));
  for (const std::string& s : {a, b})
    ASSERT_EQ(run_cli({"track", "--model", model, "--detections", s + "_det.jsonl", "--intrinsics", intrinsics,
                       "--config", tracker_cfg, "--out", s + "_tracks.jsonl", "--dump-csv", s + "_tracks.csv"}),
              0);
  EXPECT_EQ(read_text_file(a + "_tracks.jsonl"), read_text_file(b + "_tracks.jsonl"));
  EXPECT_EQ(read_text_file(a + "_tracks.csv"), read_text_file(b + "_tracks.csv"));
}

}  // namespace
}  // namespace h4d
