#pragma once

#include <algorithm>
#include <cstdio>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "h4d/body_model.hpp"
#include "h4d/body_model_io.hpp"
#include "h4d/camera.hpp"
#include "h4d/errors.hpp"
#include "h4d/fitting.hpp"
#include "h4d/json_io.hpp"
#include "h4d/metrics.hpp"
#include "h4d/predictor.hpp"
#include "h4d/record_io.hpp"
#include "h4d/synth.hpp"
#include "h4d/tracker.hpp"

namespace h4d::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitNumerical = 3;

namespace detail {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Runs fn(i) for i in [0, n) on up to `threads` workers. Results are written
// by index, so the outcome does not depend on scheduling. The first
// exception (lowest index) is rethrown.
template <typename F>
void parallel_for(std::size_t n, int threads, F&& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(threads, 1)));
  std::vector<std::exception_ptr> errors(n);
  auto body = [&](std::size_t w) {
    for (std::size_t i = w; i < n; i += workers) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    body(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(body, w);
    for (std::thread& t : pool) t.join();
  }
  for (const std::exception_ptr& e : errors)
    if (e) std::rethrow_exception(e);
}

inline BodyModel model_or_default(const std::string& path) { return path.empty() ? make_mini_model(0) : load_model(path); }

// --- fit records ------------------------------------------------------------

inline Json fit_record(std::size_t index, const Detection& d, const FitResult& r, const JointEvaluator& joints,
                       const Intrinsics& K) {
  const Eigen::Matrix3Xd X = joints.joints(r.pose, r.shape).colwise() + r.t;
  Json j;
  j["index"] = index;
  j["bbox"] = bbox_to_json(d.bbox);
  j["smpl"] = smpl_to_json(SmplParams{r.pose, r.shape});
  j["cam_t"] = vec3_to_json(r.t);
  j["kp2d"] = keypoints_to_json(Keypoints2D{project(X, K, CameraPose()), d.keypoints.conf});
  j["joints3d"] = points3_to_json(X);
  j["cost"] = r.final_cost;
  j["reprojection_error_px"] = r.mean_reprojection_error;
  j["iterations"] = r.iterations;
  j["converged"] = r.converged;
  return j;
}

// People of a fit file ("fits") or track file ("tracks").
inline std::vector<PoseFrame> read_pose_frames(const std::string& path) {
  std::vector<PoseFrame> out;
  for (const Json& j : read_jsonl_file(path)) {
    PoseFrame f;
    f.frame = get_field<long long>(j, "frame");
    const char* key = j.contains("fits") ? "fits" : "tracks";
    if (!j.contains(key) || !j.at(key).is_array()) throw ParseError("tracks", path + ": expected a fits or tracks array");
    for (const Json& r : j.at(key)) {
      PoseRecord p;
      p.bbox = bbox_from_json(r);
      if (has_value(r, "kp2d")) p.keypoints = keypoints_from_json(r);
      if (has_value(r, "joints3d")) p.joints3d = points3_from_json(r, "joints3d");
      f.people.push_back(std::move(p));
    }
    if (!out.empty() && f.frame <= out.back().frame) throw ParseError("frame", path + ": frames must be strictly increasing");
    out.push_back(std::move(f));
  }
  return out;
}

inline std::string tracks_csv(const std::vector<TrackFrame>& frames) {
  std::string s = "frame,id,x,y,w,h,amodal,tx,ty,tz\n";
  for (const TrackFrame& f : frames)
    for (const TrackRecord& r : f.tracks) {
      const Vec3 t = r.cam_t.value_or(Vec3::Constant(std::nan("")));
      s += std::to_string(f.frame) + "," + std::to_string(r.id) + "," + num(r.bbox.x) + "," + num(r.bbox.y) + "," +
           num(r.bbox.w) + "," + num(r.bbox.h) + "," + (r.amodal ? "1" : "0") + "," + num(t.x()) + "," +
           num(t.y()) + "," + num(t.z()) + "\n";
    }
  return s;
}

inline std::string hota_csv(const TrackingMetrics& m) {
  std::string s = "alpha,HOTA,TP,FN,FP\n";
  for (int a = 0; a < kHotaAlphas; ++a)
    s += num(hota_alpha(a)) + "," + num(m.hota_per_alpha[a]) + "," + num(m.counts.hota_tp[a]) + "," +
         num(m.counts.hota_fn[a]) + "," + num(m.counts.hota_fp[a]) + "\n";
  return s;
}

}  // namespace detail

/// Runs the command line; args excludes the program name.
inline int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Human mesh recovery, fitting, tracking and evaluation on synthetic scenes"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  std::string model_path, config_path, out_path, out_gt, out_det, keypoints_path, intrinsics_path, detections_path,
      report_path, csv_path;
  std::vector<std::string> preds, gts;
  int max_iters = 100, threads = 1;
  std::uint64_t seed = 0;
  double alpha = 0.5;

  CLI::App* mk = app.add_subcommand("make-model", "Write the built-in miniature body model");
  mk->add_option("--seed", seed, "Model seed")->capture_default_str();
  mk->add_option("--out", out_path, "Output model JSON")->required();

  CLI::App* sy = app.add_subcommand("synth", "Generate a synthetic scene");
  sy->add_option("--config", config_path, "Scene config JSON")->required();
  sy->add_option("--out-gt", out_gt, "Ground-truth tracks JSONL")->required();
  sy->add_option("--out-det", out_det, "Detections JSONL")->required();
  sy->add_option("--model", model_path, "Body model JSON (default: built-in model)");
  sy->add_option("--dump-csv", csv_path, "Also write ground truth as CSV");

  CLI::App* fi = app.add_subcommand("fit", "Fit SMPL to the keypoints of every detection");
  fi->add_option("--model", model_path, "Body model JSON")->required();
  fi->add_option("--keypoints", keypoints_path, "Detections JSONL with kp2d")->required();
  fi->add_option("--intrinsics", intrinsics_path, "Intrinsics JSON {f, cx, cy}")->required();
  fi->add_option("--out", out_path, "Output JSONL")->required();
  fi->add_option("--max-iters", max_iters, "Levenberg-Marquardt iterations")->capture_default_str();
  fi->add_option("--threads", threads, "Worker threads")->capture_default_str();

  CLI::App* tr = app.add_subcommand("track", "Track people through a detection stream");
  tr->add_option("--model", model_path, "Body model JSON")->required();
  tr->add_option("--detections", detections_path, "Detections JSONL")->required();
  tr->add_option("--intrinsics", intrinsics_path, "Intrinsics JSON {f, cx, cy}")->required();
  tr->add_option("--config", config_path, "Tracker config JSON")->required();
  tr->add_option("--out", out_path, "Output tracks JSONL")->required();
  tr->add_option("--dump-csv", csv_path, "Also write tracks as CSV");

  CLI::App* ep = app.add_subcommand("eval-pose", "MPJPE, PA-MPJPE and PCK against ground truth");
  ep->add_option("--pred", preds, "Fit or track JSONL")->required()->expected(1);
  ep->add_option("--gt", gts, "Ground-truth tracks JSONL")->required()->expected(1);
  ep->add_option("--report", report_path, "Report JSON")->required();
  ep->add_option("--alpha", alpha, "IoU threshold for pairing people")->capture_default_str();

  CLI::App* et = app.add_subcommand("eval-track", "IDs, MOTA, IDF1 and HOTA against ground truth");
  et->add_option("--pred", preds, "Track JSONL (repeat once per sequence)")->required();
  et->add_option("--gt", gts, "Ground-truth JSONL (same order as --pred)")->required();
  et->add_option("--report", report_path, "Report JSON")->required();
  et->add_option("--alpha", alpha, "IoU threshold for CLEAR and identity matching")->capture_default_str();
  et->add_option("--threads", threads, "Sequences evaluated in parallel")->capture_default_str();
  et->add_option("--dump-csv", csv_path, "Also write the per-threshold HOTA table as CSV");

  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  }

  try {
    if (threads < 1) throw InputError("--threads must be >= 1");
    if (*mk) {
      save_model(make_mini_model(seed), out_path);
    } else if (*sy) {
      const SceneConfig cfg = scene_config_from_json(read_json_file(config_path));
      const SyntheticScene s = generate(cfg, detail::model_or_default(model_path));
      write_tracks(out_gt, s.ground_truth);
      write_detections(out_det, s.detections);
      if (!csv_path.empty()) write_text_file(csv_path, detail::tracks_csv(s.ground_truth));
      out << "synth: " << s.detections.size() << " frames, " << cfg.n_people << " people\n";
    } else if (*fi) {
      const BodyModel model = load_model(model_path);
      const JointEvaluator joints(model);
      const Intrinsics K = intrinsics_from_json(read_json_file(intrinsics_path));
      const std::vector<DetectionFrame> frames = read_detections(keypoints_path);
      FitConfig cfg;
      cfg.max_iters = max_iters;
      cfg.check();
      std::vector<std::pair<std::size_t, std::size_t>> jobs;
      for (std::size_t f = 0; f < frames.size(); ++f)
        for (std::size_t d = 0; d < frames[f].detections.size(); ++d) jobs.emplace_back(f, d);
      std::vector<Json> results(jobs.size());
      detail::parallel_for(jobs.size(), threads, [&](std::size_t i) {
        const Detection& d = frames[jobs[i].first].detections[jobs[i].second];
        if (d.keypoints.empty())
          throw InsufficientConstraints("frame " + std::to_string(frames[jobs[i].first].frame) + ", detection " +
                                        std::to_string(jobs[i].second) + " has no keypoints");
        const FitResult r = fit(d.keypoints.uv, d.keypoints.conf, K, joints, cfg);
        results[i] = detail::fit_record(jobs[i].second, d, r, joints, K);
      });
      std::string text;
      std::size_t i = 0;
      for (const DetectionFrame& f : frames) {
        Json j;
        j["frame"] = f.frame;
        j["fits"] = Json::array();
        for (std::size_t d = 0; d < f.detections.size(); ++d) j["fits"].push_back(std::move(results[i++]));
        text += dump_json(j) + "\n";
      }
      write_text_file(out_path, text);
      out << "fit: " << jobs.size() << " detections\n";
    } else if (*tr) {
      const BodyModel model = load_model(model_path);
      const Intrinsics K = intrinsics_from_json(read_json_file(intrinsics_path));
      const Json cj = read_json_file(config_path);
      const TrackerConfig cfg = tracker_config_from_json(cj);
      std::optional<PredictorWeights> weights;
      if (has_value(cj, "predictor_weights"))
        weights = load_predictor_weights(get_field<std::string>(cj, "predictor_weights"));
      const std::vector<TrackFrame> tracks = run_tracker(read_detections(detections_path), model, K, cfg, weights);
      write_tracks(out_path, tracks);
      if (!csv_path.empty()) write_text_file(csv_path, detail::tracks_csv(tracks));
      out << "track: " << tracks.size() << " frames\n";
    } else if (*ep) {
      const PoseEvalSummary s = eval_pose(detail::read_pose_frames(preds[0]), detail::read_pose_frames(gts[0]), alpha);
      const Json rep = pose_report(s);
      write_text_file(report_path, dump_json(rep) + "\n");
      out << "eval-pose: " << dump_json(rep) << "\n";
    } else if (*et) {
      if (preds.size() != gts.size()) throw InputError("eval-track: give one --gt per --pred");
      std::vector<TrackingCounts> per(preds.size());
      detail::parallel_for(preds.size(), threads,
                           [&](std::size_t i) { per[i] = tracking_counts(read_tracks(preds[i]), read_tracks(gts[i]), alpha); });
      TrackingCounts total;
      for (const TrackingCounts& c : per) total += c;
      const TrackingMetrics m = finalize(total);
      const Json rep = tracking_report(m, alpha);
      write_text_file(report_path, dump_json(rep) + "\n");
      if (!csv_path.empty()) write_text_file(csv_path, detail::hota_csv(m));
      out << "eval-track: IDs " << total.idsw << " MOTA " << m.mota << " IDF1 " << m.idf1 << " HOTA " << m.hota
          << "\n";
    }
  } catch (const NumericalError& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const InputError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  }
  return kExitOk;
}

inline int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(std::move(args), out, err);
}

}  // namespace h4d::cli
