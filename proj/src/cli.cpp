#include "posevocab/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "posevocab/error.hpp"
#include "posevocab/fit.hpp"
#include "posevocab/io.hpp"
#include "posevocab/query.hpp"
#include "posevocab/vocab.hpp"

namespace posevocab {

namespace {

constexpr std::uint64_t kDefaultSeed = 0;

struct MissingInput : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDimensionMismatch:
      return kExitDimensionMismatch;
    case ErrorCode::kParse:
    case ErrorCode::kNonFinite:
      return kExitParse;
    case ErrorCode::kVersionMismatch:
    case ErrorCode::kChecksum:
    case ErrorCode::kTruncated:
      return kExitFormat;
    case ErrorCode::kInvalidInput:
      return kExitInvalidInput;
    case ErrorCode::kIo:
      return kExitOther;
  }
  return kExitOther;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') {
      out += '\\';
      out += c;
    } else if (c == '\n' || c == '\r') {
      out += ' ';
    } else if (static_cast<unsigned char>(c) < 0x20 || static_cast<unsigned char>(c) >= 0x7f) {
      out += '?';
    } else {
      out += c;
    }
  }
  return out;
}

int report_error(std::ostream& err, const std::string& code, int exit, const std::string& message) {
  err << "error: code=" << code << " exit=" << exit << " message=\"" << escape(message) << "\"\n";
  return exit;
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw MissingInput(std::string("no ") + what + " given");
  if (!std::filesystem::is_regular_file(path)) {
    throw MissingInput(std::string(what) + " '" + path + "' does not exist");
  }
}

std::vector<double> split_reals(const std::string& text, char sep, const char* what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, sep)) {
    double x = 0.0;
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), x);
    if (ec != std::errc() || ptr != tok.data() + tok.size() || !std::isfinite(x)) {
      throw Error(ErrorCode::kInvalidInput, std::string("bad ") + what + " value '" + tok + "'");
    }
    out.push_back(x);
  }
  return out;
}

// "default" or "R:D:M:K" / "Rx,Ry,Rz:D:M:K" entries separated by ';' or ' '.
std::vector<ScaleConfig> parse_scales(const std::string& text) {
  if (text == "default") return default_scales();
  std::vector<ScaleConfig> scales;
  std::string normalized = text;
  std::replace(normalized.begin(), normalized.end(), ';', ' ');
  std::stringstream ss(normalized);
  std::string entry;
  while (ss >> entry) {
    std::vector<std::string> parts;
    std::stringstream es(entry);
    std::string part;
    while (std::getline(es, part, ':')) parts.push_back(part);
    if (parts.size() != 4) {
      throw Error(ErrorCode::kInvalidInput, "scale '" + entry + "' must be R:D:M:K");
    }
    const auto res = split_reals(parts[0], ',', "resolution");
    if (res.size() != 1 && res.size() != 3) {
      throw Error(ErrorCode::kInvalidInput, "resolution in '" + entry + "' needs 1 or 3 values");
    }
    ScaleConfig sc;
    for (int a = 0; a < 3; ++a) sc.lines.resolution[a] = static_cast<int>(res[res.size() == 1 ? 0 : a]);
    sc.lines.channels = static_cast<int>(split_reals(parts[1], ',', "channel").at(0));
    sc.key_count = static_cast<int>(split_reals(parts[2], ',', "key count").at(0));
    sc.knn = static_cast<int>(split_reals(parts[3], ',', "knn").at(0));
    sc.validate();
    scales.push_back(sc);
  }
  if (scales.empty()) throw Error(ErrorCode::kInvalidInput, "no scales given");
  return scales;
}

BBox parse_bbox(const std::string& text) {
  const auto v = split_reals(text, ',', "bbox");
  if (v.size() != 6) throw Error(ErrorCode::kInvalidInput, "bbox needs six values x0,y0,z0,x1,y1,z1");
  BBox b;
  b.lo = {v[0], v[1], v[2]};
  b.hi = {v[3], v[4], v[5]};
  b.validate();
  return b;
}

void emit(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
  } else {
    write_file_atomic(path, text);
  }
}

// Field description: {"joints": J, "outputs": O, "seed": s} generates a field;
// explicit "amplitude", "pose_frequency", "spatial_frequency", "direction",
// "centers" and "sigma" override the generated values.
SyntheticField load_field(const std::string& path, std::size_t joints, std::uint64_t seed) {
  nlohmann::json j = nlohmann::json::object();
  if (!path.empty()) {
    require_file(path, "field file");
    std::ifstream in(path);
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kParse, path + ": " + e.what());
    }
  }
  try {
    const std::size_t field_joints = j.value("joints", joints);
    if (field_joints != joints) {
      throw Error(ErrorCode::kDimensionMismatch, "field has " + std::to_string(field_joints) +
                                                     " joints, pose sequence has " +
                                                     std::to_string(joints));
    }
    SyntheticField f = SyntheticField::generate(joints, j.value("outputs", std::size_t{1}),
                                                j.value("seed", seed));
    const std::size_t n = f.joints * f.outputs;
    auto reals = [&](const char* key, std::vector<double>& dst) {
      if (!j.contains(key)) return;
      auto v = j.at(key).get<std::vector<double>>();
      if (v.size() != n) throw Error(ErrorCode::kDimensionMismatch, std::string("field '") + key + "' size");
      dst = std::move(v);
    };
    auto vecs = [&](const char* key, std::vector<Vec3>& dst, std::size_t count) {
      if (!j.contains(key)) return;
      auto v = j.at(key).get<std::vector<Vec3>>();
      if (v.size() != count) throw Error(ErrorCode::kDimensionMismatch, std::string("field '") + key + "' size");
      dst = std::move(v);
    };
    reals("amplitude", f.amplitude);
    reals("pose_frequency", f.pose_frequency);
    reals("spatial_frequency", f.spatial_frequency);
    vecs("direction", f.direction, n);
    vecs("centers", f.centers, f.joints);
    f.sigma = j.value("sigma", f.sigma);
    if (!(f.sigma > 0.0)) throw Error(ErrorCode::kInvalidInput, "field sigma must be positive");
    return f;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, (path.empty() ? std::string("field") : path) + ": " + e.what());
  }
}

nlohmann::json stats_json(const PoseVocab& v, const VocabStats& stats) {
  nlohmann::json joints = nlohmann::json::array();
  for (const auto& js : stats.joints) {
    nlohmann::json scales = nlohmann::json::array();
    for (const auto& ss : js.scales) {
      scales.push_back({{"key_count", ss.key_count},
                        {"coverage_radius", ss.coverage_radius ? nlohmann::json(*ss.coverage_radius)
                                                               : nlohmann::json(nullptr)},
                        {"parameters", ss.parameter_count},
                        {"memory_bytes", ss.memory_bytes},
                        {"file_bytes", ss.file_bytes}});
    }
    joints.push_back({{"name", js.name}, {"scales", scales}});
  }
  nlohmann::json cfg = nlohmann::json::array();
  for (const auto& s : v.scales) {
    cfg.push_back({{"resolution", s.lines.resolution},
                   {"channels", s.lines.channels},
                   {"keys", s.key_count},
                   {"knn", s.knn}});
  }
  return {{"joints", v.joint_count()},
          {"scales", cfg},
          {"bbox", {{"lo", v.bbox.lo}, {"hi", v.bbox.hi}}},
          {"seed", v.meta.seed},
          {"source_hash", v.meta.source_hash},
          {"total_parameters", stats.total_parameters},
          {"total_memory_bytes", stats.total_memory_bytes},
          {"estimated_file_bytes", vocab_size_estimate(v.joint_count(), v.scales)},
          {"per_joint", joints}};
}

std::string eval_table(const std::vector<std::string>& paths, const std::vector<FitReport>& reports) {
  std::ostringstream os;
  os << std::left << std::setw(12) << "variant" << std::right << std::setw(8) << "seed" << std::setw(10)
     << "params" << std::setw(14) << "train_mse" << std::setw(14) << "heldout_mse" << std::setw(10)
     << "vs_first" << "  report\n";
  const double base = reports.front().heldout_mse;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    os << std::left << std::setw(12) << variant_name(r.variant) << std::right << std::setw(8) << r.seed
       << std::setw(10) << r.parameter_count << std::setw(14) << std::setprecision(6) << r.final_train_mse
       << std::setw(14) << r.heldout_mse << std::setw(10) << std::setprecision(4)
       << (base > 0.0 ? r.heldout_mse / base : 0.0) << "  " << paths[i] << '\n';
  }
  return os.str();
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Pose-conditioned embedding vocabularies: build, query, fit, inspect"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  std::uint64_t seed = kDefaultSeed;
  std::string scales_text = "default";
  std::optional<std::size_t> knn;
  std::string bbox_text;
  std::string out_path;

  // build
  auto* build = app.add_subcommand("build", "Build a vocabulary from a pose sequence");
  std::string poses_path;
  std::vector<std::string> exclude;
  bool keep_all = false;
  std::string init_kind = "uniform";
  build->add_option("--poses", poses_path, "Pose sequence file")->required();
  build->add_option("--seed", seed, "Embedding initialization seed");
  build->add_option("--scales", scales_text, "'default' or R:D:M:K entries separated by ';'");
  build->add_option("--bbox", bbox_text, "x0,y0,z0,x1,y1,z1");
  build->add_option("--exclude", exclude, "Joint names to drop (default: pelvis, hands)");
  build->add_flag("--keep-all-joints", keep_all, "Do not drop any joints");
  build->add_option("--init", init_kind, "Embedding init")->check(CLI::IsMember({"uniform", "zero"}));
  build->add_option("--out", out_path, "Output vocabulary file")->required();

  // query
  auto* query = app.add_subcommand("query", "Evaluate pose features for a batch of records");
  std::string vocab_path, batch_path, field_path;
  std::size_t window = 1;
  query->add_option("--vocab", vocab_path, "Vocabulary file")->required();
  query->add_option("--batch", batch_path, "Query batch file")->required();
  query->add_option("--knn", knn, "Override K for every scale");
  query->add_option("--window", window, "Odd temporal window; records are consecutive frames");
  query->add_option("--field", field_path, "Field description supplying radial influence weights");
  query->add_option("--out", out_path, "Output feature records (default stdout)");

  // fit
  auto* fit = app.add_subcommand("fit", "Fit embeddings to a synthetic field");
  FitConfig cfg;
  std::string variant_text = "featlines";
  std::string vocab_out;
  std::size_t gen_joints = 3, gen_frames = 64;
  std::string fit_scales;
  fit->add_option("--poses", poses_path, "Training pose sequence (default: generated)");
  fit->add_option("--joints", gen_joints, "Joints of the generated sequence");
  fit->add_option("--frames", gen_frames, "Frames of the generated sequence");
  fit->add_option("--field", field_path, "Field description JSON (default: generated)");
  fit->add_option("--seed", seed, "Seed for data, field and initialization");
  fit->add_option("--variant", variant_text, "Encoder variant")
      ->check(CLI::IsMember({"featlines", "globalcode", "globalpose"}));
  fit->add_option("--scales", fit_scales, "R:D:M:K entries separated by ';'");
  fit->add_option("--knn", knn, "Override K for every scale");
  fit->add_option("--bbox", bbox_text, "x0,y0,z0,x1,y1,z1");
  fit->add_option("--tv-weight", cfg.tv_weight, "Total-variation weight");
  fit->add_option("--steps", cfg.steps, "Optimizer steps");
  fit->add_option("--lr", cfg.learning_rate, "Readout learning rate");
  fit->add_option("--embedding-lr-scale", cfg.embedding_lr_scale, "Embedding learning-rate multiplier");
  fit->add_option("--batch-size", cfg.batch_size, "Minibatch size (0: full batch)");
  fit->add_option("--points", cfg.points_per_pose, "Training points per pose");
  fit->add_option("--out", out_path, "Report file, JSON lines (default stdout)");
  fit->add_option("--vocab-out", vocab_out, "Fitted vocabulary (featlines only)");

  // eval
  auto* eval = app.add_subcommand("eval", "Compare fit reports");
  std::vector<std::string> report_paths;
  eval->add_option("reports", report_paths, "Fit report files")->required()->expected(2, -1);
  eval->add_option("--out", out_path, "Output table (default stdout)");

  // inspect
  auto* inspect = app.add_subcommand("inspect", "Print vocabulary statistics as JSON");
  inspect->add_option("--vocab", vocab_path, "Vocabulary file")->required();
  inspect->add_option("--poses", poses_path, "Training sequence for coverage radii");
  inspect->add_option("--out", out_path, "Output file (default stdout)");

  // export-csv
  auto* export_csv = app.add_subcommand("export-csv", "Flatten feature records to CSV");
  std::string features_path;
  export_csv->add_option("--features", features_path, "Feature records file")->required();
  export_csv->add_option("--out", out_path, "Output CSV (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    return report_error(err, "usage", kExitUsage, e.what());
  }

  try {
    if (*build) {
      require_file(poses_path, "pose file");
      const PoseSequence seq = load_pose_sequence(poses_path);
      BuildOptions opts;
      if (keep_all) {
        opts.exclude_joints.clear();
      } else if (!exclude.empty()) {
        opts.exclude_joints = exclude;
      }
      InitPolicy init;
      init.kind = init_kind == "zero" ? InitPolicy::Kind::kZero : InitPolicy::Kind::kUniform;
      init.seed = seed;
      const BBox bbox = bbox_text.empty() ? BBox{} : parse_bbox(bbox_text);
      const PoseVocab v = build_vocab(seq, parse_scales(scales_text), bbox, init, opts);
      save_vocab(v, out_path);
      return kExitOk;
    }

    if (*query) {
      require_file(vocab_path, "vocabulary file");
      require_file(batch_path, "query batch");
      const PoseVocab v = load_vocab(vocab_path);
      const QueryBatch batch = load_query_batch(batch_path);
      if (batch.joints != v.joint_count()) {
        throw Error(ErrorCode::kDimensionMismatch, "batch has " + std::to_string(batch.joints) +
                                                       " joints, vocabulary has " +
                                                       std::to_string(v.joint_count()));
      }
      const InfluenceWeights omega = field_path.empty()
                                         ? InfluenceWeights::uniform(v.joint_count())
                                         : load_field(field_path, v.joint_count(), seed).influence();
      QueryOptions qopts;
      qopts.knn = knn;
      std::vector<PoseFeature> features;
      if (window == 1) {
        features = query_batch(v, batch.records, omega, qopts);
      } else {
        std::vector<Pose> poses;
        std::vector<Vec3> points;
        for (const auto& rec : batch.records) {
          if (rec.omega) {
            throw Error(ErrorCode::kInvalidInput, "per-record weights cannot be combined with --window");
          }
          poses.push_back(rec.pose);
          points.push_back(rec.point);
        }
        features = query_sequence_smoothed(v, poses, points, omega, window, qopts);
      }
      FeatureRecords records;
      records.layout = FeatureLayout::of(v);
      for (std::size_t i = 0; i < batch.records.size(); ++i) {
        FeatureRecord rec;
        for (const auto& aa : batch.records[i].pose.rotations) rec.pose.insert(rec.pose.end(), aa.v.begin(), aa.v.end());
        rec.point = batch.records[i].point;
        rec.feature = std::move(features[i].values);
        records.records.push_back(std::move(rec));
      }
      emit(out_path, format_feature_records(records), out);
      return kExitOk;
    }

    if (*fit) {
      PoseSequence seq;
      if (!poses_path.empty()) {
        require_file(poses_path, "pose file");
        seq = load_pose_sequence(poses_path);
      } else {
        seq = random_pose_sequence(gen_joints, gen_frames, seed);
      }
      const SyntheticField field = load_field(field_path, seq.joints(), seed);
      cfg.seed = seed;
      cfg.variant = parse_variant(variant_text);
      if (!fit_scales.empty()) cfg.scales = parse_scales(fit_scales);
      if (knn) {
        for (auto& s : cfg.scales) s.knn = static_cast<int>(*knn);
      }
      if (!bbox_text.empty()) cfg.bbox = parse_bbox(bbox_text);
      const FitResult result = run_fit(seq, field, cfg);
      std::ostringstream report;
      write_fit_report(result.report, report);
      emit(out_path, report.str(), out);
      if (!vocab_out.empty()) {
        if (!result.vocab) {
          throw Error(ErrorCode::kInvalidInput, "--vocab-out needs the featlines variant");
        }
        save_vocab(*result.vocab, vocab_out);
      }
      if (result.report.diverged) {
        return report_error(err, "fit_diverged", kExitDiverged, result.report.diagnostic);
      }
      return kExitOk;
    }

    if (*eval) {
      std::vector<FitReport> reports;
      for (const auto& p : report_paths) {
        require_file(p, "fit report");
        reports.push_back(load_fit_report(p));
      }
      emit(out_path, eval_table(report_paths, reports), out);
      return kExitOk;
    }

    if (*inspect) {
      require_file(vocab_path, "vocabulary file");
      const PoseVocab v = load_vocab(vocab_path);
      std::optional<PoseSequence> training;
      if (!poses_path.empty()) {
        require_file(poses_path, "pose file");
        training = load_pose_sequence(poses_path);
      }
      const VocabStats stats = vocab_stats(v, training ? &*training : nullptr);
      emit(out_path, stats_json(v, stats).dump(2) + "\n", out);
      return kExitOk;
    }

    if (*export_csv) {
      require_file(features_path, "feature records");
      emit(out_path, feature_records_to_csv(load_feature_records(features_path)), out);
      return kExitOk;
    }
  } catch (const MissingInput& e) {
    return report_error(err, "missing_input", kExitMissingInput, e.what());
  } catch (const Error& e) {
    return report_error(err, error_code_name(e.code()), exit_code_for(e.code()), e.what());
  } catch (const std::exception& e) {
    return report_error(err, "internal", kExitOther, e.what());
  }
  return report_error(err, "usage", kExitUsage, "no subcommand");
}

}  // namespace posevocab
