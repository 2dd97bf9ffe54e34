#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "oracles.hpp"
#include "posevocab/cli.hpp"
#include "posevocab/io.hpp"

using namespace posevocab;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "posevocab");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

fs::path workdir() {
  const fs::path dir = fs::temp_directory_path() / ("posevocab_cli_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir;
}

std::string read(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

bool single_error_line(const std::string& err, const std::string& code, int exit) {
  const std::string prefix = "error: code=" + code + " exit=" + std::to_string(exit) + " message=\"";
  return err.rfind(prefix, 0) == 0 && err.find('\n') == err.size() - 1;
}

std::string summary_line(const std::string& report) {
  std::istringstream in(report);
  std::string line;
  while (std::getline(in, line)) {
    if (line.find("\"type\":\"summary\"") != std::string::npos) return line;
  }
  return {};
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("build then inspect a single-frame sequence") {
    const fs::path dir = workdir();
    write(dir / "one.poses", "posevocab-poses 1\njoints 2\nframes 1\nunits radians\nnames a b\ntimestamps 0\ndata\n0.1 0 0 0 0.2 0\n");
    const Run b = cli({"build", "--poses", (dir / "one.poses").string(), "--scales", "4:2:8:2;3:1:4:1",
                       "--out", (dir / "one.pvcb").string()});
    REQUIRE(b.code == 0);
    const Run i = cli({"inspect", "--vocab", (dir / "one.pvcb").string(), "--poses", (dir / "one.poses").string()});
    REQUIRE(i.code == 0);
    const auto j = nlohmann::json::parse(i.out);
    CHECK(j["joints"] == 2);
    for (const auto& joint : j["per_joint"]) {
      for (const auto& s : joint["scales"]) {
        CHECK(s["key_count"] == 1);
        CHECK(s["coverage_radius"] == 0.0);
      }
    }
  }

  TEST_CASE("query at a training pose with K = 1 returns stored rows") {
    const fs::path dir = workdir();
    const PoseSequence seq = random_pose_sequence(2, 12, 3);
    save_pose_sequence(seq, dir / "train.poses");
    REQUIRE(cli({"build", "--poses", (dir / "train.poses").string(), "--scales", "5:2:6:1", "--seed", "4",
                 "--out", (dir / "v.pvcb").string()})
                .code == 0);
    const PoseVocab v = load_vocab(dir / "v.pvcb");

    QueryBatch batch;
    batch.joints = 2;
    const std::vector<double> w{0.25, 1.0};
    for (std::size_t t = 0; t < 6; ++t) {
      QueryRecord r;
      r.pose.rotations.assign(seq.frame(t).begin(), seq.frame(t).end());
      r.point = {-0.5, 0.0, 1.0};
      r.omega = w;
      batch.records.push_back(r);
    }
    write(dir / "q.txt", format_query_batch(batch));
    const Run q = cli({"query", "--vocab", (dir / "v.pvcb").string(), "--batch", (dir / "q.txt").string(), "--out",
                       (dir / "f.txt").string()});
    REQUIRE(q.code == 0);
    const FeatureRecords recs = load_feature_records(dir / "f.txt");
    REQUIRE(recs.records.size() == 6);
    for (std::size_t t = 0; t < 6; ++t) {
      for (std::size_t j = 0; j < 2; ++j) {
        const UnitQuat key = axis_angle_to_quat(seq.at(t, j));
        std::size_t m = 0;
        while (m < v.joints[j].keys.size() && rotation_distance(v.joints[j].keys[m], key) > 1e-6) ++m;
        if (m >= v.joints[j].key_count(0)) continue;  // frame not among the sampled keys
        const FeatureLines& emb = v.joints[j].embeddings[0][m];
        const std::size_t base = recs.layout.joint_offset(j);
        const std::size_t rows[3] = {1, 2, 4};
        std::size_t k = 0;
        for (Axis a : kAxes) {
          for (double x : emb.row(a, rows[static_cast<int>(a)])) CHECK(recs.records[t].feature[base + k++] == w[j] * x);
        }
      }
    }
    const Run csv = cli({"export-csv", "--features", (dir / "f.txt").string()});
    CHECK(csv.code == 0);
    CHECK(csv.out.rfind("record,point_x", 0) == 0);
    const Run smooth = cli({"query", "--vocab", (dir / "v.pvcb").string(), "--batch", (dir / "q.txt").string(),
                            "--window", "3"});
    CHECK(smooth.code == 8);
    CHECK(single_error_line(smooth.err, "invalid_input", 8));
  }

  TEST_CASE("fit is reproducible and eval compares reports") {
    const fs::path dir = workdir();
    const std::vector<std::string> common{"--joints", "2", "--frames", "16", "--steps", "30", "--seed", "5",
                                          "--scales", "6:2:8:3", "--points", "4"};
    auto run = [&](const std::string& variant, const std::string& out) {
      std::vector<std::string> args{"fit", "--variant", variant, "--out", (dir / out).string()};
      args.insert(args.end(), common.begin(), common.end());
      return cli(args);
    };
    REQUIRE(run("featlines", "a.jsonl").code == 0);
    REQUIRE(run("featlines", "b.jsonl").code == 0);
    REQUIRE(run("globalpose", "c.jsonl").code == 0);
    const std::string a = summary_line(read(dir / "a.jsonl"));
    CHECK(!a.empty());
    CHECK(a == summary_line(read(dir / "b.jsonl")));
    const Run e = cli({"eval", (dir / "a.jsonl").string(), (dir / "c.jsonl").string()});
    CHECK(e.code == 0);
    CHECK(e.out.find("featlines") != std::string::npos);
    CHECK(e.out.find("globalpose") != std::string::npos);

    std::vector<std::string> with_vocab{"fit", "--out", (dir / "d.jsonl").string(), "--vocab-out", (dir / "fit.pvcb").string()};
    with_vocab.insert(with_vocab.end(), common.begin(), common.end());
    CHECK(cli(with_vocab).code == 0);
    CHECK(load_vocab(dir / "fit.pvcb").joint_count() == 2);

    write(dir / "field.json", "{\"outputs\": 2, \"seed\": 9, \"sigma\": 0.5}");
    std::vector<std::string> with_field{"fit", "--field", (dir / "field.json").string(), "--out", (dir / "e.jsonl").string()};
    with_field.insert(with_field.end(), common.begin(), common.end());
    CHECK(cli(with_field).code == 0);
  }

  TEST_CASE("the default seed is fixed") {
    const fs::path dir = workdir();
    save_pose_sequence(random_pose_sequence(2, 8, 1), dir / "s.poses");
    cli({"build", "--poses", (dir / "s.poses").string(), "--scales", "4:1:4:2", "--out", (dir / "x.pvcb").string()});
    cli({"build", "--poses", (dir / "s.poses").string(), "--scales", "4:1:4:2", "--seed", "0", "--out", (dir / "y.pvcb").string()});
    CHECK(read(dir / "x.pvcb") == read(dir / "y.pvcb"));
  }

  TEST_CASE("error exits") {
    const fs::path dir = workdir();
    save_pose_sequence(random_pose_sequence(2, 8, 1), dir / "s.poses");
    REQUIRE(cli({"build", "--poses", (dir / "s.poses").string(), "--scales", "4:1:4:2", "--out", (dir / "v.pvcb").string()}).code == 0);

    const Run unknown = cli({"build", "--frobnicate"});
    CHECK(unknown.code == kExitUsage);
    CHECK(single_error_line(unknown.err, "usage", kExitUsage));
    CHECK(cli({"teleport"}).code == kExitUsage);
    CHECK(cli({}).code == kExitUsage);

    const Run missing = cli({"build", "--poses", (dir / "nope.poses").string(), "--out", (dir / "z.pvcb").string()});
    CHECK(missing.code == kExitMissingInput);
    CHECK(single_error_line(missing.err, "missing_input", kExitMissingInput));

    QueryBatch wrong;
    wrong.joints = 3;
    wrong.records.push_back(QueryRecord{Pose{std::vector<AxisAngle>(3)}, {0, 0, 0}, std::nullopt});
    write(dir / "wrong.txt", format_query_batch(wrong));
    const Run dim = cli({"query", "--vocab", (dir / "v.pvcb").string(), "--batch", (dir / "wrong.txt").string()});
    CHECK(dim.code == kExitDimensionMismatch);
    CHECK(single_error_line(dim.err, "dimension_mismatch", kExitDimensionMismatch));

    write(dir / "nan.poses", "posevocab-poses 1\njoints 1\nframes 1\nunits radians\nnames a\ntimestamps 0\ndata\nnan 0 0\n");
    const Run nan = cli({"build", "--poses", (dir / "nan.poses").string(), "--out", (dir / "z.pvcb").string()});
    CHECK(nan.code == kExitParse);
    CHECK(single_error_line(nan.err, "non_finite", kExitParse));
    CHECK(nan.err.find("nan.poses:8") != std::string::npos);

    std::string bytes = read(dir / "v.pvcb");
    bytes[bytes.size() / 2] ^= 0x10;
    write(dir / "bad.pvcb", bytes);
    const Run corrupt = cli({"inspect", "--vocab", (dir / "bad.pvcb").string()});
    CHECK(corrupt.code == kExitFormat);
    CHECK(single_error_line(corrupt.err, "checksum_failure", kExitFormat));

    const Run diverged = cli({"fit", "--joints", "2", "--frames", "8", "--steps", "5", "--lr", "1e300",
                              "--scales", "4:1:4:2", "--out", (dir / "div.jsonl").string()});
    CHECK(diverged.code == kExitDiverged);
    CHECK(single_error_line(diverged.err, "fit_diverged", kExitDiverged));

    const Run bbox = cli({"build", "--poses", (dir / "s.poses").string(), "--bbox", "0,0,0,1,0,1", "--out", (dir / "z.pvcb").string()});
    CHECK(bbox.code == kExitInvalidInput);
    CHECK(single_error_line(bbox.err, "invalid_input", kExitInvalidInput));

    CHECK(cli({"build", "--poses", (dir / "s.poses").string(), "--scales", "4:1:2:3", "--out", (dir / "z.pvcb").string()}).code ==
          kExitInvalidInput);
    CHECK(!fs::exists(dir / "z.pvcb"));
  }
}
