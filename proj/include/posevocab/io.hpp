#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "posevocab/fit.hpp"
#include "posevocab/query.hpp"
#include "posevocab/vocab.hpp"

namespace posevocab {

// Pose sequences: line-oriented text.
//
//   posevocab-poses 1
//   joints <J>
//   frames <T>
//   units radians
//   names <name_1> ... <name_J>
//   timestamps <0|1>
//   data
//   [<timestamp>] <3J axis-angle reals>      (one line per frame)
//
// Blank lines and lines starting with '#' are ignored.
PoseSequence parse_pose_sequence(std::istream& in, const std::string& source = "<input>");
PoseSequence load_pose_sequence(const std::filesystem::path& path);
std::string format_pose_sequence(const PoseSequence& seq);
void save_pose_sequence(const PoseSequence& seq, const std::filesystem::path& path);

// Vocabulary container, little-endian:
//   "PVCB" | u16 version | u16 flags | u64 payload size | payload | u32 CRC-32(payload)
// Keys and embeddings are stored as f32; the bounding box as f64.
inline constexpr std::uint16_t kVocabFormatVersion = 1;

std::vector<std::uint8_t> encode_vocab(const PoseVocab& v);
PoseVocab decode_vocab(std::span<const std::uint8_t> bytes);
void save_vocab(const PoseVocab& v, const std::filesystem::path& path);
PoseVocab load_vocab(const std::filesystem::path& path);

/// Embedding bytes: J * sum_s M_s * (R_x + R_y + R_z) * D_s * 4.
std::size_t vocab_size_estimate(std::size_t joints, const std::vector<ScaleConfig>& scales);

/// The vocabulary as it reads back from disk: values rounded through f32.
PoseVocab quantize_to_f32(const PoseVocab& v);

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

// Query batches:
//
//   posevocab-queries 1
//   joints <J>
//   records <N>
//   data
//   <3J pose reals> | <3 point reals> [| <J weight reals>]
struct QueryBatch {
  std::size_t joints = 0;
  std::vector<QueryRecord> records;
};

QueryBatch parse_query_batch(std::istream& in, const std::string& source = "<input>");
QueryBatch load_query_batch(const std::filesystem::path& path);
std::string format_query_batch(const QueryBatch& batch);

// Feature records written by `query`:
//
//   posevocab-features 1
//   layout joints <J> scales <S> channels <D_1> ... <D_S> length <L>
//   records <N>
//   data
//   <index> | <3J pose reals> | <3 point reals> | <L feature reals>
struct FeatureRecord {
  std::vector<double> pose;  // raw axis-angle pose, 3J values
  Vec3 point{0.0, 0.0, 0.0};
  std::vector<double> feature;
};

struct FeatureRecords {
  FeatureLayout layout;
  std::vector<FeatureRecord> records;
};

std::string format_feature_records(const FeatureRecords& records);
FeatureRecords parse_feature_records(std::istream& in, const std::string& source = "<input>");
FeatureRecords load_feature_records(const std::filesystem::path& path);

/// Header "record,point_x,point_y,point_z,j00_s0_x0,..." then one row per record.
std::string feature_records_to_csv(const FeatureRecords& records);

// Fit reports: JSON lines. A header record, one "step" record per optimizer
// step, a "summary" record, and a trailing "timing" record. Everything before
// the timing record is deterministic for a given seed and configuration.
void write_fit_report(const FitReport& report, std::ostream& out);
FitReport read_fit_report(std::istream& in, const std::string& source = "<input>");
FitReport load_fit_report(const std::filesystem::path& path);
std::string summary_record(const FitReport& report);

/// Writes via a temporary file in the same directory and renames over path.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, const std::string& text);

std::string format_real(double x);

}  // namespace posevocab
