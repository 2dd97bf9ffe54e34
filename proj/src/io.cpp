#include "posevocab/io.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include "json.hpp"
#include <sstream>
#include <unistd.h>

#include "posevocab/error.hpp"

namespace posevocab {

namespace {

// ---------------------------------------------------------------------------
// Text helpers

class LineReader {
 public:
  LineReader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

  // Next non-blank, non-comment line split into tokens; false at EOF.
  bool next(std::vector<std::string>& tokens) {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      tokens.clear();
      std::istringstream ss(line);
      std::string tok;
      while (ss >> tok) tokens.push_back(tok);
      if (tokens.empty() || tokens.front().starts_with('#')) continue;
      return true;
    }
    return false;
  }

  std::vector<std::string> expect(const std::string& what) {
    std::vector<std::string> tokens;
    if (!next(tokens)) fail(ErrorCode::kParse, "unexpected end of file, expected " + what);
    return tokens;
  }

  [[noreturn]] void fail(ErrorCode code, const std::string& message) const {
    throw Error(code, source_ + ":" + std::to_string(line_no_) + ": " + message);
  }

  std::size_t line() const { return line_no_; }

 private:
  std::istream& in_;
  std::string source_;
  std::size_t line_no_ = 0;
};

double parse_real(const LineReader& r, const std::string& tok) {
  double value = 0.0;
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  if (first != last && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec == std::errc::result_out_of_range && ptr == last) {
    r.fail(ErrorCode::kNonFinite, "value '" + tok + "' is out of range");
  }
  if (ec != std::errc() || ptr != last) {
    std::string lower(tok);
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    if (lower.find("nan") != std::string::npos || lower.find("inf") != std::string::npos) {
      r.fail(ErrorCode::kNonFinite, "non-finite value '" + tok + "'");
    }
    r.fail(ErrorCode::kParse, "malformed number '" + tok + "'");
  }
  if (!std::isfinite(value)) r.fail(ErrorCode::kNonFinite, "non-finite value '" + tok + "'");
  return value;
}

std::size_t parse_count(const LineReader& r, const std::string& tok) {
  std::size_t value = 0;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) {
    r.fail(ErrorCode::kParse, "malformed count '" + tok + "'");
  }
  return value;
}

// "key value" header line.
std::string header_value(LineReader& r, const std::string& key) {
  const auto tokens = r.expect("'" + key + "'");
  if (tokens.size() != 2 || tokens[0] != key) r.fail(ErrorCode::kParse, "expected '" + key + " <value>'");
  return tokens[1];
}

void expect_magic(LineReader& r, const std::string& magic) {
  const auto tokens = r.expect("'" + magic + "'");
  if (tokens.size() != 2 || tokens[0] != magic) r.fail(ErrorCode::kParse, "missing '" + magic + "' header");
  if (tokens[1] != "1") r.fail(ErrorCode::kVersionMismatch, "unsupported version " + tokens[1]);
}

void expect_data(LineReader& r) {
  const auto tokens = r.expect("'data'");
  if (tokens.size() != 1 || tokens[0] != "data") r.fail(ErrorCode::kParse, "expected 'data'");
}

// Splits tokens on '|' into groups.
std::vector<std::vector<std::string>> split_groups(const std::vector<std::string>& tokens) {
  std::vector<std::vector<std::string>> groups(1);
  for (const auto& t : tokens) {
    if (t == "|") {
      groups.emplace_back();
    } else {
      groups.back().push_back(t);
    }
  }
  return groups;
}

std::vector<double> parse_reals(const LineReader& r, const std::vector<std::string>& tokens,
                                std::size_t expected, const std::string& what) {
  if (tokens.size() != expected) {
    r.fail(ErrorCode::kDimensionMismatch, what + " has " + std::to_string(tokens.size()) +
                                              " values, expected " + std::to_string(expected));
  }
  std::vector<double> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(parse_real(r, t));
  return out;
}

void append_reals(std::string& out, std::span<const double> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i > 0) out += ' ';
    out += format_real(values[i]);
  }
}

std::ifstream open_input(const std::filesystem::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw Error(ErrorCode::kIo, "cannot open '" + path.string() + "'");
  return in;
}

// ---------------------------------------------------------------------------
// Binary helpers

class ByteWriter {
 public:
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  std::vector<std::uint8_t>& buffer() { return buf_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f32() { return static_cast<double>(std::bit_cast<float>(u32())); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw Error(ErrorCode::kTruncated, "vocabulary payload is truncated");
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

constexpr char kVocabMagic[4] = {'P', 'V', 'C', 'B'};
constexpr std::size_t kVocabHeaderSize = 4 + 2 + 2 + 8;
// Sanity bound on counts read from disk before allocating.
constexpr std::uint32_t kMaxCount = 1u << 28;

std::uint32_t checked_count(ByteReader& r, const char* what) {
  const std::uint32_t n = r.u32();
  if (n > kMaxCount) throw Error(ErrorCode::kParse, std::string("implausible ") + what + " count");
  return n;
}

}  // namespace

std::string format_real(double x) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, ptr);
}

// ---------------------------------------------------------------------------
// Pose sequences

PoseSequence parse_pose_sequence(std::istream& in, const std::string& source) {
  LineReader r(in, source);
  expect_magic(r, "posevocab-poses");
  const std::size_t joints = parse_count(r, header_value(r, "joints"));
  const std::size_t frames = parse_count(r, header_value(r, "frames"));
  const std::string units = header_value(r, "units");
  if (units != "radians") r.fail(ErrorCode::kParse, "units must be 'radians', got '" + units + "'");
  auto names = r.expect("'names'");
  if (names.empty() || names[0] != "names") r.fail(ErrorCode::kParse, "expected 'names'");
  names.erase(names.begin());
  if (names.size() != joints) {
    r.fail(ErrorCode::kDimensionMismatch, "names lists " + std::to_string(names.size()) +
                                              " joints, header says " + std::to_string(joints));
  }
  const std::string ts = header_value(r, "timestamps");
  if (ts != "0" && ts != "1") r.fail(ErrorCode::kParse, "timestamps must be 0 or 1");
  const bool has_ts = ts == "1";
  expect_data(r);

  PoseSequence seq;
  seq.joint_names = std::move(names);
  seq.frames = frames;
  seq.rotations.reserve(frames * joints);
  std::vector<std::string> tokens;
  for (std::size_t t = 0; t < frames; ++t) {
    if (!r.next(tokens)) {
      r.fail(ErrorCode::kDimensionMismatch, "file ends after " + std::to_string(t) + " of " +
                                                std::to_string(frames) + " frames");
    }
    const std::size_t expected = 3 * joints + (has_ts ? 1 : 0);
    if (tokens.size() != expected) {
      r.fail(ErrorCode::kDimensionMismatch, "frame has " + std::to_string(tokens.size()) +
                                                " values, expected " + std::to_string(expected));
    }
    std::size_t i = 0;
    if (has_ts) seq.timestamps.push_back(parse_real(r, tokens[i++]));
    for (std::size_t j = 0; j < joints; ++j, i += 3) {
      seq.rotations.push_back(AxisAngle{{parse_real(r, tokens[i]), parse_real(r, tokens[i + 1]),
                                         parse_real(r, tokens[i + 2])}});
    }
  }
  if (r.next(tokens)) r.fail(ErrorCode::kDimensionMismatch, "more frames than the header declares");
  seq.validate();
  return seq;
}

PoseSequence load_pose_sequence(const std::filesystem::path& path) {
  auto in = open_input(path);
  return parse_pose_sequence(in, path.string());
}

std::string format_pose_sequence(const PoseSequence& seq) {
  seq.validate();
  std::string out = "posevocab-poses 1\n";
  out += "joints " + std::to_string(seq.joints()) + "\n";
  out += "frames " + std::to_string(seq.frames) + "\n";
  out += "units radians\nnames";
  for (const auto& n : seq.joint_names) out += " " + n;
  out += "\ntimestamps ";
  out += seq.timestamps.empty() ? "0" : "1";
  out += "\ndata\n";
  for (std::size_t t = 0; t < seq.frames; ++t) {
    std::vector<double> row;
    if (!seq.timestamps.empty()) row.push_back(seq.timestamps[t]);
    for (const auto& aa : seq.frame(t)) row.insert(row.end(), aa.v.begin(), aa.v.end());
    append_reals(out, row);
    out += '\n';
  }
  return out;
}

void save_pose_sequence(const PoseSequence& seq, const std::filesystem::path& path) {
  write_file_atomic(path, format_pose_sequence(seq));
}

// ---------------------------------------------------------------------------
// Vocabulary container

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - pos, 1u << 30));
    crc = ::crc32(crc, bytes.data() + pos, chunk);
    pos += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> encode_vocab(const PoseVocab& v) {
  v.validate();
  ByteWriter p;
  p.u32(static_cast<std::uint32_t>(v.joint_count()));
  p.u32(static_cast<std::uint32_t>(v.scale_count()));
  for (const auto& s : v.scales) {
    for (int r : s.lines.resolution) p.u32(static_cast<std::uint32_t>(r));
    p.u32(static_cast<std::uint32_t>(s.lines.channels));
    p.u32(static_cast<std::uint32_t>(s.key_count));
    p.u32(static_cast<std::uint32_t>(s.knn));
  }
  for (double x : v.bbox.lo) p.f64(x);
  for (double x : v.bbox.hi) p.f64(x);
  p.u64(v.meta.source_hash);
  p.u64(v.meta.seed);
  for (std::size_t j = 0; j < v.joint_count(); ++j) {
    const auto& name = v.joint_names[j];
    p.u32(static_cast<std::uint32_t>(name.size()));
    p.bytes(name.data(), name.size());
    const JointVocab& jv = v.joints[j];
    p.u32(static_cast<std::uint32_t>(jv.keys.size()));
    for (const auto& q : jv.keys) {
      for (double c : q.components()) p.f32(c);
    }
    for (const auto& embs : jv.embeddings) {
      p.u32(static_cast<std::uint32_t>(embs.size()));
      for (const auto& fl : embs) {
        for (double x : fl.values()) p.f32(x);
      }
    }
  }
  std::vector<std::uint8_t>& payload = p.buffer();

  ByteWriter out;
  out.bytes(kVocabMagic, 4);
  out.u16(kVocabFormatVersion);
  out.u16(0);
  out.u64(payload.size());
  out.bytes(payload.data(), payload.size());
  out.u32(crc32(payload));
  return std::move(out.buffer());
}

PoseVocab decode_vocab(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || !std::equal(kVocabMagic, kVocabMagic + 4, bytes.begin())) {
    throw Error(ErrorCode::kParse, "not a PVCB vocabulary file");
  }
  if (bytes.size() < kVocabHeaderSize) throw Error(ErrorCode::kTruncated, "vocabulary header is truncated");
  ByteReader header(bytes.subspan(4, kVocabHeaderSize - 4));
  const std::uint16_t version = header.u16();
  if (version != kVocabFormatVersion) {
    throw Error(ErrorCode::kVersionMismatch, "vocabulary format version " + std::to_string(version) +
                                                 " is not supported (expected " +
                                                 std::to_string(kVocabFormatVersion) + ")");
  }
  header.u16();
  const std::uint64_t payload_size = header.u64();
  if (bytes.size() - kVocabHeaderSize < 4 || payload_size > bytes.size() - kVocabHeaderSize - 4) {
    throw Error(ErrorCode::kTruncated, "vocabulary file is truncated");
  }
  if (payload_size != bytes.size() - kVocabHeaderSize - 4) {
    throw Error(ErrorCode::kParse, "trailing bytes after the vocabulary checksum");
  }
  const auto payload = bytes.subspan(kVocabHeaderSize, payload_size);
  ByteReader tail(bytes.subspan(kVocabHeaderSize + payload_size, 4));
  if (tail.u32() != crc32(payload)) throw Error(ErrorCode::kChecksum, "vocabulary checksum mismatch");

  ByteReader r(payload);
  PoseVocab v;
  const std::uint32_t joints = checked_count(r, "joint");
  const std::uint32_t scales = checked_count(r, "scale");
  for (std::uint32_t s = 0; s < scales; ++s) {
    ScaleConfig sc;
    for (int& res : sc.lines.resolution) res = static_cast<int>(checked_count(r, "resolution"));
    sc.lines.channels = static_cast<int>(checked_count(r, "channel"));
    sc.key_count = static_cast<int>(checked_count(r, "key"));
    sc.knn = static_cast<int>(checked_count(r, "knn"));
    sc.validate();
    v.scales.push_back(sc);
  }
  for (double& x : v.bbox.lo) x = r.f64();
  for (double& x : v.bbox.hi) x = r.f64();
  v.meta.source_hash = r.u64();
  v.meta.seed = r.u64();
  for (std::uint32_t j = 0; j < joints; ++j) {
    v.joint_names.push_back(r.str(checked_count(r, "name byte")));
    JointVocab jv;
    const std::uint32_t keys = checked_count(r, "key");
    for (std::uint32_t k = 0; k < keys; ++k) {
      const double w = r.f32(), x = r.f32(), y = r.f32(), z = r.f32();
      jv.keys.push_back(UnitQuat::from_stored(w, x, y, z));
    }
    for (std::uint32_t s = 0; s < scales; ++s) {
      const std::uint32_t count = checked_count(r, "embedding");
      const LinesShape& shape = v.scales[s].lines;
      if (static_cast<std::uint64_t>(count) * shape.size() * 4 > r.remaining()) {
        throw Error(ErrorCode::kTruncated, "vocabulary payload is truncated");
      }
      std::vector<FeatureLines> embs;
      embs.reserve(count);
      for (std::uint32_t m = 0; m < count; ++m) {
        std::vector<double> values(shape.size());
        for (double& x : values) x = r.f32();
        embs.emplace_back(shape, std::move(values));
      }
      jv.embeddings.push_back(std::move(embs));
    }
    v.joints.push_back(std::move(jv));
  }
  if (r.remaining() != 0) throw Error(ErrorCode::kParse, "unexpected bytes at the end of the payload");
  v.validate();
  return v;
}

void save_vocab(const PoseVocab& v, const std::filesystem::path& path) {
  write_file_atomic(path, encode_vocab(v));
}

PoseVocab load_vocab(const std::filesystem::path& path) {
  auto in = open_input(path, std::ios::in | std::ios::binary);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_vocab(bytes);
}

std::size_t vocab_size_estimate(std::size_t joints, const std::vector<ScaleConfig>& scales) {
  std::size_t per_joint = 0;
  for (const auto& s : scales) {
    per_joint += static_cast<std::size_t>(s.key_count) * s.lines.size() * sizeof(float);
  }
  return joints * per_joint;
}

PoseVocab quantize_to_f32(const PoseVocab& v) {
  PoseVocab out = v;
  auto q = [](double x) { return static_cast<double>(static_cast<float>(x)); };
  for (auto& jv : out.joints) {
    for (auto& key : jv.keys) {
      const auto& c = key.components();
      key = UnitQuat::from_stored(q(c[0]), q(c[1]), q(c[2]), q(c[3]));
    }
    for (auto& embs : jv.embeddings) {
      for (auto& fl : embs) {
        for (double& x : fl.values()) x = q(x);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Query batches and feature records

QueryBatch parse_query_batch(std::istream& in, const std::string& source) {
  LineReader r(in, source);
  expect_magic(r, "posevocab-queries");
  QueryBatch batch;
  batch.joints = parse_count(r, header_value(r, "joints"));
  const std::size_t count = parse_count(r, header_value(r, "records"));
  expect_data(r);
  std::vector<std::string> tokens;
  for (std::size_t i = 0; i < count; ++i) {
    if (!r.next(tokens)) {
      r.fail(ErrorCode::kDimensionMismatch, "file ends after " + std::to_string(i) + " of " +
                                                std::to_string(count) + " records");
    }
    const auto groups = split_groups(tokens);
    if (groups.size() != 2 && groups.size() != 3) {
      r.fail(ErrorCode::kParse, "record needs 'pose | point' or 'pose | point | weights'");
    }
    const auto pose = parse_reals(r, groups[0], 3 * batch.joints, "pose");
    const auto point = parse_reals(r, groups[1], 3, "point");
    QueryRecord rec;
    for (std::size_t j = 0; j < batch.joints; ++j) {
      rec.pose.rotations.push_back(AxisAngle{{pose[3 * j], pose[3 * j + 1], pose[3 * j + 2]}});
    }
    rec.point = {point[0], point[1], point[2]};
    if (groups.size() == 3) rec.omega = parse_reals(r, groups[2], batch.joints, "weights");
    batch.records.push_back(std::move(rec));
  }
  if (r.next(tokens)) r.fail(ErrorCode::kDimensionMismatch, "more records than the header declares");
  return batch;
}

QueryBatch load_query_batch(const std::filesystem::path& path) {
  auto in = open_input(path);
  return parse_query_batch(in, path.string());
}

std::string format_query_batch(const QueryBatch& batch) {
  std::string out = "posevocab-queries 1\njoints " + std::to_string(batch.joints) + "\nrecords " +
                    std::to_string(batch.records.size()) + "\ndata\n";
  for (const auto& rec : batch.records) {
    std::vector<double> pose;
    for (const auto& aa : rec.pose.rotations) pose.insert(pose.end(), aa.v.begin(), aa.v.end());
    append_reals(out, pose);
    out += " | ";
    append_reals(out, rec.point);
    if (rec.omega) {
      out += " | ";
      append_reals(out, *rec.omega);
    }
    out += '\n';
  }
  return out;
}

std::string format_feature_records(const FeatureRecords& records) {
  const FeatureLayout& layout = records.layout;
  std::string out = "posevocab-features 1\nlayout joints " + std::to_string(layout.joints()) +
                    " scales " + std::to_string(layout.scales()) + " channels";
  for (std::size_t s = 0; s < layout.scales(); ++s) out += " " + std::to_string(layout.channels(s));
  out += " length " + std::to_string(layout.size()) + "\nrecords " +
         std::to_string(records.records.size()) + "\ndata\n";
  for (std::size_t i = 0; i < records.records.size(); ++i) {
    const auto& rec = records.records[i];
    out += std::to_string(i) + " | ";
    append_reals(out, rec.pose);
    out += " | ";
    append_reals(out, rec.point);
    out += " | ";
    append_reals(out, rec.feature);
    out += '\n';
  }
  return out;
}

FeatureRecords parse_feature_records(std::istream& in, const std::string& source) {
  LineReader r(in, source);
  expect_magic(r, "posevocab-features");
  const auto layout_tokens = r.expect("'layout'");
  // layout joints J scales S channels D... length L
  if (layout_tokens.size() < 8 || layout_tokens[0] != "layout" || layout_tokens[1] != "joints" ||
      layout_tokens[3] != "scales" || layout_tokens[5] != "channels") {
    r.fail(ErrorCode::kParse, "malformed layout line");
  }
  const std::size_t joints = parse_count(r, layout_tokens[2]);
  const std::size_t scales = parse_count(r, layout_tokens[4]);
  if (layout_tokens.size() != 8 + scales || layout_tokens[6 + scales] != "length") {
    r.fail(ErrorCode::kParse, "malformed layout line");
  }
  std::vector<std::size_t> channels;
  for (std::size_t s = 0; s < scales; ++s) channels.push_back(parse_count(r, layout_tokens[6 + s]));
  FeatureRecords out;
  out.layout = FeatureLayout(joints, channels);
  if (parse_count(r, layout_tokens[7 + scales]) != out.layout.size()) {
    r.fail(ErrorCode::kDimensionMismatch, "layout length does not match joints, scales and channels");
  }
  const std::size_t count = parse_count(r, header_value(r, "records"));
  expect_data(r);
  std::vector<std::string> tokens;
  for (std::size_t i = 0; i < count; ++i) {
    if (!r.next(tokens)) r.fail(ErrorCode::kDimensionMismatch, "fewer records than declared");
    const auto groups = split_groups(tokens);
    if (groups.size() != 4 || groups[0].size() != 1 || parse_count(r, groups[0][0]) != i) {
      r.fail(ErrorCode::kParse, "record must be '<index> | pose | point | feature' in index order");
    }
    FeatureRecord rec;
    rec.pose = parse_reals(r, groups[1], 3 * joints, "pose");
    const auto p = parse_reals(r, groups[2], 3, "point");
    rec.point = {p[0], p[1], p[2]};
    rec.feature = parse_reals(r, groups[3], out.layout.size(), "feature");
    out.records.push_back(std::move(rec));
  }
  if (r.next(tokens)) r.fail(ErrorCode::kDimensionMismatch, "more records than the header declares");
  return out;
}

FeatureRecords load_feature_records(const std::filesystem::path& path) {
  auto in = open_input(path);
  return parse_feature_records(in, path.string());
}

std::string feature_records_to_csv(const FeatureRecords& records) {
  const FeatureLayout& layout = records.layout;
  std::string out = "record,point_x,point_y,point_z";
  static constexpr char kAxisName[3] = {'x', 'y', 'z'};
  for (std::size_t j = 0; j < layout.joints(); ++j) {
    for (std::size_t s = 0; s < layout.scales(); ++s) {
      for (int a = 0; a < 3; ++a) {
        for (std::size_t c = 0; c < layout.channels(s); ++c) {
          char buf[64];
          std::snprintf(buf, sizeof(buf), ",j%02zu_s%zu_%c%zu", j, s, kAxisName[a], c);
          out += buf;
        }
      }
    }
  }
  out += '\n';
  for (std::size_t i = 0; i < records.records.size(); ++i) {
    const auto& rec = records.records[i];
    out += std::to_string(i);
    for (double x : rec.point) out += "," + format_real(x);
    for (double x : rec.feature) out += "," + format_real(x);
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fit reports

namespace {

nlohmann::json summary_json(const FitReport& r) {
  return nlohmann::json{{"type", "summary"},
                        {"variant", variant_name(r.variant)},
                        {"seed", r.seed},
                        {"steps_run", r.steps_run},
                        {"rejected_steps", r.rejected_steps},
                        {"initial_train_mse", r.initial_train_mse},
                        {"initial_heldout_mse", r.initial_heldout_mse},
                        {"final_train_mse", r.final_train_mse},
                        {"heldout_mse", r.heldout_mse},
                        {"final_loss", r.loss_curve.empty() ? nlohmann::json(nullptr)
                                                            : nlohmann::json(r.loss_curve.back())},
                        {"parameter_count", r.parameter_count},
                        {"reference_parameter_count", r.reference_parameter_count},
                        {"budget_ok", r.budget_ok},
                        {"diverged", r.diverged},
                        {"diagnostic", r.diagnostic}};
}

}  // namespace

std::string summary_record(const FitReport& report) { return summary_json(report).dump(); }

void write_fit_report(const FitReport& report, std::ostream& out) {
  out << nlohmann::json{{"type", "header"},
                        {"format", "posevocab-fit-report"},
                        {"version", 1},
                        {"variant", variant_name(report.variant)},
                        {"seed", report.seed}}
             .dump()
      << '\n';
  for (std::size_t i = 0; i < report.loss_curve.size(); ++i) {
    out << nlohmann::json{{"type", "step"},
                          {"step", i + 1},
                          {"loss", report.loss_curve[i]},
                          {"lr", report.learning_rates[i]}}
               .dump()
        << '\n';
  }
  out << summary_record(report) << '\n';
  out << nlohmann::json{{"type", "timing"}, {"wall_time_seconds", report.wall_time_seconds}}.dump()
      << '\n';
}

FitReport read_fit_report(std::istream& in, const std::string& source) {
  FitReport r;
  bool have_summary = false;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      const std::string type = j.at("type");
      if (type == "step") {
        r.loss_curve.push_back(j.at("loss"));
        r.learning_rates.push_back(j.at("lr"));
      } else if (type == "summary") {
        have_summary = true;
        r.variant = parse_variant(j.at("variant"));
        r.seed = j.at("seed");
        r.steps_run = j.at("steps_run");
        r.rejected_steps = j.at("rejected_steps");
        r.initial_train_mse = j.at("initial_train_mse");
        r.initial_heldout_mse = j.at("initial_heldout_mse");
        r.final_train_mse = j.at("final_train_mse");
        r.heldout_mse = j.at("heldout_mse");
        r.parameter_count = j.at("parameter_count");
        r.reference_parameter_count = j.at("reference_parameter_count");
        r.budget_ok = j.at("budget_ok");
        r.diverged = j.at("diverged");
        r.diagnostic = j.at("diagnostic");
      } else if (type == "timing") {
        r.wall_time_seconds = j.at("wall_time_seconds");
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kParse, source + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!have_summary) throw Error(ErrorCode::kParse, source + ": fit report has no summary record");
  return r;
}

FitReport load_fit_report(const std::filesystem::path& path) {
  auto in = open_input(path);
  return read_fit_report(in, path.string());
}

// ---------------------------------------------------------------------------

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::out | std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot write '" + tmp.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw Error(ErrorCode::kIo, "short write to '" + tmp.string() + "'");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error(ErrorCode::kIo, "cannot move output into '" + path.string() + "'");
  }
}

void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()),
                                                        text.size()));
}

}  // namespace posevocab
