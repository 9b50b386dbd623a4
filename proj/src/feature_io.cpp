#include "weedout/feature_io.hpp"

#include "weedout/error.hpp"

#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <system_error>
#include <thread>

namespace weedout {

namespace fs = std::filesystem;

namespace {

std::string read_all(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return std::move(buf).str();
}

template <typename T>
T read_le(const std::string& bytes, std::size_t offset) {
  T value;
  std::memcpy(&value, bytes.data() + offset, sizeof(T));
  return value;
}

template <typename T>
void append_le(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    start = end + 1;
  }
  return lines;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(sep, start);
    fields.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return fields;
}

bool looks_binary(const std::string& bytes) {
  const std::size_t probe = std::min<std::size_t>(bytes.size(), 4);
  for (std::size_t i = 0; i < probe; ++i) {
    const auto c = static_cast<unsigned char>(bytes[i]);
    if (c < 0x09 || (c > 0x0D && c < 0x20) || c == 0x7F) return true;
  }
  return false;
}

std::vector<std::string> read_ids(const fs::path& path, std::uint64_t expected) {
  const fs::path ids_path = sidecar(path, ".ids");
  if (!fs::exists(ids_path)) {
    throw Error(ErrorCode::kIoError, "missing id sidecar " + ids_path.string());
  }
  const std::string text = read_all(ids_path);
  if (!text.empty() && text.back() != '\n') {
    throw Error(ErrorCode::kTruncatedFile, "id sidecar not LF-terminated: " + ids_path.string());
  }
  std::vector<std::string> ids;
  ids.reserve(expected);
  std::size_t start = 0;
  while (start < text.size()) {
    const auto end = text.find('\n', start);
    ids.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  if (ids.size() != expected) {
    throw Error(ErrorCode::kLengthMismatch,
                ids_path.string() + " has " + std::to_string(ids.size()) + " ids, expected " +
                    std::to_string(expected));
  }
  return ids;
}

FeatureMatrix parse_binary(const std::string& bytes, const fs::path& path) {
  if (bytes.size() < kFeatureHeaderBytes) {
    throw Error(ErrorCode::kTruncatedFile, "header cut short: " + path.string());
  }
  const auto version = read_le<std::uint32_t>(bytes, 4);
  if (version != kFeatureVersion) {
    throw Error(ErrorCode::kBadMagic, "unsupported feature version " + std::to_string(version));
  }
  const auto n = read_le<std::uint64_t>(bytes, 8);
  const auto d = read_le<std::uint32_t>(bytes, 16);
  if (d == 0) throw Error(ErrorCode::kInvalidArgument, "feature dimension is 0: " + path.string());
  const std::uint64_t payload_bytes = bytes.size() - kFeatureHeaderBytes;
  if (n > payload_bytes / (4ULL * d) || n * d * 4ULL > payload_bytes) {
    throw Error(ErrorCode::kTruncatedFile,
                path.string() + ": payload holds " + std::to_string(payload_bytes / 4) +
                    " values, header promises " + std::to_string(n * d));
  }
  if (n * d * 4ULL != payload_bytes) {
    throw Error(ErrorCode::kInvalidArgument, "trailing bytes after payload: " + path.string());
  }
  Eigen::MatrixXd data(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  std::size_t offset = kFeatureHeaderBytes;
  for (std::uint64_t r = 0; r < n; ++r) {
    for (std::uint32_t c = 0; c < d; ++c) {
      data(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          static_cast<double>(read_le<float>(bytes, offset));
      offset += 4;
    }
  }
  return FeatureMatrix(read_ids(path, n), std::move(data));
}

FeatureMatrix parse_csv(const std::string& text, const fs::path& path) {
  const auto lines = split_lines(text);
  std::vector<std::string> ids;
  std::vector<std::vector<double>> rows;
  std::size_t dim = 0;
  bool first = true;
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    if (trim(lines[ln]).empty()) continue;
    const auto fields = split(lines[ln], ',');
    if (first) {
      first = false;
      double probe;
      if (fields.size() < 2 || !parse_double(fields[1], probe)) {
        dim = fields.size() > 1 ? fields.size() - 1 : 0;  // header row
        continue;
      }
    }
    if (fields.size() < 2) {
      throw Error(ErrorCode::kInvalidArgument,
                  path.string() + ":" + std::to_string(ln + 1) + ": no feature columns");
    }
    std::vector<double> row;
    row.reserve(fields.size() - 1);
    for (std::size_t f = 1; f < fields.size(); ++f) {
      double v;
      if (!parse_double(fields[f], v)) {
        throw Error(ErrorCode::kInvalidArgument,
                    path.string() + ":" + std::to_string(ln + 1) + ": bad number '" +
                        std::string(fields[f]) + "'");
      }
      row.push_back(v);
    }
    if (rows.empty() && dim == 0) dim = row.size();
    if (row.size() != dim) {
      throw Error(ErrorCode::kDimensionMismatch,
                  path.string() + ":" + std::to_string(ln + 1) + ": expected " +
                      std::to_string(dim) + " values, got " + std::to_string(row.size()));
    }
    ids.emplace_back(trim(fields[0]));
    rows.push_back(std::move(row));
  }
  if (dim == 0) throw Error(ErrorCode::kInvalidArgument, "CSV has no feature columns: " + path.string());
  return FeatureMatrix::from_rows(std::move(ids), rows, dim);
}

void check_id_text(const std::string& id) {
  if (id.find('\n') != std::string::npos || id.find('\r') != std::string::npos) {
    throw Error(ErrorCode::kInvalidArgument, "id contains a line break");
  }
}

std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

fs::path sidecar(const fs::path& path, const char* suffix) {
  return fs::path(path.string() + suffix);
}

void write_file_atomic(const fs::path& path, const std::string& contents) {
  static std::atomic<std::uint64_t> counter{0};
  const auto tag = std::hash<std::thread::id>{}(std::this_thread::get_id());
  const fs::path tmp = fs::path(path.string() + ".tmp." + std::to_string(tag) + "." +
                                std::to_string(counter.fetch_add(1)));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIoError, "cannot create " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out.flush()) throw Error(ErrorCode::kIoError, "write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error(ErrorCode::kIoError, "cannot rename onto " + path.string());
  }
}

FeatureHeader peek_features(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  std::string head(kFeatureHeaderBytes, '\0');
  in.read(head.data(), static_cast<std::streamsize>(head.size()));
  head.resize(static_cast<std::size_t>(in.gcount()));
  if (head.size() >= 4 && std::memcmp(head.data(), kFeatureMagic, 4) == 0) {
    if (head.size() < kFeatureHeaderBytes) {
      throw Error(ErrorCode::kTruncatedFile, "header cut short: " + path.string());
    }
    return {read_le<std::uint64_t>(head, 8), read_le<std::uint32_t>(head, 16)};
  }
  const auto m = ingest_features(path);
  return {m.rows(), static_cast<std::uint32_t>(m.dim())};
}

FeatureMatrix ingest_features(const fs::path& path, std::optional<std::size_t> expected_dim) {
  const std::string bytes = read_all(path);
  if (bytes.empty()) throw Error(ErrorCode::kTruncatedFile, "empty feature file " + path.string());
  FeatureMatrix m;
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), kFeatureMagic, 4) == 0) {
    m = parse_binary(bytes, path);
  } else if (looks_binary(bytes)) {
    throw Error(ErrorCode::kBadMagic, "unrecognized feature file " + path.string());
  } else {
    m = parse_csv(bytes, path);
  }
  if (expected_dim && *expected_dim != 0 && m.dim() != *expected_dim) {
    throw Error(ErrorCode::kDimensionMismatch,
                path.string() + " has d=" + std::to_string(m.dim()) + ", manifest expects " +
                    std::to_string(*expected_dim));
  }
  require_valid(m);
  return m;
}

void write_features(const FeatureMatrix& m, const fs::path& path) {
  if (m.ids.size() != m.rows()) throw Error(ErrorCode::kLengthMismatch, "ids do not match rows");
  if (m.dim() < 1 || m.dim() > std::numeric_limits<std::uint32_t>::max()) {
    throw Error(ErrorCode::kInvalidArgument, "dimension out of range");
  }
  std::string bytes;
  bytes.reserve(kFeatureHeaderBytes + m.rows() * m.dim() * 4);
  bytes.append(kFeatureMagic, 4);
  append_le(bytes, kFeatureVersion);
  append_le(bytes, static_cast<std::uint64_t>(m.rows()));
  append_le(bytes, static_cast<std::uint32_t>(m.dim()));
  for (Eigen::Index r = 0; r < m.data.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.data.cols(); ++c) {
      const double v = m.data(r, c);
      const auto f = static_cast<float>(v);
      if (!std::isfinite(f)) {
        throw Error(ErrorCode::kInvalidArgument, "value not representable as binary32");
      }
      append_le(bytes, f);
    }
  }
  std::string ids;
  for (const auto& id : m.ids) {
    check_id_text(id);
    ids += id;
    ids += '\n';
  }
  write_file_atomic(sidecar(path, ".ids"), ids);
  write_file_atomic(path, bytes);
}

void write_features_csv(const FeatureMatrix& m, const fs::path& path) {
  std::string text = "id";
  for (std::size_t c = 0; c < m.dim(); ++c) text += ",f" + std::to_string(c);
  text += '\n';
  for (std::size_t r = 0; r < m.rows(); ++r) {
    if (m.ids[r].find(',') != std::string::npos) {
      throw Error(ErrorCode::kInvalidArgument, "CSV ids cannot contain commas");
    }
    check_id_text(m.ids[r]);
    text += m.ids[r];
    for (std::size_t c = 0; c < m.dim(); ++c) {
      text += ',';
      text += format_g17(m.data(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)));
    }
    text += '\n';
  }
  write_file_atomic(path, text);
}

LabeledSet ingest_labeled(const fs::path& path, std::optional<std::size_t> expected_dim) {
  LabeledSet s;
  s.features = ingest_features(path, expected_dim);
  const fs::path labels_path = sidecar(path, ".labels");
  const auto lines = split_lines(read_all(labels_path));
  for (const auto& line : lines) {
    const auto t = trim(line);
    if (t.empty()) continue;
    if (t == "+1" || t == "1") {
      s.labels.push_back(1);
    } else if (t == "-1") {
      s.labels.push_back(-1);
    } else {
      throw Error(ErrorCode::kInvalidArgument,
                  labels_path.string() + ": bad label '" + std::string(t) + "'");
    }
  }
  if (s.labels.size() != s.features.rows()) {
    throw Error(ErrorCode::kLengthMismatch,
                labels_path.string() + " has " + std::to_string(s.labels.size()) +
                    " labels for " + std::to_string(s.features.rows()) + " rows");
  }
  return s;
}

void write_labeled(const LabeledSet& s, const fs::path& path) {
  if (s.labels.size() != s.features.rows()) {
    throw Error(ErrorCode::kLengthMismatch, "labels do not match rows");
  }
  std::string labels;
  for (int y : s.labels) labels += y > 0 ? "+1\n" : "-1\n";
  write_features(s.features, path);
  write_file_atomic(sidecar(path, ".labels"), labels);
}

void write_outcome(const RerankOutcome& o, const fs::path& path) {
  if (!validate_outcome(o).ok()) throw Error(ErrorCode::kLengthMismatch, "malformed outcome");
  std::string text = "id\tscore\tweight\tkeep\n";
  for (std::size_t j = 0; j < o.size(); ++j) {
    check_id_text(o.ids[j]);
    text += o.ids[j];
    text += '\t';
    text += format_g17(o.scores[j]);
    text += '\t';
    text += format_g17(o.weights[j]);
    text += o.keep[j] ? "\t1\n" : "\t0\n";
  }
  write_file_atomic(path, text);
}

RerankOutcome read_outcome(const fs::path& path) {
  const auto lines = split_lines(read_all(path));
  if (lines.empty() || lines.front() != "id\tscore\tweight\tkeep") {
    throw Error(ErrorCode::kBadMagic, "not an outcome file: " + path.string());
  }
  RerankOutcome o;
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    if (lines[ln].empty()) continue;
    const auto f = split(lines[ln], '\t');
    double score, weight;
    if (f.size() != 4 || !parse_double(f[1], score) || !parse_double(f[2], weight) ||
        (f[3] != "0" && f[3] != "1")) {
      throw Error(ErrorCode::kInvalidArgument,
                  path.string() + ":" + std::to_string(ln + 1) + ": malformed row");
    }
    o.ids.emplace_back(f[0]);
    o.scores.push_back(score);
    o.weights.push_back(weight);
    o.keep.push_back(f[3] == "1");
  }
  return o;
}

void write_truth(const std::vector<std::string>& ids, const std::vector<bool>& noise,
                 const fs::path& path) {
  if (ids.size() != noise.size()) throw Error(ErrorCode::kLengthMismatch, "truth length");
  std::string text = "id\tnoise\n";
  for (std::size_t j = 0; j < ids.size(); ++j) {
    text += ids[j];
    text += noise[j] ? "\t1\n" : "\t0\n";
  }
  write_file_atomic(path, text);
}

std::vector<bool> read_truth(const fs::path& path, const std::vector<std::string>& expected_ids) {
  const auto lines = split_lines(read_all(path));
  if (lines.empty() || lines.front() != "id\tnoise") {
    throw Error(ErrorCode::kBadMagic, "not a truth file: " + path.string());
  }
  std::vector<bool> noise;
  std::size_t row = 0;
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    if (lines[ln].empty()) continue;
    const auto f = split(lines[ln], '\t');
    if (f.size() != 2 || (f[1] != "0" && f[1] != "1")) {
      throw Error(ErrorCode::kInvalidArgument,
                  path.string() + ":" + std::to_string(ln + 1) + ": malformed row");
    }
    if (row >= expected_ids.size() || f[0] != expected_ids[row]) {
      throw Error(ErrorCode::kLengthMismatch, "truth ids do not follow the outcome ids");
    }
    noise.push_back(f[1] == "1");
    ++row;
  }
  if (noise.size() != expected_ids.size()) {
    throw Error(ErrorCode::kLengthMismatch, "truth file is shorter than the outcome");
  }
  return noise;
}

}  // namespace weedout
