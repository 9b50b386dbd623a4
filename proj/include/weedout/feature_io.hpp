#pragma once

// On-disk formats.
//
// Binary feature file:
//   "FMX1" | u32 version=1 | u64 n | u32 d | n*d binary32, row-major
// (all little-endian) with the ids in a sidecar "<path>.ids", one per line.
// CSV fallback (detected by the missing magic): id, then d numeric columns,
// optional header row. Labeled sets add "<path>.labels" with +1/-1 per line.

#include "weedout/model.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace weedout {

inline constexpr char kFeatureMagic[4] = {'F', 'M', 'X', '1'};
inline constexpr std::uint32_t kFeatureVersion = 1;
inline constexpr std::size_t kFeatureHeaderBytes = 20;

struct FeatureHeader {
  std::uint64_t rows = 0;
  std::uint32_t dim = 0;
};

/// Reads only the header of a binary feature file (CSV files are parsed).
FeatureHeader peek_features(const std::filesystem::path& path);

/// Loads and validates a feature file. Throws kBadMagic, kTruncatedFile,
/// kDimensionMismatch (against expected_dim when given), kDuplicateId.
FeatureMatrix ingest_features(const std::filesystem::path& path,
                              std::optional<std::size_t> expected_dim = std::nullopt);

/// Writes the binary format atomically (temp file + rename) along with the
/// ids sidecar. Values are narrowed to binary32.
void write_features(const FeatureMatrix& m, const std::filesystem::path& path);

/// Writes the CSV fallback (header row included); used by tooling and tests.
void write_features_csv(const FeatureMatrix& m, const std::filesystem::path& path);

LabeledSet ingest_labeled(const std::filesystem::path& path,
                          std::optional<std::size_t> expected_dim = std::nullopt);
void write_labeled(const LabeledSet& s, const std::filesystem::path& path);

/// Outcome TSV: header "id\tscore\tweight\tkeep", scores and weights printed
/// with 17 significant digits, LF line endings.
void write_outcome(const RerankOutcome& o, const std::filesystem::path& path);
RerankOutcome read_outcome(const std::filesystem::path& path);

/// Ground-truth TSV: header "id\tnoise", 0/1 per line.
void write_truth(const std::vector<std::string>& ids, const std::vector<bool>& noise,
                 const std::filesystem::path& path);
std::vector<bool> read_truth(const std::filesystem::path& path,
                             const std::vector<std::string>& expected_ids);

/// Writes `contents` to `path` via a sibling temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

std::filesystem::path sidecar(const std::filesystem::path& path, const char* suffix);

}  // namespace weedout
