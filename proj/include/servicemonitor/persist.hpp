#pragma once

// Single-file detection model ("SMDL"), little-endian, floats as raw IEEE-754:
//
//   "SMDL" | u16 version | catalog digest (32)
//   | u64 len | pca section
//   | u64 len | forest section
//   | u64 len | metadata section
//   | SHA-256 of every preceding byte (32)

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "servicemonitor/bytes.hpp"
#include "servicemonitor/digest.hpp"
#include "servicemonitor/error.hpp"
#include "servicemonitor/forest.hpp"
#include "servicemonitor/reduce.hpp"

namespace servicemonitor {

inline constexpr std::string_view kModelMagic = "SMDL";
inline constexpr std::uint16_t kModelFormatVersion = 1;

struct TrainingMetadata {
  std::uint64_t seed = 0;
  std::uint32_t pca_dims = 200;
  std::uint32_t tree_count = 500;
  std::uint32_t mtry = 0;  ///< 0: default rule was used
  std::uint32_t min_leaf = 1;
  std::uint64_t timestamp = 0;  ///< seconds since epoch

  friend bool operator==(const TrainingMetadata&, const TrainingMetadata&) = default;
};

struct ModelBundle {
  std::uint16_t format_version = kModelFormatVersion;
  Digest catalog_digest{};
  PcaModel pca;
  ForestModel forest;
  double threshold = 0.5;
  TrainingMetadata metadata;
};

/// Throws a consistency error when the bundle's parts disagree.
inline void check_bundle(const ModelBundle& b) {
  if (b.forest.dimensionality != b.pca.k()) {
    throw Error(ErrorKind::kConsistency, "forest dimensionality " + std::to_string(b.forest.dimensionality) +
                                             " != PCA output width " + std::to_string(b.pca.k()));
  }
  const auto root = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(b.pca.d()))));
  if (root * root != b.pca.d()) {
    throw Error(ErrorKind::kConsistency, "PCA input width " + std::to_string(b.pca.d()) + " is not a state count squared");
  }
  if (b.forest.catalog_digest != b.catalog_digest) {
    throw Error(ErrorKind::kConsistency, "forest and bundle are bound to different catalogs");
  }
  if (b.forest.trees.empty()) throw Error(ErrorKind::kConsistency, "forest has no trees");
  if (b.forest.mtry < 1 || b.forest.mtry > b.forest.dimensionality) {
    throw Error(ErrorKind::kConsistency, "forest mtry outside [1, dimensionality]");
  }
  if (static_cast<std::size_t>(b.pca.components.cols()) != b.pca.d() ||
      static_cast<std::size_t>(b.pca.explained_variance.size()) != b.pca.k()) {
    throw Error(ErrorKind::kConsistency, "PCA arrays have inconsistent shapes");
  }
}

// --- sections ---------------------------------------------------------------

inline std::vector<std::uint8_t> encode_pca(const PcaModel& pca) {
  bytes::Writer w;
  w.u32(static_cast<std::uint32_t>(pca.d()));
  w.u32(static_cast<std::uint32_t>(pca.k()));
  for (Eigen::Index i = 0; i < pca.mean.size(); ++i) w.f64(pca.mean(i));
  for (Eigen::Index r = 0; r < pca.components.rows(); ++r) {
    for (Eigen::Index c = 0; c < pca.components.cols(); ++c) w.f64(pca.components(r, c));
  }
  for (Eigen::Index i = 0; i < pca.explained_variance.size(); ++i) w.f64(pca.explained_variance(i));
  return std::move(w).take();
}

inline PcaModel decode_pca(bytes::Reader& in) {
  const auto d = in.u32();
  const auto k = in.u32();
  if ((static_cast<std::uint64_t>(d) * (k + 1) + k) * 8 > in.remaining()) {
    throw OffsetError(ErrorKind::kFormat, in.offset(), "PCA section shorter than its declared shape");
  }
  PcaModel pca;
  pca.mean.resize(d);
  for (std::uint32_t i = 0; i < d; ++i) pca.mean(i) = in.f64();
  pca.components.resize(k, d);
  for (std::uint32_t r = 0; r < k; ++r) {
    for (std::uint32_t c = 0; c < d; ++c) pca.components(r, c) = in.f64();
  }
  pca.explained_variance.resize(k);
  for (std::uint32_t i = 0; i < k; ++i) pca.explained_variance(i) = in.f64();
  return pca;
}

inline constexpr std::size_t kEncodedNodeBytes = 1 + 4 + 8 + 4 + 4 + 4 + 4;

inline std::vector<std::uint8_t> encode_forest(const ForestModel& forest) {
  bytes::Writer w;
  w.u32(static_cast<std::uint32_t>(forest.tree_count()));
  w.u32(static_cast<std::uint32_t>(forest.mtry));
  w.u32(static_cast<std::uint32_t>(forest.min_leaf));
  w.u64(forest.seed);
  w.u8(forest.bootstrap ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(forest.dimensionality));
  w.raw(forest.catalog_digest);
  for (const auto& tree : forest.trees) {
    w.u32(static_cast<std::uint32_t>(tree.nodes.size()));
    for (const auto& n : tree.nodes) {
      w.u8(n.leaf ? 1 : 0);
      w.u32(n.feature);
      w.f64(n.threshold);
      w.u32(n.left);
      w.u32(n.right);
      w.u32(n.benign);
      w.u32(n.malicious);
    }
  }
  return std::move(w).take();
}

inline ForestModel decode_forest(bytes::Reader& in) {
  ForestModel f;
  const auto trees = in.u32();
  f.mtry = in.u32();
  f.min_leaf = in.u32();
  f.seed = in.u64();
  const auto boot_at = in.offset();
  const auto boot = in.u8();
  if (boot > 1) throw OffsetError(ErrorKind::kFormat, boot_at, "invalid bootstrap flag");
  f.bootstrap = boot == 1;
  f.dimensionality = in.u32();
  auto digest = in.raw(f.catalog_digest.size());
  std::copy(digest.begin(), digest.end(), f.catalog_digest.begin());
  if (trees > in.remaining() / 4) throw OffsetError(ErrorKind::kFormat, in.offset(), "tree count exceeds section size");
  f.trees.resize(trees);
  for (auto& tree : f.trees) {
    const auto count_at = in.offset();
    const auto count = in.u32();
    if (count == 0 || count > in.remaining() / kEncodedNodeBytes) {
      throw OffsetError(ErrorKind::kFormat, count_at, "invalid node count");
    }
    tree.nodes.resize(count);
    for (std::uint32_t i = 0; i < count; ++i) {
      const auto at = in.offset();
      auto& n = tree.nodes[i];
      const auto leaf = in.u8();
      n.feature = in.u32();
      n.threshold = in.f64();
      n.left = in.u32();
      n.right = in.u32();
      n.benign = in.u32();
      n.malicious = in.u32();
      if (leaf > 1) throw OffsetError(ErrorKind::kFormat, at, "invalid node kind");
      n.leaf = leaf == 1;
      if (n.leaf) {
        if (n.benign + static_cast<std::uint64_t>(n.malicious) == 0) {
          throw OffsetError(ErrorKind::kFormat, at, "leaf with no samples");
        }
      } else if (n.feature >= f.dimensionality || n.left <= i || n.right <= i || n.left >= count ||
                 n.right >= count || n.left == n.right) {
        throw OffsetError(ErrorKind::kFormat, at, "internal node has invalid feature or child index");
      }
    }
  }
  return f;
}

inline std::vector<std::uint8_t> encode_metadata(const ModelBundle& b) {
  bytes::Writer w;
  w.f64(b.threshold);
  w.u64(b.metadata.seed);
  w.u32(b.metadata.pca_dims);
  w.u32(b.metadata.tree_count);
  w.u32(b.metadata.mtry);
  w.u32(b.metadata.min_leaf);
  w.u64(b.metadata.timestamp);
  return std::move(w).take();
}

// --- whole file -------------------------------------------------------------

inline std::vector<std::uint8_t> save_model(const ModelBundle& bundle) {
  check_bundle(bundle);
  bytes::Writer w;
  w.raw(kModelMagic);
  w.u16(kModelFormatVersion);
  w.raw(bundle.catalog_digest);
  for (const auto& section : {encode_pca(bundle.pca), encode_forest(bundle.forest), encode_metadata(bundle)}) {
    w.u64(section.size());
    w.raw(section);
  }
  const Digest checksum = sha256(w.data());
  w.raw(checksum);
  return std::move(w).take();
}

/// Validates framing, version, checksum and invariants. When `expected_catalog`
/// is given, the bundle must be bound to it.
inline ModelBundle load_model(std::span<const std::uint8_t> data, const Digest* expected_catalog = nullptr) {
  constexpr std::size_t kHeader = 4 + 2 + 32;
  constexpr std::size_t kTrailer = 32;
  if (data.size() < kHeader + kTrailer) throw OffsetError(ErrorKind::kFormat, data.size(), "model file truncated");
  bytes::Reader in(data.first(data.size() - kTrailer));
  if (in.text(4) != kModelMagic) throw OffsetError(ErrorKind::kFormat, 0, "bad magic, expected \"SMDL\"");
  ModelBundle b;
  b.format_version = in.u16();
  if (b.format_version != kModelFormatVersion) {
    throw OffsetError(ErrorKind::kVersion, 4, "unsupported model format version " + std::to_string(b.format_version));
  }
  auto digest = in.raw(b.catalog_digest.size());
  std::copy(digest.begin(), digest.end(), b.catalog_digest.begin());

  // Framing first so a short file reads as truncation, not as a bad checksum.
  std::span<const std::uint8_t> sections[3];
  for (auto& s : sections) {
    const auto len_at = in.offset();
    if (in.remaining() < 8) throw OffsetError(ErrorKind::kFormat, len_at, "model file truncated in section header");
    const auto len = in.u64();
    if (len > in.remaining()) throw OffsetError(ErrorKind::kFormat, len_at, "model file truncated inside a section");
    s = in.raw(static_cast<std::size_t>(len));
  }
  if (!in.done()) throw OffsetError(ErrorKind::kFormat, in.offset(), "unexpected bytes before the checksum");

  Digest stored{};
  std::copy(data.end() - kTrailer, data.end(), stored.begin());
  if (sha256(data.first(data.size() - kTrailer)) != stored) {
    throw Error(ErrorKind::kChecksum, "model file checksum mismatch (corrupted file)");
  }

  const auto section_offset = [&](std::span<const std::uint8_t> s) {
    return static_cast<std::uint64_t>(s.data() - data.data());
  };
  try {
    bytes::Reader pca_in(sections[0], section_offset(sections[0]));
    b.pca = decode_pca(pca_in);
    if (!pca_in.done()) throw OffsetError(ErrorKind::kFormat, pca_in.offset(), "trailing bytes in PCA section");
    bytes::Reader forest_in(sections[1], section_offset(sections[1]));
    b.forest = decode_forest(forest_in);
    if (!forest_in.done()) throw OffsetError(ErrorKind::kFormat, forest_in.offset(), "trailing bytes in forest section");
    bytes::Reader meta(sections[2], section_offset(sections[2]));
    b.threshold = meta.f64();
    b.metadata.seed = meta.u64();
    b.metadata.pca_dims = meta.u32();
    b.metadata.tree_count = meta.u32();
    b.metadata.mtry = meta.u32();
    b.metadata.min_leaf = meta.u32();
    b.metadata.timestamp = meta.u64();
    if (!meta.done()) throw OffsetError(ErrorKind::kFormat, meta.offset(), "trailing bytes in metadata section");
  } catch (const OffsetError& e) {
    if (e.kind() == ErrorKind::kTruncation) throw OffsetError(ErrorKind::kFormat, e.offset(), e.what());
    throw;
  }
  try {
    check_bundle(b);
  } catch (const Error& e) {
    throw Error(ErrorKind::kFormat, std::string("decoded bundle is inconsistent: ") + e.what());
  }
  if (expected_catalog != nullptr && *expected_catalog != b.catalog_digest) {
    throw Error(ErrorKind::kBinding, "model was trained against catalog " + to_hex(b.catalog_digest) +
                                         ", traces resolve against " + to_hex(*expected_catalog));
  }
  return b;
}

}  // namespace servicemonitor
