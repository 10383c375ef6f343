#pragma once

// Flattened transition models and labeled dataset matrices.
//
// Feature i0 = k0 * |states| + m0 holds P[k0][m0] (zero-based, row-major).
// Diagonal entries are kept, so every vector has exactly |states|^2 entries.
//
// Persistence:
//   JSONL  one object per line: {"app_id","label","catalog_digest","values"}
//   SMFT   "SMFT" | u16 version | 32-byte catalog digest | u32 rows | u32 cols
//          per row: u16 id_len | id bytes | u8 label (0 benign, 1 malicious,
//          255 none) | cols x f64

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "servicemonitor/bytes.hpp"
#include "servicemonitor/catalog.hpp"
#include "servicemonitor/digest.hpp"
#include "servicemonitor/error.hpp"
#include "servicemonitor/label.hpp"
#include "servicemonitor/markov.hpp"
#include "servicemonitor/matrix.hpp"

namespace servicemonitor {

struct FeatureVector {
  std::string app_id;
  std::vector<double> values;
  std::optional<Label> label;
  std::optional<Digest> catalog_digest;

  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

struct DatasetMatrix {
  std::vector<FeatureVector> rows;
  Digest catalog_digest{};

  std::size_t size() const noexcept { return rows.size(); }
  std::size_t dimension() const noexcept { return rows.empty() ? 0 : rows.front().values.size(); }

  RowMatrix matrix() const {
    RowMatrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(dimension()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (std::size_t c = 0; c < rows[r].values.size(); ++c) {
        m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r].values[c];
      }
    }
    return m;
  }

  std::vector<Label> labels() const {
    std::vector<Label> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(*r.label);
    return out;
  }
};

inline std::vector<double> flatten(const TransitionModel& model) {
  const auto& p = model.probabilities;
  return std::vector<double>(p.data(), p.data() + p.size());
}

inline RowMatrix unflatten(std::span<const double> values, std::size_t state_count) {
  if (values.size() != state_count * state_count) {
    throw Error(ErrorKind::kShape, "vector of length " + std::to_string(values.size()) +
                                       " is not " + std::to_string(state_count) + "^2");
  }
  RowMatrix m(static_cast<Eigen::Index>(state_count), static_cast<Eigen::Index>(state_count));
  std::copy(values.begin(), values.end(), m.data());
  return m;
}

/// Trace -> Markov model -> flattened, digest-bound feature vector.
inline FeatureVector featurize(const FunctionTrace& trace, const ServiceCatalog& catalog) {
  return FeatureVector{trace.app_id, flatten(build_model(trace, catalog)), trace.label,
                       catalog.content_digest()};
}

inline DatasetMatrix assemble(std::vector<FeatureVector> vectors, const ServiceCatalog& catalog) {
  const std::size_t expected = catalog.size() * catalog.size();
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    const auto& v = vectors[i];
    if (v.values.size() != vectors.front().values.size()) {
      throw Error(ErrorKind::kShape, "row " + std::to_string(i) + " has length " +
                                         std::to_string(v.values.size()) + ", row 0 has " +
                                         std::to_string(vectors.front().values.size()));
    }
    if (v.values.size() != expected) {
      throw Error(ErrorKind::kShape, "row " + std::to_string(i) + " has length " +
                                         std::to_string(v.values.size()) + ", catalog implies " +
                                         std::to_string(expected));
    }
    if (!v.label) throw Error(ErrorKind::kLabel, "row " + std::to_string(i) + " (" + v.app_id + ") is unlabeled");
    if (v.catalog_digest && *v.catalog_digest != catalog.content_digest()) {
      throw Error(ErrorKind::kBinding, "row " + std::to_string(i) + " (" + v.app_id +
                                           ") was built against a different catalog");
    }
  }
  DatasetMatrix out{std::move(vectors), catalog.content_digest()};
  for (auto& r : out.rows) r.catalog_digest = out.catalog_digest;
  return out;
}

/// Assembly without a catalog object: every row must carry the same digest.
inline DatasetMatrix assemble(std::vector<FeatureVector> vectors) {
  if (vectors.empty()) throw Error(ErrorKind::kInsufficientData, "no feature vectors");
  std::optional<Digest> digest;
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    const auto& v = vectors[i];
    if (v.values.size() != vectors.front().values.size()) {
      throw Error(ErrorKind::kShape, "row " + std::to_string(i) + " has length " +
                                         std::to_string(v.values.size()) + ", row 0 has " +
                                         std::to_string(vectors.front().values.size()));
    }
    if (!v.label) throw Error(ErrorKind::kLabel, "row " + std::to_string(i) + " (" + v.app_id + ") is unlabeled");
    if (!v.catalog_digest) {
      throw Error(ErrorKind::kBinding, "row " + std::to_string(i) + " carries no catalog digest");
    }
    if (digest && *digest != *v.catalog_digest) {
      throw Error(ErrorKind::kBinding, "rows were built against different catalogs");
    }
    digest = v.catalog_digest;
  }
  return DatasetMatrix{std::move(vectors), *digest};
}

// --- persistence -----------------------------------------------------------

inline std::string feature_to_json_line(const FeatureVector& v) {
  nlohmann::ordered_json j;
  j["app_id"] = v.app_id;
  j["label"] = v.label ? nlohmann::ordered_json(std::string(to_string(*v.label))) : nlohmann::ordered_json();
  j["catalog_digest"] = v.catalog_digest ? nlohmann::ordered_json(to_hex(*v.catalog_digest)) : nlohmann::ordered_json();
  j["values"] = v.values;
  return j.dump() + "\n";
}

inline std::string write_features_jsonl(std::span<const FeatureVector> vectors) {
  std::string out;
  for (const auto& v : vectors) out += feature_to_json_line(v);
  return out;
}

inline std::vector<FeatureVector> read_features_jsonl(std::string_view text) {
  std::vector<FeatureVector> out;
  std::size_t start = 0;
  std::size_t line_no = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw LineError(ErrorKind::kFormat, line_no, std::string("invalid JSON: ") + e.what());
    }
    try {
      FeatureVector v;
      v.app_id = j.at("app_id").get<std::string>();
      if (auto it = j.find("label"); it != j.end() && !it->is_null()) {
        v.label = label_from_string(it->get<std::string>());
        if (!v.label) throw LineError(ErrorKind::kLabel, line_no, "unknown label");
      }
      if (auto it = j.find("catalog_digest"); it != j.end() && !it->is_null()) {
        v.catalog_digest = digest_from_hex(it->get<std::string>());
      }
      v.values = j.at("values").get<std::vector<double>>();
      out.push_back(std::move(v));
    } catch (const nlohmann::json::exception& e) {
      throw LineError(ErrorKind::kFormat, line_no, e.what());
    }
  }
  return out;
}

inline constexpr std::string_view kFeatureMagic = "SMFT";
inline constexpr std::uint16_t kFeatureFormatVersion = 1;

inline std::vector<std::uint8_t> write_features_binary(const DatasetMatrix& data) {
  bytes::Writer w;
  w.raw(kFeatureMagic);
  w.u16(kFeatureFormatVersion);
  w.raw(data.catalog_digest);
  w.u32(static_cast<std::uint32_t>(data.rows.size()));
  w.u32(static_cast<std::uint32_t>(data.dimension()));
  for (const auto& r : data.rows) {
    w.u16(static_cast<std::uint16_t>(r.app_id.size()));
    w.raw(r.app_id);
    w.u8(r.label ? static_cast<std::uint8_t>(*r.label) : 255);
    for (double x : r.values) w.f64(x);
  }
  return std::move(w).take();
}

inline std::vector<FeatureVector> read_features_binary(std::span<const std::uint8_t> data) {
  bytes::Reader in(data);
  if (in.text(4) != kFeatureMagic) throw OffsetError(ErrorKind::kFormat, 0, "bad magic, expected \"SMFT\"");
  if (auto v = in.u16(); v != kFeatureFormatVersion) {
    throw OffsetError(ErrorKind::kVersion, 4, "unsupported SMFT version " + std::to_string(v));
  }
  Digest digest{};
  auto d = in.raw(digest.size());
  std::copy(d.begin(), d.end(), digest.begin());
  const auto rows = in.u32();
  const auto cols = in.u32();
  std::vector<FeatureVector> out;
  for (std::uint32_t r = 0; r < rows; ++r) {
    FeatureVector v;
    v.app_id = in.text(in.u16());
    const auto label_offset = in.offset();
    const auto label = in.u8();
    if (label == 0 || label == 1) {
      v.label = static_cast<Label>(label);
    } else if (label != 255) {
      throw OffsetError(ErrorKind::kFormat, label_offset, "invalid label byte");
    }
    v.catalog_digest = digest;
    v.values.resize(cols);
    for (auto& x : v.values) x = in.f64();
    out.push_back(std::move(v));
  }
  if (!in.done()) throw OffsetError(ErrorKind::kFormat, in.offset(), "trailing bytes after feature rows");
  return out;
}

/// Reads either persistence form, chosen by the leading bytes.
inline std::vector<FeatureVector> read_features(std::span<const std::uint8_t> data) {
  if (data.size() >= 4 && std::string_view(reinterpret_cast<const char*>(data.data()), 4) == kFeatureMagic) {
    return read_features_binary(data);
  }
  return read_features_jsonl(std::string_view(reinterpret_cast<const char*>(data.data()), data.size()));
}

}  // namespace servicemonitor
