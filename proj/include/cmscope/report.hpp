// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cmscope/detectors.hpp"
#include "cmscope/error.hpp"

namespace cmscope::report {

using detectors::Feature;
using detectors::FeatureMatrix;
using detectors::Finding;
using detectors::kAllFeatures;
using detectors::Verdict;

constexpr int kSchemaVersion = 1;

// ---------------------------------------------------------------------------
// per-image JSON

namespace detail {

inline nlohmann::ordered_json finding_to_json(const Finding& f) {
  nlohmann::ordered_json j;
  j["verdict"] = detectors::verdict_name(f.verdict);
  auto ev = nlohmann::ordered_json::array();
  for (const auto& e : f.evidence) {
    nlohmann::ordered_json je;
    je["address"] = hex_u32(e.address);
    je["note"] = e.note;
    ev.push_back(je);
  }
  j["evidence"] = ev;
  j["detail"] = f.detail;
  return j;
}

inline Verdict verdict_from_string(const std::string& s) {
  if (s == "present") return Verdict::Present;
  if (s == "absent") return Verdict::Absent;
  if (s == "indeterminate") return Verdict::Indeterminate;
  throw Error(errc::parse_error, "unknown verdict " + s);
}

inline Finding finding_from_json(const nlohmann::ordered_json& j) {
  Finding f;
  f.verdict = verdict_from_string(j.at("verdict").get<std::string>());
  for (const auto& e : j.at("evidence")) {
    detectors::Evidence ev;
    auto addr = parse_u32(e.at("address").get<std::string>());
    if (!addr) throw Error(errc::parse_error, "bad evidence address");
    ev.address = *addr;
    ev.note = e.at("note").get<std::string>();
    f.evidence.push_back(std::move(ev));
  }
  f.detail = j.at("detail");
  return f;
}

}  // namespace detail

/// Stable key order, versioned schema, hex evidence addresses. Serializing a
/// parsed document reproduces it byte for byte.
inline std::string to_json(const FeatureMatrix& m) {
  nlohmann::ordered_json j;
  j["schema_version"] = kSchemaVersion;
  j["image"] = m.image_id;
  j["profile"] = m.profile_id;
  j["device"] = m.device_id;
  j["base"] = m.base ? nlohmann::ordered_json(hex_u32(*m.base)) : nlohmann::ordered_json(nullptr);
  j["rtos"] = detail::finding_to_json(m.rtos);
  nlohmann::ordered_json rows;
  for (Feature f : kAllFeatures) rows[detectors::feature_key(f)] = detail::finding_to_json(m.findings.at(f));
  j["findings"] = rows;
  return j.dump(2) + "\n";
}

inline FeatureMatrix matrix_from_json(const std::string& text) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(errc::parse_error, std::string("report: ") + e.what());
  }
  if (j.at("schema_version").get<int>() != kSchemaVersion)
    throw Error(errc::parse_error, "unsupported schema version");
  FeatureMatrix m;
  m.image_id = j.at("image").get<std::string>();
  m.profile_id = j.at("profile").get<std::string>();
  m.device_id = j.at("device").get<std::string>();
  if (!j.at("base").is_null()) {
    auto b = parse_u32(j.at("base").get<std::string>());
    if (!b) throw Error(errc::parse_error, "bad base");
    m.base = *b;
  }
  m.rtos = detail::finding_from_json(j.at("rtos"));
  for (Feature f : kAllFeatures) {
    Finding fin = detail::finding_from_json(j.at("findings").at(detectors::feature_key(f)));
    fin.feature = f;
    m.findings[f] = std::move(fin);
  }
  return m;
}

// ---------------------------------------------------------------------------
// corpus aggregation

struct FeatureTally {
  uint64_t present = 0;
  uint64_t absent = 0;
  uint64_t indeterminate = 0;
  std::set<std::string> devices_present;

  bool operator==(const FeatureTally&) const = default;
};

struct GroupSummary {
  uint64_t image_count = 0;
  std::set<std::string> devices;
  std::map<Feature, FeatureTally> tallies;

  bool operator==(const GroupSummary&) const = default;
};

struct CorpusSummary {
  std::map<std::string, GroupSummary> groups;  // keyed by vendor profile id
  GroupSummary total;

  bool operator==(const CorpusSummary&) const = default;
};

namespace detail {

inline void add_matrix(GroupSummary& g, const FeatureMatrix& m, const std::string& device_key) {
  ++g.image_count;
  g.devices.insert(device_key);
  for (Feature f : kAllFeatures) {
    FeatureTally& t = g.tallies[f];
    switch (m.findings.at(f).verdict) {
      case Verdict::Present:
        ++t.present;
        t.devices_present.insert(device_key);
        break;
      case Verdict::Absent: ++t.absent; break;
      case Verdict::Indeterminate: ++t.indeterminate; break;
    }
  }
}

inline void merge_group(GroupSummary& into, const GroupSummary& from) {
  into.image_count += from.image_count;
  into.devices.insert(from.devices.begin(), from.devices.end());
  for (const auto& [f, t] : from.tallies) {
    FeatureTally& d = into.tallies[f];
    d.present += t.present;
    d.absent += t.absent;
    d.indeterminate += t.indeterminate;
    d.devices_present.insert(t.devices_present.begin(), t.devices_present.end());
  }
}

}  // namespace detail

/// Files without a device id count as their own device.
inline CorpusSummary aggregate(const std::vector<FeatureMatrix>& matrices) {
  if (matrices.empty()) throw Error(errc::empty_corpus, "nothing to aggregate");
  CorpusSummary s;
  for (const auto& m : matrices) {
    std::string device = m.device_id.empty() ? m.image_id : m.device_id;
    detail::add_matrix(s.groups[m.profile_id.empty() ? "generic" : m.profile_id], m, device);
    detail::add_matrix(s.total, m, device);
  }
  return s;
}

/// Associative, commutative merge; folding any partition of a corpus yields
/// the same summary.
inline CorpusSummary merge(const CorpusSummary& a, const CorpusSummary& b) {
  CorpusSummary out = a;
  for (const auto& [k, g] : b.groups) detail::merge_group(out.groups[k], g);
  detail::merge_group(out.total, b.total);
  return out;
}

// ---------------------------------------------------------------------------
// table rendering

namespace detail {

// Basis points rounded half-up, computed in integers.
inline uint64_t percent_basis_points(uint64_t present, uint64_t applicable) {
  return (present * 10000 * 2 + applicable) / (2 * applicable);
}

inline std::string format_percent(uint64_t present, uint64_t applicable) {
  uint64_t bp = percent_basis_points(present, applicable);
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%llu.%02llu%%", static_cast<unsigned long long>(bp / 100),
                static_cast<unsigned long long>(bp % 100));
  return buf;
}

inline std::string cell_text(const GroupSummary& g, Feature f) {
  auto it = g.tallies.find(f);
  if (it == g.tallies.end()) return "-";
  const FeatureTally& t = it->second;
  uint64_t determinate = t.present + t.absent;
  if (determinate == 0) return "-";  // not applicable for this group
  uint64_t applicable =
      detectors::percentage_excludes_indeterminate(f) ? determinate : g.image_count;
  return std::to_string(t.present) + "/" + std::to_string(applicable) + " (" +
         format_percent(t.present, applicable) + ")";
}

}  // namespace detail

/// Fixed-width text table: one row per feature, one column per vendor-profile
/// group plus a Total column. Rows with no determinate samples print "-".
inline std::string to_table(const CorpusSummary& s) {
  std::vector<std::string> group_names;
  for (const auto& [k, g] : s.groups) group_names.push_back(k);

  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> header{"Security Feature"};
  for (const auto& g : group_names) header.push_back(g);
  header.push_back("Total");
  cells.push_back(header);
  for (Feature f : kAllFeatures) {
    std::vector<std::string> row{detectors::feature_display_name(f)};
    for (const auto& g : group_names) row.push_back(detail::cell_text(s.groups.at(g), f));
    row.push_back(detail::cell_text(s.total, f));
    cells.push_back(row);
  }

  std::vector<std::size_t> widths(cells[0].size(), 0);
  for (const auto& row : cells)
    for (std::size_t c = 0; c < row.size(); ++c) widths[c] = std::max(widths[c], row[c].size());

  std::ostringstream out;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (std::size_t c = 0; c < cells[r].size(); ++c) {
      out << cells[r][c];
      if (c + 1 < cells[r].size())
        out << std::string(widths[c] - cells[r][c].size() + 2, ' ');
    }
    out << "\n";
    if (r == 0) {
      std::size_t total = 0;
      for (std::size_t c = 0; c < widths.size(); ++c) total += widths[c] + (c + 1 < widths.size() ? 2 : 0);
      out << std::string(total, '-') << "\n";
    }
  }
  return out.str();
}

}  // namespace cmscope::report
