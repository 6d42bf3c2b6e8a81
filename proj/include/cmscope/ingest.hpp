// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cmscope/bytes.hpp"
#include "cmscope/error.hpp"

namespace cmscope::ingest {

struct Segment {
  uint32_t start = 0;
  std::vector<uint8_t> data;

  uint64_t end() const { return static_cast<uint64_t>(start) + data.size(); }
};

using SegmentList = std::vector<Segment>;

enum class SourceFormat { raw, intel_hex, srecord };

inline const char* source_format_name(SourceFormat f) {
  switch (f) {
    case SourceFormat::raw: return "raw";
    case SourceFormat::intel_hex: return "intel_hex";
    case SourceFormat::srecord: return "srecord";
  }
  return "raw";
}

struct FirmwareImage {
  std::optional<uint32_t> base;
  std::vector<uint8_t> bytes;
  uint8_t fill = 0xFF;
  SourceFormat source_format = SourceFormat::raw;
  std::map<std::string, std::string> metadata;

  std::size_t size() const { return bytes.size(); }
  uint64_t end_addr() const { return static_cast<uint64_t>(base.value_or(0)) + bytes.size(); }
  bool contains(uint32_t addr, std::size_t n = 1) const {
    if (!base) return false;
    uint64_t a = addr;
    return a >= *base && a + n <= end_addr();
  }
  uint8_t read_u8(uint32_t addr) const { return bytes[addr - *base]; }
  uint16_t read_u16(uint32_t addr) const { return read_le16(bytes, addr - *base); }
  uint32_t read_u32(uint32_t addr) const { return read_le32(bytes, addr - *base); }
};

struct ManifestEntry {
  std::string path;
  std::optional<SourceFormat> format;  // absent: auto-detect
  std::string profile;                 // vendor profile id, may be empty
  std::string device;                  // device id, may be empty
  std::optional<uint32_t> base;        // declared base
};

struct CorpusManifest {
  std::vector<ManifestEntry> entries;
};

/// Segments plus side-channel facts (start address, header text) a container
/// format may carry.
struct DecodedRecords {
  SegmentList segments;
  std::map<std::string, std::string> metadata;
};

// ---------------------------------------------------------------------------
// load_raw

inline FirmwareImage load_raw(std::vector<uint8_t> bytes, std::optional<uint32_t> base = std::nullopt) {
  if (bytes.empty()) throw Error(errc::empty_input, "raw image is empty");
  FirmwareImage img;
  img.base = base;
  img.bytes = std::move(bytes);
  img.source_format = SourceFormat::raw;
  return img;
}

// ---------------------------------------------------------------------------
// record decoding helpers

namespace detail {

inline std::vector<uint8_t> decode_record_hex(std::string_view payload, std::size_t line) {
  auto bytes = parse_hex_bytes(payload);
  if (!bytes) throw Error(errc::truncated_record, "malformed hex payload", line);
  return *bytes;
}

inline void append_data(SegmentList& segs, uint32_t addr, std::span<const uint8_t> data, std::size_t line) {
  if (data.empty()) return;
  if (static_cast<uint64_t>(addr) + data.size() > 0x100000000ull)
    throw Error(errc::out_of_bounds, "segment wraps the 32-bit address space", line);
  if (!segs.empty() && segs.back().end() == addr &&
      segs.back().start + segs.back().data.size() == addr) {
    segs.back().data.insert(segs.back().data.end(), data.begin(), data.end());
    return;
  }
  segs.push_back(Segment{addr, {data.begin(), data.end()}});
}

inline SegmentList normalize_segments(SegmentList segs) {
  std::stable_sort(segs.begin(), segs.end(),
                   [](const Segment& a, const Segment& b) { return a.start < b.start; });
  SegmentList out;
  for (auto& s : segs) {
    if (s.data.empty()) continue;
    if (!out.empty()) {
      if (s.start < out.back().end())
        throw Error(errc::overlapping_segments,
                    "segments overlap at " + hex_u32(s.start));
      if (s.start == out.back().end()) {
        out.back().data.insert(out.back().data.end(), s.data.begin(), s.data.end());
        continue;
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

struct LineCursor {
  std::string_view text;
  std::size_t pos = 0;
  std::size_t line = 0;

  std::optional<std::string_view> next() {
    while (pos < text.size()) {
      std::size_t eol = text.find('\n', pos);
      std::string_view raw = (eol == std::string_view::npos)
                                 ? text.substr(pos)
                                 : text.substr(pos, eol - pos);
      pos = (eol == std::string_view::npos) ? text.size() : eol + 1;
      ++line;
      while (!raw.empty() && (raw.back() == '\r' || raw.back() == ' ' || raw.back() == '\t'))
        raw.remove_suffix(1);
      if (!raw.empty()) return raw;
    }
    return std::nullopt;
  }
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Intel HEX

/// Record types honored: 00 data, 01 EOF, 02 extended segment, 04 extended
/// linear, 05 start linear (kept as metadata, not data).
inline DecodedRecords decode_intel_hex(std::string_view text) {
  DecodedRecords out;
  detail::LineCursor cur{text};
  uint32_t offset = 0;  // extension from type 02/04 records
  bool eof_seen = false;
  while (auto l = cur.next()) {
    std::string_view ln = *l;
    std::size_t line = cur.line;
    if (ln[0] != ':') throw Error(errc::bad_record_type, "line does not start with ':'", line);
    auto rec = detail::decode_record_hex(ln.substr(1), line);
    if (rec.size() < 5) throw Error(errc::truncated_record, "record shorter than minimum", line);
    uint8_t count = rec[0];
    if (rec.size() != static_cast<std::size_t>(count) + 5)
      throw Error(errc::truncated_record, "record length does not match byte count", line);
    uint8_t sum = 0;
    for (std::size_t i = 0; i + 1 < rec.size(); ++i) sum = static_cast<uint8_t>(sum + rec[i]);
    uint8_t expect = static_cast<uint8_t>(0x100 - sum);
    if (expect != rec.back())
      throw Error(errc::bad_checksum,
                  "expected " + hex_u32(expect) + ", found " + hex_u32(rec.back()), line);
    uint16_t addr16 = static_cast<uint16_t>((rec[1] << 8) | rec[2]);
    uint8_t type = rec[3];
    std::span<const uint8_t> data{rec.data() + 4, count};
    switch (type) {
      case 0x00:
        detail::append_data(out.segments, offset + addr16, data, line);
        break;
      case 0x01:
        eof_seen = true;
        break;
      case 0x02:
        if (count != 2) throw Error(errc::truncated_record, "type 02 record needs 2 data bytes", line);
        offset = static_cast<uint32_t>((data[0] << 8 | data[1])) << 4;
        break;
      case 0x04:
        if (count != 2) throw Error(errc::truncated_record, "type 04 record needs 2 data bytes", line);
        offset = static_cast<uint32_t>((data[0] << 8 | data[1])) << 16;
        break;
      case 0x05:
        if (count != 4) throw Error(errc::truncated_record, "type 05 record needs 4 data bytes", line);
        out.metadata["start_address"] =
            hex_u32((static_cast<uint32_t>(data[0]) << 24) | (static_cast<uint32_t>(data[1]) << 16) |
                    (static_cast<uint32_t>(data[2]) << 8) | data[3]);
        break;
      default:
        throw Error(errc::bad_record_type, "unsupported record type " + hex_u32(type), line);
    }
    if (eof_seen) break;
  }
  out.segments = detail::normalize_segments(std::move(out.segments));
  return out;
}

// ---------------------------------------------------------------------------
// Motorola S-record

/// Honors S0 header, S1/S2/S3 data, S5 count (skipped), S7/S8/S9 start
/// address. Checksum is the ones' complement of the summed count, address and
/// data bytes.
inline DecodedRecords decode_srecord(std::string_view text) {
  DecodedRecords out;
  detail::LineCursor cur{text};
  while (auto l = cur.next()) {
    std::string_view ln = *l;
    std::size_t line = cur.line;
    if (ln[0] != 'S' && ln[0] != 's')
      throw Error(errc::bad_record_type, "line does not start with 'S'", line);
    if (ln.size() < 2) throw Error(errc::truncated_record, "missing record type digit", line);
    char tc = ln[1];
    if (tc < '0' || tc > '9') throw Error(errc::bad_record_type, "non-numeric record type", line);
    int type = tc - '0';
    auto rec = detail::decode_record_hex(ln.substr(2), line);
    if (rec.size() < 3) throw Error(errc::truncated_record, "record shorter than minimum", line);
    uint8_t count = rec[0];
    if (rec.size() != static_cast<std::size_t>(count) + 1)
      throw Error(errc::truncated_record, "record length does not match byte count", line);
    uint8_t sum = 0;
    for (std::size_t i = 0; i + 1 < rec.size(); ++i) sum = static_cast<uint8_t>(sum + rec[i]);
    uint8_t expect = static_cast<uint8_t>(0xFF - sum);
    if (expect != rec.back())
      throw Error(errc::bad_checksum,
                  "expected " + hex_u32(expect) + ", found " + hex_u32(rec.back()), line);
    std::size_t addr_len;
    switch (type) {
      case 0: addr_len = 2; break;
      case 1: addr_len = 2; break;
      case 2: addr_len = 3; break;
      case 3: addr_len = 4; break;
      case 5: continue;  // count record, ignored
      case 7: addr_len = 4; break;
      case 8: addr_len = 3; break;
      case 9: addr_len = 2; break;
      default:
        throw Error(errc::bad_record_type, "unsupported record type S" + std::to_string(type), line);
    }
    if (rec.size() < 1 + addr_len + 1)
      throw Error(errc::truncated_record, "record too short for its address field", line);
    uint32_t addr = 0;
    for (std::size_t i = 0; i < addr_len; ++i) addr = (addr << 8) | rec[1 + i];
    std::span<const uint8_t> data{rec.data() + 1 + addr_len, rec.size() - 2 - addr_len};
    if (type == 0) {
      std::string header;
      for (uint8_t b : data)
        if (is_printable_ascii(b)) header.push_back(static_cast<char>(b));
      if (!header.empty()) out.metadata["srecord_header"] = header;
    } else if (type >= 1 && type <= 3) {
      detail::append_data(out.segments, addr, data, line);
    } else {  // S7/S8/S9
      out.metadata["start_address"] = hex_u32(addr);
    }
  }
  out.segments = detail::normalize_segments(std::move(out.segments));
  return out;
}

// ---------------------------------------------------------------------------
// merge_segments

constexpr uint64_t kDefaultGapCap = 16ull << 20;  // guards pathological HEX

inline FirmwareImage merge_segments(SegmentList segs, uint8_t fill = 0xFF,
                                    uint64_t max_gap = kDefaultGapCap) {
  segs = detail::normalize_segments(std::move(segs));
  if (segs.empty()) throw Error(errc::empty_input, "no segments to merge");
  for (std::size_t i = 1; i < segs.size(); ++i) {
    uint64_t gap = segs[i].start - segs[i - 1].end();
    if (gap > max_gap)
      throw Error(errc::gap_too_large, "gap of " + std::to_string(gap) + " bytes before " +
                                           hex_u32(segs[i].start));
  }
  FirmwareImage img;
  img.base = segs.front().start;
  img.fill = fill;
  uint64_t len = segs.back().end() - segs.front().start;
  img.bytes.assign(static_cast<std::size_t>(len), fill);
  for (const auto& s : segs)
    std::copy(s.data.begin(), s.data.end(), img.bytes.begin() + (s.start - *img.base));
  return img;
}

// ---------------------------------------------------------------------------
// image construction with detached far segments

struct LoadOptions {
  uint8_t fill = 0xFF;
  uint64_t max_gap = kDefaultGapCap;
};

/// Builds an image from decoded segments. Segment clusters separated by more
/// than the gap cap are not merged: the cluster holding the most data becomes
/// the image (ties to the lowest address) and the rest are kept as
/// "segment_0x<start>" metadata entries (hex bytes). Multi-part packages with
/// a high-address config block (e.g. a UICR page) stay loadable this way.
inline FirmwareImage image_from_segments(SegmentList segs, SourceFormat fmt,
                                         const LoadOptions& opts = {}) {
  segs = detail::normalize_segments(std::move(segs));
  if (segs.empty()) throw Error(errc::empty_input, "container holds no data");

  std::vector<SegmentList> clusters;
  for (auto& s : segs) {
    if (clusters.empty() || s.start - clusters.back().back().end() > opts.max_gap)
      clusters.emplace_back();
    clusters.back().push_back(std::move(s));
  }
  std::size_t main_idx = 0;
  uint64_t best = 0;
  for (std::size_t i = 0; i < clusters.size(); ++i) {
    uint64_t total = 0;
    for (const auto& s : clusters[i]) total += s.data.size();
    if (total > best) {
      best = total;
      main_idx = i;
    }
  }
  FirmwareImage img = merge_segments(std::move(clusters[main_idx]), opts.fill, opts.max_gap);
  img.source_format = fmt;
  for (std::size_t i = 0; i < clusters.size(); ++i) {
    if (i == main_idx) continue;
    for (const auto& s : clusters[i])
      img.metadata["segment_" + hex_u32(s.start)] = hex_bytes(s.data);
  }
  return img;
}

// ---------------------------------------------------------------------------
// format detection and file loading

inline SourceFormat detect_format(std::span<const uint8_t> bytes) {
  if (!bytes.empty() && bytes[0] == ':') return SourceFormat::intel_hex;
  if (!bytes.empty() && bytes[0] == 'S') return SourceFormat::srecord;
  return SourceFormat::raw;
}

inline FirmwareImage load_bytes(std::vector<uint8_t> bytes,
                                std::optional<SourceFormat> hint = std::nullopt,
                                const LoadOptions& opts = {}) {
  if (bytes.empty()) throw Error(errc::empty_input, "input is empty");
  SourceFormat fmt = hint.value_or(detect_format(bytes));
  if (fmt == SourceFormat::raw) {
    FirmwareImage img = load_raw(std::move(bytes));
    img.fill = opts.fill;
    return img;
  }
  std::string_view text{reinterpret_cast<const char*>(bytes.data()), bytes.size()};
  DecodedRecords rec = fmt == SourceFormat::intel_hex ? decode_intel_hex(text) : decode_srecord(text);
  FirmwareImage img = image_from_segments(std::move(rec.segments), fmt, opts);
  for (auto& [k, v] : rec.metadata) img.metadata[k] = v;
  return img;
}

inline std::vector<uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(errc::io_error, "cannot open " + path.string());
  std::vector<uint8_t> bytes{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
  return bytes;
}

inline FirmwareImage load_entry(const ManifestEntry& entry, const LoadOptions& opts = {}) {
  FirmwareImage img = load_bytes(read_file(entry.path), entry.format, opts);
  img.metadata["path"] = entry.path;
  if (!entry.profile.empty()) img.metadata["profile"] = entry.profile;
  if (!entry.device.empty()) img.metadata["device"] = entry.device;
  if (entry.base) {
    img.base = *entry.base;
    img.metadata["declared_base"] = hex_u32(*entry.base);
  }
  return img;
}

// ---------------------------------------------------------------------------
// corpus walking

struct CorpusItem {
  ManifestEntry entry;
  std::optional<FirmwareImage> image;
  std::string error;  // empty on success
};

struct CorpusResult {
  std::vector<CorpusItem> items;

  std::size_t error_count() const {
    std::size_t n = 0;
    for (const auto& i : items)
      if (!i.error.empty()) ++n;
    return n;
  }
};

/// Decode failures are per-entry results, never fatal to the batch.
inline CorpusResult walk_corpus(const CorpusManifest& manifest, const LoadOptions& opts = {}) {
  CorpusResult out;
  out.items.reserve(manifest.entries.size());
  for (const auto& entry : manifest.entries) {
    CorpusItem item{entry, std::nullopt, {}};
    try {
      item.image = load_entry(entry, opts);
    } catch (const Error& e) {
      item.error = e.what();
    }
    out.items.push_back(std::move(item));
  }
  return out;
}

inline void validate_manifest(const CorpusManifest& manifest) {
  std::set<std::string> seen;
  for (const auto& e : manifest.entries)
    if (!seen.insert(e.path).second)
      throw Error(errc::parse_error, "duplicate manifest path " + e.path);
}

}  // namespace cmscope::ingest
