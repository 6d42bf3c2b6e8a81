// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <vector>

#include "cmscope/disasm.hpp"
#include "cmscope/error.hpp"
#include "cmscope/ingest.hpp"

namespace cmscope::image {

using ingest::FirmwareImage;

enum class RegionClass : uint8_t {
  Code,
  Sram,
  Peripheral,
  RamWb,
  RamWt,
  DeviceShared,
  DevicePe,
  System,
  Ppb,
  Scs,
};

inline const char* region_class_name(RegionClass c) {
  switch (c) {
    case RegionClass::Code: return "Code";
    case RegionClass::Sram: return "SRAM";
    case RegionClass::Peripheral: return "Peripheral";
    case RegionClass::RamWb: return "RAM";
    case RegionClass::RamWt: return "RAM";
    case RegionClass::DeviceShared: return "Device";
    case RegionClass::DevicePe: return "Device";
    case RegionClass::System: return "System";
    case RegionClass::Ppb: return "PPB";
    case RegionClass::Scs: return "SCS";
  }
  return "?";
}

struct MemRegion {
  uint32_t start;
  uint32_t end;  // inclusive
  RegionClass cls;
  bool default_xn;
};

struct MemoryMap {
  std::vector<MemRegion> regions;  // sorted, tiling [0, 2^32)
};

/// The eight 512 MB architectural regions, with the PPB and SCS carved out of
/// the system space. Peripheral, device and system space is execute-never by
/// default; code, SRAM and the two RAM regions are executable.
inline MemoryMap default_memory_map() {
  MemoryMap m;
  m.regions = {
      {0x00000000u, 0x1FFFFFFFu, RegionClass::Code, false},
      {0x20000000u, 0x3FFFFFFFu, RegionClass::Sram, false},
      {0x40000000u, 0x5FFFFFFFu, RegionClass::Peripheral, true},
      {0x60000000u, 0x7FFFFFFFu, RegionClass::RamWb, false},
      {0x80000000u, 0x9FFFFFFFu, RegionClass::RamWt, false},
      {0xA0000000u, 0xBFFFFFFFu, RegionClass::DeviceShared, true},
      {0xC0000000u, 0xDFFFFFFFu, RegionClass::DevicePe, true},
      {0xE0000000u, 0xE000DFFFu, RegionClass::Ppb, true},
      {0xE000E000u, 0xE000EFFFu, RegionClass::Scs, true},
      {0xE000F000u, 0xE00FFFFFu, RegionClass::Ppb, true},
      {0xE0100000u, 0xFFFFFFFFu, RegionClass::System, true},
  };
  return m;
}

inline RegionClass classify_address(const MemoryMap& map, uint32_t addr) {
  auto it = std::upper_bound(map.regions.begin(), map.regions.end(), addr,
                             [](uint32_t a, const MemRegion& r) { return a < r.start; });
  return std::prev(it)->cls;
}

inline bool is_ram_class(RegionClass c) {
  return c == RegionClass::Sram || c == RegionClass::RamWb || c == RegionClass::RamWt;
}

inline bool default_xn_of(const MemoryMap& map, uint32_t addr) {
  auto it = std::upper_bound(map.regions.begin(), map.regions.end(), addr,
                             [](uint32_t a, const MemRegion& r) { return a < r.start; });
  return std::prev(it)->default_xn;
}

// ---------------------------------------------------------------------------
// vector table

struct VectorTable {
  uint32_t table_address = 0;
  uint32_t initial_sp = 0;
  uint32_t reset = 0;
  std::vector<uint32_t> handlers;  // entries 2..N, zero = unused slot
};

constexpr std::size_t kMaxVectorEntries = 512;

inline bool valid_handler_word(const FirmwareImage& img, uint32_t base, uint32_t word) {
  if (word == 0) return true;
  if (!(word & 1)) return false;
  uint32_t code = word & ~1u;
  return code >= base && static_cast<uint64_t>(code) + 2 <= img.end_addr();
}

/// Reads entries until the first word violating the handler shape (odd Thumb
/// pointer into the image, or zero) or the entry cap, whichever comes first.
inline VectorTable parse_vector_table(const FirmwareImage& img, uint32_t base,
                                      std::size_t max_entries = kMaxVectorEntries) {
  if (!img.contains(base, 8))
    throw Error(errc::table_truncated, "image does not cover the vector table at " + hex_u32(base));
  const MemoryMap map = default_memory_map();
  VectorTable vt;
  vt.table_address = base;
  vt.initial_sp = img.read_u32(base);
  if ((vt.initial_sp & 3u) || !is_ram_class(classify_address(map, vt.initial_sp)))
    throw Error(errc::invalid_initial_sp, "initial SP " + hex_u32(vt.initial_sp));
  vt.reset = img.read_u32(base + 4);
  if (vt.reset == 0 || !(vt.reset & 1) || !img.contains(vt.reset & ~1u, 2))
    throw Error(errc::invalid_reset_vector, "reset vector " + hex_u32(vt.reset));
  for (std::size_t n = 2; n < max_entries; ++n) {
    uint32_t addr = base + static_cast<uint32_t>(n * 4);
    if (!img.contains(addr, 4)) break;
    uint32_t word = img.read_u32(addr);
    if (!valid_handler_word(img, *img.base, word)) break;
    vt.handlers.push_back(word);
  }
  return vt;
}

inline std::vector<uint32_t> entry_points_from_vector_table(const VectorTable& vt) {
  std::vector<uint32_t> out;
  out.push_back(vt.reset & ~1u);
  for (uint32_t h : vt.handlers)
    if (h) out.push_back(h & ~1u);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// base-address inference

struct BaseEvidence {
  uint32_t vectors_ok = 0;     // vector-table words satisfying the hard shape
  uint32_t pointer_hits = 0;   // image words decoding as in-image Thumb code
  uint32_t words_scanned = 0;  // soft-score denominator
};

struct BaseCandidate {
  uint32_t base = 0;
  double score = 0.0;
  BaseEvidence evidence;
};

struct BaseInferenceOptions {
  uint32_t alignment = 0x1000;   // flash-page granularity
  uint32_t max_base = 0x10000000;
  std::vector<uint32_t> extra_candidates;  // e.g. a manifest-declared base
};

namespace detail {

constexpr std::size_t kHardVectorCount = 16;  // entries 0..15, 64 bytes

inline bool hard_constraints(const FirmwareImage& img, const MemoryMap& map, uint32_t b,
                             uint32_t& vectors_ok) {
  uint32_t sp = read_le32(img.bytes, 0);
  if ((sp & 3u) || !is_ram_class(classify_address(map, sp))) return false;
  vectors_ok = 1;
  const uint64_t end = static_cast<uint64_t>(b) + img.size();
  std::size_t n = std::min(kHardVectorCount, img.size() / 4);
  for (std::size_t v = 1; v < n; ++v) {
    uint32_t word = read_le32(img.bytes, v * 4);
    if (word == 0) {
      ++vectors_ok;
      continue;
    }
    if (!(word & 1)) return false;
    uint32_t code = word & ~1u;
    if (code < b || static_cast<uint64_t>(code) + 2 > end) return false;
    ++vectors_ok;
  }
  return true;
}

inline void soft_score(const FirmwareImage& img, uint32_t b, BaseCandidate& cand) {
  const uint64_t end = static_cast<uint64_t>(b) + img.size();
  uint32_t hits = 0, scanned = 0;
  for (std::size_t off = 0; off + 4 <= img.size(); off += 4) {
    ++scanned;
    uint32_t w = read_le32(img.bytes, off);
    if (!(w & 1)) continue;
    uint32_t code = w & ~1u;
    if (code < b || static_cast<uint64_t>(code) + 2 > end) continue;
    disasm::Instr ins = disasm::decode_one(img.bytes, b, code);
    if (ins.kind != disasm::InstrKind::Unknown) ++hits;
  }
  cand.evidence.pointer_hits = hits;
  cand.evidence.words_scanned = scanned;
  cand.score = scanned ? static_cast<double>(hits) / scanned : 0.0;
}

}  // namespace detail

/// Deterministic scan over aligned base candidates (plus any declared ones):
/// hard vector-table constraints gate, then the fraction of image words that
/// decode as in-image Thumb code picks the winner; ties go to the lowest base.
inline BaseCandidate infer_base_address(const FirmwareImage& img,
                                        const BaseInferenceOptions& opts = {}) {
  if (img.size() < 64)
    throw Error(errc::no_viable_base, "image too small for a minimal vector table");
  const MemoryMap map = default_memory_map();

  std::vector<uint32_t> candidates;
  for (uint64_t b = 0; b <= opts.max_base; b += opts.alignment)
    candidates.push_back(static_cast<uint32_t>(b));
  for (uint32_t b : opts.extra_candidates) candidates.push_back(b);
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  std::optional<BaseCandidate> best;
  for (uint32_t b : candidates) {
    if (static_cast<uint64_t>(b) + img.size() > 0x100000000ull) break;
    uint32_t vectors_ok = 0;
    if (!detail::hard_constraints(img, map, b, vectors_ok)) continue;
    BaseCandidate cand;
    cand.base = b;
    cand.evidence.vectors_ok = vectors_ok;
    detail::soft_score(img, b, cand);
    if (!best || cand.score > best->score) best = cand;  // ties keep the lower base
  }
  if (!best) throw Error(errc::no_viable_base, "no candidate satisfies the vector-table shape");
  return *best;
}

}  // namespace cmscope::image
