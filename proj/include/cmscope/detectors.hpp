// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "cmscope/cfg.hpp"
#include "cmscope/disasm.hpp"
#include "cmscope/image.hpp"
#include "cmscope/ingest.hpp"
#include "cmscope/profiles.hpp"

namespace cmscope::detectors {

using cfg::CallGraph;
using cfg::FunctionSet;
using cfg::StringTable;
using disasm::Instr;
using disasm::InstrIndex;
using disasm::InstrKind;
using ingest::FirmwareImage;
using profiles::CanaryPatternFamily;
using profiles::VendorProfile;

enum class Feature : uint8_t {
  ReadbackProtection,
  PrivilegeSeparation,
  SvcForLibraryCall,
  StackSeparation,
  StackLimitUsage,
  TaskStackGuard,
  Mpu,
  Smpu,
  StackCanaries,
  BarrierCompliance,
};

constexpr std::array<Feature, 10> kAllFeatures = {
    Feature::ReadbackProtection, Feature::PrivilegeSeparation, Feature::SvcForLibraryCall,
    Feature::StackSeparation,    Feature::StackLimitUsage,     Feature::TaskStackGuard,
    Feature::Mpu,                Feature::Smpu,                Feature::StackCanaries,
    Feature::BarrierCompliance,
};

inline const char* feature_key(Feature f) {
  switch (f) {
    case Feature::ReadbackProtection: return "readback_protection";
    case Feature::PrivilegeSeparation: return "privilege_separation";
    case Feature::SvcForLibraryCall: return "svc_for_library_call";
    case Feature::StackSeparation: return "stack_separation";
    case Feature::StackLimitUsage: return "stack_limit_register_usage";
    case Feature::TaskStackGuard: return "task_stack_overflow_guard";
    case Feature::Mpu: return "memory_access_control_mpu";
    case Feature::Smpu: return "memory_access_control_smpu";
    case Feature::StackCanaries: return "stack_canaries";
    case Feature::BarrierCompliance: return "instruction_sync_barriers";
  }
  return "?";
}

inline const char* feature_display_name(Feature f) {
  switch (f) {
    case Feature::ReadbackProtection: return "Readback Protection";
    case Feature::PrivilegeSeparation: return "Privilege Separation";
    case Feature::SvcForLibraryCall: return "SVC for Library Call";
    case Feature::StackSeparation: return "Stack Separation";
    case Feature::StackLimitUsage: return "Stack Limit Register Usage";
    case Feature::TaskStackGuard: return "Task Stack Ovf. Guard";
    case Feature::Mpu: return "Memory Access Control (MPU)";
    case Feature::Smpu: return "Memory Access Control (sMPU)";
    case Feature::StackCanaries: return "Stack Canaries";
    case Feature::BarrierCompliance: return "Proper Instruction Sync. Barriers";
  }
  return "?";
}

/// Rows whose corpus percentage is computed over determinate samples only
/// (guard: RTOS firmware; barriers: firmware that writes CONTROL).
inline bool percentage_excludes_indeterminate(Feature f) {
  return f == Feature::TaskStackGuard || f == Feature::BarrierCompliance;
}

enum class Verdict : uint8_t { Present, Absent, Indeterminate };

inline const char* verdict_name(Verdict v) {
  switch (v) {
    case Verdict::Present: return "present";
    case Verdict::Absent: return "absent";
    case Verdict::Indeterminate: return "indeterminate";
  }
  return "?";
}

struct Evidence {
  uint32_t address = 0;
  std::string note;

  bool operator==(const Evidence&) const = default;
};

struct Finding {
  Feature feature = Feature::ReadbackProtection;
  Verdict verdict = Verdict::Indeterminate;
  std::vector<Evidence> evidence;
  nlohmann::ordered_json detail = nlohmann::ordered_json::object();

  bool operator==(const Finding&) const = default;
};

struct FeatureMatrix {
  std::string image_id;
  std::string profile_id;
  std::string device_id;
  std::optional<uint32_t> base;
  std::map<Feature, Finding> findings;
  Finding rtos;  // auxiliary row feeding the task-guard denominator

  bool operator==(const FeatureMatrix&) const = default;
};

// Known default canary constants, reported when seen in a guard slot.
constexpr uint32_t kGnuTerminatorCanary = 0xff0a0000u;
constexpr uint32_t kZeroCanary = 0u;

constexpr const char* kStackSmashingMessage = "*** stack smashing detected ***";

// Architectural MPU register window inside the SCS.
constexpr uint32_t kMpuWindowStart = 0xE000ED90u;  // MPU_TYPE
constexpr uint32_t kMpuWindowEnd = 0xE000EDC8u;    // exclusive
constexpr uint32_t kMpuCtrl = 0xE000ED94u;
constexpr uint32_t kMpuRnr = 0xE000ED98u;
constexpr uint32_t kMpuRbar = 0xE000ED9Cu;
constexpr uint32_t kMpuRasr = 0xE000EDA0u;  // RLAR on v8-M

// ---------------------------------------------------------------------------
// shared helpers

namespace detail {

struct ControlWrite {
  uint32_t addr = 0;
  std::optional<uint32_t> value;    // composed constant when resolvable
  std::optional<uint32_t> orr_bits; // bits OR-ed onto a prior MRS CONTROL read
};

/// Follows ORR-immediate chains backwards; returns the OR-ed bits when the
/// chain bottoms out in an MRS CONTROL read.
inline std::optional<uint32_t> orr_bits_from_mrs_control(const cfg::ConstPropagator& prop,
                                                         uint32_t use_addr, uint8_t reg) {
  uint32_t bits = 0;
  uint8_t r = reg;
  uint32_t at = use_addr;
  for (int depth = 0; depth < 8; ++depth) {
    auto def = prop.nearest_def(at, r);
    if (!def) return std::nullopt;
    if (def->kind == InstrKind::OrrImm && def->rd == r) {
      bits |= def->imm;
      r = def->rn;
      at = def->addr;
      continue;
    }
    if (def->kind == InstrKind::MrsSpecial && disasm::sysm::is_control(static_cast<uint8_t>(def->imm)))
      return bits;
    return std::nullopt;
  }
  return std::nullopt;
}

inline std::vector<ControlWrite> collect_control_writes(const InstrIndex& idx) {
  cfg::ConstPropagator prop(idx);
  std::vector<ControlWrite> out;
  for (const auto& [addr, ins] : idx.instrs) {
    if (ins.kind != InstrKind::MsrSpecial || !disasm::sysm::is_control(static_cast<uint8_t>(ins.imm)))
      continue;
    ControlWrite w;
    w.addr = addr;
    w.value = prop.value_at(addr, ins.rn);
    if (!w.value) w.orr_bits = orr_bits_from_mrs_control(prop, addr, ins.rn);
    out.push_back(w);
  }
  return out;
}

inline bool string_has_calltree_xref(const cfg::StringRef& s, const FunctionSet& funcs,
                                     const CallGraph& graph, uint32_t* fn_entry = nullptr) {
  for (uint32_t x : s.xrefs) {
    const cfg::Function* f = funcs.containing(x);
    if (f && cfg::in_call_tree(graph, f->entry)) {
      if (fn_entry) *fn_entry = f->entry;
      return true;
    }
  }
  return false;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// detectors

/// Present on a CONTROL write whose nPRIV bit is provably set (composed
/// constant, or bits OR-ed onto a read-back CONTROL value); indeterminate
/// only when CONTROL is written and no site's effect could be resolved.
inline Finding detect_privilege_separation(const InstrIndex& idx) {
  Finding f;
  f.feature = Feature::PrivilegeSeparation;
  auto writes = detail::collect_control_writes(idx);
  std::size_t resolved = 0;
  for (const auto& w : writes) {
    if (w.value) {
      ++resolved;
      if (*w.value & 1u)
        f.evidence.push_back({w.addr, "CONTROL := " + hex_u32(*w.value) + " sets nPRIV"});
    } else if (w.orr_bits) {
      ++resolved;  // nPRIV changes iff the OR mask covers bit 0
      if (*w.orr_bits & 1u)
        f.evidence.push_back({w.addr, "ORR " + hex_u32(*w.orr_bits) + " onto MRS CONTROL sets nPRIV"});
    }
  }
  f.detail["control_write_count"] = writes.size();
  f.detail["resolved_write_count"] = resolved;
  if (!f.evidence.empty())
    f.verdict = Verdict::Present;
  else if (!writes.empty() && resolved == 0)
    f.verdict = Verdict::Indeterminate;
  else
    f.verdict = Verdict::Absent;
  return f;
}

inline Finding detect_stack_separation(const InstrIndex& idx) {
  Finding f;
  f.feature = Feature::StackSeparation;
  for (const auto& [addr, ins] : idx.instrs)
    if (ins.kind == InstrKind::MsrSpecial && disasm::sysm::is_psp(static_cast<uint8_t>(ins.imm)))
      f.evidence.push_back({addr, "MSR PSP"});
  bool spsel = false;
  for (const auto& w : detail::collect_control_writes(idx)) {
    uint32_t bits = w.value ? *w.value : w.orr_bits.value_or(0);
    if (bits & 2u) {
      spsel = true;
      f.evidence.push_back({w.addr, "CONTROL write sets SPSEL"});
    }
  }
  f.verdict = f.evidence.empty() ? Verdict::Absent : Verdict::Present;
  f.detail["stacks"] = f.verdict == Verdict::Present ? "msp+psp" : "msp-only";
  f.detail["spsel_set"] = spsel;
  return f;
}

inline Finding detect_stack_limit_usage(const InstrIndex& idx) {
  Finding f;
  f.feature = Feature::StackLimitUsage;
  for (const auto& [addr, ins] : idx.instrs)
    if (ins.kind == InstrKind::MsrSpecial &&
        disasm::sysm::is_stack_limit(static_cast<uint8_t>(ins.imm)))
      f.evidence.push_back({addr, ins.imm == disasm::sysm::kMsplim || ins.imm == disasm::sysm::kMsplimNs
                                      ? "MSR MSPLIM"
                                      : "MSR PSPLIM"});
  f.verdict = f.evidence.empty() ? Verdict::Absent : Verdict::Present;
  return f;
}

/// SVC sites only count as library-call repurposing when nothing ever drops
/// privilege: with separation in place SVC is genuine escalation.
inline Finding detect_svc_usage(const InstrIndex& idx, const Finding& privilege_separation) {
  Finding f;
  f.feature = Feature::SvcForLibraryCall;
  std::set<uint32_t> imms;
  std::size_t sites = 0;
  for (const auto& [addr, ins] : idx.instrs) {
    if (ins.kind != InstrKind::Svc) continue;
    ++sites;
    imms.insert(ins.imm);
    if (f.evidence.size() < 16) f.evidence.push_back({addr, "SVC #" + std::to_string(ins.imm)});
  }
  f.detail["site_count"] = sites;
  f.detail["immediates"] = nlohmann::ordered_json::array();
  for (uint32_t i : imms) f.detail["immediates"].push_back(i);
  if (sites == 0) {
    f.verdict = Verdict::Absent;
    f.evidence.clear();
  } else if (privilege_separation.verdict == Verdict::Indeterminate) {
    f.verdict = Verdict::Indeterminate;
  } else if (privilege_separation.verdict == Verdict::Present) {
    f.verdict = Verdict::Absent;
    f.evidence.clear();
    f.detail["note"] = "SVC present but privilege separation in use";
  } else {
    f.verdict = Verdict::Present;
  }
  return f;
}

struct MpuFindings {
  Finding mpu;
  Finding smpu;
};

/// Resolves store targets against the MPU register window and the profile's
/// vendor sMPU registers. The ordered write log (address-ordered, values when
/// resolvable) is kept in the detail for configuration reconstruction.
inline MpuFindings detect_mpu_usage(const InstrIndex& idx, const VendorProfile& profile) {
  MpuFindings out;
  out.mpu.feature = Feature::Mpu;
  out.smpu.feature = Feature::Smpu;

  cfg::ConstPropagator prop(idx);
  auto log = nlohmann::ordered_json::array();
  bool touched = false, ctrl_enable = false, ctrl_written = false;
  for (const auto& [addr, ins] : idx.instrs) {
    if (ins.kind != InstrKind::StrImm) continue;
    auto base = prop.value_at(addr, ins.rn);
    if (!base) continue;
    uint32_t target = *base + ins.imm;
    auto value = prop.value_at(addr, ins.rd);
    if (target >= kMpuWindowStart && target < kMpuWindowEnd) {
      touched = true;
      nlohmann::ordered_json entry;
      entry["address"] = hex_u32(target);
      entry["value"] = value ? nlohmann::ordered_json(hex_u32(*value)) : nlohmann::ordered_json(nullptr);
      log.push_back(entry);
      out.mpu.evidence.push_back({addr, "store to MPU register " + hex_u32(target)});
      if (target == kMpuCtrl) {
        ctrl_written = true;
        if (value && (*value & 1u)) ctrl_enable = true;
      }
    }
    if (profile.smpu_mmio_addresses.count(target))
      out.smpu.evidence.push_back({addr, "store to vendor MPU register " + hex_u32(target)});
  }
  out.mpu.detail["write_log"] = log;
  out.mpu.detail["ctrl_enable_seen"] = ctrl_enable;
  if (!touched) {
    out.mpu.verdict = Verdict::Absent;
    out.mpu.evidence.clear();
  } else if (ctrl_enable) {
    out.mpu.verdict = Verdict::Present;
  } else {
    out.mpu.verdict = Verdict::Indeterminate;
    out.mpu.detail["note"] = ctrl_written ? "MPU registers written but never enabled"
                                          : "MPU registers touched, enable not observed";
  }
  if (profile.smpu_mmio_addresses.empty()) {
    out.smpu.verdict = Verdict::Indeterminate;
    out.smpu.detail["note"] = "profile defines no vendor MPU registers";
    out.smpu.evidence.clear();
  } else {
    out.smpu.verdict = out.smpu.evidence.empty() ? Verdict::Absent : Verdict::Present;
  }
  return out;
}

namespace detail {

inline bool pattern_matches_at(const std::vector<uint16_t>& words, std::size_t at,
                               const std::vector<profiles::PatternWord>& pattern) {
  if (at + pattern.size() > words.size()) return false;
  for (std::size_t j = 0; j < pattern.size(); ++j)
    if ((words[at + j] & pattern[j].mask) != (pattern[j].value & pattern[j].mask)) return false;
  return true;
}

inline std::optional<std::size_t> find_pattern(const std::vector<uint16_t>& words, std::size_t from,
                                               std::size_t to,
                                               const std::vector<profiles::PatternWord>& pattern) {
  for (std::size_t at = from; at < to && at < words.size(); ++at)
    if (pattern_matches_at(words, at, pattern)) return at;
  return std::nullopt;
}

constexpr std::size_t kCanaryPrologueWindow = 8;  // halfword start positions
constexpr std::size_t kCanaryScanBytes = 512;

}  // namespace detail

/// Either route satisfies the detector: the fixed libc failure message with a
/// referencing function inside the call tree, or a prologue/epilogue template
/// pair from one of the configured pattern families inside one function.
/// Template matching runs over raw halfwords so compare/branch sequences
/// outside the decode subset still match.
inline Finding detect_stack_canary(const FirmwareImage& img, const InstrIndex& idx,
                                   const FunctionSet& funcs, const CallGraph& graph,
                                   const StringTable& strings,
                                   const std::vector<CanaryPatternFamily>& families) {
  (void)idx;  // xrefs arrive pre-resolved through the string table
  Finding f;
  f.feature = Feature::StackCanaries;
  for (const auto& s : strings.strings) {
    if (s.text.find(kStackSmashingMessage) == std::string::npos) continue;
    uint32_t fn = 0;
    if (detail::string_has_calltree_xref(s, funcs, graph, &fn)) {
      f.verdict = Verdict::Present;
      f.evidence.push_back({s.addr, "libc stack-smashing message"});
      f.evidence.push_back({fn, "failure function in call tree"});
      f.detail["method"] = "libc-string";
      return f;
    }
    f.detail["note"] = "stack-smashing message present but its function is never called";
  }

  for (std::size_t fi = 0; fi < funcs.functions.size(); ++fi) {
    const cfg::Function& fn = funcs.functions[fi];
    uint64_t limit = static_cast<uint64_t>(fn.entry) + detail::kCanaryScanBytes;
    if (fi + 1 < funcs.functions.size())
      limit = std::min<uint64_t>(limit, funcs.functions[fi + 1].entry);
    limit = std::min<uint64_t>(limit, img.end_addr());
    if (limit <= fn.entry) continue;
    std::vector<uint16_t> words;
    for (uint64_t a = fn.entry; a + 2 <= limit; a += 2)
      words.push_back(img.read_u16(static_cast<uint32_t>(a)));
    for (const auto& fam : families) {
      auto pro = detail::find_pattern(words, 0, detail::kCanaryPrologueWindow, fam.prologue);
      if (!pro) continue;
      auto epi = detail::find_pattern(words, *pro + fam.prologue.size(), words.size(), fam.epilogue);
      if (!epi) continue;
      f.verdict = Verdict::Present;
      f.evidence.push_back({fn.entry + static_cast<uint32_t>(*pro * 2), "guard prologue (" + fam.name + ")"});
      f.evidence.push_back({fn.entry + static_cast<uint32_t>(*epi * 2), "guard epilogue (" + fam.name + ")"});
      f.detail["method"] = "pattern-family";
      f.detail["family"] = fam.name;
      // fixed guard defaults some toolchains leave in place when nothing
      // initializes the value
      f.detail["known_default_guard_values"] =
          nlohmann::ordered_json::array({hex_u32(kGnuTerminatorCanary), hex_u32(kZeroCanary)});
      return f;
    }
  }
  f.verdict = Verdict::Absent;
  return f;
}

constexpr std::size_t kBarrierWindow = 10;

/// Every CONTROL write must see an ISB within its next ten instructions in
/// address order (position 10 inclusive). No CONTROL writes at all leaves the
/// row indeterminate: the corpus percentage only covers firmware that updates
/// CONTROL.
inline Finding detect_barrier_compliance(const InstrIndex& idx) {
  Finding f;
  f.feature = Feature::BarrierCompliance;
  std::size_t writes = 0;
  bool violation = false;
  for (const auto& [addr, ins] : idx.instrs) {
    if (ins.kind != InstrKind::MsrSpecial || !disasm::sysm::is_control(static_cast<uint8_t>(ins.imm)))
      continue;
    ++writes;
    bool ok = false;
    auto it = idx.instrs.find(addr);
    std::size_t isb_pos = 0;
    for (std::size_t pos = 1; pos <= kBarrierWindow; ++pos) {
      ++it;
      if (it == idx.instrs.end()) break;
      if (it->second.kind == InstrKind::Isb) {
        ok = true;
        isb_pos = pos;
        break;
      }
    }
    if (ok) {
      f.evidence.push_back({addr, "ISB at position " + std::to_string(isb_pos)});
    } else {
      violation = true;
      f.evidence.push_back({addr, "no ISB within " + std::to_string(kBarrierWindow) + " instructions"});
    }
  }
  f.detail["control_write_count"] = writes;
  if (writes == 0) {
    f.verdict = Verdict::Indeterminate;
    f.detail["note"] = "no CONTROL writes";
    f.evidence.clear();
  } else {
    f.verdict = violation ? Verdict::Absent : Verdict::Present;
    if (violation)
      std::erase_if(f.evidence, [](const Evidence& e) { return e.note.rfind("ISB", 0) == 0; });
  }
  return f;
}

/// A signature counts when its string is referenced from a call-tree function
/// or occurs at least twice; single unreferenced hits are SDK path noise.
inline Finding detect_rtos(const StringTable& strings, const FunctionSet& funcs,
                           const CallGraph& graph, const VendorProfile& profile) {
  Finding f;
  std::set<std::string> names;
  for (const auto& sig : profile.rtos_signatures) {
    std::size_t occurrences = 0;
    bool referenced = false;
    uint32_t first_addr = 0;
    for (const auto& s : strings.strings) {
      bool hit = false;
      for (const auto& sub : sig.substrings)
        if (contains_ci(s.text, sub)) {
          hit = true;
          break;
        }
      if (!hit) continue;
      if (!occurrences) first_addr = s.addr;
      ++occurrences;
      if (detail::string_has_calltree_xref(s, funcs, graph)) referenced = true;
    }
    if (occurrences && (referenced || occurrences >= 2)) {
      names.insert(sig.rtos);
      f.evidence.push_back({first_addr, sig.rtos + " signature"});
    }
  }
  f.detail["rtoses"] = nlohmann::ordered_json::array();
  for (const auto& n : names) f.detail["rtoses"].push_back(n);
  f.verdict = names.empty() ? Verdict::Absent : Verdict::Present;
  return f;
}

/// Only meaningful for RTOS firmware; a guard marker for a detected RTOS must
/// be referenced from a call-tree function.
inline Finding detect_task_stack_guard(const StringTable& strings, const FunctionSet& funcs,
                                       const CallGraph& graph, const VendorProfile& profile,
                                       const Finding& rtos) {
  Finding f;
  f.feature = Feature::TaskStackGuard;
  if (rtos.verdict != Verdict::Present) {
    f.verdict = Verdict::Indeterminate;
    f.detail["note"] = "no RTOS detected";
    return f;
  }
  std::set<std::string> detected;
  for (const auto& n : rtos.detail.value("rtoses", nlohmann::ordered_json::array()))
    detected.insert(n.get<std::string>());
  bool marker_seen = false;
  for (const auto& group : profile.stack_guard_strings) {
    if (!detected.count(group.rtos)) continue;
    for (const auto& marker : group.markers) {
      for (const auto& s : strings.strings) {
        if (!contains_ci(s.text, marker)) continue;
        marker_seen = true;
        uint32_t fn = 0;
        if (detail::string_has_calltree_xref(s, funcs, graph, &fn)) {
          f.verdict = Verdict::Present;
          f.evidence.push_back({s.addr, group.rtos + " guard marker"});
          f.evidence.push_back({fn, "marker referenced from call tree"});
          f.detail["marker"] = marker;
          return f;
        }
      }
    }
  }
  f.verdict = Verdict::Absent;
  if (marker_seen) f.detail["note"] = "guard marker present but unreferenced";
  return f;
}

/// Evaluates the vendor's protection word from the image or from a detached
/// high-address segment kept in metadata (key "segment_0x<start>").
inline Finding detect_readback_protection(const FirmwareImage& img, const VendorProfile& profile) {
  Finding f;
  f.feature = Feature::ReadbackProtection;
  if (!profile.readback) {
    f.verdict = Verdict::Indeterminate;
    f.detail["note"] = "profile defines no readback configuration";
    return f;
  }
  const auto& rb = *profile.readback;
  uint32_t addr = rb.segment_address + rb.offset;
  std::optional<uint32_t> word;
  if (img.base && img.contains(addr, 4)) {
    word = img.read_u32(addr);
  } else if (auto it = img.metadata.find("segment_" + hex_u32(rb.segment_address));
             it != img.metadata.end()) {
    auto bytes = parse_hex_bytes(it->second);
    if (bytes && rb.offset + 4 <= bytes->size()) word = read_le32(*bytes, rb.offset);
  }
  if (!word) {
    f.verdict = Verdict::Indeterminate;
    f.detail["note"] = "no configuration segment in package";
    return f;
  }
  f.detail["config_word"] = hex_u32(*word);
  if (rb.enabled(*word)) {
    f.verdict = Verdict::Present;
    f.evidence.push_back({addr, "protection word " + hex_u32(*word)});
  } else {
    f.verdict = Verdict::Absent;
  }
  return f;
}

// ---------------------------------------------------------------------------
// full pipeline

struct RunOptions {
  std::vector<CanaryPatternFamily> canary_families = profiles::default_canary_families();
  image::BaseInferenceOptions base_options;
  std::size_t max_vector_entries = image::kMaxVectorEntries;
};

struct Pipeline {
  uint32_t base = 0;
  image::VectorTable vectors;
  InstrIndex index;
  FunctionSet functions;
  CallGraph graph;
  StringTable strings;
};

inline Pipeline build_pipeline(const FirmwareImage& img, const RunOptions& opts = {}) {
  Pipeline p;
  FirmwareImage local = img;
  if (!local.base) {
    image::BaseInferenceOptions bo = opts.base_options;
    if (auto it = img.metadata.find("declared_base"); it != img.metadata.end())
      if (auto v = parse_u32(it->second)) bo.extra_candidates.push_back(*v);
    local.base = image::infer_base_address(local, bo).base;
  }
  p.base = *local.base;
  p.vectors = image::parse_vector_table(local, p.base, opts.max_vector_entries);
  p.index = disasm::disassemble(local, image::entry_points_from_vector_table(p.vectors));
  p.functions = cfg::identify_functions(p.index);
  p.graph = cfg::build_call_graph(p.functions, p.index, p.vectors.reset & ~1u);
  p.strings = cfg::find_strings(local, p.index);
  return p;
}

/// Runs the whole pipeline and fills every row. Analysis-stage failures never
/// throw: rows that need disassembly go indeterminate with the error note.
inline FeatureMatrix run_all(const FirmwareImage& img, const VendorProfile& profile,
                             const RunOptions& opts = {}) {
  FeatureMatrix m;
  m.image_id = img.metadata.count("path") ? img.metadata.at("path") : "<memory>";
  m.profile_id = profile.id;
  if (auto it = img.metadata.find("device"); it != img.metadata.end()) m.device_id = it->second;

  m.findings[Feature::ReadbackProtection] = detect_readback_protection(img, profile);

  std::optional<Pipeline> p;
  std::string pipeline_error;
  try {
    p = build_pipeline(img, opts);
    m.base = p->base;
  } catch (const Error& e) {
    pipeline_error = e.what();
  }
  if (!p) {
    for (Feature f : kAllFeatures) {
      if (f == Feature::ReadbackProtection) continue;
      Finding x;
      x.feature = f;
      x.verdict = Verdict::Indeterminate;
      x.detail["error"] = pipeline_error;
      m.findings[f] = std::move(x);
    }
    m.rtos.verdict = Verdict::Indeterminate;
    m.rtos.detail["error"] = pipeline_error;
    return m;
  }

  FirmwareImage local = img;
  local.base = p->base;

  Finding priv = detect_privilege_separation(p->index);
  m.findings[Feature::SvcForLibraryCall] = detect_svc_usage(p->index, priv);
  m.findings[Feature::PrivilegeSeparation] = std::move(priv);
  m.findings[Feature::StackSeparation] = detect_stack_separation(p->index);
  m.findings[Feature::StackLimitUsage] = detect_stack_limit_usage(p->index);
  m.rtos = detect_rtos(p->strings, p->functions, p->graph, profile);
  m.findings[Feature::TaskStackGuard] =
      detect_task_stack_guard(p->strings, p->functions, p->graph, profile, m.rtos);
  MpuFindings mpu = detect_mpu_usage(p->index, profile);
  m.findings[Feature::Mpu] = std::move(mpu.mpu);
  m.findings[Feature::Smpu] = std::move(mpu.smpu);
  m.findings[Feature::StackCanaries] = detect_stack_canary(local, p->index, p->functions, p->graph,
                                                           p->strings, opts.canary_families);
  m.findings[Feature::BarrierCompliance] = detect_barrier_compliance(p->index);

  for (Feature f : kAllFeatures) m.findings[f].feature = f;
  return m;
}

}  // namespace cmscope::detectors
