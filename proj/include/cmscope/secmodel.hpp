// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "cmscope/error.hpp"
#include "cmscope/image.hpp"

namespace cmscope::secmodel {

using image::MemoryMap;
using image::RegionClass;

enum class MpuArch : uint8_t { v7m, v8m };
enum class Privilege : uint8_t { Privileged, Unprivileged };
enum class Access : uint8_t { Read, Write, Execute };

struct ApRights {
  bool priv_read = false;
  bool priv_write = false;
  bool unpriv_read = false;
  bool unpriv_write = false;
};

// v7-M AP[2:0]: six defined codes (100 and 111 are not part of the model).
inline const std::array<std::optional<ApRights>, 8>& v7m_ap_table() {
  static const std::array<std::optional<ApRights>, 8> t = {{
      ApRights{false, false, false, false},  // 000 no access
      ApRights{true, true, false, false},    // 001 RW privileged only
      ApRights{true, true, true, false},     // 010 RW privileged, RO unprivileged
      ApRights{true, true, true, true},      // 011 RW any
      std::nullopt,                          // 100 reserved
      ApRights{true, false, false, false},   // 101 RO privileged only
      ApRights{true, false, true, false},    // 110 RO any
      std::nullopt,                          // 111 (not modeled)
  }};
  return t;
}

// v8-M AP[2:1]: four codes.
inline const std::array<ApRights, 4>& v8m_ap_table() {
  static const std::array<ApRights, 4> t = {{
      ApRights{true, true, false, false},  // 00 RW privileged only
      ApRights{true, true, true, true},    // 01 RW any
      ApRights{true, false, false, false}, // 10 RO privileged only
      ApRights{true, false, true, false},  // 11 RO any
  }};
  return t;
}

inline bool ap_code_defined(MpuArch arch, uint8_t ap) {
  if (arch == MpuArch::v8m) return ap < 4;
  return ap < 8 && v7m_ap_table()[ap].has_value();
}

inline ApRights ap_rights(MpuArch arch, uint8_t ap) {
  if (arch == MpuArch::v8m) return v8m_ap_table()[ap & 3];
  return v7m_ap_table()[ap & 7].value();
}

struct MpuRegion {
  uint8_t number = 0;
  uint32_t base = 0;
  uint32_t size = 32;    // v7m: power of two >= 32
  uint32_t limit = 0;    // v8m: inclusive, low 5 bits set
  uint8_t ap = 0;
  bool xn = false;
  bool pxn = false;      // honored only when the config supports PXN
  uint8_t subregion_disable = 0;  // v7m only, meaningful when size >= 256
  bool enabled = true;
  MpuArch arch = MpuArch::v7m;

  uint64_t end_exclusive() const {
    return arch == MpuArch::v7m ? static_cast<uint64_t>(base) + size
                                : static_cast<uint64_t>(limit) + 1;
  }
  bool contains(uint32_t addr) const { return addr >= base && addr < end_exclusive(); }
};

struct MpuConfig {
  MpuArch arch = MpuArch::v7m;
  std::vector<MpuRegion> regions;
  bool enable = false;
  bool privileged_default = false;  // PRIVDEFENA
  uint8_t max_regions = 8;          // 8 or 16
  bool pxn_supported = false;
};

inline void validate_region(const MpuRegion& r) {
  if (!ap_code_defined(r.arch, r.ap))
    throw Error(errc::invalid_config, "undefined AP code " + std::to_string(r.ap));
  if (r.arch == MpuArch::v7m) {
    if (r.size < 32 || (r.size & (r.size - 1)))
      throw Error(errc::invalid_config, "v7-M region size must be a power of two >= 32");
    if (r.base & (r.size - 1))
      throw Error(errc::invalid_config, "v7-M region base must be size-aligned");
    if (r.subregion_disable && r.size < 256)
      throw Error(errc::invalid_config, "subregions need a region of at least 256 bytes");
  } else {
    if (r.base & 0x1Fu) throw Error(errc::invalid_config, "v8-M region base must be 32-byte aligned");
    if ((r.limit & 0x1Fu) != 0x1Fu)
      throw Error(errc::invalid_config, "v8-M region limit must end a 32-byte granule");
    if (r.limit < r.base) throw Error(errc::invalid_config, "v8-M region limit below base");
  }
}

inline void validate_config(const MpuConfig& cfg) {
  if (cfg.regions.size() > cfg.max_regions)
    throw Error(errc::invalid_config, "more regions than the MPU supports");
  for (const auto& r : cfg.regions) validate_region(r);
  if (cfg.arch == MpuArch::v8m) {
    for (std::size_t i = 0; i < cfg.regions.size(); ++i)
      for (std::size_t j = i + 1; j < cfg.regions.size(); ++j) {
        const auto& a = cfg.regions[i];
        const auto& b = cfg.regions[j];
        if (!a.enabled || !b.enabled) continue;
        if (a.base < b.end_exclusive() && b.base < a.end_exclusive())
          throw Error(errc::invalid_config, "overlapping v8-M regions " + std::to_string(a.number) +
                                                " and " + std::to_string(b.number));
      }
  }
}

namespace detail {

inline bool subregion_disabled(const MpuRegion& r, uint32_t addr) {
  if (r.arch != MpuArch::v7m || r.size < 256 || !r.subregion_disable) return false;
  uint32_t sub = (addr - r.base) / (r.size / 8);
  return (r.subregion_disable >> sub) & 1;
}

inline bool background_allows(const MemoryMap& map, uint32_t addr, Access access) {
  if (access == Access::Execute) return !image::default_xn_of(map, addr);
  return true;
}

}  // namespace detail

/// MPU disabled: background map (read/write anywhere, execute where the map
/// allows). Enabled: the matching region decides — highest number wins on
/// v7-M, overlap is a configuration error on v8-M, subregion-disabled hits
/// fall through — and an unmatched address is denied unless PRIVDEFENA covers
/// privileged code. Execute additionally needs read permission and a clear
/// XN (and PXN when supported).
inline bool eval_mpu_access(const MpuConfig& cfg, const MemoryMap& map, uint32_t addr,
                            Privilege priv, Access access) {
  if (!cfg.enable) return detail::background_allows(map, addr, access);

  const MpuRegion* match = nullptr;
  for (const auto& r : cfg.regions) {
    if (!r.enabled || !r.contains(addr) || detail::subregion_disabled(r, addr)) continue;
    if (cfg.arch == MpuArch::v8m && match)
      throw Error(errc::invalid_config, "overlapping v8-M regions at " + hex_u32(addr));
    if (!match || r.number > match->number) match = &r;
  }
  if (!match) {
    if (priv == Privilege::Privileged && cfg.privileged_default)
      return detail::background_allows(map, addr, access);
    return false;
  }
  ApRights rights = ap_rights(cfg.arch, match->ap);
  bool read = priv == Privilege::Privileged ? rights.priv_read : rights.unpriv_read;
  bool write = priv == Privilege::Privileged ? rights.priv_write : rights.unpriv_write;
  switch (access) {
    case Access::Read: return read;
    case Access::Write: return write;
    case Access::Execute:
      if (!read || match->xn) return false;
      if (cfg.pxn_supported && match->pxn && priv == Privilege::Privileged) return false;
      return true;
  }
  return false;
}

// ---------------------------------------------------------------------------
// configuration reconstruction from an MMIO write log

struct MpuWrite {
  uint32_t address = 0;
  uint32_t value = 0;
};

namespace regs {
constexpr uint32_t kType = 0xE000ED90u;
constexpr uint32_t kCtrl = 0xE000ED94u;
constexpr uint32_t kRnr = 0xE000ED98u;
constexpr uint32_t kRbar = 0xE000ED9Cu;
constexpr uint32_t kRasr = 0xE000EDA0u;  // RLAR on v8-M
// v7-M alias banks: each pair k accesses region (RNR & ~3) | k
constexpr uint32_t kRbarA1 = 0xE000EDA4u;
constexpr uint32_t kRasrA1 = 0xE000EDA8u;
constexpr uint32_t kRbarA2 = 0xE000EDACu;
constexpr uint32_t kRasrA2 = 0xE000EDB0u;
constexpr uint32_t kRbarA3 = 0xE000EDB4u;
constexpr uint32_t kRasrA3 = 0xE000EDB8u;
constexpr uint32_t kMair0 = 0xE000EDC0u;  // v8-M, ignored by the model
constexpr uint32_t kMair1 = 0xE000EDC4u;
}  // namespace regs

/// Replays RNR/RBAR/RASR(RLAR)/CTRL writes in order and maps the final
/// register state onto an MpuConfig. RBAR's embedded region-number field
/// (v7-M VALID bit) is honored.
inline MpuConfig reconstruct_mpu_config(const std::vector<MpuWrite>& write_log, MpuArch arch) {
  struct RawRegion {
    bool touched = false;
    uint32_t rbar = 0;
    uint32_t rasr = 0;  // RLAR on v8m
  };
  std::array<RawRegion, 16> raw{};
  uint32_t rnr = 0;
  uint32_t ctrl = 0;

  auto region_write = [&](uint32_t alias, bool is_rbar, uint32_t value) {
    uint32_t n = (alias == 0) ? rnr : ((rnr & ~3u) | alias);
    if (is_rbar && arch == MpuArch::v7m && (value & 0x10u)) {  // VALID: switch region
      n = value & 0xFu;
      rnr = n;
    }
    if (n >= raw.size()) return;
    raw[n].touched = true;
    (is_rbar ? raw[n].rbar : raw[n].rasr) = value;
  };

  for (const auto& w : write_log) {
    switch (w.address) {
      case regs::kType: break;  // read-only, stores ignored
      case regs::kCtrl: ctrl = w.value; break;
      case regs::kRnr: rnr = w.value & 0xFFu; break;
      case regs::kRbar: region_write(0, true, w.value); break;
      case regs::kRasr: region_write(0, false, w.value); break;
      case regs::kRbarA1: region_write(1, true, w.value); break;
      case regs::kRasrA1: region_write(1, false, w.value); break;
      case regs::kRbarA2: region_write(2, true, w.value); break;
      case regs::kRasrA2: region_write(2, false, w.value); break;
      case regs::kRbarA3: region_write(3, true, w.value); break;
      case regs::kRasrA3: region_write(3, false, w.value); break;
      case regs::kMair0:
      case regs::kMair1:
        if (arch == MpuArch::v8m) break;
        throw Error(errc::unknown_register, "write to " + hex_u32(w.address));
      default:
        throw Error(errc::unknown_register, "write to " + hex_u32(w.address));
    }
  }

  MpuConfig cfg;
  cfg.arch = arch;
  cfg.enable = ctrl & 1u;
  cfg.privileged_default = (ctrl >> 2) & 1u;
  uint8_t top_touched = 0;
  for (uint8_t n = 0; n < raw.size(); ++n)
    if (raw[n].touched) top_touched = n;
  cfg.max_regions = top_touched >= 8 ? 16 : 8;
  for (uint8_t n = 0; n < raw.size(); ++n) {
    if (!raw[n].touched) continue;
    MpuRegion r;
    r.number = n;
    r.arch = arch;
    if (arch == MpuArch::v7m) {
      uint32_t rasr = raw[n].rasr;
      r.enabled = rasr & 1u;
      uint32_t size_field = (rasr >> 1) & 0x1Fu;
      r.size = size_field >= 31 ? 0xFFFFFFFFu : (2u << size_field);
      r.base = (raw[n].rbar & 0xFFFFFFE0u) & ~(r.size - 1);
      r.subregion_disable = static_cast<uint8_t>((rasr >> 8) & 0xFFu);
      if (r.size < 256) r.subregion_disable = 0;
      r.ap = (rasr >> 24) & 0x7u;
      r.xn = (rasr >> 28) & 1u;
    } else {
      r.base = raw[n].rbar & 0xFFFFFFE0u;
      r.ap = (raw[n].rbar >> 1) & 0x3u;
      r.xn = raw[n].rbar & 1u;
      r.limit = (raw[n].rasr & 0xFFFFFFE0u) | 0x1Fu;
      r.enabled = raw[n].rasr & 1u;
    }
    cfg.regions.push_back(r);
  }
  return cfg;
}

/// Lifts a detector finding's "write_log" array back into replayable writes.
/// Entries whose value could not be resolved statically (null) are dropped.
inline std::vector<MpuWrite> write_log_from_json(const nlohmann::ordered_json& arr) {
  std::vector<MpuWrite> out;
  for (const auto& e : arr) {
    if (e.at("value").is_null()) continue;
    auto addr = parse_u32(e.at("address").get<std::string>());
    auto value = parse_u32(e.at("value").get<std::string>());
    if (!addr || !value) throw Error(errc::parse_error, "malformed write log entry");
    out.push_back({*addr, *value});
  }
  return out;
}

/// Canonical register write sequence reproducing `cfg` through the replay
/// path above.
inline std::vector<MpuWrite> canonical_write_log(const MpuConfig& cfg) {
  std::vector<MpuWrite> log;
  for (const auto& r : cfg.regions) {
    log.push_back({regs::kRnr, r.number});
    if (cfg.arch == MpuArch::v7m) {
      log.push_back({regs::kRbar, r.base});
      uint32_t size_field = 31;
      if (r.size != 0xFFFFFFFFu) {
        size_field = 0;
        while ((2u << size_field) < r.size) ++size_field;
      }
      uint32_t rasr = (r.enabled ? 1u : 0u) | (size_field << 1) |
                      (static_cast<uint32_t>(r.subregion_disable) << 8) |
                      (static_cast<uint32_t>(r.ap) << 24) | (r.xn ? 1u << 28 : 0u);
      log.push_back({regs::kRasr, rasr});
    } else {
      log.push_back({regs::kRbar, r.base | (static_cast<uint32_t>(r.ap) << 1) | (r.xn ? 1u : 0u)});
      log.push_back({regs::kRasr, (r.limit & 0xFFFFFFE0u) | (r.enabled ? 1u : 0u)});
    }
  }
  log.push_back({regs::kCtrl, (cfg.enable ? 1u : 0u) | (cfg.privileged_default ? 4u : 0u)});
  return log;
}

// ---------------------------------------------------------------------------
// configuration audit

enum class IssueKind : uint8_t {
  MpuDisabled,
  ExecutableSram,
  WritableAndExecutable,
  NoUnprivilegedRestriction,
};

inline const char* issue_name(IssueKind k) {
  switch (k) {
    case IssueKind::MpuDisabled: return "MpuDisabled";
    case IssueKind::ExecutableSram: return "ExecutableSram";
    case IssueKind::WritableAndExecutable: return "WritableAndExecutable";
    case IssueKind::NoUnprivilegedRestriction: return "NoUnprivilegedRestriction";
  }
  return "?";
}

struct Issue {
  IssueKind kind;
  uint32_t example_addr = 0;
};

namespace detail {

inline std::vector<uint32_t> audit_probes(const MpuConfig& cfg, const MemoryMap& map) {
  std::vector<uint32_t> probes;
  for (const auto& r : map.regions) {
    probes.push_back(r.start);
    probes.push_back(r.start + (r.end - r.start) / 2);
    probes.push_back(r.end);
  }
  for (const auto& r : cfg.regions) {
    probes.push_back(r.base);
    if (r.base) probes.push_back(r.base - 1);
    uint64_t last = r.end_exclusive() - 1;
    probes.push_back(static_cast<uint32_t>(last));
    if (last < 0xFFFFFFFFull) probes.push_back(static_cast<uint32_t>(last + 1));
    if (r.arch == MpuArch::v7m && r.size >= 256)
      for (uint32_t s = 0; s < 8; ++s) probes.push_back(r.base + s * (r.size / 8));
  }
  std::sort(probes.begin(), probes.end());
  probes.erase(std::unique(probes.begin(), probes.end()), probes.end());
  return probes;
}

}  // namespace detail

/// Probes region boundaries and representative addresses for the weaknesses
/// a missing or permissive configuration introduces.
inline std::vector<Issue> audit_mpu_config(const MpuConfig& cfg, const MemoryMap& map) {
  std::vector<Issue> issues;
  if (!cfg.enable) issues.push_back({IssueKind::MpuDisabled, 0});

  auto probes = detail::audit_probes(cfg, map);
  std::optional<uint32_t> exec_sram, wx, restriction;
  bool any_restriction = false;
  for (uint32_t a : probes) {
    for (Privilege pr : {Privilege::Privileged, Privilege::Unprivileged}) {
      bool x = eval_mpu_access(cfg, map, a, pr, Access::Execute);
      bool w = eval_mpu_access(cfg, map, a, pr, Access::Write);
      if (x && image::is_ram_class(image::classify_address(map, a)) && !exec_sram) exec_sram = a;
      if (x && w && !wx) wx = a;
    }
    for (Access ac : {Access::Read, Access::Write, Access::Execute}) {
      bool p = eval_mpu_access(cfg, map, a, Privilege::Privileged, ac);
      bool u = eval_mpu_access(cfg, map, a, Privilege::Unprivileged, ac);
      if (p != u) {
        any_restriction = true;
        restriction = a;
      }
    }
  }
  if (exec_sram) issues.push_back({IssueKind::ExecutableSram, *exec_sram});
  if (wx) issues.push_back({IssueKind::WritableAndExecutable, *wx});
  if (!any_restriction) issues.push_back({IssueKind::NoUnprivilegedRestriction, 0});
  return issues;
}

// ---------------------------------------------------------------------------
// SAU/IDAU attribution

enum class Attribution : uint8_t { NonSecure = 0, Nsc = 1, Secure = 2 };

inline const char* attribution_name(Attribution a) {
  switch (a) {
    case Attribution::NonSecure: return "non-secure";
    case Attribution::Nsc: return "nsc";
    case Attribution::Secure: return "secure";
  }
  return "?";
}

struct AttrRegion {
  uint32_t start = 0;
  uint32_t end = 0;  // inclusive
  Attribution attr = Attribution::NonSecure;
};

struct AttributionConfig {
  std::vector<AttrRegion> idau_regions;
  std::vector<AttrRegion> sau_regions;  // at most 8
  bool sau_enabled = false;
};

inline void validate_attribution(const AttributionConfig& cfg) {
  if (cfg.sau_regions.size() > 8)
    throw Error(errc::invalid_config, "SAU supports at most 8 regions");
  auto check = [](const std::vector<AttrRegion>& rs, const char* unit) {
    for (std::size_t i = 0; i < rs.size(); ++i) {
      if (rs[i].end < rs[i].start) throw Error(errc::invalid_config, "region end below start");
      for (std::size_t j = i + 1; j < rs.size(); ++j)
        if (rs[i].start <= rs[j].end && rs[j].start <= rs[i].end)
          throw Error(errc::invalid_config, std::string(unit) + " regions overlap");
    }
  };
  check(cfg.idau_regions, "IDAU");
  check(cfg.sau_regions, "SAU");
}

namespace detail {

inline std::optional<Attribution> region_attr(const std::vector<AttrRegion>& rs, uint32_t addr) {
  for (const auto& r : rs)
    if (addr >= r.start && addr <= r.end) return r.attr;
  return std::nullopt;
}

}  // namespace detail

/// Combination rule: the higher security level wins (non-secure < NSC <
/// secure). An unmatched IDAU contributes non-secure; the SAU contributes
/// secure everywhere while disabled and secure for unmatched addresses while
/// enabled (the reset-safe default).
inline Attribution resolve_attribution(const AttributionConfig& cfg, uint32_t addr) {
  Attribution idau = detail::region_attr(cfg.idau_regions, addr).value_or(Attribution::NonSecure);
  Attribution sau = cfg.sau_enabled
                        ? detail::region_attr(cfg.sau_regions, addr).value_or(Attribution::Secure)
                        : Attribution::Secure;
  return std::max(idau, sau);
}

// ---------------------------------------------------------------------------
// security context and transitions

enum class ExecMode : uint8_t { Thread, Handler };
enum class SecurityState : uint8_t { Secure, NonSecure };
enum class StackSel : uint8_t { Msp, Psp };

struct SecurityContext {
  ExecMode mode = ExecMode::Thread;
  Privilege priv = Privilege::Privileged;
  SecurityState state = SecurityState::NonSecure;
  StackSel spsel = StackSel::Msp;

  bool operator==(const SecurityContext&) const = default;
};

inline bool context_invariant(const SecurityContext& c) {
  if (c.mode == ExecMode::Handler && c.priv != Privilege::Privileged) return false;
  if (c.mode == ExecMode::Handler && c.spsel != StackSel::Msp) return false;
  return true;
}

struct EvSvc {};
struct EvExceptionEntry {};
struct EvExceptionReturn {
  ExecMode to_mode = ExecMode::Thread;
  StackSel to_spsel = StackSel::Msp;
  Privilege to_priv = Privilege::Privileged;
};
struct EvWriteControlNPriv {
  bool npriv = false;  // requested nPRIV bit
};
struct EvSgEntry {};
struct EvBxnsExit {};

using SecurityEvent =
    std::variant<EvSvc, EvExceptionEntry, EvExceptionReturn, EvWriteControlNPriv, EvSgEntry, EvBxnsExit>;

/// Event-level transition machine. SVC and exception entry force handler
/// mode (privileged, MSP); exception return restores a thread or handler
/// target; unprivileged attempts to clear nPRIV are silent no-ops; SG enters
/// the secure state (no-op when already secure) and BXNS leaves it (illegal
/// from the non-secure state).
inline SecurityContext step_security_context(const SecurityContext& ctx, const SecurityEvent& ev) {
  if (!context_invariant(ctx)) throw Error(errc::illegal_transition, "malformed starting context");
  SecurityContext out = ctx;
  if (std::holds_alternative<EvSvc>(ev) || std::holds_alternative<EvExceptionEntry>(ev)) {
    out.mode = ExecMode::Handler;
    out.priv = Privilege::Privileged;
    out.spsel = StackSel::Msp;
  } else if (const auto* ret = std::get_if<EvExceptionReturn>(&ev)) {
    if (ctx.mode != ExecMode::Handler)
      throw Error(errc::illegal_transition, "exception return outside handler mode");
    if (ret->to_mode == ExecMode::Handler) {
      if (ret->to_spsel != StackSel::Msp || ret->to_priv != Privilege::Privileged)
        throw Error(errc::illegal_transition, "handler target must be privileged on MSP");
      out = ctx;
    } else {
      out.mode = ExecMode::Thread;
      out.spsel = ret->to_spsel;
      out.priv = ret->to_priv;
    }
  } else if (const auto* wc = std::get_if<EvWriteControlNPriv>(&ev)) {
    if (ctx.priv == Privilege::Unprivileged) return ctx;  // silent no-op, no self-escalation
    if (ctx.mode == ExecMode::Thread)
      out.priv = wc->npriv ? Privilege::Unprivileged : Privilege::Privileged;
    // handler mode: effective privilege unchanged
  } else if (std::holds_alternative<EvSgEntry>(ev)) {
    out.state = SecurityState::Secure;  // no-op when already secure
  } else if (std::holds_alternative<EvBxnsExit>(ev)) {
    if (ctx.state != SecurityState::Secure)
      throw Error(errc::illegal_transition, "BXNS from the non-secure state");
    out.state = SecurityState::NonSecure;
  }
  if (!context_invariant(out)) throw Error(errc::illegal_transition, "transition breaks invariants");
  return out;
}

// ---------------------------------------------------------------------------
// TT-style queries

struct TtResult {
  bool accessible = true;  // false when masked for a non-secure caller
  std::optional<Attribution> attribution;
  bool read_priv = false;
  bool write_priv = false;
  bool read_unpriv = false;
  bool write_unpriv = false;
};

/// Permissions come from the MPU bank of the querying state; non-secure
/// callers never learn anything about secure-side addresses.
inline TtResult tt_query(const SecurityContext& ctx, uint32_t addr, const MpuConfig& mpu_secure,
                         const MpuConfig& mpu_nonsecure, const AttributionConfig& attr,
                         const MemoryMap& map) {
  validate_attribution(attr);
  TtResult r;
  Attribution a = resolve_attribution(attr, addr);
  if (ctx.state == SecurityState::NonSecure && a != Attribution::NonSecure) {
    r.accessible = false;
    return r;
  }
  r.attribution = a;
  const MpuConfig& bank = ctx.state == SecurityState::Secure ? mpu_secure : mpu_nonsecure;
  validate_config(bank);
  r.read_priv = eval_mpu_access(bank, map, addr, Privilege::Privileged, Access::Read);
  r.write_priv = eval_mpu_access(bank, map, addr, Privilege::Privileged, Access::Write);
  r.read_unpriv = eval_mpu_access(bank, map, addr, Privilege::Unprivileged, Access::Read);
  r.write_unpriv = eval_mpu_access(bank, map, addr, Privilege::Unprivileged, Access::Write);
  return r;
}

}  // namespace cmscope::secmodel
