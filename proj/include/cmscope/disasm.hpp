// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <map>
#include <set>
#include <span>
#include <vector>

#include "cmscope/error.hpp"
#include "cmscope/ingest.hpp"

namespace cmscope::disasm {

using ingest::FirmwareImage;

// SYSm selectors for MSR/MRS (special). Non-secure aliases carry bit 7.
namespace sysm {
constexpr uint8_t kMsp = 0x08;
constexpr uint8_t kPsp = 0x09;
constexpr uint8_t kMsplim = 0x0A;
constexpr uint8_t kPsplim = 0x0B;
constexpr uint8_t kControl = 0x14;
constexpr uint8_t kMspNs = 0x88;
constexpr uint8_t kPspNs = 0x89;
constexpr uint8_t kMsplimNs = 0x8A;
constexpr uint8_t kPsplimNs = 0x8B;
constexpr uint8_t kControlNs = 0x94;

inline bool is_control(uint8_t s) { return s == kControl || s == kControlNs; }
inline bool is_psp(uint8_t s) { return s == kPsp || s == kPspNs; }
inline bool is_stack_limit(uint8_t s) {
  return s == kMsplim || s == kPsplim || s == kMsplimNs || s == kPsplimNs;
}
}  // namespace sysm

enum class InstrKind : uint8_t {
  Unknown,
  MsrSpecial,  // imm = SYSm, rn = source register
  MrsSpecial,  // imm = SYSm, rd
  Svc,         // imm = imm8
  Isb,
  Dsb,
  Dmb,
  Cps,
  Bl,     // imm = target address
  Blx,    // rm
  B,      // imm = target address
  Bcond,  // imm = target address, cond
  Bx,     // rm
  Push,   // reglist (full 16-bit mask)
  Pop,    // reglist
  LdrLiteral,  // rd, imm = pool address
  MovImm,      // rd, imm
  Movt,        // rd, imm = imm16
  OrrImm,      // rd, rn, imm
  StrImm,      // rd = rt, rn, imm = byte offset
  LdrImm,      // rd = rt, rn, imm = byte offset
  StrT,        // rd = rt, rn, imm = byte offset
  LdrT,        // rd = rt, rn, imm = byte offset
  Sg,
  Bxns,   // rm
  Blxns,  // rm
  Tt,     // rd, rn, imm = variant (bit1 A, bit0 T)
};

struct Instr {
  uint32_t addr = 0;
  uint8_t width = 2;  // 2 or 4
  InstrKind kind = InstrKind::Unknown;
  uint8_t rd = 0;
  uint8_t rn = 0;
  uint8_t rm = 0;
  uint8_t cond = 0;
  uint32_t imm = 0;
  uint16_t reglist = 0;
  std::array<uint8_t, 4> raw{};
};

constexpr uint16_t kRegLr = 1u << 14;
constexpr uint16_t kRegPc = 1u << 15;

/// 4 bytes iff the first halfword's top five bits are 0b11101/0b11110/0b11111.
inline int instr_width(uint16_t halfword) {
  return (halfword & 0xF800u) >= 0xE800u ? 4 : 2;
}

namespace detail {

inline uint32_t sext(uint32_t x, unsigned bits) {
  uint32_t m = 1u << (bits - 1);
  return (x ^ m) - m;
}

// Modified-immediate expansion shared by MOV (T2) and ORR (T1).
inline uint32_t thumb_expand_imm12(uint32_t imm12) {
  if ((imm12 & 0xC00u) == 0) {
    uint32_t imm8 = imm12 & 0xFFu;
    switch ((imm12 >> 8) & 3u) {
      case 0: return imm8;
      case 1: return (imm8 << 16) | imm8;
      case 2: return (imm8 << 24) | (imm8 << 8);
      case 3: return (imm8 << 24) | (imm8 << 16) | (imm8 << 8) | imm8;
    }
  }
  uint32_t x = 0x80u | (imm12 & 0x7Fu);
  unsigned n = (imm12 >> 7) & 0x1Fu;
  return (x >> n) | (x << (32 - n));
}

inline Instr decode16(uint32_t addr, uint16_t hw) {
  Instr i;
  i.addr = addr;
  i.width = 2;
  i.raw = {static_cast<uint8_t>(hw & 0xFF), static_cast<uint8_t>(hw >> 8), 0, 0};
  uint32_t pc = addr + 4;

  if ((hw & 0xFF00u) == 0xDF00u) {
    i.kind = InstrKind::Svc;
    i.imm = hw & 0xFFu;
  } else if ((hw & 0xF000u) == 0xD000u) {
    uint8_t cond = (hw >> 8) & 0xFu;
    if (cond < 0xE) {
      i.kind = InstrKind::Bcond;
      i.cond = cond;
      i.imm = pc + (sext(hw & 0xFFu, 8) << 1);
    }  // cond == 0xE is UDF: Unknown
  } else if ((hw & 0xF800u) == 0xE000u) {
    i.kind = InstrKind::B;
    i.imm = pc + (sext(hw & 0x7FFu, 11) << 1);
  } else if ((hw & 0xFF87u) == 0x4700u) {
    i.kind = InstrKind::Bx;
    i.rm = (hw >> 3) & 0xFu;
  } else if ((hw & 0xFF87u) == 0x4780u) {
    i.kind = InstrKind::Blx;
    i.rm = (hw >> 3) & 0xFu;
  } else if ((hw & 0xFF87u) == 0x4704u) {
    i.kind = InstrKind::Bxns;
    i.rm = (hw >> 3) & 0xFu;
  } else if ((hw & 0xFF87u) == 0x4784u) {
    i.kind = InstrKind::Blxns;
    i.rm = (hw >> 3) & 0xFu;
  } else if ((hw & 0xFE00u) == 0xB400u) {
    i.kind = InstrKind::Push;
    i.reglist = static_cast<uint16_t>((hw & 0xFFu) | ((hw & 0x100u) ? kRegLr : 0));
  } else if ((hw & 0xFE00u) == 0xBC00u) {
    i.kind = InstrKind::Pop;
    i.reglist = static_cast<uint16_t>((hw & 0xFFu) | ((hw & 0x100u) ? kRegPc : 0));
  } else if ((hw & 0xF800u) == 0x4800u) {
    i.kind = InstrKind::LdrLiteral;
    i.rd = (hw >> 8) & 0x7u;
    i.imm = (pc & ~3u) + ((hw & 0xFFu) << 2);
  } else if ((hw & 0xF800u) == 0x2000u) {
    i.kind = InstrKind::MovImm;
    i.rd = (hw >> 8) & 0x7u;
    i.imm = hw & 0xFFu;
  } else if ((hw & 0xF800u) == 0x6000u) {
    i.kind = InstrKind::StrImm;
    i.rd = hw & 0x7u;
    i.rn = (hw >> 3) & 0x7u;
    i.imm = ((hw >> 6) & 0x1Fu) << 2;
  } else if ((hw & 0xF800u) == 0x6800u) {
    i.kind = InstrKind::LdrImm;
    i.rd = hw & 0x7u;
    i.rn = (hw >> 3) & 0x7u;
    i.imm = ((hw >> 6) & 0x1Fu) << 2;
  } else if ((hw & 0xF800u) == 0x9000u) {
    i.kind = InstrKind::StrImm;
    i.rd = (hw >> 8) & 0x7u;
    i.rn = 13;
    i.imm = (hw & 0xFFu) << 2;
  } else if ((hw & 0xF800u) == 0x9800u) {
    i.kind = InstrKind::LdrImm;
    i.rd = (hw >> 8) & 0x7u;
    i.rn = 13;
    i.imm = (hw & 0xFFu) << 2;
  } else if ((hw & 0xFFE8u) == 0xB660u) {
    i.kind = InstrKind::Cps;
    i.imm = hw & 0x17u;  // im + AIF flags
  }
  return i;
}

inline Instr decode32(uint32_t addr, uint16_t hw1, uint16_t hw2) {
  Instr i;
  i.addr = addr;
  i.width = 4;
  i.raw = {static_cast<uint8_t>(hw1 & 0xFF), static_cast<uint8_t>(hw1 >> 8),
           static_cast<uint8_t>(hw2 & 0xFF), static_cast<uint8_t>(hw2 >> 8)};
  uint32_t pc = addr + 4;

  if (hw1 == 0xF3BFu && (hw2 & 0xFF00u) == 0x8F00u) {
    switch ((hw2 >> 4) & 0xFu) {
      case 0x4: i.kind = InstrKind::Dsb; break;
      case 0x5: i.kind = InstrKind::Dmb; break;
      case 0x6: i.kind = InstrKind::Isb; break;
      default: break;  // other hints: Unknown
    }
    i.imm = hw2 & 0xFu;
    return i;
  }
  if ((hw1 & 0xFFF0u) == 0xF380u && (hw2 & 0xF300u) == 0x8000u) {
    i.kind = InstrKind::MsrSpecial;
    i.rn = hw1 & 0xFu;
    i.imm = hw2 & 0xFFu;
    return i;
  }
  if (hw1 == 0xF3EFu && (hw2 & 0xF000u) == 0x8000u) {
    i.kind = InstrKind::MrsSpecial;
    i.rd = (hw2 >> 8) & 0xFu;
    i.imm = hw2 & 0xFFu;
    return i;
  }
  if (hw1 == 0xE97Fu && hw2 == 0xE97Fu) {
    i.kind = InstrKind::Sg;
    return i;
  }
  if ((hw1 & 0xFFF0u) == 0xE840u && (hw2 & 0xF03Fu) == 0xF000u) {
    i.kind = InstrKind::Tt;
    i.rn = hw1 & 0xFu;
    i.rd = (hw2 >> 8) & 0xFu;
    i.imm = ((hw2 >> 6) & 1u) | (((hw2 >> 7) & 1u) << 1);  // T, A
    return i;
  }
  if (hw1 == 0xE92Du && !(hw2 & 0xA000u)) {
    i.kind = InstrKind::Push;
    i.reglist = hw2 & 0x5FFFu;
    return i;
  }
  if (hw1 == 0xE8BDu && !(hw2 & 0x2000u)) {
    i.kind = InstrKind::Pop;
    i.reglist = hw2 & 0xDFFFu;
    return i;
  }
  if ((hw1 & 0xFBF0u) == 0xF240u && !(hw2 & 0x8000u)) {  // MOVW
    i.kind = InstrKind::MovImm;
    i.rd = (hw2 >> 8) & 0xFu;
    i.imm = ((hw1 & 0xFu) << 12) | (((hw1 >> 10) & 1u) << 11) | (((hw2 >> 12) & 7u) << 8) |
            (hw2 & 0xFFu);
    return i;
  }
  if ((hw1 & 0xFBF0u) == 0xF2C0u && !(hw2 & 0x8000u)) {  // MOVT
    i.kind = InstrKind::Movt;
    i.rd = (hw2 >> 8) & 0xFu;
    i.imm = ((hw1 & 0xFu) << 12) | (((hw1 >> 10) & 1u) << 11) | (((hw2 >> 12) & 7u) << 8) |
            (hw2 & 0xFFu);
    return i;
  }
  if ((hw1 & 0xFBEFu) == 0xF04Fu && !(hw2 & 0x8000u)) {  // MOV (modified imm)
    i.kind = InstrKind::MovImm;
    i.rd = (hw2 >> 8) & 0xFu;
    i.imm = thumb_expand_imm12((((hw1 >> 10) & 1u) << 11) | (((hw2 >> 12) & 7u) << 8) | (hw2 & 0xFFu));
    return i;
  }
  if ((hw1 & 0xFBE0u) == 0xF040u && (hw1 & 0xFu) != 0xFu && !(hw2 & 0x8000u)) {  // ORR (imm)
    i.kind = InstrKind::OrrImm;
    i.rd = (hw2 >> 8) & 0xFu;
    i.rn = hw1 & 0xFu;
    i.imm = thumb_expand_imm12((((hw1 >> 10) & 1u) << 11) | (((hw2 >> 12) & 7u) << 8) | (hw2 & 0xFFu));
    return i;
  }
  if (hw1 == 0xF85Fu || hw1 == 0xF8DFu) {  // LDR (literal, T2)
    i.kind = InstrKind::LdrLiteral;
    i.rd = (hw2 >> 12) & 0xFu;
    uint32_t align = pc & ~3u;
    i.imm = (hw1 == 0xF8DFu) ? align + (hw2 & 0xFFFu) : align - (hw2 & 0xFFFu);
    return i;
  }
  if ((hw1 & 0xFFF0u) == 0xF8D0u) {  // LDR (imm, T3); rn == 15 handled above
    i.kind = InstrKind::LdrImm;
    i.rd = (hw2 >> 12) & 0xFu;
    i.rn = hw1 & 0xFu;
    i.imm = hw2 & 0xFFFu;
    return i;
  }
  if ((hw1 & 0xFFF0u) == 0xF8C0u && (hw1 & 0xFu) != 0xFu) {  // STR (imm, T3)
    i.kind = InstrKind::StrImm;
    i.rd = (hw2 >> 12) & 0xFu;
    i.rn = hw1 & 0xFu;
    i.imm = hw2 & 0xFFFu;
    return i;
  }
  if ((hw1 & 0xFFF0u) == 0xF850u && (hw1 & 0xFu) != 0xFu && (hw2 & 0x0F00u) == 0x0E00u) {
    i.kind = InstrKind::LdrT;
    i.rd = (hw2 >> 12) & 0xFu;
    i.rn = hw1 & 0xFu;
    i.imm = hw2 & 0xFFu;
    return i;
  }
  if ((hw1 & 0xFFF0u) == 0xF840u && (hw1 & 0xFu) != 0xFu && (hw2 & 0x0F00u) == 0x0E00u) {
    i.kind = InstrKind::StrT;
    i.rd = (hw2 >> 12) & 0xFu;
    i.rn = hw1 & 0xFu;
    i.imm = hw2 & 0xFFu;
    return i;
  }
  if ((hw1 & 0xF800u) == 0xF000u && (hw2 & 0x8000u) == 0x8000u) {  // branch space
    uint32_t s = (hw1 >> 10) & 1u;
    uint32_t j1 = (hw2 >> 13) & 1u;
    uint32_t j2 = (hw2 >> 11) & 1u;
    uint32_t imm11 = hw2 & 0x7FFu;
    if ((hw2 & 0x5000u) == 0x5000u || (hw2 & 0x5000u) == 0x1000u) {  // BL (11x1) / B T4 (10x1)
      uint32_t i1 = (~(j1 ^ s)) & 1u;
      uint32_t i2 = (~(j2 ^ s)) & 1u;
      uint32_t imm10 = hw1 & 0x3FFu;
      uint32_t off = (s << 24) | (i1 << 23) | (i2 << 22) | (imm10 << 12) | (imm11 << 1);
      uint32_t target = pc + sext(off, 25);
      i.kind = (hw2 & 0x4000u) ? InstrKind::Bl : InstrKind::B;
      i.imm = target;
      return i;
    }
    // B T3 (conditional)
    uint8_t cond = (hw1 >> 6) & 0xFu;
    if ((hw2 & 0x5000u) == 0x0000u && cond < 0xE) {
      uint32_t imm6 = hw1 & 0x3Fu;
      uint32_t off = (s << 20) | (j2 << 19) | (j1 << 18) | (imm6 << 12) | (imm11 << 1);
      i.kind = InstrKind::Bcond;
      i.cond = cond;
      i.imm = pc + sext(off, 21);
      return i;
    }
  }
  return i;  // Unknown, width 4
}

}  // namespace detail

/// Total decode over a byte span loaded at `base`. Out-of-range or unaligned
/// addresses throw; any byte pattern otherwise yields an Instr (possibly
/// Unknown). A 32-bit encoding truncated by the image end comes back as a
/// 2-byte Unknown so no instruction extends past the end.
inline Instr decode_one(std::span<const uint8_t> bytes, uint32_t base, uint32_t addr) {
  uint64_t off = static_cast<uint64_t>(addr) - base;
  if (addr < base || off + 2 > bytes.size())
    throw Error(errc::out_of_bounds, "address " + hex_u32(addr) + " outside image");
  if (addr & 1) throw Error(errc::out_of_bounds, "unaligned address " + hex_u32(addr));
  uint16_t hw1 = read_le16(bytes, static_cast<std::size_t>(off));
  if (instr_width(hw1) == 2) return detail::decode16(addr, hw1);
  if (off + 4 > bytes.size()) {
    Instr i;
    i.addr = addr;
    i.width = 2;
    i.raw = {static_cast<uint8_t>(hw1 & 0xFF), static_cast<uint8_t>(hw1 >> 8), 0, 0};
    return i;
  }
  return detail::decode32(addr, hw1, read_le16(bytes, static_cast<std::size_t>(off + 2)));
}

inline Instr decode_one(const FirmwareImage& img, uint32_t addr) {
  return decode_one(img.bytes, img.base.value(), addr);
}

inline bool is_terminator(const Instr& i) {
  switch (i.kind) {
    case InstrKind::B:
    case InstrKind::Bx:
    case InstrKind::Blx:
    case InstrKind::Bxns:
    case InstrKind::Blxns:
    case InstrKind::Unknown:
      return true;
    case InstrKind::Pop:
      return (i.reglist & kRegPc) != 0;
    default:
      return false;
  }
}

struct InstrIndex {
  std::map<uint32_t, Instr> instrs;
  std::set<uint32_t> entry_points;
  std::set<uint32_t> data_addrs;                        // literal pool starts
  std::map<uint32_t, uint32_t> pool_values;             // pool addr -> word
  std::map<uint32_t, std::vector<uint32_t>> pool_refs;  // pool addr -> loads
  bool frontier_exhausted = false;

  const Instr* at(uint32_t addr) const {
    auto it = instrs.find(addr);
    return it == instrs.end() ? nullptr : &it->second;
  }
};

namespace detail {

inline bool overlaps_existing(const std::map<uint32_t, Instr>& m, uint32_t addr, uint8_t width) {
  auto next = m.lower_bound(addr);
  if (next != m.end() && next->first < addr + width && next->first != addr) return true;
  if (next != m.begin()) {
    auto prev = std::prev(next);
    if (prev->first != addr && prev->first + prev->second.width > addr) return true;
  }
  return false;
}

inline bool in_data(const std::set<uint32_t>& data_addrs, uint32_t addr) {
  // data entries are 4-byte pool words
  auto it = data_addrs.upper_bound(addr);
  if (it == data_addrs.begin()) return false;
  return addr - *std::prev(it) < 4;
}

}  // namespace detail

/// Recursive-descent disassembly from the given entry points (Thumb bit
/// already stripped). Literal-pool words are tracked as data and never
/// decoded; pool words holding odd in-image pointers are promoted to new
/// entry points until the frontier is exhausted.
inline InstrIndex disassemble(const FirmwareImage& img, const std::vector<uint32_t>& entries) {
  InstrIndex idx;
  const uint32_t base = img.base.value();
  const uint64_t end = img.end_addr();

  std::deque<uint32_t> work;
  std::set<uint32_t> queued;
  auto enqueue = [&](uint32_t addr) {
    if (addr & 1) return;
    if (addr < base || static_cast<uint64_t>(addr) + 2 > end) return;
    if (queued.insert(addr).second) work.push_back(addr);
  };
  auto add_entry = [&](uint32_t addr) {
    idx.entry_points.insert(addr);
    enqueue(addr);
  };

  std::vector<uint32_t> seeds(entries);
  std::sort(seeds.begin(), seeds.end());
  for (uint32_t e : seeds) add_entry(e & ~1u);

  std::set<uint32_t> pools_scanned;
  for (;;) {
    while (!work.empty()) {
      uint32_t addr = work.front();
      work.pop_front();
      if (idx.instrs.count(addr)) continue;
      if (detail::in_data(idx.data_addrs, addr)) continue;
      Instr ins = decode_one(img, addr);
      if (detail::overlaps_existing(idx.instrs, addr, ins.width)) continue;
      idx.instrs.emplace(addr, ins);
      if (ins.kind == InstrKind::LdrLiteral) {
        uint32_t pool = ins.imm;
        if (pool >= base && static_cast<uint64_t>(pool) + 4 <= end) {
          idx.pool_values[pool] = img.read_u32(pool);
          idx.pool_refs[pool].push_back(addr);
          idx.data_addrs.insert(pool);
        }
      }
      if (ins.kind == InstrKind::Bcond || ins.kind == InstrKind::Bl) enqueue(ins.imm);
      if (ins.kind == InstrKind::B)
        enqueue(ins.imm);
      else if (!is_terminator(ins))
        enqueue(addr + ins.width);
    }
    // Frontier: pool words that look like Thumb code pointers.
    std::vector<uint32_t> fresh;
    for (const auto& [pool, value] : idx.pool_values) {
      if (!pools_scanned.insert(pool).second) continue;
      if ((value & 1u) && value >= base && static_cast<uint64_t>(value & ~1u) + 2 <= end &&
          !detail::in_data(idx.data_addrs, value & ~1u))
        fresh.push_back(value & ~1u);
    }
    if (fresh.empty()) break;
    std::sort(fresh.begin(), fresh.end());
    for (uint32_t f : fresh) add_entry(f);
  }
  idx.frontier_exhausted = true;
  return idx;
}

}  // namespace cmscope::disasm
