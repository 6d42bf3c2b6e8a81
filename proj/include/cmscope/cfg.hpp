// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cmscope/disasm.hpp"
#include "cmscope/ingest.hpp"

namespace cmscope::cfg {

using disasm::Instr;
using disasm::InstrIndex;
using disasm::InstrKind;
using ingest::FirmwareImage;

struct Function {
  uint32_t entry = 0;
  uint32_t body_start = 0;
  uint32_t body_end = 0;  // exclusive

  bool contains(uint32_t addr) const { return addr >= body_start && addr < body_end; }
};

struct FunctionSet {
  std::vector<Function> functions;  // sorted by entry

  const Function* containing(uint32_t addr) const {
    for (const auto& f : functions)
      if (f.contains(addr)) return &f;
    return nullptr;
  }
  const Function* at_entry(uint32_t entry) const {
    auto it = std::lower_bound(functions.begin(), functions.end(), entry,
                               [](const Function& f, uint32_t e) { return f.entry < e; });
    return (it != functions.end() && it->entry == entry) ? &*it : nullptr;
  }
};

/// Entries are the disassembly entry points, BL targets and push-with-LR
/// prologues; a body runs forward while decoding stays contiguous and stops
/// after a terminating instruction or at the next entry.
inline FunctionSet identify_functions(const InstrIndex& idx) {
  std::set<uint32_t> entries(idx.entry_points.begin(), idx.entry_points.end());
  for (const auto& [addr, ins] : idx.instrs) {
    if (ins.kind == InstrKind::Bl && idx.instrs.count(ins.imm)) entries.insert(ins.imm);
    if (ins.kind == InstrKind::Push && (ins.reglist & disasm::kRegLr)) entries.insert(addr);
  }
  for (auto it = entries.begin(); it != entries.end();)
    it = idx.instrs.count(*it) ? std::next(it) : entries.erase(it);

  FunctionSet out;
  for (auto it = entries.begin(); it != entries.end(); ++it) {
    Function f;
    f.entry = f.body_start = *it;
    auto next_entry = std::next(it);
    uint32_t limit = next_entry == entries.end() ? 0xFFFFFFFFu : *next_entry;
    auto cur = idx.instrs.find(*it);
    uint32_t end = *it;
    while (cur != idx.instrs.end() && cur->first == end && cur->first < limit) {
      end = cur->first + cur->second.width;
      if (disasm::is_terminator(cur->second)) break;
      ++cur;
    }
    f.body_end = end;
    out.functions.push_back(f);
  }
  return out;
}

struct CallGraph {
  std::set<uint32_t> nodes;
  std::set<std::pair<uint32_t, uint32_t>> edges;  // (caller entry, callee entry)
  uint32_t root = 0;                              // reset function entry
  std::set<uint32_t> reachable;                   // from root, inclusive
};

/// Edges come from BL sites inside a caller body; B to another entry counts
/// too (RTOS error paths are frequently tail-called).
inline CallGraph build_call_graph(const FunctionSet& funcs, const InstrIndex& idx,
                                  uint32_t reset_entry) {
  CallGraph g;
  g.root = reset_entry;
  for (const auto& f : funcs.functions) g.nodes.insert(f.entry);
  for (const auto& f : funcs.functions) {
    for (auto it = idx.instrs.lower_bound(f.body_start);
         it != idx.instrs.end() && it->first < f.body_end; ++it) {
      const Instr& ins = it->second;
      if ((ins.kind == InstrKind::Bl || ins.kind == InstrKind::B) && g.nodes.count(ins.imm))
        g.edges.emplace(f.entry, ins.imm);
    }
  }
  std::vector<uint32_t> work{reset_entry};
  if (g.nodes.count(reset_entry)) g.reachable.insert(reset_entry);
  while (!work.empty()) {
    uint32_t n = work.back();
    work.pop_back();
    for (auto it = g.edges.lower_bound({n, 0}); it != g.edges.end() && it->first == n; ++it)
      if (g.reachable.insert(it->second).second) work.push_back(it->second);
  }
  return g;
}

inline bool in_call_tree(const CallGraph& g, uint32_t entry) {
  if (g.reachable.count(entry)) return true;
  for (const auto& e : g.edges)
    if (e.second == entry) return true;
  return false;
}

// ---------------------------------------------------------------------------
// strings

struct StringRef {
  uint32_t addr = 0;
  std::string text;
  std::set<uint32_t> xrefs;
};

struct StringTable {
  std::vector<StringRef> strings;
};

constexpr std::size_t kMinStringLen = 4;

namespace detail {

inline void raw_word_xrefs(const FirmwareImage& img, StringTable& table) {
  const uint32_t base = img.base.value();
  std::map<uint32_t, StringRef*> by_addr;
  std::map<uint32_t, StringRef*> by_off;
  for (auto& s : table.strings) {
    by_addr[s.addr] = &s;
    by_off[s.addr - base] = &s;
  }
  for (std::size_t off = 0; off + 4 <= img.size(); off += 4) {
    uint32_t w = read_le32(img.bytes, off);
    if (auto it = by_addr.find(w); it != by_addr.end())
      it->second->xrefs.insert(base + static_cast<uint32_t>(off));
    if (auto it = by_off.find(w); it != by_off.end() && w != 0)
      it->second->xrefs.insert(base + static_cast<uint32_t>(off));
  }
}

}  // namespace detail

/// Maximal runs of >= 4 printable ASCII bytes; xrefs are word-scan matches of
/// the string's absolute address (and its image offset, for position-
/// independent tables).
inline StringTable find_strings(const FirmwareImage& img) {
  StringTable out;
  const uint32_t base = img.base.value_or(0);
  std::size_t run_start = 0, run_len = 0;
  auto flush = [&]() {
    if (run_len >= kMinStringLen) {
      StringRef s;
      s.addr = base + static_cast<uint32_t>(run_start);
      s.text.assign(reinterpret_cast<const char*>(img.bytes.data()) + run_start, run_len);
      out.strings.push_back(std::move(s));
    }
    run_len = 0;
  };
  for (std::size_t i = 0; i < img.size(); ++i) {
    if (is_printable_ascii(img.bytes[i])) {
      if (run_len == 0) run_start = i;
      ++run_len;
    } else {
      flush();
    }
  }
  flush();
  if (img.base) detail::raw_word_xrefs(img, out);
  return out;
}

// ---------------------------------------------------------------------------
// intra-block constant propagation

namespace detail {

inline std::set<uint32_t> block_leaders(const InstrIndex& idx) {
  std::set<uint32_t> leaders(idx.entry_points.begin(), idx.entry_points.end());
  for (const auto& [addr, ins] : idx.instrs) {
    switch (ins.kind) {
      case InstrKind::B:
      case InstrKind::Bcond:
      case InstrKind::Bl:
        leaders.insert(ins.imm & ~1u);
        break;
      default:
        break;
    }
  }
  return leaders;
}

inline bool defines_reg(const Instr& ins, uint8_t reg) {
  switch (ins.kind) {
    case InstrKind::MovImm:
    case InstrKind::Movt:
    case InstrKind::OrrImm:
    case InstrKind::LdrLiteral:
    case InstrKind::LdrImm:
    case InstrKind::LdrT:
    case InstrKind::MrsSpecial:
    case InstrKind::Tt:
      return ins.rd == reg;
    case InstrKind::Pop:
      return (ins.reglist >> reg) & 1;
    default:
      return false;
  }
}

// Kinds whose effect on registers we cannot see (calls, service calls,
// undecoded bytes): any of them ends the scan.
inline bool clobbers_all(const Instr& ins) {
  switch (ins.kind) {
    case InstrKind::Unknown:
    case InstrKind::Svc:
    case InstrKind::Bl:
    case InstrKind::Blx:
    case InstrKind::Blxns:
      return true;
    default:
      return false;
  }
}

struct ConstWalk {
  const InstrIndex& idx;
  const std::set<uint32_t>& leaders;
  int budget;

  std::optional<Instr> find_def(uint32_t use_addr, uint8_t reg) {
    auto cur = idx.instrs.find(use_addr);
    if (cur == idx.instrs.end()) return std::nullopt;
    uint32_t pos = use_addr;
    while (budget-- > 0) {
      // A leader has predecessors we cannot see; defs before it are not
      // guaranteed to execute.
      if (leaders.count(pos)) return std::nullopt;
      if (cur == idx.instrs.begin()) return std::nullopt;
      auto prev = std::prev(cur);
      if (prev->first + prev->second.width != pos) return std::nullopt;  // gap
      if (disasm::is_terminator(prev->second)) return std::nullopt;
      if (defines_reg(prev->second, reg)) return prev->second;
      if (clobbers_all(prev->second)) return std::nullopt;
      cur = prev;
      pos = prev->first;
    }
    return std::nullopt;
  }

  std::optional<uint32_t> resolve(uint32_t use_addr, uint8_t reg) {
    auto def = find_def(use_addr, reg);
    if (!def) return std::nullopt;
    switch (def->kind) {
      case InstrKind::MovImm:
        return def->imm;
      case InstrKind::Movt: {
        auto low = resolve(def->addr, reg);
        if (!low) return std::nullopt;
        return (def->imm << 16) | (*low & 0xFFFFu);
      }
      case InstrKind::OrrImm: {
        auto v = resolve(def->addr, def->rn);
        if (!v) return std::nullopt;
        return *v | def->imm;
      }
      case InstrKind::LdrLiteral: {
        auto pv = idx.pool_values.find(def->imm);
        if (pv == idx.pool_values.end()) return std::nullopt;
        return pv->second;
      }
      default:
        return std::nullopt;  // def outside the constant subset
    }
  }
};

}  // namespace detail

/// Reusable constant-propagation context: computes the block-leader set once
/// per index so repeated queries stay cheap on large images.
class ConstPropagator {
 public:
  explicit ConstPropagator(const InstrIndex& idx)
      : idx_(idx), leaders_(detail::block_leaders(idx)) {}

  std::optional<Instr> nearest_def(uint32_t use_addr, uint8_t reg, int budget = 16) const {
    detail::ConstWalk w{idx_, leaders_, budget};
    return w.find_def(use_addr, reg);
  }
  std::optional<uint32_t> value_at(uint32_t instr_addr, uint8_t reg) const {
    detail::ConstWalk w{idx_, leaders_, 16};
    return w.resolve(instr_addr, reg);
  }

 private:
  const InstrIndex& idx_;
  std::set<uint32_t> leaders_;
};

/// Nearest in-block definition of `reg` before `use_addr` within the scan
/// budget. The walk stops at block leaders, gaps, terminators and opaque
/// instructions.
inline std::optional<Instr> nearest_def(const InstrIndex& idx, uint32_t use_addr, uint8_t reg,
                                        int budget) {
  return ConstPropagator(idx).nearest_def(use_addr, reg, budget);
}

/// Composed constant held by `reg` when the instruction at `instr_addr`
/// executes, or nullopt when any contributing definition is outside the
/// MOV/MOVT/ORR/LDR-literal subset or the block boundary is crossed.
inline std::optional<uint32_t> const_value_at(const InstrIndex& idx, uint32_t instr_addr,
                                              uint8_t reg) {
  return ConstPropagator(idx).value_at(instr_addr, reg);
}

/// Index-aware variant of find_strings: additionally records the addresses of
/// LDR-literal and MOVW/MOVT instructions that materialize a string's address.
inline StringTable find_strings(const FirmwareImage& img, const InstrIndex& idx) {
  StringTable out = find_strings(img);
  const uint32_t base = img.base.value();
  std::map<uint32_t, StringRef*> by_addr;
  for (auto& s : out.strings) by_addr[s.addr] = &s;

  for (const auto& [pool, value] : idx.pool_values) {
    auto it = by_addr.find(value);
    if (it == by_addr.end()) continue;
    auto refs = idx.pool_refs.find(pool);
    if (refs == idx.pool_refs.end()) continue;
    for (uint32_t load : refs->second) it->second->xrefs.insert(load);
  }
  ConstPropagator prop(idx);
  for (const auto& [addr, ins] : idx.instrs) {
    uint32_t composed = 0;
    if (ins.kind == InstrKind::MovImm) {
      composed = ins.imm;
    } else if (ins.kind == InstrKind::Movt) {
      auto low = prop.nearest_def(addr, ins.rd);
      if (!low || low->kind != InstrKind::MovImm) continue;
      composed = (ins.imm << 16) | (low->imm & 0xFFFFu);
    } else {
      continue;
    }
    if (auto it = by_addr.find(composed); it != by_addr.end()) it->second->xrefs.insert(addr);
    if (composed && composed < img.size()) {
      if (auto it = by_addr.find(base + composed); it != by_addr.end())
        it->second->xrefs.insert(addr);
    }
  }
  return out;
}

}  // namespace cmscope::cfg
