// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "cmscope/bytes.hpp"
#include "cmscope/error.hpp"

namespace cmscope::profiles {

struct RtosSignature {
  std::string rtos;
  std::vector<std::string> substrings;
};

struct StackGuardMarker {
  std::string rtos;
  std::vector<std::string> markers;
};

/// Enabled iff (config_word & mask) != disabled_value.
struct ReadbackConfig {
  uint32_t segment_address = 0;
  uint32_t offset = 0;
  uint32_t mask = 0xFFFFFFFFu;
  uint32_t disabled_value = 0xFFFFFFFFu;

  bool enabled(uint32_t word) const { return (word & mask) != disabled_value; }
};

struct VendorProfile {
  std::string id;
  std::set<uint32_t> smpu_mmio_addresses;
  std::optional<ReadbackConfig> readback;
  std::vector<RtosSignature> rtos_signatures;
  std::vector<StackGuardMarker> stack_guard_strings;
};

/// One halfword of a masked code template.
struct PatternWord {
  uint16_t value = 0;
  uint16_t mask = 0;
};

struct CanaryPatternFamily {
  std::string name;
  std::vector<PatternWord> prologue;
  std::vector<PatternWord> epilogue;
};

namespace detail {

inline uint32_t json_u32(const nlohmann::json& j, const char* key) {
  const auto& v = j.at(key);
  if (v.is_number_unsigned()) return v.get<uint32_t>();
  auto parsed = parse_u32(v.get<std::string>());
  if (!parsed) throw Error(errc::parse_error, std::string("bad number for ") + key);
  return *parsed;
}

}  // namespace detail

inline VendorProfile parse_profile(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(errc::parse_error, std::string("profile: ") + e.what());
  }
  VendorProfile p;
  p.id = j.at("id").get<std::string>();
  if (j.contains("smpu_mmio_addresses"))
    for (const auto& a : j["smpu_mmio_addresses"]) {
      auto v = parse_u32(a.get<std::string>());
      if (!v) throw Error(errc::parse_error, "bad sMPU address in profile " + p.id);
      p.smpu_mmio_addresses.insert(*v);
    }
  if (j.contains("readback")) {
    const auto& r = j["readback"];
    ReadbackConfig rb;
    rb.segment_address = detail::json_u32(r, "segment");
    rb.offset = detail::json_u32(r, "offset");
    rb.mask = detail::json_u32(r, "mask");
    rb.disabled_value = detail::json_u32(r, "disabled_value");
    p.readback = rb;
  }
  if (j.contains("rtos_signatures"))
    for (const auto& s : j["rtos_signatures"]) {
      RtosSignature sig;
      sig.rtos = s.at("rtos").get<std::string>();
      for (const auto& sub : s.at("substrings")) sig.substrings.push_back(sub.get<std::string>());
      p.rtos_signatures.push_back(std::move(sig));
    }
  if (j.contains("stack_guard_strings"))
    for (const auto& s : j["stack_guard_strings"]) {
      StackGuardMarker m;
      m.rtos = s.at("rtos").get<std::string>();
      for (const auto& mk : s.at("markers")) m.markers.push_back(mk.get<std::string>());
      p.stack_guard_strings.push_back(std::move(m));
    }
  return p;
}

inline std::vector<CanaryPatternFamily> parse_canary_families(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(errc::parse_error, std::string("canary patterns: ") + e.what());
  }
  std::vector<CanaryPatternFamily> out;
  for (const auto& f : j.at("families")) {
    CanaryPatternFamily fam;
    fam.name = f.at("name").get<std::string>();
    auto read_words = [](const nlohmann::json& arr) {
      std::vector<PatternWord> words;
      for (const auto& w : arr) {
        PatternWord pw;
        pw.value = static_cast<uint16_t>(detail::json_u32(w, "value"));
        pw.mask = static_cast<uint16_t>(detail::json_u32(w, "mask"));
        words.push_back(pw);
      }
      return words;
    };
    fam.prologue = read_words(f.at("prologue"));
    fam.epilogue = read_words(f.at("epilogue"));
    if (fam.prologue.empty() || fam.epilogue.empty())
      throw Error(errc::parse_error, "canary family " + fam.name + " has an empty template");
    out.push_back(std::move(fam));
  }
  return out;
}

// ---------------------------------------------------------------------------
// built-in defaults
//
// The embedded documents mirror data/profiles/*.json and
// data/canary_patterns.json so the library works without a data directory;
// the files remain the override point.

inline const char* builtin_generic_profile_json() {
  return R"json({
  "id": "generic",
  "rtos_signatures": [
    {"rtos": "FreeRTOS", "substrings": ["freertos"]},
    {"rtos": "Mbed OS", "substrings": ["mbed os", "mbed-os", "mbedos"]},
    {"rtos": "Zephyr", "substrings": ["zephyr"]},
    {"rtos": "RIOT", "substrings": ["riot-os", "riot os", "riotbuild"]},
    {"rtos": "Contiki-NG", "substrings": ["contiki"]},
    {"rtos": "NuttX", "substrings": ["nuttx"]},
    {"rtos": "RT-Thread", "substrings": ["rt-thread"]},
    {"rtos": "Tock", "substrings": ["tock-os", "tock os", "tockloader"]},
    {"rtos": "ThreadX", "substrings": ["threadx", "azure rtos"]},
    {"rtos": "CMSIS-RTX", "substrings": ["osrtx", "rtx5", "rtx kernel"]}
  ],
  "stack_guard_strings": [
    {"rtos": "FreeRTOS", "markers": ["vApplicationStackOverflowHook", "stack overflow"]},
    {"rtos": "Mbed OS", "markers": ["Stack overflow", "CMSIS-RTOS error: Stack underflow"]},
    {"rtos": "Zephyr", "markers": ["stack overflow", "STACK_SENTINEL"]},
    {"rtos": "CMSIS-RTX", "markers": ["osRtxErrorStackOverflow", "osRtxKernelErrorNotify"]},
    {"rtos": "RT-Thread", "markers": ["stack overflow"]},
    {"rtos": "ThreadX", "markers": ["stack overflow"]}
  ]
})json";
}

inline const char* builtin_nordic_profile_json() {
  return R"json({
  "id": "nordic",
  "smpu_mmio_addresses": ["0x40000600", "0x40000604", "0x40000608", "0x4000060c", "0x40000610"],
  "readback": {"segment": "0x10001000", "offset": "0x208", "mask": "0xff", "disabled_value": "0xff"},
  "rtos_signatures": [
    {"rtos": "FreeRTOS", "substrings": ["freertos"]},
    {"rtos": "Mbed OS", "substrings": ["mbed os", "mbed-os", "mbedos"]},
    {"rtos": "Zephyr", "substrings": ["zephyr"]},
    {"rtos": "RIOT", "substrings": ["riot-os", "riot os", "riotbuild"]},
    {"rtos": "Contiki-NG", "substrings": ["contiki"]},
    {"rtos": "NuttX", "substrings": ["nuttx"]},
    {"rtos": "RT-Thread", "substrings": ["rt-thread"]},
    {"rtos": "Tock", "substrings": ["tock-os", "tock os", "tockloader"]},
    {"rtos": "ThreadX", "substrings": ["threadx", "azure rtos"]},
    {"rtos": "CMSIS-RTX", "substrings": ["osrtx", "rtx5", "rtx kernel"]}
  ],
  "stack_guard_strings": [
    {"rtos": "FreeRTOS", "markers": ["vApplicationStackOverflowHook", "stack overflow"]},
    {"rtos": "Mbed OS", "markers": ["Stack overflow", "CMSIS-RTOS error: Stack underflow"]},
    {"rtos": "Zephyr", "markers": ["stack overflow", "STACK_SENTINEL"]},
    {"rtos": "CMSIS-RTX", "markers": ["osRtxErrorStackOverflow", "osRtxKernelErrorNotify"]},
    {"rtos": "RT-Thread", "markers": ["stack overflow"]},
    {"rtos": "ThreadX", "markers": ["stack overflow"]}
  ]
})json";
}

inline const char* builtin_canary_patterns_json() {
  // Three template families for guard-load/compare codegen: 16-bit
  // literal-pool form, MOVW/MOVT form, and wide-load form.
  return R"json({
  "families": [
    {
      "name": "gnu-thumb16",
      "prologue": [
        {"value": "0x4800", "mask": "0xf800"},
        {"value": "0x6800", "mask": "0xffc0"},
        {"value": "0x9000", "mask": "0xf800"}
      ],
      "epilogue": [
        {"value": "0x9800", "mask": "0xf800"},
        {"value": "0x4800", "mask": "0xf800"},
        {"value": "0x6800", "mask": "0xffc0"},
        {"value": "0x4280", "mask": "0xffc0"},
        {"value": "0xd100", "mask": "0xff00"}
      ]
    },
    {
      "name": "movw-movt",
      "prologue": [
        {"value": "0xf240", "mask": "0xfbf0"},
        {"value": "0x0000", "mask": "0x8000"},
        {"value": "0xf2c0", "mask": "0xfbf0"},
        {"value": "0x0000", "mask": "0x8000"},
        {"value": "0x6800", "mask": "0xffc0"},
        {"value": "0x9000", "mask": "0xf800"}
      ],
      "epilogue": [
        {"value": "0x9800", "mask": "0xf800"},
        {"value": "0x6800", "mask": "0xffc0"},
        {"value": "0x4280", "mask": "0xffc0"},
        {"value": "0xd100", "mask": "0xff00"}
      ]
    },
    {
      "name": "wide-load",
      "prologue": [
        {"value": "0xf85f", "mask": "0xff7f"},
        {"value": "0x0000", "mask": "0x0000"},
        {"value": "0xf8d0", "mask": "0xfff0"},
        {"value": "0x0000", "mask": "0x0000"},
        {"value": "0xf8cd", "mask": "0xffff"},
        {"value": "0x0000", "mask": "0x0000"}
      ],
      "epilogue": [
        {"value": "0xf8dd", "mask": "0xffff"},
        {"value": "0x0000", "mask": "0x0000"},
        {"value": "0xf85f", "mask": "0xff7f"},
        {"value": "0x0000", "mask": "0x0000"},
        {"value": "0x4280", "mask": "0xffc0"},
        {"value": "0xd100", "mask": "0xff00"}
      ]
    }
  ]
})json";
}

inline VendorProfile builtin_generic_profile() { return parse_profile(builtin_generic_profile_json()); }
inline VendorProfile builtin_nordic_profile() { return parse_profile(builtin_nordic_profile_json()); }

inline std::vector<CanaryPatternFamily> default_canary_families() {
  return parse_canary_families(builtin_canary_patterns_json());
}

inline std::map<std::string, VendorProfile> builtin_profiles() {
  std::map<std::string, VendorProfile> out;
  VendorProfile g = builtin_generic_profile();
  VendorProfile n = builtin_nordic_profile();
  out[g.id] = std::move(g);
  out[n.id] = std::move(n);
  return out;
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(errc::io_error, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

/// Loads every *.json profile in `dir` over the builtin set.
inline std::map<std::string, VendorProfile> load_profiles_dir(const std::filesystem::path& dir,
                                                              bool include_builtin = true) {
  std::map<std::string, VendorProfile> out;
  if (include_builtin) out = builtin_profiles();
  if (!std::filesystem::is_directory(dir))
    throw Error(errc::io_error, "profile directory " + dir.string() + " not found");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    VendorProfile p = parse_profile(read_text_file(f));
    out[p.id] = std::move(p);
  }
  return out;
}

inline std::vector<CanaryPatternFamily> load_canary_families(const std::filesystem::path& file) {
  return parse_canary_families(read_text_file(file));
}

}  // namespace cmscope::profiles
