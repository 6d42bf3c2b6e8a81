// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "cmscope/detectors.hpp"
#include "cmscope/ingest.hpp"
#include "cmscope/profiles.hpp"
#include "cmscope/report.hpp"
#include "cmscope/secmodel.hpp"

namespace cmscope::cli {

using detectors::FeatureMatrix;
using ingest::CorpusManifest;
using ingest::ManifestEntry;
using profiles::VendorProfile;

constexpr int kExitOk = 0;
constexpr int kExitFatal = 1;
constexpr int kExitPartial = 2;

// ---------------------------------------------------------------------------
// manifest

/// Manifest file: a JSON array, one object per entry:
///   [{"path": "fw.bin", "format": "raw", "profile": "nordic",
///     "device": "d1", "base": "0x8000000"}, ...]
/// Relative paths resolve against the manifest's directory.
inline CorpusManifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(errc::parse_error, std::string("manifest: ") + e.what());
  }
  if (!j.is_array()) throw Error(errc::parse_error, "manifest must be a JSON array");
  CorpusManifest m;
  for (const auto& e : j) {
    ManifestEntry entry;
    std::filesystem::path p = e.at("path").get<std::string>();
    entry.path = (p.is_absolute() ? p : base_dir / p).string();
    if (e.contains("format")) {
      std::string f = e["format"].get<std::string>();
      if (f == "raw")
        entry.format = ingest::SourceFormat::raw;
      else if (f == "intel_hex" || f == "hex")
        entry.format = ingest::SourceFormat::intel_hex;
      else if (f == "srecord" || f == "srec")
        entry.format = ingest::SourceFormat::srecord;
      else
        throw Error(errc::parse_error, "unknown format hint " + f);
    }
    if (e.contains("profile")) entry.profile = e["profile"].get<std::string>();
    if (e.contains("device")) entry.device = e["device"].get<std::string>();
    if (e.contains("base")) {
      auto b = e["base"].is_number_unsigned()
                   ? std::optional<uint32_t>(e["base"].get<uint32_t>())
                   : parse_u32(e["base"].get<std::string>());
      if (!b) throw Error(errc::parse_error, "bad base for " + entry.path);
      entry.base = *b;
    }
    m.entries.push_back(std::move(entry));
  }
  ingest::validate_manifest(m);
  return m;
}

// ---------------------------------------------------------------------------
// profile resolution: builtins, then CM_SCOPE_PROFILES, then --profiles-dir

inline std::map<std::string, VendorProfile> resolve_profiles(const std::string& profiles_dir) {
  auto out = profiles::builtin_profiles();
  if (const char* env = std::getenv("CM_SCOPE_PROFILES")) {
    if (*env) out = profiles::load_profiles_dir(env, true);
  }
  if (!profiles_dir.empty()) {
    auto extra = profiles::load_profiles_dir(profiles_dir, false);
    for (auto& [k, v] : extra) out[k] = std::move(v);
  }
  return out;
}

inline const VendorProfile& pick_profile(const std::map<std::string, VendorProfile>& all,
                                         const std::string& id) {
  auto it = all.find(id.empty() ? "generic" : id);
  if (it == all.end()) throw Error(errc::parse_error, "unknown vendor profile " + id);
  return it->second;
}

// ---------------------------------------------------------------------------
// analyze

struct AnalyzeOptions {
  std::string file;
  std::optional<uint32_t> base;
  std::optional<ingest::SourceFormat> format;
  std::string profile = "generic";
  std::string profiles_dir;
  std::string canary_patterns_file;
  std::string json_out;
  bool verbose = false;
};

namespace detail {

inline detectors::RunOptions run_options(const std::string& canary_file) {
  detectors::RunOptions opts;
  if (!canary_file.empty()) opts.canary_families = profiles::load_canary_families(canary_file);
  return opts;
}

inline void print_matrix(std::ostream& out, const FeatureMatrix& m) {
  out << "image: " << m.image_id << "\n";
  out << "profile: " << m.profile_id << "\n";
  out << "base: " << (m.base ? hex_u32(*m.base) : std::string("unresolved")) << "\n";
  if (m.rtos.verdict == detectors::Verdict::Present) {
    out << "rtos:";
    for (const auto& n : m.rtos.detail.value("rtoses", nlohmann::ordered_json::array()))
      out << " " << n.get<std::string>();
    out << "\n";
  }
  for (detectors::Feature f : detectors::kAllFeatures) {
    const auto& fin = m.findings.at(f);
    out << "  " << detectors::feature_display_name(f) << ": " << detectors::verdict_name(fin.verdict);
    if (!fin.evidence.empty()) out << "  [" << fin.evidence.size() << " evidence]";
    out << "\n";
  }
}

}  // namespace detail

inline int cmd_analyze(const AnalyzeOptions& opts, std::ostream& out = std::cout,
                       std::ostream& err = std::cerr) {
  try {
    auto all = resolve_profiles(opts.profiles_dir);
    const VendorProfile& profile = pick_profile(all, opts.profile);
    ingest::FirmwareImage img = ingest::load_bytes(ingest::read_file(opts.file), opts.format);
    img.metadata["path"] = opts.file;
    if (opts.base) {
      img.base = *opts.base;
      img.metadata["declared_base"] = hex_u32(*opts.base);
    }
    FeatureMatrix m = detectors::run_all(img, profile, detail::run_options(opts.canary_patterns_file));
    detail::print_matrix(out, m);
    if (opts.verbose)
      for (const auto& [f, fin] : m.findings)
        for (const auto& e : fin.evidence)
          out << "    " << detectors::feature_key(f) << " @ " << hex_u32(e.address) << ": " << e.note
              << "\n";
    if (!opts.json_out.empty()) {
      std::ofstream jf(opts.json_out, std::ios::binary);
      if (!jf) throw Error(errc::io_error, "cannot write " + opts.json_out);
      jf << report::to_json(m);
    }
    return kExitOk;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitFatal;
  }
}

// ---------------------------------------------------------------------------
// batch

struct BatchOptions {
  std::string manifest;
  unsigned jobs = 1;
  std::string out_dir;  // per-file JSON reports, empty = skip
  std::string profiles_dir;
  std::string canary_patterns_file;
};

/// Entries are analyzed in parallel but collected by index, so the aggregate
/// output is identical for any job count.
inline int cmd_batch(const BatchOptions& opts, std::ostream& out = std::cout,
                     std::ostream& err = std::cerr) {
  CorpusManifest manifest;
  std::map<std::string, VendorProfile> all;
  detectors::RunOptions run_opts;
  try {
    std::filesystem::path mpath(opts.manifest);
    manifest = parse_manifest(profiles::read_text_file(mpath),
                              mpath.has_parent_path() ? mpath.parent_path() : ".");
    all = resolve_profiles(opts.profiles_dir);
    run_opts = detail::run_options(opts.canary_patterns_file);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitFatal;
  }

  struct Slot {
    std::optional<FeatureMatrix> matrix;
    std::string error;
  };
  std::vector<Slot> slots(manifest.entries.size());
  std::atomic<std::size_t> next{0};
  unsigned jobs = std::max(1u, opts.jobs);
  auto worker = [&]() {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= manifest.entries.size()) return;
      const ManifestEntry& entry = manifest.entries[i];
      try {
        ingest::FirmwareImage img = ingest::load_entry(entry);
        const VendorProfile& profile = pick_profile(all, entry.profile);
        slots[i].matrix = detectors::run_all(img, profile, run_opts);
      } catch (const Error& e) {
        slots[i].error = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < jobs; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  std::vector<FeatureMatrix> matrices;
  std::size_t failures = 0;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i].matrix) {
      matrices.push_back(*slots[i].matrix);
    } else {
      ++failures;
      err << "entry " << manifest.entries[i].path << ": " << slots[i].error << "\n";
    }
  }
  if (!opts.out_dir.empty() && !matrices.empty()) {
    std::filesystem::create_directories(opts.out_dir);
    std::set<std::string> used;
    for (std::size_t i = 0; i < matrices.size(); ++i) {
      std::string name = std::filesystem::path(matrices[i].image_id).filename().string() + ".json";
      if (!used.insert(name).second) {  // same basename from different directories
        name = std::to_string(i) + "_" + name;
        used.insert(name);
      }
      std::ofstream jf(std::filesystem::path(opts.out_dir) / name, std::ios::binary);
      jf << report::to_json(matrices[i]);
    }
  }
  if (matrices.empty()) {
    err << "error: no entry produced a result\n";
    return kExitFatal;
  }
  out << report::to_table(report::aggregate(matrices));
  return failures ? kExitPartial : kExitOk;
}

// ---------------------------------------------------------------------------
// model configs

/// MPU model config:
///   {"arch": "v7m"|"v8m", "enable": true, "privileged_default": false,
///    "pxn_supported": false,
///    "regions": [{"number": 0, "base": "0x20000000",
///                 "size": 4096 | "limit": "0x20000fff",
///                 "ap": "rw-any", "xn": true, "subregion_disable": 0}]}
inline secmodel::MpuConfig parse_mpu_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(errc::parse_error, std::string("mpu config: ") + e.what());
  }
  secmodel::MpuConfig cfg;
  std::string arch = j.value("arch", "v7m");
  if (arch == "v7m")
    cfg.arch = secmodel::MpuArch::v7m;
  else if (arch == "v8m")
    cfg.arch = secmodel::MpuArch::v8m;
  else
    throw Error(errc::parse_error, "unknown arch " + arch);
  cfg.enable = j.value("enable", false);
  cfg.privileged_default = j.value("privileged_default", false);
  cfg.pxn_supported = j.value("pxn_supported", false);
  cfg.max_regions = j.value("max_regions", 8);
  auto ap_code = [&](const std::string& s) -> uint8_t {
    if (cfg.arch == secmodel::MpuArch::v7m) {
      if (s == "no-access") return 0;
      if (s == "rw-priv") return 1;
      if (s == "rw-priv-ro-unpriv") return 2;
      if (s == "rw-any") return 3;
      if (s == "ro-priv") return 5;
      if (s == "ro-any") return 6;
    } else {
      if (s == "rw-priv") return 0;
      if (s == "rw-any") return 1;
      if (s == "ro-priv") return 2;
      if (s == "ro-any") return 3;
    }
    throw Error(errc::parse_error, "unknown ap code " + s);
  };
  for (const auto& r : j.value("regions", nlohmann::json::array())) {
    secmodel::MpuRegion region;
    region.arch = cfg.arch;
    region.number = r.value("number", 0);
    region.base = profiles::detail::json_u32(r, "base");
    if (cfg.arch == secmodel::MpuArch::v7m)
      region.size = profiles::detail::json_u32(r, "size");
    else
      region.limit = profiles::detail::json_u32(r, "limit");
    region.ap = ap_code(r.at("ap").get<std::string>());
    region.xn = r.value("xn", false);
    region.pxn = r.value("pxn", false);
    region.enabled = r.value("enabled", true);
    if (r.contains("subregion_disable"))
      region.subregion_disable = static_cast<uint8_t>(profiles::detail::json_u32(r, "subregion_disable"));
    cfg.regions.push_back(region);
  }
  secmodel::validate_config(cfg);
  return cfg;
}

/// Attribution config:
///   {"sau_enabled": true,
///    "sau_regions": [{"start": "0x...", "end": "0x...", "attr": "secure"}],
///    "idau_regions": [...]}
inline secmodel::AttributionConfig parse_attr_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(errc::parse_error, std::string("attr config: ") + e.what());
  }
  secmodel::AttributionConfig cfg;
  cfg.sau_enabled = j.value("sau_enabled", false);
  auto attr_of = [](const std::string& s) {
    if (s == "secure") return secmodel::Attribution::Secure;
    if (s == "nsc") return secmodel::Attribution::Nsc;
    if (s == "non-secure" || s == "nonsecure") return secmodel::Attribution::NonSecure;
    throw Error(errc::parse_error, "unknown attribution " + s);
  };
  auto read_regions = [&](const char* key, std::vector<secmodel::AttrRegion>& out) {
    for (const auto& r : j.value(key, nlohmann::json::array())) {
      secmodel::AttrRegion region;
      region.start = profiles::detail::json_u32(r, "start");
      region.end = profiles::detail::json_u32(r, "end");
      region.attr = attr_of(r.at("attr").get<std::string>());
      out.push_back(region);
    }
  };
  read_regions("sau_regions", cfg.sau_regions);
  read_regions("idau_regions", cfg.idau_regions);
  secmodel::validate_attribution(cfg);
  return cfg;
}

/// Transition script:
///   {"initial": {"mode": "thread", "priv": "privileged",
///                "state": "non-secure", "spsel": "msp"},
///    "events": ["svc", {"write-control-npriv": 1}, "sg-entry", "bxns-exit",
///               "exception-entry",
///               {"exception-return": {"mode": "thread", "spsel": "psp",
///                                     "priv": "unprivileged"}}]}
inline std::pair<secmodel::SecurityContext, std::vector<secmodel::SecurityEvent>>
parse_transition_script(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(errc::parse_error, std::string("transition script: ") + e.what());
  }
  secmodel::SecurityContext ctx;
  const auto& init = j.at("initial");
  ctx.mode = init.value("mode", "thread") == "handler" ? secmodel::ExecMode::Handler
                                                       : secmodel::ExecMode::Thread;
  ctx.priv = init.value("priv", "privileged") == "unprivileged" ? secmodel::Privilege::Unprivileged
                                                                : secmodel::Privilege::Privileged;
  ctx.state = init.value("state", "non-secure") == "secure" ? secmodel::SecurityState::Secure
                                                            : secmodel::SecurityState::NonSecure;
  ctx.spsel = init.value("spsel", "msp") == "psp" ? secmodel::StackSel::Psp : secmodel::StackSel::Msp;

  std::vector<secmodel::SecurityEvent> events;
  for (const auto& e : j.at("events")) {
    if (e.is_string()) {
      std::string name = e.get<std::string>();
      if (name == "svc")
        events.emplace_back(secmodel::EvSvc{});
      else if (name == "exception-entry")
        events.emplace_back(secmodel::EvExceptionEntry{});
      else if (name == "sg-entry")
        events.emplace_back(secmodel::EvSgEntry{});
      else if (name == "bxns-exit")
        events.emplace_back(secmodel::EvBxnsExit{});
      else
        throw Error(errc::parse_error, "unknown event " + name);
    } else if (e.contains("write-control-npriv")) {
      events.emplace_back(secmodel::EvWriteControlNPriv{e["write-control-npriv"].get<int>() != 0});
    } else if (e.contains("exception-return")) {
      const auto& r = e["exception-return"];
      secmodel::EvExceptionReturn ret;
      ret.to_mode = r.value("mode", "thread") == "handler" ? secmodel::ExecMode::Handler
                                                           : secmodel::ExecMode::Thread;
      ret.to_spsel = r.value("spsel", "msp") == "psp" ? secmodel::StackSel::Psp : secmodel::StackSel::Msp;
      ret.to_priv = r.value("priv", "privileged") == "unprivileged" ? secmodel::Privilege::Unprivileged
                                                                    : secmodel::Privilege::Privileged;
      events.emplace_back(ret);
    } else {
      throw Error(errc::parse_error, "unrecognized event object");
    }
  }
  return {ctx, events};
}

// ---------------------------------------------------------------------------
// model commands

struct ModelOptions {
  std::string subcommand;  // mpu-eval | attr-resolve | transition
  std::string config_file;
  std::optional<uint32_t> addr;
  std::string access = "read";   // mpu-eval
  std::string priv = "privileged";
};

inline std::string context_to_string(const secmodel::SecurityContext& c) {
  std::string s;
  s += c.mode == secmodel::ExecMode::Handler ? "handler" : "thread";
  s += c.priv == secmodel::Privilege::Privileged ? "/privileged" : "/unprivileged";
  s += c.state == secmodel::SecurityState::Secure ? "/secure" : "/non-secure";
  s += c.spsel == secmodel::StackSel::Msp ? "/msp" : "/psp";
  return s;
}

inline int cmd_model(const ModelOptions& opts, std::ostream& out = std::cout,
                     std::ostream& err = std::cerr) {
  try {
    std::string text = profiles::read_text_file(opts.config_file);
    if (opts.subcommand == "mpu-eval") {
      if (!opts.addr) throw Error(errc::parse_error, "mpu-eval needs --addr");
      secmodel::MpuConfig cfg = parse_mpu_config(text);
      secmodel::Access access = opts.access == "write"     ? secmodel::Access::Write
                                : opts.access == "execute" ? secmodel::Access::Execute
                                                           : secmodel::Access::Read;
      secmodel::Privilege priv = opts.priv == "unprivileged" ? secmodel::Privilege::Unprivileged
                                                             : secmodel::Privilege::Privileged;
      bool allow =
          secmodel::eval_mpu_access(cfg, image::default_memory_map(), *opts.addr, priv, access);
      out << (allow ? "Allow" : "Deny") << "\n";
      return kExitOk;
    }
    if (opts.subcommand == "attr-resolve") {
      if (!opts.addr) throw Error(errc::parse_error, "attr-resolve needs an address");
      secmodel::AttributionConfig cfg = parse_attr_config(text);
      out << secmodel::attribution_name(secmodel::resolve_attribution(cfg, *opts.addr)) << "\n";
      return kExitOk;
    }
    if (opts.subcommand == "transition") {
      auto [ctx, events] = parse_transition_script(text);
      out << "start: " << context_to_string(ctx) << "\n";
      for (const auto& ev : events) {
        try {
          ctx = secmodel::step_security_context(ctx, ev);
          out << "  -> " << context_to_string(ctx) << "\n";
        } catch (const Error& e) {
          out << "  -> illegal (" << e.what() << ")\n";
        }
      }
      return kExitOk;
    }
    throw Error(errc::parse_error, "unknown model subcommand " + opts.subcommand);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitFatal;
  }
}

}  // namespace cmscope::cli
