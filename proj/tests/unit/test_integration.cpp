// SPDX-License-Identifier: Apache-2.0
//
// Cross-module flows: the detector write log feeding the protection model,
// and end-to-end report plumbing on the labeled corpus.
#include <catch_amalgamated.hpp>

#include "cmscope/cmscope.hpp"
#include "support/synthetic_images.hpp"

using namespace cmscope;
using detectors::Feature;
using detectors::Verdict;

TEST_CASE("detector write log reconstructs an auditable MPU config", "[integration]") {
  auto si = testimg::hardened();
  auto matrix = detectors::run_all(si.image, profiles::builtin_nordic_profile());
  const auto& finding = matrix.findings.at(Feature::Mpu);
  REQUIRE(finding.verdict == Verdict::Present);

  auto writes = secmodel::write_log_from_json(finding.detail.at("write_log"));
  REQUIRE(writes.size() == 4);
  auto cfg = secmodel::reconstruct_mpu_config(writes, secmodel::MpuArch::v7m);
  CHECK(cfg.enable);
  CHECK(cfg.privileged_default);  // CTRL was 5
  REQUIRE(cfg.regions.size() == 1);
  CHECK(cfg.regions[0].base == 0x20000000);
  CHECK(cfg.regions[0].size == 0x1000);
  CHECK(cfg.regions[0].xn);
  CHECK(cfg.regions[0].enabled);

  // the region makes its SRAM slice non-executable, but PRIVDEFENA leaves
  // the rest of SRAM executable for privileged code
  auto map = image::default_memory_map();
  CHECK_FALSE(
      secmodel::eval_mpu_access(cfg, map, 0x20000100, secmodel::Privilege::Privileged,
                                secmodel::Access::Execute));
  auto issues = secmodel::audit_mpu_config(cfg, map);
  bool exec_sram = false, disabled = false;
  for (const auto& i : issues) {
    if (i.kind == secmodel::IssueKind::ExecutableSram) exec_sram = true;
    if (i.kind == secmodel::IssueKind::MpuDisabled) disabled = true;
  }
  CHECK(exec_sram);
  CHECK_FALSE(disabled);
}

TEST_CASE("unresolved write-log values are dropped, not replayed", "[integration]") {
  auto arr = nlohmann::ordered_json::array();
  arr.push_back({{"address", "0xe000ed94"}, {"value", nullptr}});
  arr.push_back({{"address", "0xe000ed98"}, {"value", "0x0"}});
  auto writes = secmodel::write_log_from_json(arr);
  REQUIRE(writes.size() == 1);
  CHECK(writes[0].address == 0xE000ED98);
}

TEST_CASE("mixed resolved and unresolved CONTROL writes", "[integration]") {
  // one write provably leaves nPRIV clear, one is opaque: with at least one
  // resolved site and no nPRIV evidence the row reads absent
  testasm::ImageBuilder b(testimg::kBase, testimg::kSp);
  b.handler_labels = {"hang"};
  testasm::Assembler a(testimg::kBase + 0x40);
  a.label("reset");
  a.push16(0x10, true);
  a.movs(0, 0);
  a.msr(disasm::sysm::kControl, 0);
  a.isb();
  a.ldr16(1, 2, 0);  // opaque
  a.msr(disasm::sysm::kControl, 1);
  a.isb();
  a.pop16(0x10, true);
  a.label("hang");
  a.b16("hang");
  auto img = b.build(a);
  img.metadata["path"] = "mixed_control";
  testimg::attach_uicr(img, 0xFFFFFFFF);
  auto m = detectors::run_all(img, profiles::builtin_nordic_profile());
  CHECK(m.findings.at(Feature::PrivilegeSeparation).verdict == Verdict::Absent);
  CHECK(m.findings.at(Feature::PrivilegeSeparation).detail.at("control_write_count") == 2);
  CHECK(m.findings.at(Feature::PrivilegeSeparation).detail.at("resolved_write_count") == 1);
}

TEST_CASE("corpus matrices survive the full report round trip", "[integration]") {
  auto corpus = testimg::labeled_corpus();
  auto profile = profiles::builtin_nordic_profile();
  std::vector<detectors::FeatureMatrix> matrices;
  for (const auto& si : corpus) {
    auto m = detectors::run_all(si.image, profile);
    auto back = report::matrix_from_json(report::to_json(m));
    CHECK(back == m);
    matrices.push_back(std::move(m));
  }
  auto summary = report::aggregate(matrices);
  CHECK(summary.total.image_count == corpus.size());
  for (Feature f : detectors::kAllFeatures) {
    const auto& t = summary.total.tallies.at(f);
    CHECK(t.present + t.absent + t.indeterminate == corpus.size());
  }
  std::string table = report::to_table(summary);
  CHECK(table.find("Privilege Separation") != std::string::npos);
  CHECK(table.find("nordic") != std::string::npos);
}

TEST_CASE("pattern-route canary reports the known fixed guard defaults", "[integration]") {
  auto m = detectors::run_all(testimg::canary_pattern().image, profiles::builtin_nordic_profile());
  const auto& f = m.findings.at(Feature::StackCanaries);
  REQUIRE(f.verdict == Verdict::Present);
  const auto& known = f.detail.at("known_default_guard_values");
  REQUIRE(known.size() == 2);
  CHECK(known[0] == "0xff0a0000");
  CHECK(known[1] == "0x0");
}
