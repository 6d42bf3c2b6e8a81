// SPDX-License-Identifier: Apache-2.0
//
// The shipped data files must stay in lockstep with the compiled-in
// defaults; ctest points CMSCOPE_DATA_DIR at the repo's data/ tree.
#include <catch_amalgamated.hpp>

#include <cstdlib>

#include "cmscope/profiles.hpp"

using namespace cmscope;

TEST_CASE("shipped data files mirror the builtin defaults", "[data]") {
  const char* dir = std::getenv("CMSCOPE_DATA_DIR");
  if (!dir || !*dir) {
    SUCCEED("CMSCOPE_DATA_DIR not set; skipping file comparison");
    return;
  }
  std::filesystem::path data(dir);

  auto generic = profiles::parse_profile(profiles::read_text_file(data / "profiles/generic.json"));
  auto builtin_generic = profiles::builtin_generic_profile();
  CHECK(generic.id == builtin_generic.id);
  CHECK(generic.rtos_signatures.size() == builtin_generic.rtos_signatures.size());
  CHECK(generic.stack_guard_strings.size() == builtin_generic.stack_guard_strings.size());
  CHECK_FALSE(generic.readback.has_value());

  auto nordic = profiles::parse_profile(profiles::read_text_file(data / "profiles/nordic.json"));
  auto builtin_nordic = profiles::builtin_nordic_profile();
  CHECK(nordic.id == builtin_nordic.id);
  CHECK(nordic.smpu_mmio_addresses == builtin_nordic.smpu_mmio_addresses);
  REQUIRE(nordic.readback.has_value());
  CHECK(nordic.readback->segment_address == builtin_nordic.readback->segment_address);
  CHECK(nordic.readback->offset == builtin_nordic.readback->offset);

  auto families = profiles::load_canary_families(data / "canary_patterns.json");
  auto builtin_families = profiles::default_canary_families();
  REQUIRE(families.size() == builtin_families.size());
  for (std::size_t i = 0; i < families.size(); ++i) {
    CHECK(families[i].name == builtin_families[i].name);
    CHECK(families[i].prologue.size() == builtin_families[i].prologue.size());
    CHECK(families[i].epilogue.size() == builtin_families[i].epilogue.size());
  }
}

TEST_CASE("ten rtos signatures ship by default", "[data]") {
  auto p = profiles::builtin_generic_profile();
  CHECK(p.rtos_signatures.size() == 10);
  std::set<std::string> names;
  for (const auto& s : p.rtos_signatures) names.insert(s.rtos);
  CHECK(names.count("FreeRTOS"));
  CHECK(names.count("Zephyr"));
  CHECK(names.count("CMSIS-RTX"));
}

TEST_CASE("three canary families ship by default", "[data]") {
  auto fams = profiles::default_canary_families();
  REQUIRE(fams.size() == 3);
  for (const auto& f : fams) {
    CHECK_FALSE(f.prologue.empty());
    CHECK_FALSE(f.epilogue.empty());
  }
}
