// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include <random>
#include <thread>

#include "cmscope/image.hpp"
#include "support/synthetic_images.hpp"

using namespace cmscope;
using image::RegionClass;

TEST_CASE("default memory map classifies the architectural regions", "[image]") {
  auto map = image::default_memory_map();
  CHECK(image::classify_address(map, 0x20001000) == RegionClass::Sram);
  CHECK(image::classify_address(map, 0xE000ED00) == RegionClass::Scs);
  CHECK(image::classify_address(map, 0x08000000) == RegionClass::Code);
  CHECK(image::classify_address(map, 0x00000000) == RegionClass::Code);
  CHECK(image::classify_address(map, 0xFFFFFFFF) == RegionClass::System);
  CHECK(image::classify_address(map, 0x40000000) == RegionClass::Peripheral);
  CHECK(image::classify_address(map, 0x60000000) == RegionClass::RamWb);
  CHECK(image::classify_address(map, 0x80000000) == RegionClass::RamWt);
  CHECK(image::classify_address(map, 0xA0000000) == RegionClass::DeviceShared);
  CHECK(image::classify_address(map, 0xC0000000) == RegionClass::DevicePe);
  CHECK(image::classify_address(map, 0xE0000000) == RegionClass::Ppb);
  CHECK(image::classify_address(map, 0xE0100000) == RegionClass::System);
}

TEST_CASE("memory map tiles the full 32-bit space", "[image]") {
  auto map = image::default_memory_map();
  uint64_t total = 0;
  uint64_t expect_next = 0;
  for (const auto& r : map.regions) {
    CHECK(r.start == expect_next);
    total += static_cast<uint64_t>(r.end) - r.start + 1;
    expect_next = static_cast<uint64_t>(r.end) + 1;
  }
  CHECK(total == (1ull << 32));

  // XN defaults: only code, SRAM and the RAM regions are executable.
  for (const auto& r : map.regions) {
    bool executable = !r.default_xn;
    bool ram_or_code = r.cls == RegionClass::Code || image::is_ram_class(r.cls);
    CHECK(executable == ram_or_code);
  }
}

TEST_CASE("vector table parsing validates SP and reset", "[image]") {
  ingest::FirmwareImage img;
  img.base = 0;
  auto word = [&](uint32_t w) {
    img.bytes.push_back(w & 0xFF);
    img.bytes.push_back((w >> 8) & 0xFF);
    img.bytes.push_back((w >> 16) & 0xFF);
    img.bytes.push_back((w >> 24) & 0xFF);
  };
  word(0x20002000);  // SP
  word(0x000000C1);  // reset (thumb)
  word(0x000000D5);  // handler
  word(0);           // unused slot
  for (int i = 0; i < 60; ++i) word(0xFFFFFFFF);  // invalid words end the table

  auto vt = image::parse_vector_table(img, 0);
  CHECK(vt.initial_sp == 0x20002000);
  CHECK(vt.reset == 0xC1);
  REQUIRE(vt.handlers.size() == 2);
  CHECK(vt.handlers[0] == 0xD5);
  CHECK(vt.handlers[1] == 0);
  auto entries = image::entry_points_from_vector_table(vt);
  CHECK(entries == std::vector<uint32_t>{0xC0, 0xD4});

  // SP must be RAM-class
  img.bytes[3] = 0x08;  // SP = 0x08002000
  CHECK_THROWS_MATCHES(image::parse_vector_table(img, 0), Error, Catch::Matchers::MessageMatches(
      Catch::Matchers::ContainsSubstring("InvalidInitialSp")));
  img.bytes[3] = 0x20;

  // reset must carry the thumb bit
  img.bytes[4] = 0xC0;
  CHECK_THROWS_MATCHES(image::parse_vector_table(img, 0), Error, Catch::Matchers::MessageMatches(
      Catch::Matchers::ContainsSubstring("InvalidResetVector")));
}

TEST_CASE("vector table respects the entry cap", "[image]") {
  ingest::FirmwareImage img;
  img.base = 0;
  auto word = [&](uint32_t w) {
    img.bytes.push_back(w & 0xFF);
    img.bytes.push_back((w >> 8) & 0xFF);
    img.bytes.push_back((w >> 16) & 0xFF);
    img.bytes.push_back((w >> 24) & 0xFF);
  };
  word(0x20002000);
  word(0x00000801);
  for (int i = 0; i < 600; ++i) word(0);  // endless zero handlers
  auto vt = image::parse_vector_table(img, 0);
  CHECK(vt.handlers.size() == image::kMaxVectorEntries - 2);
}

TEST_CASE("base inference recovers a synthetic image's base", "[image]") {
  std::mt19937 rng(5);
  auto img = testimg::random_image_at(0x08000000, rng);
  img.base.reset();
  auto cand = image::infer_base_address(img);
  CHECK(cand.base == 0x08000000);
  CHECK(cand.evidence.pointer_hits > 0);
  CHECK(cand.score > 0.0);
}

TEST_CASE("base inference throws when no candidate is viable", "[image]") {
  ingest::FirmwareImage img;
  img.bytes.assign(128, 0);
  img.bytes[0] = 0x01;  // SP = 0x00000001: misaligned, not RAM
  CHECK_THROWS_MATCHES(image::infer_base_address(img), Error, Catch::Matchers::MessageMatches(
      Catch::Matchers::ContainsSubstring("NoViableBase")));

  ingest::FirmwareImage tiny;
  tiny.bytes.assign(32, 0);
  CHECK_THROWS_AS(image::infer_base_address(tiny), Error);
}

TEST_CASE("base inference ties break to the lowest base", "[image]") {
  ingest::FirmwareImage img;
  img.bytes.assign(256, 0);
  // SP valid, every handler zero: all candidates tie at score zero.
  img.bytes[0] = 0x00;
  img.bytes[1] = 0x40;
  img.bytes[2] = 0x00;
  img.bytes[3] = 0x20;  // SP = 0x20004000
  auto cand = image::infer_base_address(img);
  CHECK(cand.base == 0);
  CHECK(cand.score == 0.0);
}

TEST_CASE("base inference is deterministic across runs and threads", "[image]") {
  std::mt19937 rng(17);
  auto img = testimg::random_image_at(0x26000, rng);
  img.base.reset();
  auto first = image::infer_base_address(img);
  for (int i = 0; i < 9; ++i) {
    auto again = image::infer_base_address(img);
    CHECK(again.base == first.base);
    CHECK(again.score == first.score);
  }
  std::vector<std::thread> pool;
  std::vector<uint32_t> results(8, 0);
  for (int t = 0; t < 8; ++t)
    pool.emplace_back([&, t] { results[t] = image::infer_base_address(img).base; });
  for (auto& t : pool) t.join();
  for (uint32_t r : results) CHECK(r == first.base);
}

TEST_CASE("declared candidates join the scan", "[image]") {
  std::mt19937 rng(23);
  auto img = testimg::random_image_at(0x08000000, rng);
  img.base.reset();
  image::BaseInferenceOptions opts;
  opts.max_base = 0x1000;  // exclude the true base from the aligned scan
  opts.extra_candidates = {0x08000000};
  auto cand = image::infer_base_address(img, opts);
  CHECK(cand.base == 0x08000000);
}
