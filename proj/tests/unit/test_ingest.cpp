// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <random>

#include "cmscope/ingest.hpp"
#include "support/record_encoders.hpp"

using namespace cmscope;
using ingest::Segment;
using ingest::SegmentList;

namespace {

errc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return errc::io_error;
}

SegmentList random_segments(std::mt19937& rng) {
  std::uniform_int_distribution<int> seg_count(1, 5);
  std::uniform_int_distribution<int> seg_len(1, 80);
  std::uniform_int_distribution<uint32_t> gap(4, 0x800);
  std::uniform_int_distribution<int> byte(0, 255);
  SegmentList segs;
  uint32_t addr = std::uniform_int_distribution<uint32_t>(0, 0x0FFFFFFF)(rng) & ~3u;
  int n = seg_count(rng);
  for (int i = 0; i < n; ++i) {
    Segment s;
    s.start = addr;
    int len = seg_len(rng);
    for (int j = 0; j < len; ++j) s.data.push_back(static_cast<uint8_t>(byte(rng)));
    addr = static_cast<uint32_t>(s.end() + gap(rng));
    segs.push_back(std::move(s));
  }
  return segs;
}

}  // namespace

TEST_CASE("load_raw wraps bytes", "[ingest]") {
  std::vector<uint8_t> kib(1024, 0xAB);
  auto img = ingest::load_raw(kib, 0x0);
  CHECK(img.size() == 1024);
  CHECK(img.base == 0u);
  CHECK(img.source_format == ingest::SourceFormat::raw);

  auto unset = ingest::load_raw(kib);
  CHECK_FALSE(unset.base.has_value());

  CHECK(code_of([] { ingest::load_raw({}); }) == errc::empty_input);
}

TEST_CASE("intel hex decodes data and honors extensions", "[ingest]") {
  // 4 data bytes at 0, checksum computed by the oracle encoder rule
  auto rec = ingest::decode_intel_hex(":0400000001020304F2\n:00000001FF\n");
  REQUIRE(rec.segments.size() == 1);
  CHECK(rec.segments[0].start == 0);
  CHECK(rec.segments[0].data == std::vector<uint8_t>{1, 2, 3, 4});

  // extended linear address shifts subsequent data to 0x08000000
  auto high = ingest::decode_intel_hex(":020000040800F2\n:04000000AABBCCDDEE\n:00000001FF\n");
  REQUIRE(high.segments.size() == 1);
  CHECK(high.segments[0].start == 0x08000000u);

  // extended segment address: value << 4
  auto segext = ingest::decode_intel_hex(":020000021000EC\n:0100000055AA\n:00000001FF\n");
  REQUIRE(segext.segments.size() == 1);
  CHECK(segext.segments[0].start == 0x10000u);

  // start linear address is metadata, not data
  auto start = ingest::decode_intel_hex(":0400000508000141AD\n:00000001FF\n");
  CHECK(start.segments.empty());
  CHECK(start.metadata.at("start_address") == "0x8000141");
}

TEST_CASE("intel hex rejects malformed records", "[ingest]") {
  CHECK(code_of([] { ingest::decode_intel_hex(":0400000001020304F3\n"); }) == errc::bad_checksum);
  CHECK(code_of([] { ingest::decode_intel_hex(":00000007F9\n"); }) == errc::bad_record_type);
  CHECK(code_of([] { ingest::decode_intel_hex(":04000000010203\n"); }) == errc::truncated_record);
  CHECK(code_of([] { ingest::decode_intel_hex("abc\n"); }) == errc::bad_record_type);
  // truncated final line: lone nibble
  CHECK(code_of([] { ingest::decode_intel_hex(":0400000001020304F\n"); }) == errc::truncated_record);
  // line numbers are reported
  try {
    ingest::decode_intel_hex(":00000001FF...");
    FAIL();
  } catch (const Error& e) {
    CHECK(e.line() == 1);
  }
  try {
    ingest::decode_intel_hex(":020000040800F2\n:0400000001020304F3\n");
    FAIL();
  } catch (const Error& e) {
    CHECK(e.code() == errc::bad_checksum);
    CHECK(e.line() == 2);
  }
}

TEST_CASE("srecord decodes data, start address and count records", "[ingest]") {
  auto rec = ingest::decode_srecord("S1060000AABBCCC8\nS9030000FC\n");
  REQUIRE(rec.segments.size() == 1);
  CHECK(rec.segments[0].start == 0);
  CHECK(rec.segments[0].data == std::vector<uint8_t>{0xAA, 0xBB, 0xCC});
  CHECK(rec.metadata.at("start_address") == "0x0");

  // S5 count record is ignored without error
  auto with_count = ingest::decode_srecord("S1060000AABBCCC8\nS5030001FB\nS9030000FC\n");
  REQUIRE(with_count.segments.size() == 1);

  // S0 header lands in metadata
  auto hdr = ingest::decode_srecord(testenc::srecord_line(0, 0, 2, {'H', 'I', '!', '!'}) + "\n");
  CHECK(hdr.metadata.at("srecord_header") == "HI!!");

  // S2 carries a 24-bit address, S3 a 32-bit one
  auto s2 = ingest::decode_srecord(testenc::srecord_line(2, 0x012345, 3, {0x5A}) + "\n");
  REQUIRE(s2.segments.size() == 1);
  CHECK(s2.segments[0].start == 0x012345u);
  auto s3 = ingest::decode_srecord(testenc::srecord_line(3, 0x08000000, 4, {0x5A}) + "\n");
  CHECK(s3.segments[0].start == 0x08000000u);
}

TEST_CASE("srecord rejects malformed records", "[ingest]") {
  CHECK(code_of([] { ingest::decode_srecord("S1060000AABBCCC9\n"); }) == errc::bad_checksum);
  CHECK(code_of([] { ingest::decode_srecord("S4060000AABBCCC8\n"); }) == errc::bad_record_type);
  CHECK(code_of([] { ingest::decode_srecord("S106\n"); }) == errc::truncated_record);
  CHECK(code_of([] { ingest::decode_srecord("Q106\n"); }) == errc::bad_record_type);
}

TEST_CASE("merge_segments fills gaps and guards pathological layouts", "[ingest]") {
  SegmentList segs{{0x0, {0x41}}, {0x4, {0x42}}};
  auto img = ingest::merge_segments(segs, 0xFF);
  CHECK(img.base == 0u);
  CHECK(img.bytes == std::vector<uint8_t>{0x41, 0xFF, 0xFF, 0xFF, 0x42});

  auto single = ingest::merge_segments({{0x100, {1, 2, 3}}}, 0x00);
  CHECK(single.base == 0x100u);
  CHECK(single.bytes == std::vector<uint8_t>{1, 2, 3});

  CHECK(code_of([] {
          ingest::merge_segments({{0x0, {1}}, {0x20000000, {2}}}, 0xFF);
        }) == errc::gap_too_large);
  CHECK(code_of([] {
          ingest::merge_segments({{0x0, {1, 2, 3}}, {0x2, {4}}}, 0xFF);
        }) == errc::overlapping_segments);
}

TEST_CASE("merge_segments is order-insensitive", "[ingest]") {
  std::mt19937 rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    SegmentList segs = random_segments(rng);
    auto reference = ingest::merge_segments(segs, 0xFF);
    std::shuffle(segs.begin(), segs.end(), rng);
    auto shuffled = ingest::merge_segments(segs, 0xFF);
    CHECK(reference.base == shuffled.base);
    CHECK(reference.bytes == shuffled.bytes);
  }
}

TEST_CASE("hex and srecord round-trip through the test encoders", "[ingest]") {
  std::mt19937 rng(21);
  for (int trial = 0; trial < 40; ++trial) {
    SegmentList segs = random_segments(rng);
    auto hex = ingest::decode_intel_hex(testenc::encode_intel_hex(segs));
    REQUIRE(hex.segments.size() == segs.size());
    for (std::size_t i = 0; i < segs.size(); ++i) {
      CHECK(hex.segments[i].start == segs[i].start);
      CHECK(hex.segments[i].data == segs[i].data);
    }
    auto srec = ingest::decode_srecord(testenc::encode_srecord(segs));
    REQUIRE(srec.segments.size() == segs.size());
    for (std::size_t i = 0; i < segs.size(); ++i) {
      CHECK(srec.segments[i].start == segs[i].start);
      CHECK(srec.segments[i].data == segs[i].data);
    }
  }
}

TEST_CASE("detached far segments become metadata", "[ingest]") {
  SegmentList segs{{0x0, std::vector<uint8_t>(64, 0x11)}, {0x10001000, {0xDE, 0xAD, 0xBE, 0xEF}}};
  auto img = ingest::image_from_segments(segs, ingest::SourceFormat::intel_hex);
  CHECK(img.base == 0u);
  CHECK(img.size() == 64);
  REQUIRE(img.metadata.count("segment_0x10001000"));
  CHECK(img.metadata.at("segment_0x10001000") == "deadbeef");
}

TEST_CASE("walk_corpus loads entries and records failures", "[ingest]") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "cmscope_ingest_test";
  fs::create_directories(dir);
  auto write = [&](const char* name, const std::string& content) {
    std::ofstream f(dir / name, std::ios::binary);
    f << content;
    return (dir / name).string();
  };
  std::string raw1 = write("a.bin", std::string(128, '\x01'));
  std::string raw2 = write("b.bin", std::string(64, '\x02'));
  std::string srec = write("c.srec", testenc::encode_srecord({{0x0, {1, 2, 3, 4}}}));
  std::string bad = write("bad.hex", ":0400000001020304FF\n");

  ingest::CorpusManifest m;
  m.entries = {{raw1, {}, "generic", "dev1", 0x0},
               {raw2, {}, "generic", "", {}},
               {srec, {}, "nordic", "dev2", {}}};
  auto res = ingest::walk_corpus(m);
  REQUIRE(res.items.size() == 3);
  CHECK(res.error_count() == 0);
  CHECK(res.items[0].image->metadata.at("device") == "dev1");
  CHECK(res.items[0].image->base == 0u);
  CHECK(res.items[2].image->source_format == ingest::SourceFormat::srecord);

  m.entries.push_back({bad, {}, "generic", "", {}});
  auto res2 = ingest::walk_corpus(m);
  CHECK(res2.items.size() == 4);
  CHECK(res2.error_count() == 1);
  CHECK(res2.items[3].error.find("BadChecksum") != std::string::npos);

  ingest::CorpusManifest dup;
  dup.entries = {{raw1, {}, "", "", {}}, {raw1, {}, "", "", {}}};
  CHECK(code_of([&] { ingest::validate_manifest(dup); }) == errc::parse_error);

  fs::remove_all(dir);
}
