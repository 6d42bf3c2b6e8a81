// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include <random>

#include "cmscope/disasm.hpp"
#include "support/reference_asm.hpp"

using namespace cmscope;
using disasm::Instr;
using disasm::InstrKind;
namespace sysm = disasm::sysm;

namespace {

ingest::FirmwareImage image_of(testasm::Assembler& a, uint32_t base) {
  ingest::FirmwareImage img;
  img.base = base;
  img.bytes = a.finalize();
  return img;
}

Instr decode_single(const std::function<void(testasm::Assembler&)>& emit, uint32_t addr = 0x100) {
  testasm::Assembler a(addr);
  emit(a);
  auto img = image_of(a, addr);
  return disasm::decode_one(img, addr);
}

}  // namespace

TEST_CASE("instruction width rule", "[disasm]") {
  CHECK(disasm::instr_width(0xF000) == 4);
  CHECK(disasm::instr_width(0x4770) == 2);
  CHECK(disasm::instr_width(0xE800) == 4);
  CHECK(disasm::instr_width(0xE000) == 2);  // 16-bit B
  CHECK(disasm::instr_width(0xE7FF) == 2);
  CHECK(disasm::instr_width(0xFFFF) == 4);
}

TEST_CASE("decode_one matches known encodings", "[disasm]") {
  auto svc = decode_single([](auto& a) { a.svc(7); });
  CHECK(svc.kind == InstrKind::Svc);
  CHECK(svc.imm == 7);
  CHECK(svc.raw[0] == 0x07);
  CHECK(svc.raw[1] == 0xDF);

  auto msr = decode_single([](auto& a) { a.msr(sysm::kControl, 0); });
  CHECK(msr.kind == InstrKind::MsrSpecial);
  CHECK(msr.imm == 0x14);
  CHECK(msr.rn == 0);
  CHECK(msr.raw == std::array<uint8_t, 4>{0x80, 0xF3, 0x14, 0x88});

  auto isb = decode_single([](auto& a) { a.isb(); });
  CHECK(isb.kind == InstrKind::Isb);
  CHECK(isb.raw == std::array<uint8_t, 4>{0xBF, 0xF3, 0x6F, 0x8F});
}

TEST_CASE("assemble-then-decode round-trips the supported subset", "[disasm]") {
  std::mt19937 rng(11);
  std::uniform_int_distribution<int> low(0, 7);
  std::uniform_int_distribution<int> any(0, 14);  // r15 excluded from operands
  std::uniform_int_distribution<int> u8(0, 255);
  const uint32_t addr = 0x08000100;

  for (int trial = 0; trial < 200; ++trial) {
    uint8_t rl = static_cast<uint8_t>(low(rng));
    uint8_t rl2 = static_cast<uint8_t>(low(rng));
    uint8_t ra = static_cast<uint8_t>(any(rng));
    uint8_t imm = static_cast<uint8_t>(u8(rng));

    auto check = [&](const std::function<void(testasm::Assembler&)>& emit, InstrKind kind,
                     const std::function<void(const Instr&)>& verify) {
      Instr i = decode_single(emit, addr);
      INFO("trial " << trial << " kind " << static_cast<int>(kind));
      CHECK(i.kind == kind);
      CHECK(i.width == disasm::instr_width(static_cast<uint16_t>(i.raw[0] | (i.raw[1] << 8))));
      verify(i);
    };

    check([&](auto& a) { a.movs(rl, imm); }, InstrKind::MovImm, [&](const Instr& i) {
      CHECK(i.rd == rl);
      CHECK(i.imm == imm);
    });
    check([&](auto& a) { a.svc(imm); }, InstrKind::Svc,
          [&](const Instr& i) { CHECK(i.imm == imm); });
    check([&](auto& a) { a.bx(ra); }, InstrKind::Bx, [&](const Instr& i) { CHECK(i.rm == ra); });
    check([&](auto& a) { a.blx_reg(ra); }, InstrKind::Blx,
          [&](const Instr& i) { CHECK(i.rm == ra); });
    check([&](auto& a) { a.bxns(ra); }, InstrKind::Bxns,
          [&](const Instr& i) { CHECK(i.rm == ra); });
    check([&](auto& a) { a.blxns(ra); }, InstrKind::Blxns,
          [&](const Instr& i) { CHECK(i.rm == ra); });
    check([&](auto& a) { a.push16(static_cast<uint8_t>(imm), true); }, InstrKind::Push,
          [&](const Instr& i) { CHECK(i.reglist == (imm | disasm::kRegLr)); });
    check([&](auto& a) { a.pop16(static_cast<uint8_t>(imm), true); }, InstrKind::Pop,
          [&](const Instr& i) { CHECK(i.reglist == (imm | disasm::kRegPc)); });
    check([&](auto& a) { a.str16(rl, rl2, (imm % 32) * 4); }, InstrKind::StrImm,
          [&](const Instr& i) {
            CHECK(i.rd == rl);
            CHECK(i.rn == rl2);
            CHECK(i.imm == (imm % 32u) * 4);
          });
    check([&](auto& a) { a.ldr16(rl, rl2, (imm % 32) * 4); }, InstrKind::LdrImm,
          [&](const Instr& i) {
            CHECK(i.rd == rl);
            CHECK(i.rn == rl2);
          });
    check([&](auto& a) { a.str_sp(rl, imm * 4); }, InstrKind::StrImm, [&](const Instr& i) {
      CHECK(i.rn == 13);
      CHECK(i.imm == imm * 4u);
    });
    check([&](auto& a) { a.ldr_sp(rl, imm * 4); }, InstrKind::LdrImm,
          [&](const Instr& i) { CHECK(i.rn == 13); });

    uint16_t imm16 = static_cast<uint16_t>(rng());
    check([&](auto& a) { a.movw(ra, imm16); }, InstrKind::MovImm, [&](const Instr& i) {
      CHECK(i.rd == ra);
      CHECK(i.imm == imm16);
    });
    check([&](auto& a) { a.movt(ra, imm16); }, InstrKind::Movt, [&](const Instr& i) {
      CHECK(i.rd == ra);
      CHECK(i.imm == imm16);
    });
    check([&](auto& a) { a.mov_w_imm12(ra, imm); }, InstrKind::MovImm,
          [&](const Instr& i) { CHECK(i.imm == imm); });  // low imm12 expands to itself
    check([&](auto& a) { a.orr_w_imm12(rl, rl2, imm); }, InstrKind::OrrImm, [&](const Instr& i) {
      CHECK(i.rd == rl);
      CHECK(i.rn == rl2);
      CHECK(i.imm == imm);
    });
    check([&](auto& a) { a.ldr_w(ra, rl, static_cast<uint16_t>(imm * 4)); }, InstrKind::LdrImm,
          [&](const Instr& i) {
            CHECK(i.rd == ra);
            CHECK(i.rn == rl);
            CHECK(i.imm == imm * 4u);
          });
    check([&](auto& a) { a.str_w(ra, rl, static_cast<uint16_t>(imm * 4)); }, InstrKind::StrImm,
          [&](const Instr& i) { CHECK(i.rd == ra); });
    check([&](auto& a) { a.ldrt(rl, rl2, imm); }, InstrKind::LdrT, [&](const Instr& i) {
      CHECK(i.rd == rl);
      CHECK(i.rn == rl2);
      CHECK(i.imm == imm);
    });
    check([&](auto& a) { a.strt(rl, rl2, imm); }, InstrKind::StrT,
          [&](const Instr& i) { CHECK(i.imm == imm); });
    check([&](auto& a) { a.push_w(static_cast<uint16_t>(0x4000 | imm)); }, InstrKind::Push,
          [&](const Instr& i) { CHECK((i.reglist & 0xFF) == imm); });
    check([&](auto& a) { a.pop_w(static_cast<uint16_t>(0x8000 | imm)); }, InstrKind::Pop,
          [&](const Instr& i) { CHECK((i.reglist & disasm::kRegPc) != 0); });

    for (uint8_t s : {sysm::kMsp, sysm::kPsp, sysm::kMsplim, sysm::kPsplim, sysm::kControl,
                      sysm::kControlNs, sysm::kPspNs}) {
      check([&](auto& a) { a.msr(s, ra); }, InstrKind::MsrSpecial, [&](const Instr& i) {
        CHECK(i.imm == s);
        CHECK(i.rn == ra);
      });
      check([&](auto& a) { a.mrs(ra, s); }, InstrKind::MrsSpecial, [&](const Instr& i) {
        CHECK(i.imm == s);
        CHECK(i.rd == ra);
      });
    }
    check([&](auto& a) { a.isb(); }, InstrKind::Isb, [](const Instr&) {});
    check([&](auto& a) { a.dsb(); }, InstrKind::Dsb, [](const Instr&) {});
    check([&](auto& a) { a.dmb(); }, InstrKind::Dmb, [](const Instr&) {});
    check([&](auto& a) { a.sg(); }, InstrKind::Sg, [](const Instr&) {});
    check([&](auto& a) { a.cps_id(); }, InstrKind::Cps, [](const Instr&) {});
    for (uint8_t v : {0, 1, 2, 3})
      check([&](auto& a) { a.tt(v, rl, rl2); }, InstrKind::Tt, [&](const Instr& i) {
        CHECK(i.imm == v);
        CHECK(i.rd == rl);
        CHECK(i.rn == rl2);
      });
  }
}

TEST_CASE("branch targets compute as absolute addresses", "[disasm]") {
  const uint32_t base = 0x08000000;
  testasm::Assembler a(base);
  a.label("start");
  a.b16("fwd");        // 0x08000000
  a.movs(0, 0);        // 0x08000002
  a.label("fwd");
  a.bl("far");         // 0x08000004
  a.bcond16(0, "fwd"); // 0x08000008: beq back to 0x08000004
  a.b32("start");      // 0x0800000a
  a.bcond32(1, "far"); // 0x0800000e
  a.label("far");
  a.bx(14);            // 0x08000012
  auto img = image_of(a, base);

  auto at = [&](uint32_t addr) { return disasm::decode_one(img, addr); };
  CHECK(at(base + 0x0).kind == InstrKind::B);
  CHECK(at(base + 0x0).imm == base + 0x4);
  CHECK(at(base + 0x4).kind == InstrKind::Bl);
  CHECK(at(base + 0x4).imm == base + 0x12);
  CHECK(at(base + 0x8).kind == InstrKind::Bcond);
  CHECK(at(base + 0x8).imm == base + 0x4);
  CHECK(at(base + 0x8).cond == 0);
  CHECK(at(base + 0xA).kind == InstrKind::B);
  CHECK(at(base + 0xA).imm == base + 0x0);
  CHECK(at(base + 0xE).kind == InstrKind::Bcond);
  CHECK(at(base + 0xE).imm == base + 0x12);
}

TEST_CASE("ldr literal resolves pool addresses", "[disasm]") {
  const uint32_t base = 0x1000;
  testasm::Assembler a(base);
  a.ldr_lit16(3, "pool");
  a.ldr_lit32(4, "pool");
  a.bx(14);
  a.align(4);
  a.pool_value("pool", 0xCAFEBABE);
  auto img = image_of(a, base);
  auto i16 = disasm::decode_one(img, base);
  CHECK(i16.kind == InstrKind::LdrLiteral);
  CHECK(i16.rd == 3);
  CHECK(img.read_u32(i16.imm) == 0xCAFEBABE);
  auto i32 = disasm::decode_one(img, base + 2);
  CHECK(i32.kind == InstrKind::LdrLiteral);
  CHECK(i32.rd == 4);
  CHECK(i32.imm == i16.imm);
}

TEST_CASE("decode is total and in-bounds", "[disasm]") {
  ingest::FirmwareImage img;
  img.base = 0;
  img.bytes = {0x70, 0x47, 0x00, 0xF0};  // bx lr; truncated 32-bit prefix
  CHECK(disasm::decode_one(img, 0).kind == InstrKind::Bx);
  auto trunc = disasm::decode_one(img, 2);
  CHECK(trunc.kind == InstrKind::Unknown);
  CHECK(trunc.width == 2);  // cannot extend past the image
  CHECK_THROWS_AS(disasm::decode_one(img, 4), Error);
  CHECK_THROWS_AS(disasm::decode_one(img, 1), Error);
}

TEST_CASE("decode fuzz never crashes and width rule holds", "[disasm]") {
  std::mt19937 rng(99);
  ingest::FirmwareImage img;
  img.base = 0x20000;
  img.bytes.resize(4096);
  for (int round = 0; round < 20; ++round) {
    for (auto& b : img.bytes) b = static_cast<uint8_t>(rng());
    for (uint32_t off = 0; off + 2 <= img.bytes.size(); off += 2) {
      Instr i = disasm::decode_one(img, 0x20000 + off);
      uint16_t hw = static_cast<uint16_t>(i.raw[0] | (i.raw[1] << 8));
      if (off + 4 <= img.bytes.size())
        CHECK(i.width == disasm::instr_width(hw));
      else
        CHECK(i.width == 2);
    }
  }
}

TEST_CASE("recursive descent follows calls and skips pools", "[disasm]") {
  const uint32_t base = 0x08000000;
  testasm::Assembler a(base);
  a.label("reset");
  a.push16(0x00, true);
  a.bl("f");
  a.ldr_lit16(0, "pool");
  a.pop16(0x00, true);
  a.label("f");
  a.bx(14);
  a.align(4);
  a.pool_value("pool", 0x12345678);
  auto img = image_of(a, base);
  auto idx = disasm::disassemble(img, {base});

  CHECK(idx.frontier_exhausted);
  CHECK(idx.at(a.label_addr("f")) != nullptr);          // BL target decoded
  CHECK(idx.at(a.label_addr("f"))->kind == InstrKind::Bx);
  CHECK(idx.instrs.count(a.label_addr("pool")) == 0);   // pool never decoded
  CHECK(idx.data_addrs.count(a.label_addr("pool")) == 1);
  CHECK(idx.pool_values.at(a.label_addr("pool")) == 0x12345678);

  // idempotence
  auto idx2 = disasm::disassemble(img, {base});
  CHECK(idx.instrs.size() == idx2.instrs.size());
  CHECK(idx.entry_points == idx2.entry_points);
}

TEST_CASE("conditional branches follow both sides", "[disasm]") {
  const uint32_t base = 0x0;
  testasm::Assembler a(base);
  a.bcond16(1, "taken");
  a.movs(0, 1);  // fallthrough
  a.label("taken");
  a.bx(14);
  auto img = image_of(a, base);
  auto idx = disasm::disassemble(img, {0});
  CHECK(idx.at(0x2) != nullptr);
  CHECK(idx.at(a.label_addr("taken")) != nullptr);
}

TEST_CASE("padding decodes as unknown and ends the path", "[disasm]") {
  ingest::FirmwareImage img;
  img.base = 0;
  img.bytes = {0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF};
  auto idx = disasm::disassemble(img, {0});
  CHECK(idx.instrs.size() == 1);
  CHECK(idx.at(0)->kind == InstrKind::Unknown);
}

TEST_CASE("decoded instructions never overlap", "[disasm]") {
  // a branch targeting the middle of a 32-bit instruction must not split it
  const uint32_t base = 0x0;
  testasm::Assembler a(base);
  a.label("reset");
  a.movw(0, 0x2000);  // 4 bytes at 0
  a.bx(14);
  a.align(4);
  ingest::FirmwareImage img;
  img.base = base;
  img.bytes = a.finalize();
  auto idx = disasm::disassemble(img, {0x0, 0x2});  // 0x2 lands inside the MOVW
  uint32_t prev_end = 0;
  for (const auto& [addr, ins] : idx.instrs) {
    CHECK(addr >= prev_end);
    prev_end = addr + ins.width;
  }
  CHECK(idx.at(0x0) != nullptr);
  CHECK(idx.at(0x2) == nullptr);

  // the same holds over a randomized image with many entry points
  std::mt19937 rng(1234);
  ingest::FirmwareImage rnd;
  rnd.base = 0;
  rnd.bytes.resize(2048);
  for (auto& b : rnd.bytes) b = static_cast<uint8_t>(rng());
  std::vector<uint32_t> entries;
  for (int i = 0; i < 64; ++i) entries.push_back((rng() % 2048) & ~1u);
  auto ridx = disasm::disassemble(rnd, entries);
  prev_end = 0;
  for (const auto& [addr, ins] : ridx.instrs) {
    CHECK(addr >= prev_end);
    prev_end = addr + ins.width;
  }
}

TEST_CASE("disassembly is independent of entry-point order", "[disasm]") {
  std::mt19937 rng(55);
  ingest::FirmwareImage img;
  img.base = 0x1000;
  img.bytes.resize(1024);
  for (auto& b : img.bytes) b = static_cast<uint8_t>(rng());
  std::vector<uint32_t> entries;
  for (int i = 0; i < 32; ++i) entries.push_back(0x1000 + ((rng() % 1024) & ~1u));
  auto a = disasm::disassemble(img, entries);
  std::shuffle(entries.begin(), entries.end(), rng);
  auto b = disasm::disassemble(img, entries);
  CHECK(a.entry_points == b.entry_points);
  CHECK(a.data_addrs == b.data_addrs);
  REQUIRE(a.instrs.size() == b.instrs.size());
  for (const auto& [addr, ins] : a.instrs) {
    const disasm::Instr* other = b.at(addr);
    REQUIRE(other != nullptr);
    CHECK(other->kind == ins.kind);
    CHECK(other->width == ins.width);
  }
}

TEST_CASE("odd in-image pool pointers become entry points", "[disasm]") {
  const uint32_t base = 0x4000;
  testasm::Assembler a(base);
  a.ldr_lit16(0, "vec");  // loads a function pointer
  a.bx(14);
  a.label("indirect");
  a.movs(0, 7);
  a.bx(14);
  a.align(4);
  a.pool_entry("vec", "indirect", true);
  auto img = image_of(a, base);
  auto idx = disasm::disassemble(img, {base});
  REQUIRE(idx.at(a.label_addr("indirect")) != nullptr);
  CHECK(idx.at(a.label_addr("indirect"))->kind == InstrKind::MovImm);
  CHECK(idx.entry_points.count(a.label_addr("indirect")) == 1);
}
