// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace cmscope {

enum class errc {
  empty_input,
  bad_checksum,
  bad_record_type,
  truncated_record,
  overlapping_segments,
  gap_too_large,
  no_viable_base,
  invalid_initial_sp,
  invalid_reset_vector,
  table_truncated,
  out_of_bounds,
  invalid_config,
  unknown_register,
  illegal_transition,
  empty_corpus,
  io_error,
  parse_error,
};

inline const char* errc_name(errc c) {
  switch (c) {
    case errc::empty_input: return "EmptyInput";
    case errc::bad_checksum: return "BadChecksum";
    case errc::bad_record_type: return "BadRecordType";
    case errc::truncated_record: return "TruncatedRecord";
    case errc::overlapping_segments: return "OverlappingSegments";
    case errc::gap_too_large: return "GapTooLarge";
    case errc::no_viable_base: return "NoViableBase";
    case errc::invalid_initial_sp: return "InvalidInitialSp";
    case errc::invalid_reset_vector: return "InvalidResetVector";
    case errc::table_truncated: return "TableTruncated";
    case errc::out_of_bounds: return "OutOfBounds";
    case errc::invalid_config: return "InvalidConfig";
    case errc::unknown_register: return "UnknownRegister";
    case errc::illegal_transition: return "IllegalTransition";
    case errc::empty_corpus: return "EmptyCorpus";
    case errc::io_error: return "IoError";
    case errc::parse_error: return "ParseError";
  }
  return "UnknownError";
}

/// Library-wide exception type. `line` is 1-based for record decoders, 0 when
/// not applicable.
class Error : public std::runtime_error {
 public:
  Error(errc code, std::string message, std::size_t line = 0)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message +
                           (line ? " (line " + std::to_string(line) + ")" : "")),
        code_(code),
        line_(line) {}

  errc code() const noexcept { return code_; }
  std::size_t line() const noexcept { return line_; }

 private:
  errc code_;
  std::size_t line_;
};

}  // namespace cmscope
