// SPDX-License-Identifier: Apache-2.0
#include <CLI11.hpp>

#include "cmscope/cli.hpp"

using namespace cmscope;

int main(int argc, char** argv) {
  CLI::App app{"cm-scope: Cortex-M firmware security-feature scanner"};
  app.require_subcommand(1);

  cli::AnalyzeOptions analyze;
  std::string analyze_base, analyze_format;
  auto* a = app.add_subcommand("analyze", "Analyze one firmware image");
  a->add_option("file", analyze.file, "firmware file")->required();
  a->add_option("--base", analyze_base, "load base (hex), skips inference");
  a->add_option("--format", analyze_format, "raw|hex|srec (default: auto)");
  a->add_option("--profile", analyze.profile, "vendor profile id (default: generic)");
  a->add_option("--profiles-dir", analyze.profiles_dir, "extra vendor profile directory");
  a->add_option("--canary-patterns", analyze.canary_patterns_file, "canary pattern family file");
  a->add_option("--json", analyze.json_out, "write a JSON report here");
  a->add_flag("-v,--verbose", analyze.verbose, "print evidence addresses");

  cli::BatchOptions batch;
  auto* b = app.add_subcommand("batch", "Analyze a corpus manifest");
  b->add_option("manifest", batch.manifest, "manifest JSON file")->required();
  b->add_option("-j,--jobs", batch.jobs, "parallel workers (default 1)");
  b->add_option("--out-dir", batch.out_dir, "directory for per-file JSON reports");
  b->add_option("--profiles-dir", batch.profiles_dir, "extra vendor profile directory");
  b->add_option("--canary-patterns", batch.canary_patterns_file, "canary pattern family file");

  cli::ModelOptions model;
  std::string model_addr, model_addr_flag;
  auto* m = app.add_subcommand("model", "Query the protection-semantics model");
  m->add_option("subcmd", model.subcommand, "mpu-eval|attr-resolve|transition")->required();
  m->add_option("config", model.config_file, "config JSON file")->required();
  m->add_option("address", model_addr, "address (attr-resolve)");
  m->add_option("--addr", model_addr_flag, "address (mpu-eval)");
  m->add_option("--access", model.access, "read|write|execute");
  m->add_option("--priv", model.priv, "privileged|unprivileged");

  CLI11_PARSE(app, argc, argv);

  if (a->parsed()) {
    if (!analyze_base.empty()) {
      auto v = parse_u32(analyze_base);
      if (!v) {
        std::cerr << "error: bad --base " << analyze_base << "\n";
        return cli::kExitFatal;
      }
      analyze.base = *v;
    }
    if (!analyze_format.empty()) {
      if (analyze_format == "raw")
        analyze.format = ingest::SourceFormat::raw;
      else if (analyze_format == "hex")
        analyze.format = ingest::SourceFormat::intel_hex;
      else if (analyze_format == "srec")
        analyze.format = ingest::SourceFormat::srecord;
      else {
        std::cerr << "error: bad --format " << analyze_format << "\n";
        return cli::kExitFatal;
      }
    }
    return cli::cmd_analyze(analyze);
  }
  if (b->parsed()) return cli::cmd_batch(batch);
  if (m->parsed()) {
    const std::string& s = !model_addr_flag.empty() ? model_addr_flag : model_addr;
    if (!s.empty()) {
      auto v = parse_u32(s);
      if (!v) {
        std::cerr << "error: bad address " << s << "\n";
        return cli::kExitFatal;
      }
      model.addr = *v;
    }
    return cli::cmd_model(model);
  }
  return cli::kExitFatal;
}
