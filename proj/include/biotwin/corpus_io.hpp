#pragma once

// On-disk corpus layout:
//   <dir>/corpus.json          manifest (spec + per-experiment metadata)
//   <dir>/traces/E000.csv ...  time_s,force_N with 17 significant digits

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "biotwin/error.hpp"
#include "biotwin/mtwin.hpp"

namespace biotwin::corpus_io {

namespace fs = std::filesystem;
using mtwin::ForceTrace;

inline constexpr const char* kManifestName = "corpus.json";
inline constexpr const char* kCorpusFormat = "biotwin-corpus";
inline constexpr int kCorpusVersion = 1;

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
  out << text;
  require(static_cast<bool>(out), ErrorKind::Io, "write failed for " + path.string());
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string trace_table(const ForceTrace& trace) {
  std::string out = "time_s,force_N\n";
  out.reserve(out.size() + trace.size() * 44);
  for (std::size_t k = 0; k < trace.size(); ++k) {
    out += format_double(trace.time_at(k));
    out += ',';
    out += format_double(trace.forces_N[k]);
    out += '\n';
  }
  return out;
}

inline void write_trace(const fs::path& path, const ForceTrace& trace) { write_text(path, trace_table(trace)); }

/// Reads a two-column trace table. Metadata other than the forces is left
/// default; the sample period must be 0.04 s.
inline ForceTrace read_trace(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  ForceTrace trace;
  std::vector<double> times;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (line.rfind("time_s", 0) == 0) continue;
    }
    auto comma = line.find(',');
    require(comma != std::string::npos, ErrorKind::Parse, "malformed trace row in " + path.string());
    try {
      times.push_back(std::stod(line.substr(0, comma)));
      trace.forces_N.push_back(std::stod(line.substr(comma + 1)));
    } catch (const std::exception&) {
      throw Error(ErrorKind::Parse, "non-numeric trace row in " + path.string());
    }
  }
  for (std::size_t k = 1; k < times.size(); ++k)
    require(std::abs(times[k] - times[k - 1] - mtwin::kSamplePeriodS) < 1e-9, ErrorKind::Parse,
            "trace " + path.string() + " is not sampled every 0.04 s");
  return trace;
}

inline nlohmann::json experiment_record(const ForceTrace& t, const std::string& file) {
  const auto& p = t.protocol;
  return {{"experiment_id", t.experiment_id},
          {"sample_id", t.sample_id},
          {"waveform", std::string(stimgen::to_string(p.waveform))},
          {"frequency_Hz", p.frequency_Hz},
          {"pulse_width_ms", p.pulse_width_ms},
          {"amplitude_mA", p.amplitude_mA},
          {"modulation", std::string(stimgen::to_string(p.modulation.kind))},
          {"modulated_parameter", std::string(stimgen::to_string(p.modulation.parameter))},
          {"quiet_period_s", t.quiet_period_s},
          {"n_steps", t.size()},
          {"file", file},
          {"protocol", stimgen::to_json(p)}};
}

inline void write_corpus(const fs::path& dir, const std::vector<ForceTrace>& traces, const mtwin::CorpusSpec& spec) {
  std::error_code ec;
  fs::create_directories(dir / "traces", ec);
  require(!ec, ErrorKind::Io, "cannot create " + (dir / "traces").string());
  nlohmann::json experiments = nlohmann::json::array();
  for (const auto& t : traces) {
    std::string file = "traces/" + t.experiment_id + ".csv";
    write_trace(dir / file, t);
    experiments.push_back(experiment_record(t, file));
  }
  nlohmann::json manifest = {{"format", kCorpusFormat},
                             {"version", kCorpusVersion},
                             {"sample_period_s", mtwin::kSamplePeriodS},
                             {"spec", mtwin::to_json(spec)},
                             {"experiments", experiments}};
  write_text(dir / kManifestName, manifest.dump(2) + "\n");
}

inline nlohmann::json read_manifest(const fs::path& dir) {
  try {
    auto j = nlohmann::json::parse(read_text(dir / kManifestName));
    require(j.value("format", std::string()) == kCorpusFormat, ErrorKind::Parse,
            (dir / kManifestName).string() + " is not a corpus manifest");
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("corpus manifest: ") + e.what());
  }
}

inline std::vector<ForceTrace> read_corpus(const fs::path& dir) {
  auto manifest = read_manifest(dir);
  std::vector<ForceTrace> traces;
  try {
    for (const auto& e : manifest.at("experiments")) {
      ForceTrace t = read_trace(dir / e.at("file").get<std::string>());
      t.experiment_id = e.at("experiment_id").get<std::string>();
      t.sample_id = e.at("sample_id").get<std::string>();
      t.protocol = stimgen::protocol_from_json(e.at("protocol"));
      t.quiet_period_s = e.value("quiet_period_s", 0.0);
      traces.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("corpus manifest: ") + e.what());
  }
  return traces;
}

}  // namespace biotwin::corpus_io
