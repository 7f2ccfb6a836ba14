#pragma once

#include <sys/utsname.h>
#include <unistd.h>

#include <fstream>
#include <string>
#include <thread>

#include "greenbench/jsonl.hpp"

namespace greenbench {

// Host description recorded in every campaign log header; results are only
// comparable on the same profile.
struct MachineProfile {
  std::string platform;
  std::string processor;
  std::string memory;
  std::string os;
  std::string kernel;

  bool operator==(const MachineProfile&) const = default;
};

namespace detail {

inline std::string trim(std::string s) {
  auto b = s.find_first_not_of(" \t\"");
  auto e = s.find_last_not_of(" \t\"");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

inline std::string proc_field(const char* path, const std::string& key, char sep) {
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    auto pos = line.find(sep);
    if (pos == std::string::npos) continue;
    if (trim(line.substr(0, pos)) == key) return trim(line.substr(pos + 1));
  }
  return {};
}

}  // namespace detail

// `platform` names the host environment (a cloud, a lab machine); it cannot be
// detected, so it comes from configuration.
inline MachineProfile capture_machine_profile(const std::string& platform) {
  MachineProfile p;
  p.platform = platform.empty() ? "unspecified" : platform;
  auto model = detail::proc_field("/proc/cpuinfo", "model name", ':');
  p.processor = (model.empty() ? std::string("unknown") : model) + " (" +
                std::to_string(std::thread::hardware_concurrency()) + " logical cores)";
  auto mem = detail::proc_field("/proc/meminfo", "MemTotal", ':');
  p.memory = mem.empty() ? "unknown" : mem;
  auto os = detail::proc_field("/etc/os-release", "PRETTY_NAME", '=');
  p.os = os.empty() ? "unknown" : os;
  utsname u{};
  p.kernel = ::uname(&u) == 0 ? std::string(u.release) : "unknown";
  return p;
}

inline Json to_json(const MachineProfile& p) {
  return Json{{"platform", p.platform},
              {"processor", p.processor},
              {"memory", p.memory},
              {"os", p.os},
              {"kernel", p.kernel}};
}

inline MachineProfile machine_profile_from_json(const Json& j) {
  MachineProfile p;
  p.platform = j.value("platform", "");
  p.processor = j.value("processor", "");
  p.memory = j.value("memory", "");
  p.os = j.value("os", "");
  p.kernel = j.value("kernel", "");
  return p;
}

}  // namespace greenbench
