#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace rwre::app {

// Stable exit-code contract.
enum ExitCode : int { ok = 0, config_error = 2, property_failure = 3, budget_exceeded = 4 };

inline constexpr const char* kToolName = "rwre_lab";
inline constexpr const char* kToolVersion = "0.1.0";

class ConfigError : public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

// Flags override scalar fields only.
struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::int64_t> replicas;
    std::optional<unsigned> threads;
};

// Parses the file; syntax errors report line and column.
nlohmann::json load_config(const std::filesystem::path& path);
nlohmann::json parse_config(const std::string& text);
// Checks the section layout {model, run, event, ladder, output} and field names.
void check_config(const nlohmann::json& config);
nlohmann::json apply_overrides(nlohmann::json config, const Overrides& o);

struct OutputFile {
    std::string name;  // relative to the output directory
    std::string sha256;
    std::uintmax_t bytes = 0;
};

struct CommandResult {
    int code = ok;
    std::string message;
    std::vector<OutputFile> outputs;
    std::filesystem::path manifest;
    nlohmann::json summary;
};

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

// Runs one subcommand with a complete configuration, writes its outputs and
// a manifest into output.dir. Configuration problems become config_error.
CommandResult run_command(const std::string& command, const nlohmann::json& config);

struct ReplayResult {
    bool identical = false;
    std::vector<std::string> mismatched;
    CommandResult rerun;
    nlohmann::json to_json() const;
};

// Re-runs the configuration echoed in a manifest into `out_dir` and compares
// every output digest.
ReplayResult replay_manifest(const std::filesystem::path& manifest, const std::filesystem::path& out_dir);

// The command-line front end; returns the process exit code.
int main_entry(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace rwre::app
