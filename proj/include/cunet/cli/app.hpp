#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "cunet/metrics/dice.hpp"
#include "cunet/nifti/nifti.hpp"

namespace cunet::cli {

inline constexpr const char* kVersion = "0.1.0";

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;  // unexpected failure
inline constexpr int kExitUsage = 2;     // bad flags, config or refusal
inline constexpr int kExitData = 3;      // unreadable or inconsistent inputs
inline constexpr int kExitNumeric = 4;   // non-finite loss

/// Runs one command line (without the program name). Normal output goes to
/// `out`, diagnostics to `err`. Never throws.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Files written into a training run directory.
inline constexpr const char* kManifestFile = "manifest.txt";
inline constexpr const char* kSplitFile = "split.txt";
inline constexpr const char* kCheckpointFile = "checkpoint.cunt";
inline constexpr const char* kStatsFile = "stats.tsv";
inline constexpr const char* kTimingFile = "timing.tsv";
inline constexpr const char* kReportFile = "report.txt";
inline constexpr const char* kLogFile = "train.log";

/// Binary PPM (P6): grayscale slice with the predicted outline in red and,
/// when given, the reference outline in green.
void write_overlay_ppm(const std::filesystem::path& path, const nifti::Volume& background,
                       const nifti::Volume& prediction, const nifti::Volume* truth,
                       std::size_t z);

}  // namespace cunet::cli
