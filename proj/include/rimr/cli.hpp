#pragma once

// Command-line front end of the `rimr` tool.
//
//   rimr synth         --config scenes.cfg --out data/ --seed 7
//   rimr train-stage1  --config train.cfg --data data/manifest.tsv --out runs/stage1
//   rimr train-stage2  --config train.cfg --data data/manifest.tsv --out runs/stage2
//   rimr reconstruct   --data data/manifest.tsv --sample s0061 --out recon/
//   rimr eval          --data data/manifest.tsv --out report.txt
//   rimr inspect       FILE
//
// Exit codes: 0 success, 1 usage error, 2 data or validation error, 3
// numerical abort. RIMR_DETERMINISTIC=1 forces single-threaded execution.

#include <ostream>
#include <string>
#include <vector>

namespace rimr::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace rimr::cli
