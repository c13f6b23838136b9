#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dconn {

enum ExitCode { kExitOk = 0, kExitCheckFailed = 1, kExitUsage = 2 };

// Runs one command line (args excludes the program name). Output goes to
// `out`, diagnostics to `err`. Never throws; errors map to exit codes.
//
//   gen       --kind K --n N --size S --seed X --out DIR [--noise s]
//   encode    --seg in.pgm --classes C --out out.cmk [--dtype u8|f32]
//   decode    --conn in.cmk [--threshold t] --out out.pgm
//   train     --config cfg.json [--data DIR] [--out DIR]
//   eval      --data DIR (--checkpoint f --config cfg.json | --predictions DIR)
//             [--report f] [--overlays DIR] [--save-predictions DIR]
//   gradcheck [--scope all|net|<op>] [--eps e] [--seed s] [--list]
//
// DCONN_SEED in the environment overrides the training config seed.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dconn
