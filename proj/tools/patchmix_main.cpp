// patchmix CLI: two-stage training, evaluation, the synthetic SCM
// experiment, the unsupervised pipeline, dataset generation, and the
// self-test oracle suite.
#include <cstring>
#include <iostream>
#include <string>
#include <vector>

#include "patchmix/config.hpp"
#include "patchmix/selftest.hpp"
#include "patchmix/tensor.hpp"
#include "patchmix/trainer.hpp"

namespace {

void usage(std::ostream& out) {
  out << "usage: patchmix <command> [--config FILE] [--scm k=v,...] [key=value ...]\n"
         "commands:\n"
         "  train           two-stage PatchMix training (Alg-style loop)\n"
         "  eval            episode evaluation of a checkpoint (checkpoint=...)\n"
         "  scm-experiment  baseline/mixup/cutmix/patchmix comparison on SCM data\n"
         "  unsup-pretrain  PatchMoCo pretraining + pseudo-label training\n"
         "  generate-scm    write the synthetic dataset to out_dir\n"
         "  selftest        run the oracle and invariant suite\n"
         "config: line-oriented `key = value` file; bare key=value args override.\n";
}

}  // namespace

int main(int argc, char** argv) {
  using namespace patchmix;
  if (argc < 2) {
    usage(std::cerr);
    return 1;
  }
  std::string command = argv[1];
  if (command == "-h" || command == "--help" || command == "help") {
    usage(std::cout);
    return 0;
  }

  try {
    RunConfig cfg;
    std::vector<std::string> overrides;
    for (int i = 2; i < argc; ++i) {
      std::string arg = argv[i];
      if (arg == "--config") {
        if (i + 1 >= argc) throw ArgumentError("--config needs a path");
        cfg = load_config(argv[++i]);
      } else if (arg == "--scm") {
        if (i + 1 >= argc) throw ArgumentError("--scm needs k=v,... settings");
        apply_scm_shorthand(cfg, argv[++i]);
      } else if (arg.find('=') != std::string::npos) {
        overrides.push_back(arg);
      } else {
        throw ArgumentError("unrecognized argument: " + arg);
      }
    }
    apply_overrides(cfg, overrides);

    if (command == "train") return cmd_train(cfg);
    if (command == "eval") return cmd_eval(cfg);
    if (command == "scm-experiment") return cmd_scm_experiment(cfg);
    if (command == "unsup-pretrain") return cmd_unsup(cfg);
    if (command == "generate-scm") return cmd_generate_scm(cfg);
    if (command == "selftest") return run_selftest(std::cout) ? 0 : 1;
    std::cerr << "unknown command: " << command << "\n";
    usage(std::cerr);
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
