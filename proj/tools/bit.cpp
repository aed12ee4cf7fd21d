#include "bit/cli/commands.hpp"

#include "CLI11.hpp"

#include <cstdlib>
#include <iostream>
#include <string>

namespace {

void add_common(CLI::App* cmd, bit::cli::Options& o) {
  cmd->add_option("--config", o.config, "Run configuration (JSON)");
  cmd->add_option("--seed", o.seed, "Seed override (also BIT_SEED)");
}

}  // namespace

int main(int argc, char** argv) {
  using namespace bit::cli;
  Options o;

  CLI::App app{"Bidirectional cross-interaction matching on synthetic visible/infrared data"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  add_common(gen, o);
  gen->add_option("--out", o.out, "Dataset file to write")->required();

  auto* train = app.add_subcommand("train", "Train stage 1 (backbone) or stage 2 (matching model)");
  add_common(train, o);
  train->add_option("--data", o.data, "Dataset file; generated from the config when omitted");
  train->add_option("--stage", o.stage, "1 or 2")->check(CLI::IsMember({1, 2}));
  train->add_option("--checkpoint", o.checkpoint, "Stage-1 checkpoint (stage 2 only)");
  train->add_option("--out", o.out, "Checkpoint to write")->required();

  auto* eval = app.add_subcommand("eval", "Evaluate infrared-to-visible retrieval");
  add_common(eval, o);
  eval->add_option("--data", o.data, "Dataset file; generated from the config when omitted");
  eval->add_option("--checkpoint", o.checkpoint, "Trained checkpoint")->required();
  eval->add_option("--top-K", o.top_K, "Candidates rescored per query");
  eval->add_flag("--baseline", o.baseline, "Cosine ranking of backbone features only");
  eval->add_option("--out", o.out, "Report file (default stdout)");

  auto* imb = app.add_subcommand("imbalance", "Train and evaluate under reduced modality data");
  add_common(imb, o);
  imb->add_option("--data", o.data, "Dataset file; generated from the config when omitted");
  imb->add_option("--fractions", o.fractions, "Comma-separated removal fractions")->delimiter(',');
  imb->add_option("--modality", o.modality, "vis or ir")->check(CLI::IsMember({"vis", "ir"}));
  imb->add_option("--top-K", o.top_K, "Candidates rescored per query");
  imb->add_option("--out", o.out, "Report file (default stdout)");

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every gradient");

  auto* dbg = app.add_subcommand("debug-matches", "Dump per-pair matches, S_hat and Psi");
  add_common(dbg, o);
  dbg->add_option("--data", o.data, "Dataset file; generated from the config when omitted");
  dbg->add_option("--checkpoint", o.checkpoint, "Stage-2 checkpoint")->required();
  dbg->add_option("--top-K", o.top_K, "Candidates dumped per query");
  dbg->add_option("--out", o.out, "Dump file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  if (const char* c = std::getenv("BIT_GRADCHECK_CORRUPT")) o.corrupt_op = c;

  if (gen->parsed()) return cmd_gen_data(o, std::cout, std::cerr);
  if (train->parsed()) return cmd_train(o, std::cout, std::cerr);
  if (eval->parsed()) return cmd_eval(o, std::cout, std::cerr);
  if (imb->parsed()) return cmd_imbalance(o, std::cout, std::cerr);
  if (grad->parsed()) return cmd_gradcheck(o, std::cout, std::cerr);
  if (dbg->parsed()) return cmd_debug_matches(o, std::cout, std::cerr);
  return kExitUsage;
}
