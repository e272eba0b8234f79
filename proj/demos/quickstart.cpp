// Generates the synthetic task, runs a short C-LoRA search and prints the
// before/after accuracies.
#include <cstdlib>
#include <iostream>

#include "dflora/orchestrator/run.hpp"
#include "dflora/orchestrator/synth.hpp"

using namespace dflora;

int main(int argc, char** argv) {
  orchestrator::SynthOptions so;
  so.seed = argc > 1 ? std::strtoull(argv[1], nullptr, 10) : 0;
  const auto st = orchestrator::synth_task(so);

  orchestrator::RunConfig rc;
  rc.subspace.d = 200;
  rc.budget = 2000;
  rc.optimizer_seed = so.seed;
  const auto subs = orchestrator::prepare_subspaces(rc, st.model, st.task);
  const auto report = orchestrator::run(rc, st.model, st.task, subs);

  std::cout << "zero-delta  train " << report.reference.train.accuracy << "  dev "
            << report.reference.dev.accuracy << "\n"
            << "best on dev train " << report.best_dev.train.accuracy << "  dev "
            << report.best_dev.dev.accuracy << "  test " << report.best_dev.test.accuracy << "\n"
            << report.consumed << " forward calls in " << report.wall_seconds << " s\n";
}
