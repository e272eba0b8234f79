#pragma once

#include <map>
#include <string>
#include <vector>

#include "dflora/backbone/model.hpp"
#include "dflora/common.hpp"
#include "dflora/task/corpus.hpp"
#include "dflora/task/metrics.hpp"
#include "dflora/task/prompt.hpp"
#include "dflora/task/vocabulary.hpp"

namespace dflora::task {

// Rendered model inputs with their labels.
struct EncodedSet {
  std::vector<backbone::TokenSequence> inputs;
  std::vector<int> labels;

  std::size_t size() const { return inputs.size(); }
};

// Everything the orchestrator needs to score a model on a prompt task.
struct PromptTask {
  Vocabulary vocab;
  Pattern pattern;
  Verbalizer verbalizer;
  LossKind loss = LossKind::cross_entropy;
  bool report_f1 = false;
  int max_len = 0;
  EncodedSet train, dev, test;

  EvalResult evaluate(const backbone::FrozenModel& model,
                      std::span<const backbone::LowRankPair> deltas, const EncodedSet& set) const {
    return loss_and_metrics(model.forward(deltas, set.inputs), set.labels, verbalizer, loss,
                            report_f1);
  }
};

inline EncodedSet encode_set(const std::vector<Instance>& instances, const Pattern& pattern,
                             const Vocabulary& vocab, int max_len) {
  EncodedSet out;
  for (const auto& inst : instances) {
    out.inputs.push_back(render(inst, pattern, vocab, max_len).tokens);
    out.labels.push_back(inst.label);
  }
  return out;
}

// Builds the vocabulary (reserved tokens, every corpus word, pattern literals,
// verbalizer words) and renders the split.
inline PromptTask build_prompt_task(const FewShotSplit& split,
                                    const std::vector<std::string>& pattern_segments,
                                    const std::map<int, std::string>& verbalizer_words,
                                    Schema schema, int max_len,
                                    LossKind loss = LossKind::cross_entropy,
                                    bool report_f1 = false) {
  Pattern pattern(pattern_segments, schema);
  Vocabulary vocab;
  for (const auto* part : {&split.train, &split.dev, &split.test}) {
    for (const auto& inst : *part) {
      for (const auto& f : inst.fields) vocab.add_text(f);
    }
  }
  pattern.add_literals_to(vocab);
  for (const auto& [label, word] : verbalizer_words) vocab.add_text(word);

  Verbalizer verbalizer(verbalizer_words, vocab);
  require(verbalizer.num_classes() == split.num_classes, "verbalizer covers ",
          verbalizer.num_classes(), " classes but the task has ", split.num_classes);
  PromptTask task{std::move(vocab), std::move(pattern), std::move(verbalizer), loss, report_f1,
                  max_len, {}, {}, {}};
  task.train = encode_set(split.train, task.pattern, task.vocab, max_len);
  task.dev = encode_set(split.dev, task.pattern, task.vocab, max_len);
  task.test = encode_set(split.test, task.pattern, task.vocab, max_len);
  return task;
}

}  // namespace dflora::task
