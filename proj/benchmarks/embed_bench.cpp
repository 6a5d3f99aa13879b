// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "cogtipro/embed.hpp"

namespace {

using namespace cogtipro;

void BM_HashingEmbed(benchmark::State& state) {
  embed::HashingEmbedder h(static_cast<int>(state.range(0)));
  const std::string summary =
      "MARKER SUMMARY\nrepetition_bursts: 4\nfiller_rate: 0.140\ntopic_jump_rate: 0.120\n"
      "notable: repetition, filler, topic_jump\n";
  for (auto _ : state) benchmark::DoNotOptimize(h.embed(summary));
}
BENCHMARK(BM_HashingEmbed)->Arg(32)->Arg(384);

void BM_Fuse(benchmark::State& state) {
  embed::EmbeddingVector v{std::vector<double>(768, 0.5), embed::Modality::Acoustic, "a"};
  embed::EmbeddingVector u{std::vector<double>(384, 0.25), embed::Modality::Linguistic, "l"};
  for (auto _ : state) benchmark::DoNotOptimize(embed::fuse(v, u));
}
BENCHMARK(BM_Fuse);

}  // namespace
