#include <map>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "basisloss/data.hpp"

using namespace basisloss;

TEST(Generate, DefaultCounts) {
    const Dataset ds = generate({});
    EXPECT_EQ(ds.size(), 2000u);
    EXPECT_EQ(ds.features.cols(), 32u);
    std::map<std::size_t, int> per;
    for (auto y : ds.labels) ++per[y];
    EXPECT_EQ(per.size(), 50u);
    for (const auto& [y, n] : per) EXPECT_EQ(n, 40);
    EXPECT_EQ(ds.num_train_speakers(), 50u);
    EXPECT_EQ(ds.indices(Split::Heldout).size(), 50u * 8u);
}

TEST(Generate, ZeroNoiseGivesIdenticalUtterances) {
    SyntheticDatasetSpec spec;
    spec.n_speakers = 3;
    spec.utterances_per_speaker = 4;
    spec.utterance_noise = 0.0;
    const Dataset ds = generate(spec);
    for (std::size_t r = 0; r < ds.size(); ++r) {
        const std::size_t first = ds.labels[r] * 4;
        for (std::size_t c = 0; c < 32; ++c) EXPECT_EQ(ds.features(r, c), ds.features(first, c));
    }
}

TEST(Generate, Deterministic) {
    SyntheticDatasetSpec spec;
    spec.seed = 99;
    EXPECT_EQ(generate(spec).features, generate(spec).features);
    SyntheticDatasetSpec other = spec;
    other.seed = 100;
    EXPECT_NE(generate(spec).features, generate(other).features);
}

TEST(Generate, DisjointEvalSpeakers) {
    SyntheticDatasetSpec spec;
    spec.disjoint_eval_speakers = true;
    const Dataset ds = generate(spec);
    std::set<std::size_t> train, held;
    for (std::size_t r = 0; r < ds.size(); ++r)
        (ds.splits[r] == Split::Train ? train : held).insert(ds.labels[r]);
    EXPECT_EQ(train.size(), 40u);
    EXPECT_EQ(held.size(), 10u);
    for (auto y : held) EXPECT_EQ(train.count(y), 0u);
    EXPECT_EQ(ds.num_train_speakers(), 40u);
}

TEST(Generate, RejectsInvalidSpecs) {
    SyntheticDatasetSpec spec;
    spec.n_speakers = 1;
    EXPECT_THROW(generate(spec), InvalidSpec);
    spec = {};
    spec.speaker_spread = 0.0;
    EXPECT_THROW(generate(spec), InvalidSpec);
    spec = {};
    spec.utterance_noise = -0.1;
    EXPECT_THROW(generate(spec), InvalidSpec);
}

TEST(HeldoutCount, Rounding) {
    EXPECT_EQ(heldout_count(1), 0u);
    EXPECT_EQ(heldout_count(2), 1u);
    EXPECT_EQ(heldout_count(40), 8u);
    EXPECT_EQ(heldout_count(5), 1u);
}

TEST(DatasetFile, RoundTripIsExact) {
    SyntheticDatasetSpec spec;
    spec.n_speakers = 6;
    spec.utterances_per_speaker = 5;
    spec.feature_dim = 4;
    const Dataset ds = generate(spec);
    std::stringstream ss;
    write_dataset(ss, ds, {"provenance line"});
    const Dataset back = read_dataset(ss);
    EXPECT_EQ(back.features, ds.features);
    EXPECT_EQ(back.labels, ds.labels);
    EXPECT_EQ(back.splits, ds.splits);
    EXPECT_EQ(back.spec.seed, ds.spec.seed);
}

TEST(DatasetFile, RejectsMalformedInput) {
    std::stringstream bad("not a dataset\n");
    EXPECT_THROW(read_dataset(bad), FormatError);

    SyntheticDatasetSpec spec;
    spec.n_speakers = 2;
    spec.utterances_per_speaker = 2;
    spec.feature_dim = 2;
    std::stringstream ss;
    write_dataset(ss, generate(spec));
    std::string text = ss.str();
    text.resize(text.rfind('\n', text.size() - 2) + 1);  // drop the last row
    std::stringstream truncated(text);
    EXPECT_THROW(read_dataset(truncated), FormatError);
}

TEST(NextBatch, GroupedComposition) {
    const Dataset ds = generate({});
    BatchPlan plan{BatchMode::SpeakerGrouped, 100, 5, 3};
    for (std::size_t step = 0; step < 20; ++step) {
        const auto b = next_batch(plan, ds, step);
        std::map<std::size_t, int> per;
        for (auto y : b.labels) ++per[y];
        EXPECT_EQ(per.size(), 20u);
        for (const auto& [y, n] : per) EXPECT_EQ(n, 5);
        for (auto r : b.rows) EXPECT_EQ(ds.splits[r], Split::Train);
    }
    BatchPlan single{BatchMode::SpeakerGrouped, 10, 1, 3};
    const auto b = next_batch(single, ds, 0);
    EXPECT_EQ(std::set<std::size_t>(b.labels.begin(), b.labels.end()).size(), 10u);
}

TEST(NextBatch, RandomModeDrawsDistinctTrainingRows) {
    const Dataset ds = generate({});
    const BatchPlan plan{};
    const auto b = next_batch(plan, ds, 4);
    EXPECT_EQ(b.rows.size(), 100u);
    EXPECT_EQ(std::set<std::size_t>(b.rows.begin(), b.rows.end()).size(), 100u);
    for (std::size_t i = 0; i < b.rows.size(); ++i) {
        EXPECT_EQ(ds.splits[b.rows[i]], Split::Train);
        EXPECT_EQ(ds.labels[b.rows[i]], b.labels[i]);
    }
}

TEST(NextBatch, Deterministic) {
    const Dataset ds = generate({});
    const BatchPlan plan{BatchMode::SpeakerGrouped, 100, 5, 8};
    EXPECT_EQ(next_batch(plan, ds, 17).rows, next_batch(plan, ds, 17).rows);
    EXPECT_NE(next_batch(plan, ds, 17).rows, next_batch(plan, ds, 18).rows);
}

TEST(NextBatch, CoversEveryTrainingSpeaker) {
    const Dataset ds = generate({});
    const BatchPlan plan{BatchMode::SpeakerGrouped, 100, 5, 1};
    std::set<std::size_t> seen;
    for (std::size_t step = 0; step < 50; ++step)
        for (auto y : next_batch(plan, ds, step).labels) seen.insert(y);
    EXPECT_EQ(seen.size(), ds.num_train_speakers());
}

TEST(NextBatch, RejectsInvalidPlans) {
    const Dataset ds = generate({});
    EXPECT_THROW(next_batch(BatchPlan{BatchMode::SpeakerGrouped, 100, 7, 1}, ds, 0), InvalidPlan);
    EXPECT_THROW(next_batch(BatchPlan{BatchMode::SpeakerGrouped, 5, 5, 1}, ds, 0), InvalidPlan);
    EXPECT_THROW(next_batch(BatchPlan{BatchMode::Random, 0, 5, 1}, ds, 0), InvalidPlan);
    EXPECT_THROW(next_batch(BatchPlan{BatchMode::SpeakerGrouped, 100, 50, 1}, ds, 0), InvalidPlan);
}
