// Learns pose prototypes on a synthetic bird set and compares classifiers
// built on similarity-normalized regions, translation-normalized regions and
// the raw whole image.

#include <posenorm/classify.hpp>
#include <posenorm/extraction.hpp>
#include <posenorm/synthetic.hpp>

#include <cstdio>
#include <cstdlib>

using namespace posenorm;

namespace {

double test_accuracy(const SyntheticData& data, const FeaturePlan& plan, std::uint64_t seed) {
  const Dataset& ds = data.dataset;
  const auto load = [&](std::size_t i) { return data.images[i]; };
  const auto train = compute_features(ds, ds.indices(Split::Train), load, plan);
  const auto test = compute_features(ds, ds.indices(Split::Test), load, plan);
  std::vector<int> ytrain, ytest;
  for (auto i : train.images) ytrain.push_back(ds.labels[i]);
  for (auto i : test.images) ytest.push_back(ds.labels[i]);
  TrainConfig tc;
  tc.rng_seed = seed;
  const auto model = train_ova(train.rows, ytrain, ds.class_count(), tc, train.layout.fingerprint());
  return evaluate(model, test.rows, ytest).accuracy;
}

}  // namespace

int main(int argc, char** argv) {
  const std::uint64_t seed = argc > 1 ? std::strtoull(argv[1], nullptr, 10) : 1;
  SyntheticConfig sc;
  sc.rng_seed = seed;
  const SyntheticData data = generate_synthetic(sc);
  const auto hog = std::make_shared<HogExtractor>();

  PrototypeLearnConfig sim;
  sim.canonical_size = 64;
  const LearnResult learned = learn_prototypes(data.dataset, sim);
  std::printf("similarity prototypes: %zu (objective %.3f, %zu candidates)\n", learned.prototypes.prototypes.size(),
              learned.objective, learned.candidate_count);
  for (std::size_t p = 0; p < learned.prototypes.prototypes.size(); ++p) {
    std::printf("  #%zu anchored at %s part %d, %zu keypoints assigned\n", p,
                learned.prototypes.prototypes[p].ref_image.c_str(), learned.selected_anchors[p].part,
                learned.assignment_counts[p]);
  }

  PrototypeLearnConfig trans = sim;
  trans.family = WarpFamily::Translation;
  trans.neighbors = 1;
  trans.min_box_side = 32;
  const LearnResult translated = learn_prototypes(data.dataset, trans);

  FeaturePlan p_sim{learned.prototypes, false, 64, {hog}, {}};
  FeaturePlan p_trans{translated.prototypes, false, 64, {hog}, {}};
  FeaturePlan p_raw{{}, true, 64, {std::make_shared<RawPixelExtractor>(32)}, {}};
  std::printf("test accuracy  similarity %.3f  translation %.3f  whole-image pixels %.3f\n",
              test_accuracy(data, p_sim, seed), test_accuracy(data, p_trans, seed), test_accuracy(data, p_raw, seed));
}
