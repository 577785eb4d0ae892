#pragma once

// Per-image feature vectors over a fixed region list: the whole image
// (region 0) and one pose-normalized crop per prototype (region p + 1).

#include <posenorm/features.hpp>
#include <posenorm/imaging.hpp>
#include <posenorm/parallel.hpp>
#include <posenorm/prototypes.hpp>

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace posenorm {

struct FeaturePlan {
  PrototypeSet prototypes;
  bool whole_image = true;
  int crop_size = 64;  // side of every region crop handed to extractors
  std::vector<std::shared_ptr<const FeatureExtractor>> extractors;  // applied to every region
  std::vector<const ExternalFeatures*> external;                    // looked up by (image id, region)

  int region_count() const { return static_cast<int>(prototypes.prototypes.size()) + 1; }
  bool uses_region(int r) const { return r > 0 || whole_image; }

  FeatureLayout layout() const {
    FeatureLayout l;
    for (int r = 0; r < region_count(); ++r) {
      if (!uses_region(r)) continue;
      for (const auto& e : extractors) l.add(r, e->name(), e->dimension());
      for (const auto* f : external) l.add(r, f->extractor, f->dimension);
    }
    return l;
  }
};

// The crop of region `r`, or nullopt when its warp cannot be fit.
inline std::optional<RegionCrop> region_crop(const ImageRaster& img, const KeypointSet& kps, const FeaturePlan& plan,
                                             int r) {
  if (r == 0) return whole_image_region(img, plan.crop_size);
  return extract_prototype_region(img, kps, plan.prototypes, static_cast<std::size_t>(r - 1), plan.crop_size);
}

// Blocks for one image. `img` may be empty when the plan has no pixel
// extractors. External records must exist for every region whose warp fits.
inline std::vector<FeatureBlock> region_blocks(const std::string& image_id, const ImageRaster& img,
                                               const KeypointSet& kps, const FeaturePlan& plan) {
  std::vector<FeatureBlock> blocks;
  for (int r = 0; r < plan.region_count(); ++r) {
    if (!plan.uses_region(r)) continue;
    const bool fits = r == 0 || fit_region_warp(kps, plan.prototypes.prototypes[r - 1], plan.prototypes.family);
    std::optional<RegionCrop> crop;
    if (fits && !plan.extractors.empty()) crop = region_crop(img, kps, plan, r);
    for (const auto& e : plan.extractors) {
      if (crop) {
        blocks.push_back({r, e->name(), e->extract(*crop), true});
      } else {
        blocks.push_back({r, e->name(), {}, false});
      }
    }
    for (const auto* f : plan.external) {
      const auto* v = fits ? f->find(image_id, r) : nullptr;
      if (fits && !v) {
        fail(ErrorKind::FormatError, "no " + f->extractor + " record for image " + image_id + " region " +
                                         std::to_string(r));
      }
      blocks.push_back(v ? FeatureBlock{r, f->extractor, *v, true} : FeatureBlock{r, f->extractor, {}, false});
    }
  }
  return blocks;
}

struct FeatureMatrix {
  FeatureLayout layout;
  std::vector<std::size_t> images;          // dataset indices, one per row
  std::vector<std::vector<double>> rows;
  std::vector<std::vector<char>> present;   // per row, per layout entry
};

using ImageLoader = std::function<ImageRaster(std::size_t)>;

inline FeatureMatrix compute_features(const Dataset& ds, const std::vector<std::size_t>& images,
                                      const ImageLoader& load, const FeaturePlan& plan, std::size_t workers = 1) {
  FeatureMatrix m;
  m.layout = plan.layout();
  m.images = images;
  m.rows.resize(images.size());
  m.present.resize(images.size());
  parallel_for(images.size(), workers, [&](std::size_t k) {
    const std::size_t i = images[k];
    const ImageRaster img = plan.extractors.empty() ? ImageRaster{} : load(i);
    auto combined = assemble(region_blocks(ds.images[i].id, img, ds.keypoints[i], plan), m.layout);
    m.rows[k] = std::move(combined.values);
    for (const auto& b : combined.blocks) m.present[k].push_back(b.present ? 1 : 0);
  });
  return m;
}

}  // namespace posenorm
