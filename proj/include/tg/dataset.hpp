#pragma once

#include <string>
#include <vector>

#include "tg/image.hpp"
#include "tg/rng.hpp"

namespace tg {

// Procedural labeled-shape dataset: classes are distinct shape/color
// combinations, rendered with position/size/color jitter on a dark background.
struct ToyDatasetSpec {
    int n = 2048;
    int image_size = 32;
    int num_classes = 10;
    uint64_t seed = 0;
};

struct LabeledImage {
    Image image;
    int label = 0;
};

std::vector<LabeledImage> generate_toy_dataset(const ToyDatasetSpec& spec);

// Directory layout: img_00000.ppm ... plus labels.txt with "<file>\t<label>" lines.
void write_dataset(const std::string& dir, const std::vector<LabeledImage>& data);
std::vector<LabeledImage> load_dataset(const std::string& dir);

// Deterministic split: every k-th sample goes to the held-out set.
void split_holdout(const std::vector<LabeledImage>& data, int every_k, std::vector<LabeledImage>& train,
                   std::vector<LabeledImage>& held);

}  // namespace tg
