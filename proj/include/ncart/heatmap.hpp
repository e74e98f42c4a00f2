#pragma once

#include "ncart/dataset.hpp"

#include <string>
#include <vector>

namespace ncart {

struct HeatToken {
  std::size_t sentence = 0;
  std::size_t index = 0;
  std::string text;
  double activation = 0.0;
  double intensity = 0.0;  // activation / max |activation| over the span, in [-1, 1]
};

struct HeatmapDoc {
  std::string model_id;
  std::size_t neuron = 0;
  std::size_t first_sentence = 0;
  std::size_t end_sentence = 0;  // exclusive
  double scale = 0.0;            // max |activation| over the span
  std::vector<HeatToken> tokens;
};

enum class HeatmapFormat { kHtml, kAnsi };

/// Positive -> red, negative -> blue, zero -> white; saturation follows |intensity|.
struct Rgb {
  int r = 255, g = 255, b = 255;
};
Rgb intensity_color(double intensity);

HeatmapDoc build_heatmap(const ActivationDataset& ds, const std::string& model, std::size_t neuron,
                         std::size_t first_sentence, std::size_t end_sentence);

std::string render_html(const HeatmapDoc& doc);
std::string render_ansi(const HeatmapDoc& doc);
std::string render_heatmap(const HeatmapDoc& doc, HeatmapFormat format);

}  // namespace ncart
