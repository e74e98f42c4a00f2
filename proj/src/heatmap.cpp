#include "ncart/heatmap.hpp"

#include "ncart/error.hpp"
#include "ncart/report.hpp"

#include <algorithm>
#include <cmath>

namespace ncart {

Rgb intensity_color(double intensity) {
  const double a = std::clamp(std::abs(intensity), 0.0, 1.0);
  const int fade = static_cast<int>(std::lround(255.0 * (1.0 - a)));
  if (intensity > 0.0) return {255, fade, fade};
  if (intensity < 0.0) return {fade, fade, 255};
  return {255, 255, 255};
}

HeatmapDoc build_heatmap(const ActivationDataset& ds, const std::string& model, std::size_t neuron,
                         std::size_t first_sentence, std::size_t end_sentence) {
  const auto& rec = ds.model(model);
  if (neuron >= rec.num_neurons())
    throw ValidationError(ValidationError::Code::kOutOfBounds, "neuron " + std::to_string(neuron) + " outside model '" +
                                                                   model + "'");
  const auto& corpus = ds.corpus();
  end_sentence = std::min(end_sentence, corpus.num_sentences());
  if (first_sentence >= end_sentence)
    throw ValidationError(ValidationError::Code::kInvalidArgument, "heatmap: empty sentence range");

  HeatmapDoc doc;
  doc.model_id = model;
  doc.neuron = neuron;
  doc.first_sentence = first_sentence;
  doc.end_sentence = end_sentence;
  for (std::size_t s = first_sentence; s < end_sentence; ++s) {
    for (std::size_t k = 0; k < corpus.sentence_length(s); ++k) {
      const double v = rec.activations(static_cast<Eigen::Index>(corpus.row(s, k)), static_cast<Eigen::Index>(neuron));
      doc.tokens.push_back({s, k, corpus.sentence(s)[k], v, 0.0});
      doc.scale = std::max(doc.scale, std::abs(v));
    }
  }
  if (doc.scale > 0.0)
    for (auto& t : doc.tokens) t.intensity = std::clamp(t.activation / doc.scale, -1.0, 1.0);
  return doc;
}

namespace {

std::string html_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&#39;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string render_html(const HeatmapDoc& doc) {
  const std::string title = html_escape(doc.model_id) + " neuron " + std::to_string(doc.neuron);
  std::string out =
      "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>" + title +
      "</title>\n</head>\n<body style=\"font-family:monospace;background:#ffffff;color:#000000\">\n<h3>" + title +
      "</h3>\n<p>scale: max |activation| = " + format_number(doc.scale) +
      "; red = positive, blue = negative</p>\n";
  std::size_t current = doc.first_sentence;
  out += "<div data-sentence=\"" + std::to_string(current) + "\">";
  for (const auto& t : doc.tokens) {
    if (t.sentence != current) {
      current = t.sentence;
      out += "</div>\n<div data-sentence=\"" + std::to_string(current) + "\">";
    }
    const auto c = intensity_color(t.intensity);
    out += "<span style=\"background-color:rgb(" + std::to_string(c.r) + "," + std::to_string(c.g) + "," +
           std::to_string(c.b) + ");padding:0 2px;margin:0 1px\" title=\"" + format_number(t.activation) + "\">" +
           html_escape(t.text) + "</span>";
  }
  out += "</div>\n</body>\n</html>\n";
  return out;
}

std::string render_ansi(const HeatmapDoc& doc) {
  std::string out = doc.model_id + " neuron " + std::to_string(doc.neuron) + " (scale " + format_number(doc.scale) + ")\n";
  std::size_t current = doc.first_sentence;
  bool first = true;
  for (const auto& t : doc.tokens) {
    if (t.sentence != current) {
      current = t.sentence;
      out += '\n';
      first = true;
    }
    if (!first) out += ' ';
    first = false;
    const auto c = intensity_color(t.intensity);
    out += "\x1b[48;2;" + std::to_string(c.r) + ";" + std::to_string(c.g) + ";" + std::to_string(c.b) + "m\x1b[30m" +
           t.text + "\x1b[0m";
  }
  out += '\n';
  for (const auto& t : doc.tokens)
    out += std::to_string(t.sentence) + ':' + std::to_string(t.index) + '\t' + t.text + '\t' +
           format_number(t.activation) + '\n';
  return out;
}

std::string render_heatmap(const HeatmapDoc& doc, HeatmapFormat format) {
  return format == HeatmapFormat::kHtml ? render_html(doc) : render_ansi(doc);
}

}  // namespace ncart
