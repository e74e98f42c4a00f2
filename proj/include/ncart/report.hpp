#pragma once

#include "ncart/control.hpp"
#include "ncart/erasure.hpp"
#include "ncart/probe.hpp"
#include "ncart/ranking.hpp"

#include <string>

namespace ncart {

/// Shortest decimal text that round-trips the value; "nan"/"inf"/"-inf" otherwise.
std::string format_number(double value);

std::string ranking_to_json(const NeuronRanking& ranking);
std::string ranking_to_csv(const NeuronRanking& ranking);
NeuronRanking ranking_from_json(const std::string& text);

std::string curve_to_csv(const ErasureCurve& curve);
std::string curve_to_json(const ErasureCurve& curve, bool higher_is_better);

std::string leaderboard_to_csv(const ProbeReport& report);
std::string leaderboard_to_json(const ProbeReport& report);

std::string variance_to_json(const std::string& model, std::size_t neuron, const std::string& grouping,
                             const ExplainedVariance& ev);

std::string target_neurons_to_json(const std::string& model, const TargetPredictiveNeurons& result,
                                   const std::string& metric);

std::string plan_to_json(const ControlPlan& plan);
ControlPlan plan_from_json(const std::string& text);

std::string success_to_json(const SuccessReport& report);

}  // namespace ncart
