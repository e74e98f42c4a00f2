#pragma once

#include "ncart/dataset.hpp"
#include "ncart/error.hpp"
#include "ncart/numerics.hpp"
#include "ncart/ranking.hpp"

#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace ncart {

enum class Origin { kTop, kBottom };
std::string_view to_string(Origin origin);
Origin parse_origin(std::string_view text);

struct ErasureMask {
  enum class Kind { kNeuronZero, kDirectionProject };

  Kind kind = Kind::kNeuronZero;
  Origin origin = Origin::kTop;
  std::size_t k = 0;
  std::size_t dimension = 0;        // D for neuron masks, r (reduced space) for projections
  std::vector<std::size_t> units;   // neuron-zero: erased neuron ids, in ranking order
  Eigen::MatrixXd projection;       // direction-project: r x r projector onto retained directions
  bool ridge_fallback = false;      // C~^T C~ was singular and was regularized
};

/// The first (top) or last (bottom) k units of a ranking.
ErasureMask mask_neurons(const NeuronRanking& ranking, std::size_t k, Origin origin);

/// Zeroes the masked columns; every other entry is copied bit for bit.
ActivationMatrix apply_neuron_mask(const ActivationMatrix& x, const ErasureMask& mask);

/// Projector P = C~ (C~^T C~)^{-1} C~^T where C~ is C minus its first (top)
/// or last (bottom) k columns. k = c gives the zero map.
ErasureMask svcca_projection(const Eigen::MatrixXd& c, std::size_t k, Origin origin);

/// E' = E P, in the reduced space the projector was built for.
Eigen::MatrixXd apply_projection(const Eigen::MatrixXd& e, const ErasureMask& mask);

/// Lifts a reduced-space projection back to the original neurons:
/// X' = mean + (X - mean) V P V^T.
ActivationMatrix apply_projection_original(const ActivationMatrix& x, const PcaBasis& basis, const ErasureMask& mask);

/// A deterministic quality function over a (masked) activation matrix.
struct Scorer {
  std::string name;
  std::function<double(const ActivationMatrix&)> score;
  bool higher_is_better = true;
};

/// Always returns value.
Scorer constant_scorer(double value);

/// Mean in-sample R^2 of ridge regressions recovering each target column from the matrix.
Scorer linear_probe_scorer(Eigen::MatrixXd targets, std::string name = "probe:latent");

/// Mean squared reconstruction error of a ridge decoder fitted once on the
/// unmasked activations to predict targets. Lower is better.
Scorer ridge_decoder_scorer(const ActivationMatrix& reference, Eigen::MatrixXd targets,
                            std::string name = "decoder");

/// Erasure amount: an absolute count or a percentage of D (rounded half-up).
struct KSpec {
  double value = 0.0;
  bool percent = false;

  std::size_t resolve(std::size_t dimension) const;
};
std::vector<KSpec> parse_ks(std::string_view text);

struct CurvePoint {
  std::size_t k = 0;
  double fraction = 0.0;
  double score = 0.0;
};

struct ErasureCurve {
  std::string scorer;
  std::string model_id;
  std::size_t dimension = 0;
  std::vector<CurvePoint> top;
  std::vector<CurvePoint> bottom;
};

/// Thrown when a scorer fails; carries the k it failed on.
class ScorerError : public Error {
 public:
  ScorerError(std::size_t k, Origin origin, const std::string& what);
  std::size_t k() const noexcept { return k_; }
  Origin origin() const noexcept { return origin_; }

 private:
  std::size_t k_;
  Origin origin_;
};

/// Resolves ks against D, sorts, dedups and always includes the k=0 baseline.
std::vector<std::size_t> resolve_ks(const std::vector<KSpec>& ks, std::size_t dimension);

ErasureCurve erasure_curve(const ActivationDataset& ds, const std::string& model, const NeuronRanking& ranking,
                           const std::vector<KSpec>& ks, const Scorer& scorer);

/// Same protocol for SVCCA directions: projections in model_a's PCA space,
/// lifted back to the original neurons before scoring.
ErasureCurve svcca_erasure_curve(const ActivationDataset& ds, const SvccaDirections& directions,
                                 const std::vector<KSpec>& ks, const Scorer& scorer);

}  // namespace ncart
