#pragma once

#include <cstdint>
#include <optional>

#include "lctr/cdm.hpp"
#include "lctr/config.hpp"
#include "lctr/tensor.hpp"
#include "lctr/vit.hpp"

namespace lctr {

/// Backbone plus either the cue digging module or, when it is disabled, a
/// plain 1x1 convolution head. Both heads end in GAP + softmax.
class LctrModel {
 public:
  struct Output {
    BackboneOutput backbone;
    Tensor features;     // X_L as [D x h x w]
    Tensor class_maps;   // X_CDM [C x h x w]
    Tensor scores;       // CDM group scores; undefined for the 1x1 head
    cdm::Classification classification;
  };

  LctrModel(const BackboneConfig& backbone, const cdm::CdmConfig& cdm, bool cdm_enabled,
            std::uint64_t seed);
  explicit LctrModel(const RunConfig& config);

  Output forward(const Tensor& image) const;

  const ParameterList& parameters() const { return params_; }
  ParameterList& parameters() { return params_; }
  const BackboneConfig& backbone_config() const { return backbone_config_; }
  const cdm::CdmConfig& cdm_config() const { return cdm_config_; }
  bool cdm_enabled() const { return cdm_params_.has_value(); }

 private:
  BackboneConfig backbone_config_;
  cdm::CdmConfig cdm_config_;
  BackboneParams backbone_params_;
  std::optional<cdm::CdmParams> cdm_params_;
  Tensor head_kernel_;  // [D x C x 1 x 1], only without CDM
  Tensor head_bias_;    // [C]
  ParameterList params_;
};

}  // namespace lctr
