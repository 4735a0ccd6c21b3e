#include "lctr/model.hpp"

#include <cmath>

#include "lctr/ops.hpp"

namespace lctr {

LctrModel::LctrModel(const BackboneConfig& backbone, const cdm::CdmConfig& cdm,
                     bool cdm_enabled, std::uint64_t seed)
    : backbone_config_(backbone), cdm_config_(cdm) {
  backbone_config_.validate();
  cdm_config_.num_classes = backbone_config_.num_classes;
  cdm_config_.embed_dim = backbone_config_.embed_dim;
  cdm_config_.validate();

  Rng backbone_rng = Rng::derive(seed, 101);
  backbone_params_ = BackboneParams::init(backbone_config_, backbone_rng);
  backbone_params_.register_into(params_, "backbone.");

  Rng head_rng = Rng::derive(seed, 202);
  if (cdm_enabled) {
    cdm_params_ = cdm::CdmParams::init(cdm_config_, head_rng);
    cdm_params_->register_into(params_, "cdm.");
  } else {
    const std::size_t d = backbone_config_.embed_dim, c = backbone_config_.num_classes;
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<double> kernel(d * c), bias(c);
    for (double& v : kernel) v = head_rng.uniform(-bound, bound);
    for (double& v : bias) v = head_rng.uniform(-bound, bound);
    head_kernel_ = params_.add("head.weight", Tensor::from({d, c, 1, 1}, std::move(kernel)));
    head_bias_ = params_.add("head.bias", Tensor::from({c}, std::move(bias)));
  }
}

LctrModel::LctrModel(const RunConfig& config)
    : LctrModel(config.backbone, config.cdm, config.cdm_enabled, config.seed) {}

LctrModel::Output LctrModel::forward(const Tensor& image) const {
  Output out;
  out.backbone = backbone_forward(image, backbone_config_, backbone_params_);
  out.features = tokens_to_feature_map(out.backbone.patch_tokens, backbone_config_);
  if (cdm_params_) {
    cdm::CdmOutput head =
        cdm::cdm_forward(out.features, out.backbone.attention, *cdm_params_, cdm_config_);
    out.class_maps = head.class_maps;
    out.scores = head.scores;
  } else {
    out.class_maps = conv2d(out.features, head_kernel_, head_bias_, 0);
  }
  out.classification = cdm::classify(out.class_maps);
  return out;
}

}  // namespace lctr
