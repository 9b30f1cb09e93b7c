#ifndef CMBDET_NN_CHECKPOINT_HPP_
#define CMBDET_NN_CHECKPOINT_HPP_

#include <string>

#include <nlohmann/json_fwd.hpp>

#include "cmbdet/nn/modules.hpp"

namespace cmb::nn {

// Self-describing checkpoint: magic, JSON metadata (kind + config + tensor
// manifest), then raw little-endian float32 blobs. save->load->save is
// byte-identical.
void save_checkpoint(const std::string& path, const std::string& kind,
                     const nlohmann::json& config, const ParamRefs& params);

// Loads parameter values into `params` (names and shapes must match the
// manifest exactly) and returns the stored config. Throws if `expect_kind`
// differs from the stored kind.
nlohmann::json load_checkpoint(const std::string& path,
                               const std::string& expect_kind,
                               const ParamRefs& params);

// Reads just the config object without touching parameters.
nlohmann::json peek_checkpoint_config(const std::string& path,
                                      std::string* kind_out = nullptr);

}  // namespace cmb::nn

#endif  // CMBDET_NN_CHECKPOINT_HPP_
