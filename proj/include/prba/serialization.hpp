#pragma once

// JSON conversions for the plain configuration and domain structs. Kept out
// of the domain headers so only I/O code pays for json.hpp.

#include "json.hpp"
#include "prba/channel.hpp"

namespace prba {

using Json = nlohmann::json;

Json to_json(const ChannelConfig& config);
ChannelConfig channel_config_from_json(const Json& j);

Json to_json(const PathParams& path);
PathParams path_params_from_json(const Json& j);

Json complex_matrix_to_json(const CMatrix& m);
CMatrix complex_matrix_from_json(const Json& j);

}  // namespace prba
