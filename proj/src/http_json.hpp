#pragma once

#include <string>

#include "json.hpp"

namespace domex::detail {

/// POSTs a JSON body and parses the JSON reply. Transport failures and
/// non-2xx statuses raise backend errors; an unparsable reply raises a
/// ParseError carrying the body.
nlohmann::json post_json(const std::string& endpoint, const std::string& token,
                         const nlohmann::json& body, int timeout_seconds);

}  // namespace domex::detail
