#pragma once

#include "ccpdm/market.hpp"
#include "ccpdm/resolution.hpp"
#include "ccpdm/xva.hpp"

#include <string>

namespace ccpdm {

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Load a scenario file (JSON key/value tree, usually *.scn). Throws ParseError
// on malformed input. Validation is left to the caller.
Scenario load_scenario(const std::string& path);
Scenario parse_scenario_text(const std::string& text, const std::string& origin = "<string>");

}  // namespace ccpdm
