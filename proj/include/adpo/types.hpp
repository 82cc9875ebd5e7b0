#pragma once

#include "adpo/common.hpp"

#include <compare>

namespace adpo {

// Dialogue history ending at an assistant slot: role markers delimit turns
// and the final token is the assistant marker. Never contains the
// end-of-response marker.
struct Context {
    TokenSeq tokens;
    auto operator<=>(const Context&) const = default;
};

// Generated or reference assistant turn. Ends with the end-of-response
// marker unless generation hit the length cap.
struct Response {
    TokenSeq tokens;
    auto operator<=>(const Response&) const = default;
};

// (x, y_w, y_l, y_t): context, chosen, rejected and self-generated toxic
// response.
struct PreferenceRecord {
    Context context;
    Response chosen;
    Response rejected;
    Response toxic;
    bool operator==(const PreferenceRecord&) const = default;
};

} // namespace adpo
