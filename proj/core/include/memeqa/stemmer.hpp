#pragma once

#include <string>
#include <string_view>

namespace memeqa {

// Porter (1980) suffix-stripping stemmer for lowercase ASCII words. Words with
// non-letters or fewer than three characters come back unchanged.
std::string porter_stem(std::string_view word);

}  // namespace memeqa
