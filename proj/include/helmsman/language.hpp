#pragma once

#include <array>
#include <string>
#include <string_view>

#include "helmsman/error.hpp"

namespace helmsman {

enum class Language { en, zh };

inline constexpr std::array<Language, 2> kAllLanguages{Language::en, Language::zh};

inline std::string_view to_string(Language lang) {
  return lang == Language::en ? "en" : "zh";
}

inline Language parse_language(std::string_view s) {
  if (s == "en") return Language::en;
  if (s == "zh") return Language::zh;
  throw Error(errc::invalid_request, "unknown language '" + std::string(s) + "'",
              {{"language", std::string(s)}});
}

}  // namespace helmsman
