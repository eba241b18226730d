#pragma once

#include <array>

namespace ucrn::words {

// Attribute and name word tables for the synthetic corpus. Order is part of
// the vocabulary contract; do not reorder.
inline constexpr std::array<const char*, 16> kCategories = {
    "owl", "fox", "crab", "moth", "toad", "finch", "pike", "hare",
    "wasp", "newt", "lynx", "mole", "swan", "wolf", "carp", "dove"};

inline constexpr std::array<const char*, 8> kColors = {
    "crimson", "teal", "amber", "ivory", "violet", "sable", "jade", "copper"};

inline constexpr std::array<const char*, 3> kSizes = {"small", "medium", "large"};

inline constexpr std::array<const char*, 2> kStages = {"juvenile", "adult"};

// surface patterns are rendered in the image only: no caption, metadata, or
// question ever mentions them, so comments can only source them from pixels
inline constexpr std::array<const char*, 3> kPatterns = {"striped", "dotted", "plain"};

// two-word family names are drawn from this pool (the article-title analog)
inline constexpr std::array<const char*, 24> kFamilyPool = {
    "kel", "vor", "zan", "mir", "tal", "ren", "osk", "lun", "fen", "gar", "hel", "ith",
    "jor", "kap", "lom", "nev", "pia", "qun", "rud", "sev", "tok", "urn", "wex", "yal"};

// four-word given names per entity, drawn from this pool
inline constexpr std::array<const char*, 32> kGivenPool = {
    "ada", "bex", "cal", "dun", "eko", "fay", "gil", "hob", "ira", "jun", "kiv",
    "lor", "mab", "nim", "oru", "pel", "qui", "rho", "sia", "tev", "uma", "vik",
    "wyn", "xan", "yel", "zef", "bor", "cid", "dax", "eli", "fum", "gex"};

inline constexpr std::array<const char*, 25> kTemplateWords = {
    "show", "this", "as", "not", "for", "swap", "trade", "the", "partner",
    "of", "set", "is", "a", "called", "form", "named", "one", "specimen",
    "find", "image", "that", "answers", "describe", "answer", "now"};

}  // namespace ucrn::words
