// Copyright 2026 The TaI-DPT Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <string_view>

namespace tai {

inline constexpr std::string_view kClassPlaceholder = "[CLASS]";
inline constexpr std::string_view kZeroShotTemplate = "a photo of a [CLASS]";

// The 80 hand-crafted CLIP ImageNet prompts.
inline constexpr std::array<std::string_view, 80> kHandCraftedTemplates = {
    "a bad photo of a [CLASS]",          "a photo of many [CLASS]",
    "a sculpture of a [CLASS]",          "a photo of the hard to see [CLASS]",
    "a low resolution photo of the [CLASS]", "a rendering of a [CLASS]",
    "graffiti of a [CLASS]",             "a bad photo of the [CLASS]",
    "a cropped photo of the [CLASS]",    "a tattoo of a [CLASS]",
    "the embroidered [CLASS]",           "a photo of a hard to see [CLASS]",
    "a bright photo of a [CLASS]",       "a photo of a clean [CLASS]",
    "a photo of a dirty [CLASS]",        "a dark photo of the [CLASS]",
    "a drawing of a [CLASS]",            "a photo of my [CLASS]",
    "the plastic [CLASS]",               "a photo of the cool [CLASS]",
    "a close-up photo of a [CLASS]",     "a black and white photo of the [CLASS]",
    "a painting of the [CLASS]",         "a painting of a [CLASS]",
    "a pixelated photo of the [CLASS]",  "a sculpture of the [CLASS]",
    "a bright photo of the [CLASS]",     "a cropped photo of a [CLASS]",
    "a plastic [CLASS]",                 "a photo of the dirty [CLASS]",
    "a jpeg corrupted photo of a [CLASS]", "a blurry photo of the [CLASS]",
    "a photo of the [CLASS]",            "a good photo of the [CLASS]",
    "a rendering of the [CLASS]",        "a [CLASS] in a video game",
    "a photo of one [CLASS]",            "a doodle of a [CLASS]",
    "a close-up photo of the [CLASS]",   "a photo of a [CLASS]",
    "the origami [CLASS]",               "the [CLASS] in a video game",
    "a sketch of a [CLASS]",             "a doodle of the [CLASS]",
    "a origami [CLASS]",                 "a low resolution photo of a [CLASS]",
    "the toy [CLASS]",                   "a rendition of the [CLASS]",
    "a photo of the clean [CLASS]",      "a photo of a large [CLASS]",
    "a rendition of a [CLASS]",          "a photo of a nice [CLASS]",
    "a photo of a weird [CLASS]",        "a blurry photo of a [CLASS]",
    "a cartoon [CLASS]",                 "art of a [CLASS]",
    "a sketch of the [CLASS]",           "a embroidered [CLASS]",
    "a pixelated photo of a [CLASS]",    "itap of the [CLASS]",
    "a jpeg corrupted photo of the [CLASS]", "a good photo of a [CLASS]",
    "a plushie [CLASS]",                 "a photo of the nice [CLASS]",
    "a photo of the small [CLASS]",      "a photo of the weird [CLASS]",
    "the cartoon [CLASS]",               "art of the [CLASS]",
    "a drawing of the [CLASS]",          "a photo of the large [CLASS]",
    "a black and white photo of a [CLASS]", "the plushie [CLASS]",
    "a dark photo of a [CLASS]",         "itap of a [CLASS]",
    "graffiti of the [CLASS]",           "a toy [CLASS]",
    "itap of my [CLASS]",                "a photo of a cool [CLASS]",
    "a photo of a small [CLASS]",        "a tattoo of the [CLASS]",
};

}  // namespace tai
