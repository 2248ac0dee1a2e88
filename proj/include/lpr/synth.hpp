#pragma once

// Synthetic plate scenes with exact ground truth, Gaussian noise and dataset splits.

#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "lpr/bbox.hpp"
#include "lpr/charset.hpp"
#include "lpr/font.hpp"
#include "lpr/image.hpp"
#include "lpr/labels.hpp"

namespace lpr {

struct SynthConfig {
    int canvas_width = 640;
    int canvas_height = 480;
    int min_plates = 1;
    int max_plates = 2;
    /// Plate width range in pixels; height follows from the aspect ratio.
    float min_plate_width = 100;
    float max_plate_width = 220;
    float plate_aspect = 4.6f;
    float max_rotation_deg = 3;
    /// Brightness factor range applied to each plate.
    float min_brightness = 0.65f;
    float max_brightness = 1.1f;
    /// Random rectangles and strokes drawn into the background.
    int clutter_shapes = 14;
    /// Short strings of glyph-like marks outside any plate.
    int distractor_strings = 2;
    std::string letters = std::string(CharClassTable::kDefaultLetters);

    /// Throws ArgumentError, including when no plate of max_plate_width fits the canvas.
    void validate() const;
};

struct PlateTruth {
    /// Axis-aligned bounds of the (possibly rotated) plate, scene pixels.
    BBox box;
    /// Character boxes relative to box's top-left corner (crop pixels).
    std::vector<CharAnnotation> chars;
    /// Glyphs left to right, e.g. "12L34567".
    std::string text;
};

struct SyntheticScene {
    Image image;
    std::vector<PlateTruth> plates;
    std::uint64_t seed = 0;
};

/// Deterministic in (config, seed, letter_hint). letter_hint >= 0 selects the
/// letter of plate k as letters[(letter_hint + k) % 15]; a negative hint draws
/// it at random. Every scene holds between min_plates and max_plates plates of
/// 8 glyphs in the digit-digit-letter-5 digit layout.
SyntheticScene generate_scene(const SynthConfig& config, std::uint64_t seed, int letter_hint = -1,
                              const BitmapFont& font = BitmapFont::builtin());

/// Per-scene seeds derived from `seed`; letters cycle across scenes so every class is covered.
std::vector<SyntheticScene> generate_corpus(const SynthConfig& config, int count, std::uint64_t seed);

/// Sigma of noise at the given SNR for an image of mean squared intensity
/// `signal_power` (intensities in [0, 1]).
double noise_sigma(double signal_power, double snr_db);
/// Mean squared intensity over all channels, intensities scaled to [0, 1].
double signal_power(const Image& image);

/// i.i.d. Gaussian noise with variance signal_power / 10^(snr_db / 10), then
/// clipped to [0, 1] and requantized. +infinity returns the image unchanged.
Image add_gaussian_noise(const Image& image, double snr_db, std::uint64_t seed);

/// Char boxes of `plate` mapped into a crop of the scene window (x0, y0, w, h)
/// resized to out_w x out_h; boxes are clipped to the output and dropped when
/// less than half of their area remains.
std::vector<CharAnnotation> chars_in_window(const PlateTruth& plate, double x0, double y0, double w, double h,
                                            int out_w, int out_h);

/// Seeded shuffle then a cut: round(n * train_fraction) items go to train.
/// Fractions must be non-negative and sum to 1.
template <typename T>
std::pair<std::vector<T>, std::vector<T>> split_dataset(const std::vector<T>& items, double train_fraction,
                                                        double test_fraction, std::uint64_t seed);

/// Index form of split_dataset.
std::pair<std::vector<int>, std::vector<int>> split_indices(int count, double train_fraction, double test_fraction,
                                                            std::uint64_t seed);

template <typename T>
std::pair<std::vector<T>, std::vector<T>> split_dataset(const std::vector<T>& items, double train_fraction,
                                                        double test_fraction, std::uint64_t seed)
{
    const auto [tr, te] = split_indices(static_cast<int>(items.size()), train_fraction, test_fraction, seed);
    std::pair<std::vector<T>, std::vector<T>> out;
    for (int i : tr) out.first.push_back(items[static_cast<std::size_t>(i)]);
    for (int i : te) out.second.push_back(items[static_cast<std::size_t>(i)]);
    return out;
}

}  // namespace lpr
