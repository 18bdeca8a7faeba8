// Portable volume format (.pvol) and PNG import.
//
// A .pvol file is a UTF-8 JSON header terminated by a single '\n', followed
// immediately by raw little-endian IEEE-754 samples, row-major with the last
// axis fastest. Header keys: "dims", "spacing", "origin", "dtype" ("f32" or
// "f64") and "modality". Multi-channel files add "channels"; the channel index
// then varies fastest.
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "xcoreg/error.hpp"
#include "xcoreg/volume.hpp"

namespace xcoreg {

enum class VolumeFormatErrc {
  malformed_header,
  dimension_mismatch,
  invalid_spacing,
  non_finite,
  unsupported,
};

class VolumeFormatError : public Error {
 public:
  VolumeFormatError(VolumeFormatErrc code, const std::string& what) : Error(what), code_(code) {}
  VolumeFormatErrc code() const { return code_; }

 private:
  VolumeFormatErrc code_;
};

enum class SampleType { f32, f64 };

void save_volume(const Volume& v, const std::filesystem::path& path, SampleType dtype = SampleType::f64);
Volume load_volume(const std::filesystem::path& path);

/// Parses an in-memory .pvol image (header + payload).
Volume parse_volume(const std::string& bytes);
std::string serialize_volume(const Volume& v, SampleType dtype = SampleType::f64);

/// Multi-channel payload (e.g. the K class probabilities of a common space).
struct ChannelVolume {
  Grid grid;
  int channels = 1;
  std::vector<double> data;  // grid.size() * channels, channel fastest
  std::string modality;
};

void save_channels(const ChannelVolume& v, const std::filesystem::path& path);
ChannelVolume load_channels(const std::filesystem::path& path);

/// 8- or 16-bit grayscale PNG mapped to [0, 1]. Rows become axis 0.
Volume import_png(const std::filesystem::path& path, double spacing_mm = 1.0);

/// Writes an 8-bit grayscale PNG of a 2D volume after min/max scaling.
void export_png(const Volume& v, const std::filesystem::path& path);

}  // namespace xcoreg
