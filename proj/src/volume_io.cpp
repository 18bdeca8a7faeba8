#include "xcoreg/volume_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include <png.h>

#include "json.hpp"

namespace xcoreg {

namespace {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
T from_le(const char* p) {
  T value;
  std::memcpy(&value, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    auto* b = reinterpret_cast<unsigned char*>(&value);
    std::reverse(b, b + sizeof(T));
  }
  return value;
}

template <typename T>
void append_le(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.append(buf, sizeof(T));
}

struct Header {
  Grid grid;
  SampleType dtype = SampleType::f64;
  std::string modality;
  int channels = 1;
};

[[noreturn]] void fail(VolumeFormatErrc code, const std::string& what) { throw VolumeFormatError(code, what); }

Header parse_header(const std::string& text) {
  json h;
  try {
    h = json::parse(text);
  } catch (const json::exception& e) {
    fail(VolumeFormatErrc::malformed_header, std::string("header is not valid JSON: ") + e.what());
  }
  if (!h.is_object()) fail(VolumeFormatErrc::malformed_header, "header must be a JSON object");
  Header out;
  std::vector<int> dims;
  std::vector<double> spacing, origin;
  try {
    dims = h.at("dims").get<std::vector<int>>();
    spacing = h.at("spacing").get<std::vector<double>>();
    origin = h.at("origin").get<std::vector<double>>();
    const auto dtype = h.at("dtype").get<std::string>();
    if (dtype == "f64") {
      out.dtype = SampleType::f64;
    } else if (dtype == "f32") {
      out.dtype = SampleType::f32;
    } else {
      fail(VolumeFormatErrc::malformed_header, "unknown dtype '" + dtype + "'");
    }
    out.modality = h.value("modality", std::string{});
    out.channels = h.value("channels", 1);
  } catch (const json::exception& e) {
    fail(VolumeFormatErrc::malformed_header, std::string("bad header field: ") + e.what());
  }
  if ((dims.size() != 2 && dims.size() != 3) || spacing.size() != dims.size() || origin.size() != dims.size())
    fail(VolumeFormatErrc::malformed_header, "dims/spacing/origin must have 2 or 3 matching entries");
  for (int d : dims) {
    if (d < 2) fail(VolumeFormatErrc::malformed_header, "every dim must be >= 2");
  }
  for (double s : spacing) {
    if (!(s > 0.0) || !std::isfinite(s)) fail(VolumeFormatErrc::invalid_spacing, "spacing must be finite and > 0");
  }
  for (double o : origin) {
    if (!std::isfinite(o)) fail(VolumeFormatErrc::malformed_header, "origin must be finite");
  }
  if (out.channels < 1) fail(VolumeFormatErrc::malformed_header, "channels must be >= 1");
  out.grid = Grid::make(dims, spacing, origin);
  return out;
}

std::string make_header(const Grid& g, SampleType dtype, const std::string& modality, int channels) {
  json h;
  std::vector<int> dims;
  std::vector<double> spacing, origin;
  for (int a = 0; a < g.dim; ++a) {
    dims.push_back(g.dims[a]);
    spacing.push_back(g.spacing[a]);
    origin.push_back(g.origin[a]);
  }
  h["dims"] = dims;
  h["spacing"] = spacing;
  h["origin"] = origin;
  h["dtype"] = dtype == SampleType::f64 ? "f64" : "f32";
  h["modality"] = modality;
  if (channels != 1) h["channels"] = channels;
  return h.dump() + "\n";
}

std::pair<Header, std::vector<double>> parse_payload(const std::string& bytes) {
  const auto newline = bytes.find('\n');
  if (newline == std::string::npos) fail(VolumeFormatErrc::malformed_header, "missing header terminator");
  Header header = parse_header(bytes.substr(0, newline));
  const std::size_t width = header.dtype == SampleType::f64 ? 8 : 4;
  const std::size_t payload = bytes.size() - newline - 1;
  const std::size_t expected = header.grid.size() * static_cast<std::size_t>(header.channels);
  if (payload % width != 0 || payload / width != expected)
    fail(VolumeFormatErrc::dimension_mismatch, "payload holds " + std::to_string(payload / width) +
                                                   " samples, header requires " + std::to_string(expected));
  std::vector<double> data(expected);
  const char* p = bytes.data() + newline + 1;
  for (std::size_t i = 0; i < expected; ++i, p += width) {
    data[i] = header.dtype == SampleType::f64 ? from_le<double>(p) : static_cast<double>(from_le<float>(p));
    if (!std::isfinite(data[i])) fail(VolumeFormatErrc::non_finite, "non-finite sample at index " + std::to_string(i));
  }
  return {std::move(header), std::move(data)};
}

std::string encode(const Grid& g, const std::vector<double>& data, SampleType dtype, const std::string& modality,
                   int channels) {
  std::string out = make_header(g, dtype, modality, channels);
  out.reserve(out.size() + data.size() * 8);
  for (double x : data) {
    if (dtype == SampleType::f64) {
      append_le<double>(out, x);
    } else {
      append_le<float>(out, static_cast<float>(x));
    }
  }
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

Volume parse_volume(const std::string& bytes) {
  auto [header, data] = parse_payload(bytes);
  if (header.channels != 1) fail(VolumeFormatErrc::unsupported, "multi-channel file read as scalar volume");
  Volume v;
  v.grid = header.grid;
  v.data = std::move(data);
  v.modality = header.modality;
  return v;
}

std::string serialize_volume(const Volume& v, SampleType dtype) {
  validate(v);
  return encode(v.grid, v.data, dtype, v.modality, 1);
}

void save_volume(const Volume& v, const std::filesystem::path& path, SampleType dtype) {
  write_file(path, serialize_volume(v, dtype));
}

Volume load_volume(const std::filesystem::path& path) { return parse_volume(read_file(path)); }

void save_channels(const ChannelVolume& v, const std::filesystem::path& path) {
  if (v.data.size() != v.grid.size() * static_cast<std::size_t>(v.channels))
    throw InvalidArgument("channel volume data length mismatch");
  write_file(path, encode(v.grid, v.data, SampleType::f64, v.modality, v.channels));
}

ChannelVolume load_channels(const std::filesystem::path& path) {
  auto [header, data] = parse_payload(read_file(path));
  return ChannelVolume{header.grid, header.channels, std::move(data), header.modality};
}

Volume import_png(const std::filesystem::path& path, double spacing_mm) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw IoError("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw IoError("libpng initialization failed");
  }
  std::vector<unsigned char> pixels;
  std::vector<png_bytep> rows;
  png_uint_32 width = 0, height = 0;
  int depth = 0, color = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw VolumeFormatError(VolumeFormatErrc::malformed_header, "corrupt PNG " + path.string());
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  png_get_IHDR(png, info, &width, &height, &depth, &color, nullptr, nullptr, nullptr);
  const bool gray = color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA;
  if (!gray || (depth != 8 && depth != 16)) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw VolumeFormatError(VolumeFormatErrc::unsupported, "only 8/16-bit grayscale PNG is supported");
  }
  if (color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  const std::size_t row_bytes = png_get_rowbytes(png, info);
  pixels.resize(row_bytes * height);
  rows.resize(height);
  for (png_uint_32 r = 0; r < height; ++r) rows[r] = pixels.data() + r * row_bytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);

  const Grid grid = Grid::make({static_cast<int>(height), static_cast<int>(width)}, {spacing_mm, spacing_mm});
  std::vector<double> data(grid.size());
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      const unsigned char* px = pixels.data() + r * row_bytes;
      data[r * width + c] = depth == 8 ? px[c] / 255.0 : ((px[2 * c] << 8) | px[2 * c + 1]) / 65535.0;
    }
  }
  return Volume(grid, std::move(data), "png");
}

void export_png(const Volume& v, const std::filesystem::path& path) {
  if (v.grid.dim != 2) throw InvalidArgument("export_png requires a 2D volume");
  const double lo = v.min(), hi = v.max();
  const double scale = hi > lo ? 255.0 / (hi - lo) : 0.0;
  const auto height = static_cast<png_uint_32>(v.grid.dims[0]);
  const auto width = static_cast<png_uint_32>(v.grid.dims[1]);
  std::vector<unsigned char> pixels(static_cast<std::size_t>(width) * height);
  for (std::size_t i = 0; i < pixels.size(); ++i)
    pixels[i] = static_cast<unsigned char>(std::lround((v.data[i] - lo) * scale));

  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw IoError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IoError("PNG encoding failed for " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, width, height, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (png_uint_32 r = 0; r < height; ++r) png_write_row(png, pixels.data() + static_cast<std::size_t>(r) * width);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

}  // namespace xcoreg
