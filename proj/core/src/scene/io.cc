#include "unidps/scene/io.h"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>

namespace unidps {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const fs::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) {
    if (mode[0] == 'r') throw ParseError("cannot open " + path.string());
    throw std::runtime_error("cannot write " + path.string());
  }
  return f;
}

}  // namespace

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

namespace {

template <typename T>
T get_field(const json& j, const char* field, const fs::path& where) {
  if (!j.contains(field)) throw ParseError(where.string() + ": missing field '" + field + "'");
  try {
    return j.at(field).get<T>();
  } catch (const json::exception&) {
    throw ParseError(where.string() + ": field '" + field + "' has the wrong type");
  }
}

}  // namespace

std::uint16_t encode_depth(double metres) {
  if (!(metres > 0.0)) return 0;
  const double v = std::round(metres * kDepthScale);
  return static_cast<std::uint16_t>(std::min(v, 65535.0));
}

double decode_depth(std::uint16_t stored) { return stored / kDepthScale; }

void write_png16(const fs::path& path, const Gray16& img) {
  FilePtr f = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng: allocation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng: failed writing " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 16, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(img.width * 2);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      const std::uint16_t v = img.pixels[y * img.width + x];
      row[2 * x] = static_cast<png_byte>(v >> 8);
      row[2 * x + 1] = static_cast<png_byte>(v & 0xff);
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Gray16 read_png16(const fs::path& path) {
  FilePtr f = open_file(path, "rb");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8))
    throw ParseError(path.string() + ": not a PNG file");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("libpng: allocation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ParseError(path.string() + ": corrupt PNG data");
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (depth != 16 || color != PNG_COLOR_TYPE_GRAY) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ParseError(path.string() + ": expected 16-bit grayscale");
  }
  Gray16 img{h, w, std::vector<std::uint16_t>(static_cast<std::size_t>(w) * h)};
  std::vector<png_byte> row(static_cast<std::size_t>(w) * 2);
  for (png_uint_32 y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (png_uint_32 x = 0; x < w; ++x)
      img.pixels[static_cast<std::size_t>(y) * w + x] =
          static_cast<std::uint16_t>((row[2 * x] << 8) | row[2 * x + 1]);
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_ppm(const fs::path& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3)
    throw DimensionError("write_ppm: image must be [3, H, W]");
  const std::size_t h = image.dim(1), w = image.dim(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P6\n" << w << ' ' << h << "\n255\n";
  std::vector<char> buf(h * w * 3);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp(image[(c * h + y) * w + x], 0.0, 1.0);
        buf[(y * w + x) * 3 + c] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
      }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

Tensor read_ppm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6" || !in || maxval != 255 || w == 0 || h == 0)
    throw ParseError(path.string() + ": expected 8-bit P6 header");
  in.get();
  std::vector<unsigned char> buf(h * w * 3);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (in.gcount() != static_cast<std::streamsize>(buf.size()))
    throw ParseError(path.string() + ": truncated pixel data");
  Tensor image({3, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        image[(c * h + y) * w + x] = buf[(y * w + x) * 3 + c] / 255.0;
  return image;
}

void write_panoptic(const fs::path& dir, const PanopticMap& pan, AnnotationMode mode) {
  fs::create_directories(dir);
  Gray16 img{pan.height, pan.width, std::vector<std::uint16_t>(pan.ids.size())};
  for (std::size_t i = 0; i < pan.ids.size(); ++i) {
    if (pan.ids[i] > 0xffff) throw std::runtime_error("panoptic id does not fit 16 bits");
    img.pixels[i] = static_cast<std::uint16_t>(pan.ids[i]);
  }
  write_png16(dir / "panoptic.png", img);
  json segs = json::array();
  for (const auto& s : pan.segments)
    segs.push_back({{"id", s.id}, {"category_id", s.category_id}, {"is_thing", s.is_thing}});
  write_json(dir / "meta.json", {{"segments", segs}, {"annotation_mode", to_string(mode)}});
}

PanopticMap read_panoptic(const fs::path& dir, AnnotationMode* mode) {
  const Gray16 img = read_png16(dir / "panoptic.png");
  const fs::path meta_path = dir / "meta.json";
  const json meta = read_json(meta_path);
  PanopticMap pan(img.height, img.width);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) pan.ids[i] = img.pixels[i];
  const json segs = get_field<json>(meta, "segments", meta_path);
  if (!segs.is_array()) throw ParseError(meta_path.string() + ": field 'segments' must be a list");
  for (const auto& s : segs) {
    SegmentInfo info;
    info.id = get_field<std::uint32_t>(s, "id", meta_path);
    info.category_id = get_field<std::uint32_t>(s, "category_id", meta_path);
    info.is_thing = get_field<bool>(s, "is_thing", meta_path);
    pan.segments.push_back(info);
  }
  if (mode) {
    const auto m = get_field<std::string>(meta, "annotation_mode", meta_path);
    try {
      *mode = annotation_mode_from_string(m);
    } catch (const std::invalid_argument&) {
      throw ParseError(meta_path.string() + ": field 'annotation_mode' has unknown value '" +
                       m + "'");
    }
  }
  try {
    pan.validate();
  } catch (const InvalidPanopticMap& e) {
    throw ParseError(meta_path.string() + ": field 'segments': " + e.what());
  }
  return pan;
}

void write_depth(const fs::path& path, const DepthMap& depth) {
  Gray16 img{depth.height, depth.width, std::vector<std::uint16_t>(depth.depth.size())};
  for (std::size_t i = 0; i < depth.depth.size(); ++i)
    img.pixels[i] = depth.valid[i] ? encode_depth(depth.depth[i]) : 0;
  write_png16(path, img);
}

DepthMap read_depth(const fs::path& path) {
  const Gray16 img = read_png16(path);
  DepthMap d(img.height, img.width);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    d.valid[i] = img.pixels[i] != 0;
    d.depth[i] = decode_depth(img.pixels[i]);
  }
  return d;
}

void write_scene(const Scene& scene, const fs::path& dir) {
  fs::create_directories(dir);
  write_ppm(dir / "image.ppm", scene.image);
  write_panoptic(dir, scene.panoptic, scene.mode);
  write_depth(dir / "depth.png", scene.depth);
}

Scene read_scene(const fs::path& dir) {
  Scene s;
  s.image = read_ppm(dir / "image.ppm");
  s.panoptic = read_panoptic(dir, &s.mode);
  s.depth = read_depth(dir / "depth.png");
  if (s.image.dim(1) != s.panoptic.height || s.image.dim(2) != s.panoptic.width ||
      s.depth.height != s.panoptic.height || s.depth.width != s.panoptic.width)
    throw ParseError(dir.string() + ": image, panoptic and depth dimensions disagree");
  return s;
}

void write_manifest(const fs::path& dataset_dir, const DatasetManifest& manifest) {
  fs::create_directories(dataset_dir);
  write_json(dataset_dir / "manifest.json",
             {{"scenes", manifest.scenes}, {"config", manifest.config}, {"seed", manifest.seed}});
}

DatasetManifest read_manifest(const fs::path& dataset_dir) {
  const fs::path path = dataset_dir / "manifest.json";
  const json j = read_json(path);
  DatasetManifest m;
  m.scenes = get_field<std::vector<std::string>>(j, "scenes", path);
  m.config = j.value("config", json::object());
  m.seed = get_field<std::uint64_t>(j, "seed", path);
  return m;
}

std::string scene_name(std::size_t index) {
  std::ostringstream os;
  os << "scene_" << std::setw(5) << std::setfill('0') << index;
  return os.str();
}

}  // namespace unidps
