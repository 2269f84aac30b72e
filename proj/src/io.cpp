#include "semdepth/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace semdepth {

namespace {

constexpr char kMagic[4] = {'F', 'S', 'R', 'E'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw std::runtime_error(std::string("checkpoint: truncated ") + what);
  return static_cast<std::uint32_t>(b[0]) | (b[1] << 8) | (b[2] << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

static_assert(sizeof(float) == 4);

void write_f32(std::ostream& os, const float* data, std::size_t n) {
  // Assumes a little-endian host, as do the readers below.
  os.write(reinterpret_cast<const char*>(data), 4 * n);
}

}  // namespace

void save_tensors(const std::string& path,
                  const std::vector<NamedTensor>& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.write(kMagic, 4);
  write_u32(os, kVersion);
  write_u32(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    write_u32(os, static_cast<std::uint32_t>(t.name.size()));
    os.write(t.name.data(), t.name.size());
    write_u32(os, static_cast<std::uint32_t>(t.shape.size()));
    std::size_t n = 1;
    for (int d : t.shape) {
      write_u32(os, static_cast<std::uint32_t>(d));
      n *= static_cast<std::size_t>(d);
    }
    if (n != t.data.size())
      throw std::runtime_error("checkpoint: tensor '" + t.name +
                               "' data does not match its shape");
    write_f32(os, t.data.data(), n);
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

std::vector<NamedTensor> load_tensors(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  const std::uint32_t version = read_u32(is, "version");
  if (version != kVersion)
    throw std::runtime_error("checkpoint: unsupported version " +
                             std::to_string(version));
  const std::uint32_t count = read_u32(is, "entry count");
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    const std::uint32_t name_len = read_u32(is, "name length");
    t.name.resize(name_len);
    if (!is.read(t.name.data(), name_len))
      throw std::runtime_error("checkpoint: truncated name");
    const std::uint32_t rank = read_u32(is, "rank");
    if (rank > 8) throw std::runtime_error("checkpoint: implausible rank");
    std::size_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      t.shape.push_back(static_cast<int>(read_u32(is, "extent")));
      n *= static_cast<std::size_t>(t.shape.back());
    }
    t.data.resize(n);
    if (!is.read(reinterpret_cast<char*>(t.data.data()), 4 * n))
      throw std::runtime_error("checkpoint: truncated payload for '" + t.name +
                               "'");
    out.push_back(std::move(t));
  }
  return out;
}

void write_ppm(const std::string& path, const std::vector<float>& rgb,
               int height, int width) {
  const std::size_t hw = static_cast<std::size_t>(height) * width;
  if (rgb.size() != 3 * hw)
    throw std::invalid_argument("write_ppm: buffer is not (3,H,W)");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << "P6\n" << width << " " << height << "\n255\n";
  std::vector<unsigned char> row(3 * width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = rgb[c * hw + static_cast<std::size_t>(y) * width + x];
        row[3 * x + c] = static_cast<unsigned char>(
            std::lround(std::clamp(v, 0.f, 1.f) * 255.f));
      }
    os.write(reinterpret_cast<const char*>(row.data()), row.size());
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

std::vector<float> read_ppm(const std::string& path, int& height, int& width) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  std::string magic;
  is >> magic;
  if (magic != "P6") throw std::runtime_error("not a binary PPM: " + path);
  auto next_token = [&is, &path]() {
    std::string tok;
    while (is >> tok) {
      if (tok[0] == '#') {
        std::string rest;
        std::getline(is, rest);
        continue;
      }
      return tok;
    }
    throw std::runtime_error("truncated PPM header: " + path);
  };
  width = std::stoi(next_token());
  height = std::stoi(next_token());
  const int maxval = std::stoi(next_token());
  if (maxval != 255) throw std::runtime_error("unsupported PPM maxval");
  is.get();  // single whitespace after header
  const std::size_t hw = static_cast<std::size_t>(height) * width;
  std::vector<unsigned char> raw(3 * hw);
  if (!is.read(reinterpret_cast<char*>(raw.data()), raw.size()))
    throw std::runtime_error("truncated PPM payload: " + path);
  std::vector<float> rgb(3 * hw);
  for (std::size_t k = 0; k < hw; ++k)
    for (int c = 0; c < 3; ++c)
      rgb[c * hw + k] = raw[3 * k + c] / 255.f;
  return rgb;
}

void write_pfm(const std::string& path, const std::vector<float>& values,
               int height, int width) {
  if (values.size() != static_cast<std::size_t>(height) * width)
    throw std::invalid_argument("write_pfm: buffer is not (H,W)");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << "Pf\n" << width << " " << height << "\n-1.0\n";
  // PFM stores rows bottom-up.
  for (int y = height - 1; y >= 0; --y)
    os.write(reinterpret_cast<const char*>(values.data() +
                                           static_cast<std::size_t>(y) * width),
             4 * width);
  if (!os) throw std::runtime_error("write failed: " + path);
}

void write_dataset(const std::string& dir,
                   const std::vector<SceneSample>& samples) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream manifest(fs::path(dir) / "manifest.txt");
  if (!manifest) throw std::runtime_error("cannot write manifest in " + dir);
  manifest.precision(17);
  char name[32];
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    std::snprintf(name, sizeof(name), "sample_%04zu", i);
    const fs::path sdir = fs::path(dir) / name;
    fs::create_directories(sdir);
    const char* frame_names[3] = {"prev.ppm", "curr.ppm", "next.ppm"};
    for (int f = 0; f < 3; ++f)
      write_ppm((sdir / frame_names[f]).string(), s.frames[f], s.height,
                s.width);
    std::vector<float> sem(s.gt_semantics.begin(), s.gt_semantics.end());
    save_tensors((sdir / "gt.bin").string(),
                 {{"depth", {s.height, s.width}, s.gt_depth},
                  {"semantics", {s.height, s.width}, sem}});
    manifest << name << "/prev.ppm " << name << "/curr.ppm " << name
             << "/next.ppm " << name << "/gt.bin " << s.intrinsics.fx << " "
             << s.intrinsics.fy << " " << s.intrinsics.cx << " "
             << s.intrinsics.cy;
    for (const auto* p : {&s.pose_prev, &s.pose_next})
      for (int k = 0; k < 3; ++k) manifest << " " << p->axis_angle[k];
    // translations follow the axis-angle blocks pairwise
    for (const auto* p : {&s.pose_prev, &s.pose_next})
      for (int k = 0; k < 3; ++k) manifest << " " << p->translation[k];
    manifest << "\n";
  }
  if (!manifest) throw std::runtime_error("manifest write failed in " + dir);
}

std::vector<SceneSample> load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream manifest(fs::path(dir) / "manifest.txt");
  if (!manifest)
    throw std::runtime_error("cannot open manifest in " + dir);
  std::vector<SceneSample> out;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string prev, curr, next, gt;
    SceneSample s;
    if (!(ls >> prev >> curr >> next >> gt >> s.intrinsics.fx >>
          s.intrinsics.fy >> s.intrinsics.cx >> s.intrinsics.cy))
      throw std::runtime_error("malformed manifest line: " + line);
    for (auto* p : {&s.pose_prev, &s.pose_next})
      for (int k = 0; k < 3; ++k) ls >> p->axis_angle[k];
    for (auto* p : {&s.pose_prev, &s.pose_next})
      for (int k = 0; k < 3; ++k) ls >> p->translation[k];
    if (!ls) throw std::runtime_error("malformed manifest line: " + line);
    const std::string paths[3] = {prev, curr, next};
    for (int f = 0; f < 3; ++f) {
      int h = 0, w = 0;
      s.frames[f] = read_ppm((fs::path(dir) / paths[f]).string(), h, w);
      s.height = h;
      s.width = w;
    }
    for (auto& t : load_tensors((fs::path(dir) / gt).string())) {
      if (t.name == "depth") {
        s.gt_depth = t.data;
      } else if (t.name == "semantics") {
        s.gt_semantics.assign(t.data.begin(), t.data.end());
      }
    }
    if (s.gt_depth.empty() || s.gt_semantics.empty())
      throw std::runtime_error("dataset sample missing ground truth: " + gt);
    out.push_back(std::move(s));
  }
  return out;
}

Config Config::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return from_string(ss.str());
}

Config Config::from_string(const std::string& text) {
  Config cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      const auto e = s.find_last_not_of(" \t\r");
      return s.substr(b, e - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config line " + std::to_string(lineno) +
                               ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key.empty())
      throw std::runtime_error("config line " + std::to_string(lineno) +
                               ": empty key");
    if (!cfg.values_.emplace(key, val).second)
      throw std::runtime_error("config: duplicate key '" + key + "'");
  }
  return cfg;
}

std::string Config::get_string(const std::string& key,
                               const std::string& fallback) {
  consumed_.insert(key);
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double Config::get_double(const std::string& key, double fallback) {
  consumed_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    std::size_t pos = 0;
    const double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("config: '" + key + "' is not a number");
  }
}

int Config::get_int(const std::string& key, int fallback) {
  consumed_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    std::size_t pos = 0;
    const int v = std::stoi(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("config: '" + key + "' is not an integer");
  }
}

bool Config::get_bool(const std::string& key, bool fallback) {
  consumed_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw std::runtime_error("config: '" + key + "' is not a boolean");
}

std::vector<int> Config::get_int_list(const std::string& key,
                                      std::vector<int> fallback) {
  consumed_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::vector<int> out;
  std::string item;
  std::istringstream is(it->second);
  while (std::getline(is, item, ',')) {
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw std::runtime_error("config: '" + key + "' is not an integer list");
    }
  }
  return out;
}

void Config::check_all_consumed() const {
  for (const auto& [key, value] : values_)
    if (!consumed_.count(key))
      throw std::runtime_error("config: unknown key '" + key + "'");
}

}  // namespace semdepth
