#include "tribert/dsp/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace tribert::dsp {
namespace {

static_assert(std::endian::native == std::endian::little, "WAV IO assumes a little-endian host");

[[noreturn]] void fail(const std::filesystem::path& p, const std::string& what) {
  throw std::runtime_error(p.string() + ": " + what);
}

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(const std::vector<char>& buf, std::size_t off) {
  T v;
  std::memcpy(&v, buf.data() + off, sizeof v);
  return v;
}

std::vector<char> slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) fail(p, "cannot open");
  return {std::istreambuf_iterator<char>(in), {}};
}

std::int16_t to_pcm(double v) {
  return static_cast<std::int16_t>(std::clamp(std::lround(v * 32768.0), -32768L, 32767L));
}

}  // namespace

void quantize_pcm16(Waveform& w) {
  for (auto& v : w.samples) v = to_pcm(v) / 32768.0;
}

void write_wav(const std::filesystem::path& path, const Waveform& w) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(path, "cannot open for writing");
  const auto data_bytes = static_cast<std::uint32_t>(w.size() * 2);
  os.write("RIFF", 4);
  put<std::uint32_t>(os, 36 + data_bytes);
  os.write("WAVEfmt ", 8);
  put<std::uint32_t>(os, 16);
  put<std::uint16_t>(os, 1);
  put<std::uint16_t>(os, 1);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(w.sample_rate));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(w.sample_rate) * 2);
  put<std::uint16_t>(os, 2);
  put<std::uint16_t>(os, 16);
  os.write("data", 4);
  put<std::uint32_t>(os, data_bytes);
  for (double v : w.samples) put<std::int16_t>(os, to_pcm(v));
  if (!os) fail(path, "write failed");
}

Waveform read_wav(const std::filesystem::path& path) {
  const auto buf = slurp(path);
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 || std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    fail(path, "not a RIFF/WAVE file");
  Waveform w;
  bool have_fmt = false;
  std::size_t off = 12;
  while (off + 8 <= buf.size()) {
    const std::string id(buf.data() + off, 4);
    const auto len = get<std::uint32_t>(buf, off + 4);
    const std::size_t body = off + 8;
    if (id == "fmt ") {
      if (len < 16 || body + 16 > buf.size()) fail(path, "truncated fmt chunk");
      if (get<std::uint16_t>(buf, body) != 1 || get<std::uint16_t>(buf, body + 2) != 1 ||
          get<std::uint16_t>(buf, body + 14) != 16)
        fail(path, "only PCM 16-bit mono is supported");
      w.sample_rate = static_cast<int>(get<std::uint32_t>(buf, body + 4));
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) fail(path, "data chunk before fmt chunk");
      if (len % 2 != 0 || body + len > buf.size())
        fail(path, "data chunk declares " + std::to_string(len) + " bytes but " +
                       std::to_string(buf.size() - std::min(buf.size(), body)) + " are present");
      w.samples.resize(len / 2);
      for (std::size_t i = 0; i < w.samples.size(); ++i) w.samples[i] = get<std::int16_t>(buf, body + 2 * i) / 32768.0;
      return w;
    }
    off = body + len + (len & 1);
  }
  fail(path, "no data chunk");
}

void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
  if (img.pixels.size() != img.width * img.height) fail(path, "pixel count does not match extents");
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(path, "cannot open for writing");
  os << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!os) fail(path, "write failed");
}

GrayImage read_pgm(const std::filesystem::path& path) {
  const auto buf = slurp(path);
  std::string header(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(buf.size(), 64)));
  std::istringstream hs(header);
  std::string magic;
  std::size_t w = 0, h = 0;
  int maxval = 0;
  hs >> magic >> w >> h >> maxval;
  if (!hs || magic != "P5" || maxval != 255) fail(path, "not an 8-bit binary PGM");
  const auto pos = static_cast<std::size_t>(hs.tellg()) + 1;
  if (buf.size() - pos != w * h)
    fail(path, "expected " + std::to_string(w * h) + " pixel bytes, found " + std::to_string(buf.size() - pos));
  GrayImage img{w, h, {}};
  img.pixels.assign(buf.begin() + static_cast<std::ptrdiff_t>(pos), buf.end());
  return img;
}

GrayImage grid_to_image(const Tensor& grid) {
  if (grid.rank() != 2) throw std::invalid_argument("grid_to_image: expected a 2-D grid");
  const std::size_t R = grid.dim(0), C = grid.dim(1);
  double top = 0.0;
  for (double v : grid.data) top = std::max(top, std::log1p(std::abs(v)));
  GrayImage img{C, R, std::vector<std::uint8_t>(R * C, 0)};
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) {
      const double v = top > 0 ? std::log1p(std::abs(grid.at(r, c))) / top : 0.0;
      img.pixels[(R - 1 - r) * C + c] = static_cast<std::uint8_t>(std::lround(255.0 * v));
    }
  return img;
}

void write_csv_grid(const std::filesystem::path& path, const Tensor& grid) {
  if (grid.rank() != 2) throw std::invalid_argument("write_csv_grid: expected a 2-D grid");
  std::ofstream os(path);
  if (!os) fail(path, "cannot open for writing");
  os << std::setprecision(17);
  for (std::size_t r = 0; r < grid.dim(0); ++r) {
    for (std::size_t c = 0; c < grid.dim(1); ++c) os << (c ? "," : "") << grid.at(r, c);
    os << '\n';
  }
}

Tensor read_csv_grid(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(path, "cannot open");
  std::vector<double> vals;
  std::size_t rows = 0, cols = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::size_t n = 0;
    while (std::getline(ls, cell, ',')) {
      vals.push_back(std::stod(cell));
      ++n;
    }
    if (rows == 0) cols = n;
    if (n != cols) fail(path, "ragged row " + std::to_string(rows));
    ++rows;
  }
  return Tensor({rows, cols}, std::move(vals));
}

}  // namespace tribert::dsp
