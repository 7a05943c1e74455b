#include <algorithm>
#include <fstream>
#include <opencv2/imgcodecs.hpp>
#include <set>

#include "tilemark/data.hpp"
#include "tilemark/error.hpp"

namespace tilemark {

namespace fs = std::filesystem;

Image read_rgb_png(const fs::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw ManifestError("cannot read image " + path.string());
  Image img(bgr.rows, bgr.cols, 3);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      img.at(y, x, 0) = row[x][2];
      img.at(y, x, 1) = row[x][1];
      img.at(y, x, 2) = row[x][0];
    }
  }
  return img;
}

Plane<std::uint8_t> read_gray_png(const fs::path& path) {
  cv::Mat gray = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (gray.empty()) throw ManifestError("cannot read image " + path.string());
  Plane<std::uint8_t> out(gray.rows, gray.cols);
  for (int y = 0; y < gray.rows; ++y) {
    std::copy_n(gray.ptr<std::uint8_t>(y), gray.cols, &out.at(y, 0));
  }
  return out;
}

void write_rgb_png(const fs::path& path, const Image& image) {
  if (image.channels != 3) throw ShapeError("write_rgb_png: expected 3 channels");
  cv::Mat bgr(image.height, image.width, CV_8UC3);
  for (int y = 0; y < image.height; ++y) {
    auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < image.width; ++x) {
      row[x] = cv::Vec3b(image.at(y, x, 2), image.at(y, x, 1), image.at(y, x, 0));
    }
  }
  if (!cv::imwrite(path.string(), bgr)) throw Error("cannot write " + path.string());
}

void write_gray_png(const fs::path& path, const Plane<std::uint8_t>& plane) {
  cv::Mat gray(plane.height, plane.width, CV_8UC1);
  for (int y = 0; y < plane.height; ++y) {
    std::copy_n(&plane.at(y, 0), plane.width, gray.ptr<std::uint8_t>(y));
  }
  if (!cv::imwrite(path.string(), gray)) throw Error("cannot write " + path.string());
}

namespace {

std::set<std::string> png_stems(const fs::path& dir) {
  std::set<std::string> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") {
      out.insert(entry.path().stem().string());
    }
  }
  return out;
}

}  // namespace

std::vector<Sample> load_dataset(const fs::path& root) {
  const fs::path images = root / "images", masks = root / "masks";
  if (!fs::is_directory(images)) throw ManifestError("missing directory " + images.string());
  if (!fs::is_directory(masks)) throw ManifestError("missing directory " + masks.string());

  std::set<std::string> ids;
  const fs::path manifest = root / "manifest.txt";
  if (fs::exists(manifest)) {
    std::ifstream in(manifest);
    std::string line;
    while (std::getline(in, line)) {
      line.erase(std::remove(line.begin(), line.end(), '\r'), line.end());
      if (!line.empty()) ids.insert(line);
    }
  } else {
    ids = png_stems(images);
    for (const auto& id : png_stems(masks)) {
      if (!ids.count(id)) throw ManifestError("mask " + id + ".png has no image");
    }
  }

  std::vector<Sample> out;
  for (const auto& id : ids) {
    const fs::path ip = images / (id + ".png"), mp = masks / (id + ".png");
    if (!fs::exists(ip)) throw ManifestError("missing image for id " + id);
    if (!fs::exists(mp)) throw ManifestError("missing mask for id " + id);
    Sample s;
    s.id = id;
    s.image = read_rgb_png(ip);
    const auto raw = read_gray_png(mp);
    if (raw.height != s.image.height || raw.width != s.image.width) {
      throw ShapeError("sample " + id + ": image " + std::to_string(s.image.height) + "x" +
                       std::to_string(s.image.width) + " but mask " +
                       std::to_string(raw.height) + "x" + std::to_string(raw.width));
    }
    s.mask = BinaryMask(raw.height, raw.width);
    for (std::size_t i = 0; i < raw.values.size(); ++i) s.mask.values[i] = raw.values[i] >= 128;
    out.push_back(std::move(s));
  }
  return out;
}

void save_dataset(const fs::path& root, const std::vector<Sample>& samples) {
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");
  std::ofstream manifest(root / "manifest.txt", std::ios::binary);
  if (!manifest) throw Error("cannot write " + (root / "manifest.txt").string());
  for (const auto& s : samples) {
    write_rgb_png(root / "images" / (s.id + ".png"), s.image);
    Plane<std::uint8_t> m(s.mask.height, s.mask.width);
    for (std::size_t i = 0; i < m.values.size(); ++i) m.values[i] = s.mask.values[i] ? 255 : 0;
    write_gray_png(root / "masks" / (s.id + ".png"), m);
    manifest << s.id << '\n';
  }
}

}  // namespace tilemark
