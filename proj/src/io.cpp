#include "clothfit/io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>

#include "clothfit/error.hpp"

namespace clothfit {

namespace {

std::ifstream open_input(const std::filesystem::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw Error("cannot open " + path.string());
  return in;
}

std::ofstream open_output(const std::filesystem::path& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(path, mode);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

int parse_obj_index(const std::string& token, int vertex_count, const std::filesystem::path& path,
                    std::size_t line) {
  const std::string head = token.substr(0, token.find('/'));
  std::size_t used = 0;
  long value = 0;
  try {
    value = std::stol(head, &used);
  } catch (const std::exception&) {
    throw ParseError(path.string(), line, "bad face index '" + token + "'");
  }
  if (used != head.size()) throw ParseError(path.string(), line, "bad face index '" + token + "'");
  if (value == 0) throw ParseError(path.string(), line, "face index 0 is invalid (indices are 1-based)");
  if (value < 0) value += vertex_count + 1;
  if (value < 1 || value > vertex_count) {
    throw ParseError(path.string(), line, "face index " + head + " out of range");
  }
  return static_cast<int>(value - 1);
}

template <int C>
void write_pfm(const std::filesystem::path& path, const Image<C>& image) {
  auto out = open_output(path, std::ios::binary);
  out << (C == 3 ? "PF" : "Pf") << "\n" << image.width() << " " << image.height() << "\n-1.0\n";
  std::vector<float> row(static_cast<std::size_t>(image.width()) * C);
  for (int y = image.height() - 1; y >= 0; --y) {
    for (int x = 0; x < image.width(); ++x) {
      for (int c = 0; c < C; ++c) row[static_cast<std::size_t>(x) * C + c] = static_cast<float>(image.at(x, y, c));
    }
    if constexpr (std::endian::native == std::endian::big) {
      for (float& v : row) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        bits = __builtin_bswap32(bits);
        std::memcpy(&v, &bits, 4);
      }
    }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  if (!out) throw Error("failed writing " + path.string());
}

}  // namespace

TriMesh load_obj(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::vector<Vec3> verts;
  std::vector<Eigen::Vector3i> faces;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      Vec3 p;
      if (!(ss >> p.x() >> p.y() >> p.z())) throw ParseError(path.string(), line_no, "vertex needs 3 coordinates");
      verts.push_back(p);
    } else if (tag == "f") {
      std::vector<int> corners;
      std::string tok;
      while (ss >> tok) corners.push_back(parse_obj_index(tok, static_cast<int>(verts.size()), path, line_no));
      if (corners.size() < 3) throw ParseError(path.string(), line_no, "face needs at least 3 corners");
      for (std::size_t k = 1; k + 1 < corners.size(); ++k) faces.emplace_back(corners[0], corners[k], corners[k + 1]);
    }
  }
  Positions v(static_cast<Eigen::Index>(verts.size()), 3);
  for (std::size_t i = 0; i < verts.size(); ++i) v.row(static_cast<Eigen::Index>(i)) = verts[i];
  Faces f(static_cast<Eigen::Index>(faces.size()), 3);
  for (std::size_t i = 0; i < faces.size(); ++i) f.row(static_cast<Eigen::Index>(i)) = faces[i];
  try {
    return TriMesh(std::move(v), std::move(f));
  } catch (const GeometryError& e) {
    throw GeometryError(path.string() + ": " + e.what());
  }
}

void save_obj(const std::filesystem::path& path, const TriMesh& mesh) {
  std::FILE* fp = std::fopen(path.string().c_str(), "w");
  if (!fp) throw Error("cannot write " + path.string());
  std::unique_ptr<std::FILE, int (*)(std::FILE*)> guard(fp, &std::fclose);
  const auto& v = mesh.vertices();
  for (Eigen::Index i = 0; i < v.rows(); ++i) std::fprintf(fp, "v %.17g %.17g %.17g\n", v(i, 0), v(i, 1), v(i, 2));
  const auto& f = mesh.faces();
  for (Eigen::Index i = 0; i < f.rows(); ++i) std::fprintf(fp, "f %d %d %d\n", f(i, 0) + 1, f(i, 1) + 1, f(i, 2) + 1);
  if (std::ferror(fp)) throw Error("failed writing " + path.string());
}

NormalImage load_pfm_normals(const std::filesystem::path& path) {
  auto in = open_input(path, std::ios::binary);
  std::string magic;
  int w = 0, h = 0;
  double scale = 0.0;
  in >> magic >> w >> h >> scale;
  if (!in || magic != "PF") throw ParseError(path.string(), 0, "not a 3-channel PFM file");
  if (w <= 0 || h <= 0) throw ParseError(path.string(), 0, "bad PFM dimensions");
  in.get();  // single whitespace byte after the scale
  const bool little = scale < 0.0;
  const bool swap = little != (std::endian::native == std::endian::little);
  NormalImage img(w, h);
  std::vector<float> row(static_cast<std::size_t>(w) * 3);
  for (int y = h - 1; y >= 0; --y) {
    in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(float)));
    if (!in) throw ParseError(path.string(), 0, "truncated PFM payload");
    for (std::size_t i = 0; i < row.size(); ++i) {
      float v = row[i];
      if (swap) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        bits = __builtin_bswap32(bits);
        std::memcpy(&v, &bits, 4);
      }
      img.at(static_cast<int>(i / 3), y, static_cast<int>(i % 3)) = v;
    }
  }
  return img;
}

void save_pfm(const std::filesystem::path& path, const NormalImage& image) { write_pfm(path, image); }
void save_pfm(const std::filesystem::path& path, const MaskImage& image) { write_pfm(path, image); }

MaskImage load_png_mask(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    throw ParseError(path.string(), 0, std::string("PNG read failed: ") + image.message);
  }
  image.format = PNG_FORMAT_GRAY;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&image);
    throw ParseError(path.string(), 0, std::string("PNG decode failed: ") + image.message);
  }
  MaskImage mask(static_cast<int>(image.width), static_cast<int>(image.height));
  for (std::size_t i = 0; i < buffer.size(); ++i) mask.data()[i] = buffer[i] / 255.0;
  return mask;
}

void save_png_mask(const std::filesystem::path& path, const MaskImage& mask) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(mask.width());
  image.height = static_cast<png_uint_32>(mask.height());
  image.format = PNG_FORMAT_GRAY;
  std::vector<png_byte> buffer(mask.pixel_count());
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    const double v = std::clamp(mask.data()[i], 0.0, 1.0);
    buffer[i] = static_cast<png_byte>(std::lround(v * 255.0));
  }
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, buffer.data(), 0, nullptr)) {
    throw Error("PNG write failed for " + path.string() + ": " + image.message);
  }
}

RigBundle load_rig(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::string line;
  std::size_t line_no = 0;
  auto next = [&](std::istringstream& ss) {
    while (std::getline(in, line)) {
      ++line_no;
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos || line[first] == '#') continue;
      ss = std::istringstream(line);
      return true;
    }
    return false;
  };
  std::istringstream ss;
  std::string word;
  int version = 0;
  if (!next(ss) || !(ss >> word >> version) || word != "clothfit-rig" || version != 1) {
    throw ParseError(path.string(), line_no, "expected header 'clothfit-rig 1'");
  }
  int joint_count = 0;
  if (!next(ss) || !(ss >> word >> joint_count) || word != "joints" || joint_count < 1) {
    throw ParseError(path.string(), line_no, "expected 'joints <count>'");
  }
  std::vector<Joint> joints(static_cast<std::size_t>(joint_count));
  for (auto& joint : joints) {
    double qw, qx, qy, qz, tx, ty, tz;
    if (!next(ss) || !(ss >> joint.parent >> joint.name >> qw >> qx >> qy >> qz >> tx >> ty >> tz)) {
      throw ParseError(path.string(), line_no, "bad joint row");
    }
    Eigen::Quaterniond q(qw, qx, qy, qz);
    if (q.norm() < 1e-12) throw ParseError(path.string(), line_no, "zero quaternion");
    joint.rest = Eigen::Isometry3d::Identity();
    joint.rest.linear() = q.normalized().toRotationMatrix();
    joint.rest.translation() = Vec3(tx, ty, tz);
  }
  long rows = 0, nnz = 0;
  if (!next(ss) || !(ss >> word >> rows >> nnz) || word != "weights" || rows < 0 || nnz < 0) {
    throw ParseError(path.string(), line_no, "expected 'weights <vertices> <nonzeros>'");
  }
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(static_cast<std::size_t>(nnz));
  for (long k = 0; k < nnz; ++k) {
    long v, j;
    double w;
    if (!next(ss) || !(ss >> v >> j >> w)) throw ParseError(path.string(), line_no, "bad weight triplet");
    if (v < 0 || v >= rows || j < 0 || j >= joint_count) {
      throw ParseError(path.string(), line_no, "weight triplet index out of range");
    }
    triplets.emplace_back(static_cast<int>(v), static_cast<int>(j), w);
  }
  SkinWeights weights(rows, joint_count);
  weights.setFromTriplets(triplets.begin(), triplets.end());
  try {
    return RigBundle(std::move(joints), std::move(weights));
  } catch (const GeometryError& e) {
    throw GeometryError(path.string() + ": " + e.what());
  }
}

void save_rig(const std::filesystem::path& path, const RigBundle& rig) {
  auto out = open_output(path);
  out.precision(17);
  out << "clothfit-rig 1\n";
  out << "# parent name qw qx qy qz tx ty tz\n";
  out << "joints " << rig.joint_count() << "\n";
  for (const auto& joint : rig.joints()) {
    const Eigen::Quaterniond q(joint.rest.linear());
    const Vec3 t = joint.rest.translation();
    out << joint.parent << " " << (joint.name.empty() ? "joint" : joint.name) << " " << q.w() << " " << q.x() << " "
        << q.y() << " " << q.z() << " " << t.x() << " " << t.y() << " " << t.z() << "\n";
  }
  out << "# vertex joint weight\n";
  out << "weights " << rig.weights().rows() << " " << rig.weights().nonZeros() << "\n";
  for (Eigen::Index i = 0; i < rig.weights().outerSize(); ++i) {
    for (SkinWeights::InnerIterator it(rig.weights(), i); it; ++it) {
      out << it.row() << " " << it.col() << " " << it.value() << "\n";
    }
  }
  if (!out) throw Error("failed writing " + path.string());
}

std::vector<Pose> load_pose_rows(const std::filesystem::path& path, int expected_width) {
  auto in = open_input(path);
  std::vector<Pose> poses;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::vector<double> values;
    std::string tok;
    while (ss >> tok) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw ParseError(path.string(), line_no, "bad number '" + tok + "'");
      }
    }
    if (values.empty()) continue;
    if (expected_width > 0 && static_cast<int>(values.size()) != expected_width) {
      throw ParseError(path.string(), line_no,
                       "pose row has " + std::to_string(values.size()) + " values, expected " +
                           std::to_string(expected_width));
    }
    if (!poses.empty() && values.size() != static_cast<std::size_t>(poses.front().size())) {
      throw ParseError(path.string(), line_no, "pose rows have inconsistent widths");
    }
    poses.push_back(Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size())));
  }
  return poses;
}

void save_pose_rows(const std::filesystem::path& path, const std::vector<Pose>& poses) {
  auto out = open_output(path);
  out.precision(17);
  for (const auto& pose : poses) {
    for (Eigen::Index i = 0; i < pose.size(); ++i) out << (i ? " " : "") << pose(i);
    out << "\n";
  }
  if (!out) throw Error("failed writing " + path.string());
}

}  // namespace clothfit
