#include "vslam/features.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "vslam/errors.hpp"

namespace vslam {

namespace {

double float_distance(const float* a, const float* b, int n) {
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    sum += d * d;
  }
  return std::sqrt(sum);
}

double hamming_distance(const std::uint64_t* a, const std::uint64_t* b,
                        int words) {
  int bits = 0;
  for (int i = 0; i < words; ++i) bits += std::popcount(a[i] ^ b[i]);
  return static_cast<double>(bits);
}

}  // namespace

double descriptor_distance(const Descriptor& a, const Descriptor& b) {
  if (a.variant != b.variant || a.length != b.length) {
    throw VariantMismatch("descriptor variants or lengths differ");
  }
  if (a.variant == DescriptorVariant::kFloat) {
    return float_distance(a.floats.data(), b.floats.data(), a.length);
  }
  return hamming_distance(a.words.data(), b.words.data(),
                          (a.length + 63) / 64);
}

DescriptorArray DescriptorArray::make_float(int length) {
  DescriptorArray arr;
  arr.variant_ = DescriptorVariant::kFloat;
  arr.length_ = length;
  return arr;
}

DescriptorArray DescriptorArray::make_binary(int bit_length) {
  DescriptorArray arr;
  arr.variant_ = DescriptorVariant::kBinary;
  arr.length_ = bit_length;
  return arr;
}

void DescriptorArray::push_float(const float* values) {
  fdata_.insert(fdata_.end(), values, values + length_);
  ++count_;
}

void DescriptorArray::push_binary(const std::uint64_t* words) {
  bdata_.insert(bdata_.end(), words, words + words_per_descriptor());
  ++count_;
}

Descriptor DescriptorArray::row(int i) const {
  Descriptor d;
  d.variant = variant_;
  d.length = length_;
  if (variant_ == DescriptorVariant::kFloat) {
    d.floats.assign(float_row(i), float_row(i) + length_);
  } else {
    d.words.assign(word_row(i), word_row(i) + words_per_descriptor());
  }
  return d;
}

const float* DescriptorArray::float_row(int i) const {
  return fdata_.data() + static_cast<std::size_t>(i) * length_;
}

const std::uint64_t* DescriptorArray::word_row(int i) const {
  return bdata_.data() + static_cast<std::size_t>(i) * words_per_descriptor();
}

double DescriptorArray::distance(int i, const DescriptorArray& other,
                                 int j) const {
  if (variant_ != other.variant_ || length_ != other.length_) {
    throw VariantMismatch("descriptor variants or lengths differ");
  }
  if (variant_ == DescriptorVariant::kFloat) {
    return float_distance(float_row(i), other.float_row(j), length_);
  }
  return hamming_distance(word_row(i), other.word_row(j),
                          words_per_descriptor());
}

void AdaptiveConfig::validate() const {
  if (!(th_min > 0.0) || !(th_min < th_max)) {
    throw std::invalid_argument("adaptive config: need 0 < th_min < th_max");
  }
  if (!(ratio_floor >= 0.0 && ratio_floor < ratio_ceil && ratio_ceil <= 1.0)) {
    throw std::invalid_argument(
        "adaptive config: need 0 <= ratio_floor < ratio_ceil <= 1");
  }
}

MatchThresholds adapt_thresholds(std::int64_t map_point_count,
                                 std::int64_t outlier_count,
                                 const AdaptiveConfig& cfg) {
  cfg.validate();
  map_point_count = std::max<std::int64_t>(map_point_count, 0);
  outlier_count = std::clamp<std::int64_t>(outlier_count, 0, map_point_count);
  double low;
  if (map_point_count == 0) {
    low = cfg.th_max;
  } else {
    const double margin =
        static_cast<double>(map_point_count - outlier_count) /
        static_cast<double>(map_point_count);
    if (margin <= cfg.ratio_floor) {
      low = cfg.th_max;
    } else if (margin >= cfg.ratio_ceil) {
      low = cfg.th_min;
    } else {
      const double t =
          (margin - cfg.ratio_floor) / (cfg.ratio_ceil - cfg.ratio_floor);
      low = cfg.th_max + t * (cfg.th_min - cfg.th_max);
    }
  }
  MatchThresholds th;
  th.th_low = low;
  th.th_high = std::clamp(1.5 * low, cfg.th_min, cfg.th_max);
  return th;
}

std::vector<FeatureMatch> match_descriptors(const FeatureSet& query,
                                            const FeatureSet& train,
                                            const MatchThresholds& th,
                                            bool strict) {
  std::vector<FeatureMatch> matches;
  const int nq = query.descriptors.count();
  const int nt = train.descriptors.count();
  if (nq == 0 || nt == 0) return matches;
  const double limit = strict ? th.th_low : th.th_high;

  std::vector<int> best_train(nq, -1);
  std::vector<double> best_train_dist(nq,
                                      std::numeric_limits<double>::infinity());
  std::vector<int> best_query(nt, -1);
  std::vector<double> best_query_dist(nt,
                                      std::numeric_limits<double>::infinity());

  for (int qi = 0; qi < nq; ++qi) {
    for (int ti = 0; ti < nt; ++ti) {
      const double d = query.descriptors.distance(qi, train.descriptors, ti);
      if (d < best_train_dist[qi]) {
        best_train_dist[qi] = d;
        best_train[qi] = ti;
      }
      if (d < best_query_dist[ti]) {
        best_query_dist[ti] = d;
        best_query[ti] = qi;
      }
    }
  }
  for (int qi = 0; qi < nq; ++qi) {
    const int ti = best_train[qi];
    if (ti < 0 || best_query[ti] != qi) continue;
    if (best_train_dist[qi] > limit) continue;
    matches.push_back({qi, ti, best_train_dist[qi]});
  }
  return matches;
}

// ---------------------------------------------------------------------------
// Feature files
// ---------------------------------------------------------------------------

namespace {

const char* variant_token(DescriptorVariant v) {
  return v == DescriptorVariant::kFloat ? "float" : "binary";
}

std::vector<std::uint64_t> parse_hex_descriptor(const std::string& hex,
                                                int bit_length,
                                                const std::string& where) {
  const int bytes = (bit_length + 7) / 8;
  if (static_cast<int>(hex.size()) != 2 * bytes) {
    throw MalformedFile(where + ": binary descriptor expects " +
                        std::to_string(2 * bytes) + " hex chars, got " +
                        std::to_string(hex.size()));
  }
  std::vector<std::uint64_t> words((bit_length + 63) / 64, 0);
  for (int b = 0; b < bytes; ++b) {
    int value = 0;
    for (int k = 0; k < 2; ++k) {
      const char c = hex[2 * b + k];
      int digit;
      if (c >= '0' && c <= '9') {
        digit = c - '0';
      } else if (c >= 'a' && c <= 'f') {
        digit = c - 'a' + 10;
      } else if (c >= 'A' && c <= 'F') {
        digit = c - 'A' + 10;
      } else {
        throw MalformedFile(where + ": bad hex digit '" + c + "'");
      }
      value = value * 16 + digit;
    }
    words[b / 8] |= static_cast<std::uint64_t>(value) << (8 * (b % 8));
  }
  return words;
}

std::string hex_descriptor(const std::uint64_t* words, int bit_length) {
  static const char* digits = "0123456789abcdef";
  const int bytes = (bit_length + 7) / 8;
  std::string hex(2 * bytes, '0');
  for (int b = 0; b < bytes; ++b) {
    const int value =
        static_cast<int>((words[b / 8] >> (8 * (b % 8))) & 0xffu);
    hex[2 * b] = digits[value >> 4];
    hex[2 * b + 1] = digits[value & 0xf];
  }
  return hex;
}

}  // namespace

FeatureSet read_feature_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open feature file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw MalformedFile(path + ":1: empty file");
  std::istringstream header(line);
  std::string magic, version, variant_str;
  int count = 0, desc_len = 0;
  if (!(header >> magic >> version >> count >> variant_str >> desc_len) ||
      magic != "FEAT" || version != "v1") {
    throw MalformedFile(path + ":1: expected 'FEAT v1 <count> <variant> <len>'");
  }
  DescriptorVariant variant;
  if (variant_str == "float") {
    variant = DescriptorVariant::kFloat;
  } else if (variant_str == "binary") {
    variant = DescriptorVariant::kBinary;
  } else {
    throw MalformedFile(path + ":1: unknown descriptor variant '" +
                        variant_str + "'");
  }
  if (count < 0 || desc_len <= 0) {
    throw MalformedFile(path + ":1: bad count or descriptor length");
  }

  FeatureSet set;
  set.descriptors = variant == DescriptorVariant::kFloat
                        ? DescriptorArray::make_float(desc_len)
                        : DescriptorArray::make_binary(desc_len);
  std::vector<float> fbuf(desc_len);
  for (int r = 0; r < count; ++r) {
    const std::string where = path + ":" + std::to_string(r + 2);
    if (!std::getline(in, line)) {
      throw MalformedFile(where + ": expected " + std::to_string(count) +
                          " records, file ends after " + std::to_string(r));
    }
    std::istringstream rec(line);
    Keypoint kp;
    if (!(rec >> kp.x >> kp.y >> kp.response >> kp.orientation >> kp.octave)) {
      throw MalformedFile(where + ": bad keypoint fields");
    }
    if (variant == DescriptorVariant::kFloat) {
      for (int i = 0; i < desc_len; ++i) {
        if (!(rec >> fbuf[i])) {
          throw MalformedFile(where + ": descriptor value " +
                              std::to_string(i) + " missing or malformed");
        }
      }
      set.descriptors.push_float(fbuf.data());
    } else {
      std::string hex;
      if (!(rec >> hex)) throw MalformedFile(where + ": missing hex payload");
      const auto words = parse_hex_descriptor(hex, desc_len, where);
      set.descriptors.push_binary(words.data());
    }
    std::string extra;
    if (rec >> extra) {
      throw MalformedFile(where + ": trailing token '" + extra + "'");
    }
    set.keypoints.push_back(kp);
  }
  return set;
}

void write_feature_file(const FeatureSet& features, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write feature file: " + path);
  const auto& desc = features.descriptors;
  char buf[160];
  out << "FEAT v1 " << features.size() << " " << variant_token(desc.variant())
      << " " << desc.length() << "\n";
  for (int i = 0; i < features.size(); ++i) {
    const Keypoint& kp = features.keypoints[i];
    std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g %.17g %d", kp.x, kp.y,
                  kp.response, kp.orientation, kp.octave);
    out << buf;
    if (desc.variant() == DescriptorVariant::kFloat) {
      const float* row = desc.float_row(i);
      for (int k = 0; k < desc.length(); ++k) {
        std::snprintf(buf, sizeof(buf), " %.9g", row[k]);
        out << buf;
      }
    } else {
      out << " " << hex_descriptor(desc.word_row(i), desc.length());
    }
    out << "\n";
  }
  if (!out) throw IoError("write failed: " + path);
}

namespace {

class FileFeatureProvider : public FeatureProvider {
 public:
  explicit FileFeatureProvider(std::string dir) : dir_(std::move(dir)) {
    if (!std::filesystem::is_directory(dir_)) {
      throw IoError("feature directory does not exist: " + dir_);
    }
  }

  FeatureSet extract(const FrameContext& frame) const override {
    const std::string path =
        dir_ + "/" + std::to_string(frame.id) + ".feat";
    if (!std::filesystem::exists(path)) {
      throw MissingFrame("no feature file for frame " +
                         std::to_string(frame.id) + " under " + dir_);
    }
    return read_feature_file(path);
  }

 private:
  std::string dir_;
};

}  // namespace

std::unique_ptr<FeatureProvider> provider_from_files(const std::string& dir) {
  return std::make_unique<FileFeatureProvider>(dir);
}

// ---------------------------------------------------------------------------
// Native corner detector + binary descriptor
// ---------------------------------------------------------------------------

namespace {

constexpr int kCircle[16][2] = {
    {0, -3}, {1, -3}, {2, -2}, {3, -1}, {3, 0},  {3, 1},  {2, 2},  {1, 3},
    {0, 3},  {-1, 3}, {-2, 2}, {-3, 1}, {-3, 0}, {-3, -1}, {-2, -2}, {-1, -3}};

// Segment test: 9 contiguous circle pixels all brighter or all darker than
// the center by the threshold. Returns a nonzero score for corners.
double fast_score(const GrayImage& img, int x, int y, double t) {
  const double center = img.at(x, y);
  int state[16];
  for (int i = 0; i < 16; ++i) {
    const double v = img.at(x + kCircle[i][0], y + kCircle[i][1]);
    state[i] = v > center + t ? 1 : (v < center - t ? -1 : 0);
  }
  for (int sign : {1, -1}) {
    int run = 0;
    int longest = 0;
    for (int i = 0; i < 32; ++i) {
      if (state[i % 16] == sign) {
        ++run;
        longest = std::max(longest, run);
        if (longest >= 9) break;
      } else {
        run = 0;
      }
    }
    if (longest >= 9) {
      double score = 0.0;
      for (int i = 0; i < 16; ++i) {
        const double v = img.at(x + kCircle[i][0], y + kCircle[i][1]);
        score += std::max(0.0, std::abs(v - center) - t);
      }
      return score;
    }
  }
  return 0.0;
}

double centroid_orientation(const GrayImage& img, int x, int y, int radius) {
  double m10 = 0.0, m01 = 0.0;
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      if (dx * dx + dy * dy > radius * radius) continue;
      const int px = std::clamp(x + dx, 0, img.width - 1);
      const int py = std::clamp(y + dy, 0, img.height - 1);
      const double v = img.at(px, py);
      m10 += dx * v;
      m01 += dy * v;
    }
  }
  if (m10 == 0.0 && m01 == 0.0) return 0.0;
  return std::atan2(m01, m10);
}

class NativeFeatureProvider : public FeatureProvider {
 public:
  explicit NativeFeatureProvider(const NativeFeatureConfig& cfg) : cfg_(cfg) {
    // 256 comparison point pairs, fixed by the seed.
    std::mt19937_64 rng(cfg_.pattern_seed);
    const double sigma = cfg_.patch_size / 5.0;
    const double radius = cfg_.patch_size / 2.0 - 1.0;
    std::normal_distribution<double> gauss(0.0, sigma);
    auto draw = [&]() {
      double v;
      do {
        v = gauss(rng);
      } while (std::abs(v) > radius);
      return v;
    };
    pattern_.reserve(256 * 4);
    for (int i = 0; i < 256 * 4; ++i) pattern_.push_back(draw());
  }

  FeatureSet extract(const FrameContext& frame) const override {
    if (frame.image == nullptr) {
      throw std::invalid_argument("native provider needs a frame image");
    }
    const GrayImage& base = *frame.image;
    if (base.width < cfg_.patch_size + 7 || base.height < cfg_.patch_size + 7) {
      throw ImageTooSmall("image " + std::to_string(base.width) + "x" +
                          std::to_string(base.height) +
                          " smaller than descriptor patch");
    }

    struct Candidate {
      Keypoint kp;
      const GrayImage* level_img;
      double lx, ly;  // level coordinates
    };
    std::vector<GrayImage> pyramid;
    pyramid.push_back(base);
    for (int level = 1; level < cfg_.pyramid_levels; ++level) {
      const double inv = std::pow(cfg_.scale_factor, level);
      const int w = static_cast<int>(base.width / inv);
      const int h = static_cast<int>(base.height / inv);
      if (w < cfg_.patch_size + 7 || h < cfg_.patch_size + 7) break;
      GrayImage down(w, h);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          down.at(x, y) = base.sample(x * inv, y * inv);
        }
      }
      pyramid.push_back(std::move(down));
    }

    std::vector<Candidate> candidates;
    const int border = cfg_.patch_size / 2 + 4;
    for (std::size_t level = 0; level < pyramid.size(); ++level) {
      const GrayImage& img = pyramid[level];
      const double scale = std::pow(cfg_.scale_factor, level);
      GrayImage score(img.width, img.height, 0.0);
      for (int y = border; y < img.height - border; ++y) {
        for (int x = border; x < img.width - border; ++x) {
          score.at(x, y) = fast_score(img, x, y, cfg_.fast_threshold);
        }
      }
      for (int y = border; y < img.height - border; ++y) {
        for (int x = border; x < img.width - border; ++x) {
          const double s = score.at(x, y);
          if (s <= 0.0) continue;
          bool is_max = true;
          for (int dy = -1; dy <= 1 && is_max; ++dy) {
            for (int dx = -1; dx <= 1; ++dx) {
              if (dx == 0 && dy == 0) continue;
              const double n = score.at(x + dx, y + dy);
              if (n > s || (n == s && (dy < 0 || (dy == 0 && dx < 0)))) {
                is_max = false;
                break;
              }
            }
          }
          if (!is_max) continue;
          Candidate c;
          c.kp.x = x * scale;
          c.kp.y = y * scale;
          c.kp.response = s;
          c.kp.octave = static_cast<int>(level);
          c.kp.orientation =
              centroid_orientation(img, x, y, cfg_.patch_size / 2);
          c.level_img = &pyramid[level];
          c.lx = x;
          c.ly = y;
          candidates.push_back(c);
        }
      }
    }

    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Candidate& a, const Candidate& b) {
                       if (a.kp.response != b.kp.response) {
                         return a.kp.response > b.kp.response;
                       }
                       if (a.kp.y != b.kp.y) return a.kp.y < b.kp.y;
                       return a.kp.x < b.kp.x;
                     });
    if (static_cast<int>(candidates.size()) > cfg_.max_features) {
      candidates.resize(cfg_.max_features);
    }

    FeatureSet set;
    set.descriptors = DescriptorArray::make_binary(256);
    std::uint64_t words[4];
    for (const Candidate& c : candidates) {
      describe(*c.level_img, c.lx, c.ly, c.kp.orientation, words);
      set.keypoints.push_back(c.kp);
      set.descriptors.push_binary(words);
    }
    return set;
  }

 private:
  void describe(const GrayImage& img, double x, double y, double angle,
                std::uint64_t words[4]) const {
    const double ca = std::cos(angle);
    const double sa = std::sin(angle);
    words[0] = words[1] = words[2] = words[3] = 0;
    for (int bit = 0; bit < 256; ++bit) {
      const double ax = pattern_[bit * 4 + 0];
      const double ay = pattern_[bit * 4 + 1];
      const double bx = pattern_[bit * 4 + 2];
      const double by = pattern_[bit * 4 + 3];
      const double va =
          img.sample(x + ca * ax - sa * ay, y + sa * ax + ca * ay);
      const double vb =
          img.sample(x + ca * bx - sa * by, y + sa * bx + ca * by);
      if (va < vb) words[bit / 64] |= std::uint64_t{1} << (bit % 64);
    }
  }

  NativeFeatureConfig cfg_;
  std::vector<double> pattern_;
};

}  // namespace

std::unique_ptr<FeatureProvider> provider_native(
    const NativeFeatureConfig& cfg) {
  return std::make_unique<NativeFeatureProvider>(cfg);
}

Descriptor synthetic_descriptor(std::int64_t landmark_id, double amplitude) {
  Descriptor d;
  d.variant = DescriptorVariant::kFloat;
  d.length = kSyntheticDescriptorLength;
  d.floats.assign(kSyntheticDescriptorLength, 0.0f);
  const int slot = static_cast<int>(landmark_id % kSyntheticDescriptorLength);
  const double tier =
      static_cast<double>(landmark_id / kSyntheticDescriptorLength);
  d.floats[slot] = static_cast<float>(amplitude * (1.0 + tier));
  return d;
}

}  // namespace vslam
