#include "vslam/bow.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <queue>
#include <random>
#include <set>
#include <sstream>

#include "vslam/errors.hpp"

namespace vslam {

namespace {

double row_center_distance(const DescriptorArray& arr, int row,
                           const Descriptor& center) {
  if (arr.variant() == DescriptorVariant::kFloat) {
    const float* a = arr.float_row(row);
    double sum = 0.0;
    for (int i = 0; i < arr.length(); ++i) {
      const double d = static_cast<double>(a[i]) - center.floats[i];
      sum += d * d;
    }
    return std::sqrt(sum);
  }
  const std::uint64_t* a = arr.word_row(row);
  int bits = 0;
  for (std::size_t i = 0; i < center.words.size(); ++i) {
    bits += std::popcount(a[i] ^ center.words[i]);
  }
  return static_cast<double>(bits);
}

Descriptor cluster_center(const DescriptorArray& arr,
                          const std::vector<int>& members) {
  Descriptor c;
  c.variant = arr.variant();
  c.length = arr.length();
  if (arr.variant() == DescriptorVariant::kFloat) {
    std::vector<double> accum(arr.length(), 0.0);
    for (int row : members) {
      const float* r = arr.float_row(row);
      for (int i = 0; i < arr.length(); ++i) accum[i] += r[i];
    }
    c.floats.resize(arr.length());
    for (int i = 0; i < arr.length(); ++i) {
      c.floats[i] = static_cast<float>(accum[i] / members.size());
    }
  } else {
    // Bitwise majority; ties fall to 0.
    const int words = arr.words_per_descriptor();
    std::vector<int> ones(arr.length(), 0);
    for (int row : members) {
      const std::uint64_t* r = arr.word_row(row);
      for (int b = 0; b < arr.length(); ++b) {
        if (r[b / 64] >> (b % 64) & 1u) ++ones[b];
      }
    }
    c.words.assign(words, 0);
    for (int b = 0; b < arr.length(); ++b) {
      if (2 * ones[b] > static_cast<int>(members.size())) {
        c.words[b / 64] |= std::uint64_t{1} << (b % 64);
      }
    }
  }
  return c;
}

// k-means++ seeding followed by Lloyd iterations; returns cluster members.
std::vector<std::vector<int>> kmeans(const DescriptorArray& arr,
                                     const std::vector<int>& items, int k,
                                     std::mt19937_64& rng,
                                     std::vector<Descriptor>* centers_out) {
  std::vector<Descriptor> centers;
  centers.reserve(k);
  // Seeding: first center uniform, then proportional to squared distance.
  {
    std::uniform_int_distribution<std::size_t> first(0, items.size() - 1);
    std::vector<int> seed_member{items[first(rng)]};
    centers.push_back(cluster_center(arr, seed_member));
    std::vector<double> d2(items.size());
    while (static_cast<int>(centers.size()) < k) {
      double total = 0.0;
      for (std::size_t i = 0; i < items.size(); ++i) {
        double best = std::numeric_limits<double>::max();
        for (const Descriptor& c : centers) {
          best = std::min(best, row_center_distance(arr, items[i], c));
        }
        d2[i] = best * best;
        total += d2[i];
      }
      if (total <= 0.0) {
        // All remaining points coincide with a center; spread arbitrarily.
        std::vector<int> m{items[centers.size() % items.size()]};
        centers.push_back(cluster_center(arr, m));
        continue;
      }
      std::uniform_real_distribution<double> pick(0.0, total);
      double target = pick(rng);
      std::size_t chosen = items.size() - 1;
      for (std::size_t i = 0; i < items.size(); ++i) {
        target -= d2[i];
        if (target <= 0.0) {
          chosen = i;
          break;
        }
      }
      std::vector<int> m{items[chosen]};
      centers.push_back(cluster_center(arr, m));
    }
  }

  std::vector<int> assign(items.size(), -1);
  std::vector<std::vector<int>> clusters;
  for (int iter = 0; iter < 25; ++iter) {
    bool changed = false;
    clusters.assign(k, {});
    for (std::size_t i = 0; i < items.size(); ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::max();
      for (int c = 0; c < k; ++c) {
        const double d = row_center_distance(arr, items[i], centers[c]);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
      clusters[best].push_back(items[i]);
    }
    // Reseed empty clusters from the point farthest from its own center.
    for (int c = 0; c < k; ++c) {
      if (!clusters[c].empty()) continue;
      double worst = -1.0;
      int victim_cluster = -1;
      std::size_t victim_pos = 0;
      for (int oc = 0; oc < k; ++oc) {
        if (clusters[oc].size() < 2) continue;
        for (std::size_t p = 0; p < clusters[oc].size(); ++p) {
          const double d =
              row_center_distance(arr, clusters[oc][p], centers[oc]);
          if (d > worst) {
            worst = d;
            victim_cluster = oc;
            victim_pos = p;
          }
        }
      }
      if (victim_cluster < 0) break;
      clusters[c].push_back(clusters[victim_cluster][victim_pos]);
      clusters[victim_cluster].erase(clusters[victim_cluster].begin() +
                                     victim_pos);
      changed = true;
    }
    for (int c = 0; c < k; ++c) {
      if (!clusters[c].empty()) centers[c] = cluster_center(arr, clusters[c]);
    }
    if (!changed) break;
  }
  if (centers_out) *centers_out = std::move(centers);
  return clusters;
}

}  // namespace

std::size_t Vocabulary::leaf_count() const {
  std::size_t n = 0;
  for (const Node& node : nodes_) {
    if (node.children.empty()) ++n;
  }
  return n;
}

Vocabulary Vocabulary::build(const DescriptorArray& training, int levels,
                             int branching, std::uint64_t seed) {
  if (levels < 1 || branching < 2) {
    throw std::invalid_argument("vocabulary needs levels >= 1, branching >= 2");
  }
  if (training.count() < branching) {
    throw TooFewDescriptors("vocabulary training set of " +
                            std::to_string(training.count()) +
                            " descriptors is smaller than the branching " +
                            std::to_string(branching));
  }
  Vocabulary v;
  v.levels_ = levels;
  v.branching_ = branching;
  v.variant_ = training.variant();
  v.desc_length_ = training.length();

  std::vector<int> all(training.count());
  std::iota(all.begin(), all.end(), 0);

  Node root;
  root.id = 0;
  root.parent = -1;
  root.center = cluster_center(training, all);
  v.nodes_.push_back(std::move(root));

  std::mt19937_64 rng(seed);
  struct Work {
    std::int32_t node;
    std::vector<int> items;
    int depth;
  };
  std::queue<Work> queue;
  queue.push({0, std::move(all), 0});
  while (!queue.empty()) {
    Work w = std::move(queue.front());
    queue.pop();
    const int k =
        std::min<int>(branching, static_cast<int>(w.items.size()));
    if (w.depth >= levels || k < 2) continue;  // leaf
    std::vector<Descriptor> centers;
    const auto clusters = kmeans(training, w.items, k, rng, &centers);
    for (int c = 0; c < k; ++c) {
      if (clusters[c].empty()) continue;
      Node child;
      child.id = static_cast<std::int32_t>(v.nodes_.size());
      child.parent = w.node;
      child.center = centers[c];
      v.nodes_[w.node].children.push_back(child.id);
      v.nodes_.push_back(std::move(child));
      queue.push({v.nodes_.back().id, clusters[c], w.depth + 1});
    }
  }

  // idf weights from training occurrence.
  std::map<WordId, int> counts;
  for (int i = 0; i < training.count(); ++i) {
    counts[v.quantize(training.row(i)).first] += 1;
  }
  const double n_total = static_cast<double>(training.count());
  for (Node& node : v.nodes_) {
    if (!node.children.empty()) continue;
    const auto it = counts.find(node.id);
    node.weight = it == counts.end()
                      ? 0.0
                      : std::log(n_total / static_cast<double>(it->second));
  }
  return v;
}

std::pair<WordId, double> Vocabulary::quantize(const Descriptor& d) const {
  if (empty()) throw std::logic_error("quantize on an empty vocabulary");
  if (d.variant != variant_ || d.length != desc_length_) {
    throw VariantMismatch("descriptor does not match the vocabulary variant");
  }
  std::int32_t cur = 0;
  while (!nodes_[cur].children.empty()) {
    double best_d = std::numeric_limits<double>::max();
    std::int32_t best = nodes_[cur].children.front();
    for (std::int32_t child : nodes_[cur].children) {
      const double dist = descriptor_distance(d, nodes_[child].center);
      if (dist < best_d) {
        best_d = dist;
        best = child;
      }
    }
    cur = best;
  }
  return {cur, nodes_[cur].weight};
}

BowVector Vocabulary::to_bow(const FeatureSet& features) const {
  BowVector bow;
  if (features.size() == 0) return bow;
  for (int i = 0; i < features.size(); ++i) {
    const auto [word, weight] = quantize(features.descriptors.row(i));
    if (weight > 0.0) bow[word] += weight;
  }
  double total = 0.0;
  for (const auto& [word, w] : bow) total += w;
  if (total <= 0.0) return {};
  for (auto& [word, w] : bow) w /= total;
  return bow;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write vocabulary: " + path);
  out << "VOCAB v1\n";
  out << levels_ << " " << branching_ << " "
      << (variant_ == DescriptorVariant::kFloat ? "float" : "binary") << " "
      << desc_length_ << "\n";
  out << nodes_.size() << "\n";
  char buf[64];
  for (const Node& node : nodes_) {
    std::snprintf(buf, sizeof(buf), "%d %d %.17g", node.id, node.parent,
                  node.weight);
    out << buf;
    if (variant_ == DescriptorVariant::kFloat) {
      for (float f : node.center.floats) {
        std::snprintf(buf, sizeof(buf), " %.17g", static_cast<double>(f));
        out << buf;
      }
    } else {
      static const char* digits = "0123456789abcdef";
      const int bytes = (desc_length_ + 7) / 8;
      std::string hex(2 * bytes, '0');
      for (int b = 0; b < bytes; ++b) {
        const int value = static_cast<int>(
            (node.center.words[b / 8] >> (8 * (b % 8))) & 0xffu);
        hex[2 * b] = digits[value >> 4];
        hex[2 * b + 1] = digits[value & 0xf];
      }
      out << " " << hex;
    }
    out << "\n";
  }
  if (!out) throw IoError("write failed: " + path);
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocabulary: " + path);
  std::string line;
  if (!std::getline(in, line) || line != "VOCAB v1") {
    throw MalformedFile(path + ":1: expected 'VOCAB v1'");
  }
  Vocabulary v;
  std::string variant_str;
  if (!std::getline(in, line)) throw MalformedFile(path + ":2: truncated");
  {
    std::istringstream ls(line);
    if (!(ls >> v.levels_ >> v.branching_ >> variant_str >> v.desc_length_)) {
      throw MalformedFile(path + ":2: bad header");
    }
  }
  if (variant_str == "float") {
    v.variant_ = DescriptorVariant::kFloat;
  } else if (variant_str == "binary") {
    v.variant_ = DescriptorVariant::kBinary;
  } else {
    throw MalformedFile(path + ":2: unknown variant '" + variant_str + "'");
  }
  std::size_t count = 0;
  if (!std::getline(in, line)) throw MalformedFile(path + ":3: truncated");
  {
    std::istringstream ls(line);
    if (!(ls >> count)) throw MalformedFile(path + ":3: bad node count");
  }
  v.nodes_.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::string where = path + ":" + std::to_string(i + 4);
    if (!std::getline(in, line)) throw MalformedFile(where + ": truncated");
    std::istringstream ls(line);
    Node node;
    if (!(ls >> node.id >> node.parent >> node.weight)) {
      throw MalformedFile(where + ": bad node record");
    }
    if (node.id < 0 || node.id >= static_cast<std::int32_t>(count)) {
      throw MalformedFile(where + ": node id out of range");
    }
    node.center.variant = v.variant_;
    node.center.length = v.desc_length_;
    if (v.variant_ == DescriptorVariant::kFloat) {
      node.center.floats.resize(v.desc_length_);
      for (int k = 0; k < v.desc_length_; ++k) {
        if (!(ls >> node.center.floats[k])) {
          throw MalformedFile(where + ": missing center value");
        }
      }
    } else {
      std::string hex;
      if (!(ls >> hex)) throw MalformedFile(where + ": missing center hex");
      const int bytes = (v.desc_length_ + 7) / 8;
      if (static_cast<int>(hex.size()) != 2 * bytes) {
        throw MalformedFile(where + ": bad center hex length");
      }
      node.center.words.assign((v.desc_length_ + 63) / 64, 0);
      for (int b = 0; b < bytes; ++b) {
        int value = 0;
        for (int t = 0; t < 2; ++t) {
          const char c = hex[2 * b + t];
          int digit = 0;
          if (c >= '0' && c <= '9') {
            digit = c - '0';
          } else if (c >= 'a' && c <= 'f') {
            digit = c - 'a' + 10;
          } else {
            throw MalformedFile(where + ": bad hex digit");
          }
          value = value * 16 + digit;
        }
        node.center.words[b / 8] |= static_cast<std::uint64_t>(value)
                                    << (8 * (b % 8));
      }
    }
    v.nodes_[node.id] = std::move(node);
  }
  for (const Node& node : v.nodes_) {
    if (node.parent >= 0) {
      v.nodes_[node.parent].children.push_back(node.id);
    }
  }
  for (Node& node : v.nodes_) {
    std::sort(node.children.begin(), node.children.end());
  }
  return v;
}

double l2_score(const BowVector& a, const BowVector& b) {
  if (a.empty() || b.empty()) return 0.0;
  double na = 0.0, nb = 0.0;
  for (const auto& [w, v] : a) na += v * v;
  for (const auto& [w, v] : b) nb += v * v;
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  // Direct |a/|a| - b/|b||^2 over the key union; identical vectors come out
  // at exactly zero.
  double sq = 0.0;
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() || ib != b.end()) {
    double va = 0.0, vb = 0.0;
    if (ib == b.end() || (ia != a.end() && ia->first < ib->first)) {
      va = ia->second / na;
      ++ia;
    } else if (ia == a.end() || ib->first < ia->first) {
      vb = ib->second / nb;
      ++ib;
    } else {
      va = ia->second / na;
      vb = ib->second / nb;
      ++ia;
      ++ib;
    }
    sq += (va - vb) * (va - vb);
  }
  return std::clamp(1.0 - 0.5 * std::sqrt(sq), 0.0, 1.0);
}

void KeyFrameDatabase::add(std::int64_t keyframe_id, const BowVector& bow) {
  bows_[keyframe_id] = bow;
  for (const auto& [word, weight] : bow) {
    auto& list = index_[word];
    auto it = std::lower_bound(list.begin(), list.end(), keyframe_id);
    if (it == list.end() || *it != keyframe_id) list.insert(it, keyframe_id);
  }
}

void KeyFrameDatabase::remove(std::int64_t keyframe_id) {
  const auto stored = bows_.find(keyframe_id);
  if (stored == bows_.end()) return;
  for (const auto& [word, weight] : stored->second) {
    auto it = index_.find(word);
    if (it == index_.end()) continue;
    auto pos =
        std::lower_bound(it->second.begin(), it->second.end(), keyframe_id);
    if (pos != it->second.end() && *pos == keyframe_id) {
      it->second.erase(pos);
    }
    if (it->second.empty()) index_.erase(it);
  }
  bows_.erase(keyframe_id);
}

std::vector<KeyFrameDatabase::Candidate> KeyFrameDatabase::query(
    const BowVector& bow, double min_score) const {
  std::set<std::int64_t> sharing;
  for (const auto& [word, weight] : bow) {
    auto it = index_.find(word);
    if (it == index_.end()) continue;
    sharing.insert(it->second.begin(), it->second.end());
  }
  std::vector<Candidate> out;
  for (std::int64_t kf : sharing) {
    const double score = l2_score(bow, bows_.at(kf));
    if (score >= min_score) out.push_back({kf, score});
  }
  std::sort(out.begin(), out.end(), [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.keyframe_id < b.keyframe_id;
  });
  return out;
}

}  // namespace vslam
