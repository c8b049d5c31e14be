#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vslam/features.hpp"

namespace vslam {

using WordId = std::int32_t;

/// Sparse, L1-normalized word histogram. Empty frames produce empty vectors.
using BowVector = std::map<WordId, double>;

/// Hierarchical k-means word tree. Nodes store cluster centers; leaves are
/// the visual words and carry idf weights.
class Vocabulary {
 public:
  struct Node {
    std::int32_t id = 0;
    std::int32_t parent = -1;
    std::vector<std::int32_t> children;
    Descriptor center;
    double weight = 0.0;  // idf, meaningful for leaves
  };

  Vocabulary() = default;

  int levels() const { return levels_; }
  int branching() const { return branching_; }
  DescriptorVariant variant() const { return variant_; }
  int descriptor_length() const { return desc_length_; }
  std::size_t node_count() const { return nodes_.size(); }
  std::size_t leaf_count() const;
  bool empty() const { return nodes_.empty(); }
  const Node& node(std::int32_t id) const { return nodes_[id]; }

  /// Greedy descent to the nearest leaf; returns (word id, idf weight).
  std::pair<WordId, double> quantize(const Descriptor& d) const;

  /// tf-idf conversion of a frame's descriptors, L1-normalized.
  BowVector to_bow(const FeatureSet& features) const;

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

  /// Recursive k-means (k-means++ seeding, fixed seed) over the training
  /// descriptors. Binary centers use bitwise majority, float centers use
  /// arithmetic means. Throws TooFewDescriptors when the corpus is smaller
  /// than the branching factor.
  static Vocabulary build(const DescriptorArray& training, int levels,
                          int branching, std::uint64_t seed);

 private:
  int levels_ = 0;
  int branching_ = 0;
  DescriptorVariant variant_ = DescriptorVariant::kFloat;
  int desc_length_ = 0;
  std::vector<Node> nodes_;  // nodes_[0] is the root
};

inline Vocabulary build_vocabulary(const DescriptorArray& training, int levels,
                                   int branching, std::uint64_t seed) {
  return Vocabulary::build(training, levels, branching, seed);
}

/// L2 score between two BoW vectors: 1 - 0.5 * |a/|a| - b/|b||_2, in [0, 1].
/// An empty vector scores 0 against anything.
double l2_score(const BowVector& a, const BowVector& b);

/// Inverted index from words to the keyframes containing them.
class KeyFrameDatabase {
 public:
  void add(std::int64_t keyframe_id, const BowVector& bow);
  /// Removes a keyframe using its stored BoW.
  void remove(std::int64_t keyframe_id);

  /// Keyframes sharing at least one word with the query, scored by l2_score
  /// against their stored BoW, filtered by min_score, ranked descending
  /// (ties by ascending id).
  struct Candidate {
    std::int64_t keyframe_id = -1;
    double score = 0.0;
  };
  std::vector<Candidate> query(const BowVector& bow, double min_score) const;

  std::size_t size() const { return bows_.size(); }

 private:
  std::map<WordId, std::vector<std::int64_t>> index_;
  std::map<std::int64_t, BowVector> bows_;
};

}  // namespace vslam
