#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace tts {

// Articulatory description of one phone, as read from the feature table.
struct PhoneFeatures {
  bool silence = false;
  bool voiced = false;
  bool closure = false;
  bool release = false;
  int manner = -1;    // index into kMannerNames, -1 = none
  int place = -1;     // index into kPlaceNames
  int height = -1;    // index into kHeightNames
  int backness = -1;  // index into kBacknessNames
  bool round = false;
};

extern const std::vector<std::string> kMannerNames;    // stop .. vowel
extern const std::vector<std::string> kPlaceNames;     // bilabial .. glottal
extern const std::vector<std::string> kHeightNames;    // high, mid, low
extern const std::vector<std::string> kBacknessNames;  // front, central, back

// Phone inventory plus per-phone articulatory features. The default set is
// the TIMIT inventory with an extra reserved "pad" entry used beyond
// utterance edges.
class PhoneSet {
 public:
  static PhoneSet builtin();
  static PhoneSet load(const std::string& path);
  static PhoneSet parse(const std::string& tsv_text, const std::string& origin);

  int size() const { return int(phones_.size()); }
  bool contains(const std::string& phone) const;
  // Throws InventoryError naming the label if unknown.
  int index_of(const std::string& phone) const;
  const std::string& name(int index) const { return phones_[size_t(index)]; }
  const PhoneFeatures& features(int index) const { return features_[size_t(index)]; }
  const PhoneFeatures& features(const std::string& phone) const;

  int pad_index() const { return pad_index_; }
  const std::string& pad_phone() const { return phones_[size_t(pad_index_)]; }

  // Width of the encoded articulatory feature slice.
  static int feature_width();
  // Encodes one phone's features: binary flags plus categorical sub-fields
  // (all-zero sub-field when the category does not apply).
  std::vector<double> encode_features(int index) const;

 private:
  std::vector<std::string> phones_;
  std::vector<PhoneFeatures> features_;
  std::unordered_map<std::string, int> index_;
  int pad_index_ = -1;
};

}  // namespace tts
