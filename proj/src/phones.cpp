#include "tts/phones.hpp"

#include <algorithm>

#include "tts/error.hpp"
#include "tts/util.hpp"
#include "tts/feature_table_data.hpp"

namespace tts {

const std::vector<std::string> kMannerNames = {
    "stop", "affricate", "fricative", "nasal", "semivowel", "vowel"};
const std::vector<std::string> kPlaceNames = {
    "bilabial", "labiodental", "dental", "alveolar",
    "postalveolar", "palatal", "velar", "glottal"};
const std::vector<std::string> kHeightNames = {"high", "mid", "low"};
const std::vector<std::string> kBacknessNames = {"front", "central", "back"};

namespace {

int category_index(const std::vector<std::string>& names, const std::string& value,
                   const std::string& origin, int line_no, const std::string& field) {
  if (value == "none") return -1;
  auto it = std::find(names.begin(), names.end(), value);
  if (it == names.end()) {
    throw Error(ErrorCode::kParse, origin + ":" + std::to_string(line_no) +
                                       ": unknown " + field + " value '" + value + "'");
  }
  return int(it - names.begin());
}

bool parse_bit(const std::string& value, const std::string& origin, int line_no) {
  if (value == "0") return false;
  if (value == "1") return true;
  throw Error(ErrorCode::kParse, origin + ":" + std::to_string(line_no) +
                                     ": expected 0 or 1, got '" + value + "'");
}

}  // namespace

PhoneSet PhoneSet::builtin() {
  return parse(kBuiltinFeatureTableTsv, "<builtin feature table>");
}

PhoneSet PhoneSet::load(const std::string& path) {
  return parse(read_text_file(path), path);
}

PhoneSet PhoneSet::parse(const std::string& tsv_text, const std::string& origin) {
  PhoneSet set;
  auto lines = split(tsv_text, '\n');
  bool header_seen = false;
  for (size_t i = 0; i < lines.size(); ++i) {
    std::string line = trim(lines[i]);
    if (line.empty()) continue;
    auto cols = split(lines[i], '\t');
    for (auto& c : cols) c = trim(c);
    if (!header_seen) {
      if (cols.size() != 10 || cols[0] != "phone") {
        throw Error(ErrorCode::kParse, origin + ": bad feature table header");
      }
      header_seen = true;
      continue;
    }
    if (cols.size() != 10) {
      throw Error(ErrorCode::kParse, origin + ":" + std::to_string(i + 1) +
                                         ": expected 10 columns, got " +
                                         std::to_string(cols.size()));
    }
    int line_no = int(i + 1);
    const std::string& phone = cols[0];
    if (set.index_.count(phone)) {
      throw Error(ErrorCode::kParse, origin + ":" + std::to_string(line_no) +
                                         ": duplicate phone '" + phone + "'");
    }
    PhoneFeatures f;
    f.silence = parse_bit(cols[1], origin, line_no);
    f.voiced = parse_bit(cols[2], origin, line_no);
    f.closure = parse_bit(cols[3], origin, line_no);
    f.release = parse_bit(cols[4], origin, line_no);
    f.manner = category_index(kMannerNames, cols[5], origin, line_no, "manner");
    f.place = category_index(kPlaceNames, cols[6], origin, line_no, "place");
    f.height = category_index(kHeightNames, cols[7], origin, line_no, "height");
    f.backness = category_index(kBacknessNames, cols[8], origin, line_no, "backness");
    f.round = parse_bit(cols[9], origin, line_no);
    set.index_[phone] = int(set.phones_.size());
    set.phones_.push_back(phone);
    set.features_.push_back(f);
  }
  auto it = set.index_.find("pad");
  if (it == set.index_.end()) {
    throw Error(ErrorCode::kParse, origin + ": feature table has no 'pad' entry");
  }
  set.pad_index_ = it->second;
  return set;
}

bool PhoneSet::contains(const std::string& phone) const {
  return index_.count(phone) != 0;
}

int PhoneSet::index_of(const std::string& phone) const {
  auto it = index_.find(phone);
  if (it == index_.end()) {
    throw Error(ErrorCode::kInventory, "phone '" + phone + "' is not in the inventory");
  }
  return it->second;
}

const PhoneFeatures& PhoneSet::features(const std::string& phone) const {
  return features_[size_t(index_of(phone))];
}

int PhoneSet::feature_width() {
  // silence, voiced, closure, release + manner + place + height + backness + round
  return 4 + int(kMannerNames.size()) + int(kPlaceNames.size()) +
         int(kHeightNames.size()) + int(kBacknessNames.size()) + 1;
}

std::vector<double> PhoneSet::encode_features(int index) const {
  const PhoneFeatures& f = features_[size_t(index)];
  std::vector<double> v;
  v.reserve(size_t(feature_width()));
  v.push_back(f.silence ? 1.0 : 0.0);
  v.push_back(f.voiced ? 1.0 : 0.0);
  v.push_back(f.closure ? 1.0 : 0.0);
  v.push_back(f.release ? 1.0 : 0.0);
  auto push_category = [&v](int idx, size_t n) {
    for (size_t i = 0; i < n; ++i) v.push_back(int(i) == idx ? 1.0 : 0.0);
  };
  push_category(f.manner, kMannerNames.size());
  push_category(f.place, kPlaceNames.size());
  push_category(f.height, kHeightNames.size());
  push_category(f.backness, kBacknessNames.size());
  v.push_back(f.round ? 1.0 : 0.0);
  return v;
}

}  // namespace tts
