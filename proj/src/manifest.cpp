#include "camadapt/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <mutex>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "camadapt/error.hpp"

namespace camadapt {
namespace {

std::mutex g_audit_mutex;
std::map<DomainId, std::uint64_t> g_audit_reads;

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

std::string strip(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
  return s.substr(i);
}

// Reads a CSV into rows after checking the header; returns (line number, fields).
std::vector<std::pair<int, std::vector<std::string>>> read_csv(
    const std::filesystem::path& path, const std::vector<std::vector<std::string>>& headers,
    std::size_t* header_index) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::kConfig, path.string() + ": empty file");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line = line.substr(3);
  std::vector<std::string> header;
  for (auto& f : split_csv_line(strip(line))) header.push_back(strip(f));
  auto match = std::find(headers.begin(), headers.end(), header);
  if (match == headers.end()) {
    std::string expected;
    for (const auto& h : headers) {
      std::string joined;
      for (std::size_t i = 0; i < h.size(); ++i) joined += (i ? "," : "") + h[i];
      expected += (expected.empty() ? "" : " or ") + joined;
    }
    fail(ErrorKind::kConfig, path.string() + ":1: header must be " + expected);
  }
  *header_index = static_cast<std::size_t>(match - headers.begin());
  const std::size_t width = match->size();
  std::vector<std::pair<int, std::vector<std::string>>> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip(line);
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    for (auto& f : fields) f = strip(f);
    if (fields.size() != width) {
      fail(ErrorKind::kConfig, path.string() + ":" + std::to_string(line_no) + ": expected " +
                                   std::to_string(width) + " fields, found " +
                                   std::to_string(fields.size()));
    }
    rows.emplace_back(line_no, std::move(fields));
  }
  return rows;
}

int parse_grade(const std::string& token, const std::string& where) {
  std::size_t used = 0;
  int value = 0;
  try {
    value = std::stoi(token, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != token.size()) {
    fail(ErrorKind::kConfig, where + ": grade '" + token + "' is not an integer");
  }
  return value;
}

void check_grade(int grade, Task task, const std::string& where) {
  if (grade < 0 || grade >= num_classes(task)) {
    fail(ErrorKind::kConfig, where + ": grade out of range (" + std::to_string(grade) +
                                 " not in [0," + std::to_string(num_classes(task)) + "))");
  }
}

}  // namespace

int num_classes(Task task) { return task == Task::kGrading5 ? 5 : 2; }

std::string to_string(Split split) { return split == Split::kTrain ? "train" : "test"; }
std::string to_string(Task task) { return task == Task::kGrading5 ? "grading5" : "binary"; }

Split parse_split(const std::string& token) {
  if (token == "train") return Split::kTrain;
  if (token == "test") return Split::kTest;
  fail(ErrorKind::kConfig, "unknown split '" + token + "' (expected train or test)");
}

Task parse_task(const std::string& token) {
  if (token == "grading5") return Task::kGrading5;
  if (token == "binary") return Task::kBinary;
  fail(ErrorKind::kConfig, "unknown task '" + token + "' (expected grading5 or binary)");
}

void LabelAudit::record(const DomainId& brand) {
  std::lock_guard lock(g_audit_mutex);
  ++g_audit_reads[brand];
}

std::uint64_t LabelAudit::reads(const DomainId& brand) {
  std::lock_guard lock(g_audit_mutex);
  auto it = g_audit_reads.find(brand);
  return it == g_audit_reads.end() ? 0 : it->second;
}

void LabelAudit::reset() {
  std::lock_guard lock(g_audit_mutex);
  g_audit_reads.clear();
}

ImageRecord::ImageRecord(std::string image_id, std::filesystem::path path, int grade,
                         DomainId brand, Split split)
    : image_id_(std::move(image_id)),
      path_(std::move(path)),
      grade_(grade),
      brand_(std::move(brand)),
      split_(split) {
  if (image_id_.empty()) fail(ErrorKind::kConfig, "empty image_id");
  if (brand_.empty()) fail(ErrorKind::kConfig, "empty brand for image " + image_id_);
}

int ImageRecord::grade() const {
  LabelAudit::record(brand_);
  return grade_;
}

bool ImageRecord::operator==(const ImageRecord& other) const {
  return image_id_ == other.image_id_ && path_ == other.path_ && grade_ == other.grade_ &&
         brand_ == other.brand_ && split_ == other.split_;
}

Manifest::Manifest(Task task, std::vector<ImageRecord> records, std::set<DomainId> declared_brands)
    : task_(task), records_(std::move(records)), brands_(std::move(declared_brands)) {
  const bool infer = brands_.empty();
  std::unordered_set<std::string> ids;
  for (const auto& r : records_) {
    if (!ids.insert(r.image_id()).second) {
      fail(ErrorKind::kConfig, "duplicate image_id '" + r.image_id() + "'");
    }
    if (infer) {
      brands_.insert(r.brand());
    } else if (!brands_.count(r.brand())) {
      fail(ErrorKind::kConfig, "record " + r.image_id() + " has undeclared brand '" + r.brand() + "'");
    }
  }
}

std::vector<ImageRecord> Manifest::select(const DomainId& brand, Split split) const {
  if (!has_brand(brand)) fail(ErrorKind::kConfig, "unknown brand '" + brand + "'");
  std::vector<ImageRecord> out;
  for (const auto& r : records_) {
    if (r.brand() == brand && r.split() == split) out.push_back(r);
  }
  return out;
}

Manifest load_manifest(const std::filesystem::path& path, Task task) {
  std::size_t which = 0;
  const auto rows = read_csv(path, {{"image_id", "path", "grade", "brand", "split"}}, &which);
  const auto base = path.parent_path();
  std::vector<ImageRecord> records;
  records.reserve(rows.size());
  std::unordered_set<std::string> ids;
  for (const auto& [line_no, f] : rows) {
    const std::string where = path.string() + ":" + std::to_string(line_no);
    const int grade = parse_grade(f[2], where);
    check_grade(grade, task, where);
    Split split;
    try {
      split = parse_split(f[4]);
    } catch (const Error& e) {
      fail(ErrorKind::kConfig, where + ": " + e.what());
    }
    if (f[0].empty()) fail(ErrorKind::kConfig, where + ": empty image_id");
    if (f[3].empty()) fail(ErrorKind::kConfig, where + ": empty brand");
    if (!ids.insert(f[0]).second) {
      fail(ErrorKind::kConfig, where + ": duplicate image_id '" + f[0] + "'");
    }
    std::filesystem::path p(f[1]);
    if (p.is_relative()) p = base / p;
    records.emplace_back(f[0], p.lexically_normal(), grade, f[3], split);
  }
  return Manifest(task, std::move(records));
}

void save_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  const auto base = std::filesystem::absolute(path).parent_path();
  out << "image_id,path,grade,brand,split\n";
  for (const auto& r : manifest.records()) {
    std::filesystem::path p = r.path();
    const auto abs = std::filesystem::absolute(p).lexically_normal();
    const auto rel = abs.lexically_relative(base);
    if (!rel.empty() && *rel.begin() != "..") p = rel;
    out << r.image_id() << ',' << p.generic_string() << ',' << r.grade() << ',' << r.brand() << ','
        << to_string(r.split()) << '\n';
  }
  if (!out) fail(ErrorKind::kIo, "failed writing " + path.string());
}

Manifest join_brand_labels(const std::filesystem::path& brand_csv,
                           const std::filesystem::path& grade_csv,
                           const std::filesystem::path& image_dir, const std::string& extension,
                           Task task, Split default_split) {
  std::size_t which = 0;
  const auto brand_rows = read_csv(brand_csv, {{"image_id", "brand"}}, &which);
  const auto grade_rows =
      read_csv(grade_csv, {{"image_id", "grade"}, {"image_id", "grade", "split"}}, &which);
  const bool has_split = which == 1;
  std::unordered_map<std::string, std::pair<int, Split>> grades;
  for (const auto& [line_no, f] : grade_rows) {
    const std::string where = grade_csv.string() + ":" + std::to_string(line_no);
    const int grade = parse_grade(f[1], where);
    check_grade(grade, task, where);
    Split split = default_split;
    if (has_split) {
      try {
        split = parse_split(f[2]);
      } catch (const Error& e) {
        fail(ErrorKind::kConfig, where + ": " + e.what());
      }
    }
    if (!grades.emplace(f[0], std::make_pair(grade, split)).second) {
      fail(ErrorKind::kConfig, where + ": duplicate image_id '" + f[0] + "'");
    }
  }
  std::vector<ImageRecord> records;
  for (const auto& [line_no, f] : brand_rows) {
    const std::string where = brand_csv.string() + ":" + std::to_string(line_no);
    auto it = grades.find(f[0]);
    if (it == grades.end()) fail(ErrorKind::kConfig, where + ": no grade for image '" + f[0] + "'");
    if (f[1].empty()) fail(ErrorKind::kConfig, where + ": empty brand");
    records.emplace_back(f[0], image_dir / (f[0] + extension), it->second.first, f[1],
                         it->second.second);
  }
  return Manifest(task, std::move(records));
}

std::size_t CrossTab::at(const DomainId& brand, int grade, Split split) const {
  auto it = counts.find({brand, grade, split});
  return it == counts.end() ? 0 : it->second;
}

std::size_t CrossTab::total() const {
  std::size_t n = 0;
  for (const auto& [_, c] : counts) n += c;
  return n;
}

CrossTab cross_tab(const Manifest& manifest) {
  CrossTab table;
  table.brands.assign(manifest.brands().begin(), manifest.brands().end());
  table.num_classes = num_classes(manifest.task());
  for (const auto& b : table.brands) {
    for (int g = 0; g < table.num_classes; ++g) {
      for (Split s : {Split::kTrain, Split::kTest}) table.counts[{b, g, s}] = 0;
    }
  }
  for (const auto& r : manifest.records()) ++table.counts[{r.brand(), r.grade(), r.split()}];
  return table;
}

void write_cross_tab_csv(const std::filesystem::path& path, const CrossTab& table, Task task) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << "camera_brand,split";
  for (int g = 0; g < table.num_classes; ++g) {
    if (task == Task::kBinary) {
      out << (g == 0 ? ",negative" : ",positive");
    } else {
      out << ",grade_" << g;
    }
  }
  out << '\n';
  for (const auto& b : table.brands) {
    for (Split s : {Split::kTrain, Split::kTest}) {
      out << b << ',' << to_string(s);
      for (int g = 0; g < table.num_classes; ++g) out << ',' << table.at(b, g, s);
      out << '\n';
    }
  }
}

}  // namespace camadapt
