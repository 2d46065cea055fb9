#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

namespace camadapt {

using DomainId = std::string;

enum class Split { kTrain, kTest };
enum class Task { kGrading5, kBinary };

int num_classes(Task task);
std::string to_string(Split split);
std::string to_string(Task task);
Split parse_split(const std::string& token);
Task parse_task(const std::string& token);

// Referable DR: grade II or above.
inline int referable_label(int grade) { return grade >= 2 ? 1 : 0; }

// Counts label reads per brand so tests can prove that unsupervised code
// paths never touch target-domain grades.
class LabelAudit {
 public:
  static void record(const DomainId& brand);
  static std::uint64_t reads(const DomainId& brand);
  static void reset();
};

class ImageRecord {
 public:
  ImageRecord(std::string image_id, std::filesystem::path path, int grade, DomainId brand,
              Split split);

  const std::string& image_id() const { return image_id_; }
  const std::filesystem::path& path() const { return path_; }
  const DomainId& brand() const { return brand_; }
  Split split() const { return split_; }

  // Audited read of the label.
  int grade() const;

  bool operator==(const ImageRecord& other) const;

 private:
  std::string image_id_;
  std::filesystem::path path_;
  int grade_;
  DomainId brand_;
  Split split_;
};

// Immutable after construction.
class Manifest {
 public:
  Manifest(Task task, std::vector<ImageRecord> records, std::set<DomainId> declared_brands = {});

  Task task() const { return task_; }
  const std::vector<ImageRecord>& records() const { return records_; }
  const std::set<DomainId>& brands() const { return brands_; }
  std::size_t size() const { return records_.size(); }

  bool has_brand(const DomainId& brand) const { return brands_.count(brand) > 0; }
  std::vector<ImageRecord> select(const DomainId& brand, Split split) const;

 private:
  Task task_;
  std::vector<ImageRecord> records_;
  std::set<DomainId> brands_;
};

// CSV header `image_id,path,grade,brand,split`. Relative paths resolve
// against the manifest's directory.
Manifest load_manifest(const std::filesystem::path& path, Task task);
void save_manifest(const std::filesystem::path& path, const Manifest& manifest);

// Inner join of a brand-label CSV (`image_id,brand`) with a grade CSV
// (`image_id,grade` or `image_id,grade,split`). Image paths are
// image_dir/<image_id><extension>; rows without a split column use
// default_split.
Manifest join_brand_labels(const std::filesystem::path& brand_csv,
                           const std::filesystem::path& grade_csv,
                           const std::filesystem::path& image_dir, const std::string& extension,
                           Task task, Split default_split = Split::kTest);

struct CrossTab {
  std::vector<DomainId> brands;  // sorted
  int num_classes = 0;
  std::map<std::tuple<DomainId, int, Split>, std::size_t> counts;

  std::size_t at(const DomainId& brand, int grade, Split split) const;
  std::size_t total() const;
};

CrossTab cross_tab(const Manifest& manifest);
// One row per (brand, split) with one column per class.
void write_cross_tab_csv(const std::filesystem::path& path, const CrossTab& table, Task task);

}  // namespace camadapt
