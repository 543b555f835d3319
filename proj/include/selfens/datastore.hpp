#pragma once

#include "selfens/pipeline.hpp"
#include "selfens/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace selfens {

struct ManifestRecord {
  std::string path;
  std::optional<int> label;
  std::optional<std::string> subject;
};

/// Catalog of images. Stored on disk as CSV with header `path,label,subject`
/// (an empty label marks an unlabeled record), optionally preceded by a
/// `# classes: a,b,...` line that fixes the class table and its order.
struct Manifest {
  std::filesystem::path root;
  std::vector<std::string> class_names;
  std::vector<ManifestRecord> records;
  std::vector<std::string> warnings;

  std::filesystem::path resolve(std::size_t id) const;
  int num_classes() const { return static_cast<int>(class_names.size()); }
};

struct ManifestOptions {
  /// Decode every referenced image while loading.
  bool verify_images = true;
};

Manifest load_manifest(const std::filesystem::path &path, const ManifestOptions &options = {});
void write_manifest(const Manifest &manifest, const std::filesystem::path &path);

/// Disjoint labeled / unlabeled / test record ids.
struct SplitPlan {
  std::vector<std::size_t> labeled;
  std::vector<std::size_t> unlabeled;
  std::vector<std::size_t> test;
  std::size_t budget = 0;
  std::uint64_t seed = 0;
  bool stratify = false;
  double test_fraction = 0.0;
  std::size_t record_count = 0;

  friend bool operator==(const SplitPlan &, const SplitPlan &) = default;
};

/// Subject-disjoint test selection (about `test_fraction` of the labeled
/// records), then `budget` labeled training records; everything else on the
/// training side is unlabeled. With `stratify`, class counts in the labeled
/// set differ by at most one.
SplitPlan make_split(const Manifest &manifest, std::size_t budget, std::uint64_t seed,
                     bool stratify, double test_fraction = 0.3);

void save_plan(const SplitPlan &plan, const std::filesystem::path &path);
SplitPlan load_plan(const std::filesystem::path &path);
/// Rejects plans whose ids fall outside the manifest or overlap.
void validate_plan(const SplitPlan &plan, const Manifest &manifest);

/// Decoded source images (resized to the AugmentSpec source size) for a set of
/// record ids, loaded once and shared read-only.
class SampleStore {
public:
  SampleStore(const Manifest &manifest, const std::vector<std::size_t> &ids,
              const AugmentSpec &spec, int threads = 0);
  const Image &source(std::size_t id) const;
  const AugmentSpec &spec() const { return spec_; }

private:
  AugmentSpec spec_;
  std::vector<std::optional<Image>> images_;
};

struct LabeledBatch {
  Tensor images;  // [B, 1, H, W]
  Tensor targets; // [B, K] one-hot
  std::vector<std::size_t> ids;
};

struct UnlabeledBatch {
  Tensor first;  // [B, 1, H, W]
  Tensor second; // [B, 1, H, W]
  std::vector<std::size_t> ids;
};

struct TrainStep {
  std::size_t index = 0;
  LabeledBatch labeled;
  std::optional<UnlabeledBatch> unlabeled;
};

struct BatchOptions {
  int batch_size = 32;
  std::uint64_t epoch_seed = 0;
  /// Build the augmented view pairs; off when the consistency weight is 0.
  bool with_unlabeled = true;
  /// Labeled images get a random training view; otherwise the eval path.
  bool augment_labeled = true;
  int threads = 0;
};

/// One epoch of (labeled, unlabeled) step pairs. The epoch is one pass over
/// the unlabeled set in batches of `batch_size`; the labeled set is cycled
/// with reshuffling so each step has a labeled partner. Without unlabeled
/// records the epoch is one pass over the labeled set. Composition and
/// augmentation depend only on (epoch_seed, epoch, position), never on
/// thread scheduling.
class BatchStream {
public:
  BatchStream(const SplitPlan &plan, const Manifest &manifest, const SampleStore &store,
              const BatchOptions &options, int epoch);

  std::size_t steps() const { return steps_; }
  std::optional<TrainStep> next();

  static std::size_t steps_per_epoch(std::size_t labeled, std::size_t unlabeled, int batch_size);

private:
  const Manifest &manifest_;
  const SampleStore &store_;
  BatchOptions options_;
  Rng epoch_rng_;
  std::vector<std::size_t> labeled_;
  std::vector<std::size_t> unlabeled_order_;
  std::vector<std::size_t> labeled_cycle_;
  std::size_t cycle_pos_ = 0;
  std::size_t cycle_count_ = 0;
  std::size_t steps_ = 0;
  std::size_t step_ = 0;

  std::vector<std::size_t> next_labeled_ids();
};

struct SyntheticOptions {
  /// Images per synthetic subject; subjects share a base appearance.
  int images_per_subject = 10;
};

/// Writes a two-class grayscale corpus (PGM files plus manifest.csv) to
/// `out_dir`. The class is the elongation of a bright elliptical blob;
/// position, size, orientation, background, contrast, blur and sensor noise
/// vary as nuisances. Returns the manifest as written.
Manifest generate_synthetic(const std::filesystem::path &out_dir, int n_per_class, int image_size,
                            std::uint64_t seed, const SyntheticOptions &options = {});

} // namespace selfens
