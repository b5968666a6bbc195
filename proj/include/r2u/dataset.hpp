#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "r2u/model.hpp"
#include "r2u/numeric.hpp"

namespace r2u {

// A set of examples plus the output cardinality (classes, or vocabulary
// size for next-token data). `origin[i]` identifies example i within the
// dataset it was carved from, which is what partition checks compare.
struct LabeledDataset {
  std::string id;
  std::size_t class_count = 0;
  std::vector<Example> examples;
  std::vector<std::size_t> origin;

  std::size_t size() const { return examples.size(); }
  bool empty() const { return examples.empty(); }
  const Example& operator[](std::size_t i) const { return examples[i]; }

  // Builds a dataset whose origins are 0..n-1. Throws InputError when empty
  // or when a label is out of range.
  static LabeledDataset from_examples(std::string id, std::size_t class_count,
                                      std::vector<Example> examples);

  // Copy with every example's risk tag replaced.
  LabeledDataset with_tag(RiskTag tag) const;
};

// D, D_f, D_r and the optional recovery splits. `full` is D with every
// example tagged by its role.
struct RiskPartition {
  LabeledDataset full;
  LabeledDataset forget;
  LabeledDataset retain;
  std::optional<LabeledDataset> recovery;
  std::optional<LabeledDataset> recovery_finetune;

  // Disjointness and completeness by origin; throws InputError.
  void validate() const;
};

// --- IDX -----------------------------------------------------------------

// Parses an IDX image/label pair. Pixels are scaled by 1/255. `limit`, when
// set, keeps only the first `limit` items. Throws FormatError naming the
// offending field (bad image magic, bad label magic, truncated ..., count
// mismatch) and InputError when a file cannot be opened.
LabeledDataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                        std::optional<std::size_t> limit = std::nullopt);

// Inverse of load_idx for datasets whose inputs are rows*cols pixels in
// [0,1]; pixel bytes are round(v * 255).
void write_idx(const LabeledDataset& d, std::size_t rows, std::size_t cols,
               const std::filesystem::path& images, const std::filesystem::path& labels);

// --- partitions ----------------------------------------------------------

// forget = every example of forget_class, retain = the rest, both in input
// order. Throws InputError if the class is absent or the retain side would
// be empty, ParameterError if forget_class is out of range.
RiskPartition partition_by_class(const LabeledDataset& d, std::int32_t forget_class);

struct SplitFractions {
  double forget = 0.2;
  double recovery = 0.2;
  double recovery_finetune = 0.2;
};

// Shuffles (Fisher-Yates driven by rng) and slices floor(f * n) examples per
// split in the order forget, recovery, recovery_finetune; the remainder is
// retain. Throws ParameterError on negative fractions, a sum above 1, or an
// empty forget split.
RiskPartition partition_random(const LabeledDataset& d, const SplitFractions& fractions,
                               SeededRng& rng);

// Uniform sampling with replacement. Throws ParameterError for size 0 or an
// empty dataset.
Batch sample_batch(const LabeledDataset& d, std::size_t size, SeededRng& rng);

// Every example of d, in order.
Batch full_batch(const LabeledDataset& d);

// Gaussian clusters with unit variance. Class c is centred at
// (separation / sqrt 2) * u_c where u_c is the c-th basis vector when
// classes <= dim and a random unit vector otherwise, so basis-aligned
// centres sit exactly `separation` apart. Examples are grouped by class.
LabeledDataset synth_blobs(std::size_t classes, std::size_t per_class, std::size_t dim,
                           double separation, SeededRng& rng);

// --- character corpora ---------------------------------------------------

// Byte-level vocabulary in first-appearance order.
class CharVocab {
 public:
  static CharVocab from_text(std::string_view text);
  static CharVocab from_symbols(std::string symbols);

  std::size_t size() const { return symbols_.size(); }
  const std::string& symbols() const { return symbols_; }
  bool contains(char c) const;
  std::int32_t id(char c) const;  // throws InputError for unknown chars
  char symbol(std::int32_t id) const;

  std::vector<std::int32_t> encode(std::string_view text) const;
  std::string decode(const std::vector<std::int32_t>& ids) const;

 private:
  std::string symbols_;
  std::array<std::int32_t, 256> index_{};
};

struct CharCorpus {
  std::vector<std::int32_t> tokens;
  CharVocab vocab;
};

// Throws InputError for empty text.
CharCorpus build_char_corpus(std::string_view text);
CharCorpus build_char_corpus(std::string_view text, const CharVocab& vocab);

// One example per position p >= K: context tokens p-K..p-1, target p.
// Throws InputError when the corpus has K or fewer tokens.
LabeledDataset window_dataset(const CharCorpus& corpus, std::size_t context, std::string id = "corpus");

// Credential-style texts sharing one line template. `filler_mask[i]` is true
// where character i of the matching text belongs to a <name>/<secret> filler
// rather than to the template.
struct StyledCorpus {
  std::string forget;
  std::string recovery;
  std::string recovery_finetune;
  std::vector<bool> forget_filler_mask;
  std::vector<bool> recovery_filler_mask;
  std::vector<bool> recovery_finetune_filler_mask;
  std::vector<std::string> forget_fillers;
  std::vector<std::string> recovery_fillers;

  static constexpr std::string_view kLoginField = "login: ";
  static constexpr std::string_view kPasswordField = " pw: ";
};

// Lines "login: <name> pw: <secret>\n". The first forget line is
// "login: pallen pw: ke9davis"; filler sets of the forget text and the two
// recovery texts are disjoint.
StyledCorpus styled_corpus_pair(SeededRng& rng, std::size_t lines_per_text = 40);

// Next-token windows over a styled corpus: D is forget text + recovery text,
// D_f the forget windows, D_r and D_rc both the recovery windows, and the
// fine-tuning split the third text. Fine-tuning origins continue after D's
// so every split stays distinguishable from D_f.
RiskPartition partition_styled(const StyledCorpus& corpus, const CharVocab& vocab,
                               std::size_t context);

}  // namespace r2u
