#include "r2u/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>

#include "r2u/error.hpp"

namespace r2u {

namespace {

LabeledDataset subset(const LabeledDataset& d, const std::vector<std::size_t>& idx,
                      std::string id, RiskTag tag) {
  LabeledDataset out;
  out.id = std::move(id);
  out.class_count = d.class_count;
  out.examples.reserve(idx.size());
  out.origin.reserve(idx.size());
  for (auto i : idx) {
    out.examples.push_back(d.examples[i]);
    out.examples.back().tag = tag;
    out.origin.push_back(d.origin[i]);
  }
  return out;
}

std::set<std::size_t> origin_set(const LabeledDataset& d) {
  return {d.origin.begin(), d.origin.end()};
}

bool disjoint(const std::set<std::size_t>& a, const std::set<std::size_t>& b) {
  for (auto v : a) {
    if (b.count(v)) return false;
  }
  return true;
}

}  // namespace

LabeledDataset LabeledDataset::from_examples(std::string id, std::size_t class_count,
                                             std::vector<Example> examples) {
  if (examples.empty()) throw InputError("dataset '" + id + "' is empty");
  for (const auto& ex : examples) {
    if (ex.target < 0 || static_cast<std::size_t>(ex.target) >= class_count) {
      throw InputError("dataset '" + id + "': label " + std::to_string(ex.target) +
                       " out of range");
    }
  }
  LabeledDataset d;
  d.id = std::move(id);
  d.class_count = class_count;
  d.origin.resize(examples.size());
  std::iota(d.origin.begin(), d.origin.end(), std::size_t{0});
  d.examples = std::move(examples);
  return d;
}

LabeledDataset LabeledDataset::with_tag(RiskTag tag) const {
  LabeledDataset out = *this;
  for (auto& ex : out.examples) ex.tag = tag;
  return out;
}

void RiskPartition::validate() const {
  const auto f = origin_set(forget);
  const auto r = origin_set(retain);
  if (!disjoint(f, r)) throw InputError("partition: forget and retain overlap");
  auto u = f;
  u.insert(r.begin(), r.end());
  if (u != origin_set(full) || forget.size() + retain.size() != full.size()) {
    throw InputError("partition: forget and retain do not cover the full dataset");
  }
  if (recovery && !disjoint(f, origin_set(*recovery))) {
    throw InputError("partition: recovery overlaps forget");
  }
  if (recovery_finetune && !disjoint(f, origin_set(*recovery_finetune))) {
    throw InputError("partition: recovery_finetune overlaps forget");
  }
}

RiskPartition partition_by_class(const LabeledDataset& d, std::int32_t forget_class) {
  if (forget_class < 0 || static_cast<std::size_t>(forget_class) >= d.class_count) {
    throw ParameterError("forget class " + std::to_string(forget_class) + " out of range");
  }
  std::vector<std::size_t> f;
  std::vector<std::size_t> r;
  for (std::size_t i = 0; i < d.size(); ++i) {
    (d.examples[i].target == forget_class ? f : r).push_back(i);
  }
  if (f.empty()) {
    throw InputError("forget class " + std::to_string(forget_class) + " absent from dataset");
  }
  if (r.empty()) throw InputError("empty retain");

  RiskPartition p;
  p.forget = subset(d, f, d.id + "/forget", RiskTag::HighRisk);
  p.retain = subset(d, r, d.id + "/retain", RiskTag::LowRisk);
  p.full = d;
  for (std::size_t i = 0; i < d.size(); ++i) {
    p.full.examples[i].tag =
        d.examples[i].target == forget_class ? RiskTag::HighRisk : RiskTag::LowRisk;
  }
  return p;
}

RiskPartition partition_random(const LabeledDataset& d, const SplitFractions& fr,
                               SeededRng& rng) {
  if (fr.forget < 0 || fr.recovery < 0 || fr.recovery_finetune < 0) {
    throw ParameterError("split fractions must be non-negative");
  }
  if (fr.forget + fr.recovery + fr.recovery_finetune > 1.0) {
    throw ParameterError("split fractions sum above 1");
  }
  const std::size_t n = d.size();
  const auto count = [n](double f) {
    return static_cast<std::size_t>(std::floor(f * static_cast<double>(n)));
  };
  const std::size_t nf = count(fr.forget);
  const std::size_t nrc = count(fr.recovery);
  const std::size_t nft = count(fr.recovery_finetune);
  if (nf == 0) throw ParameterError("empty forget");

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    std::swap(perm[i - 1], perm[rng.next_index(i)]);
  }
  auto take = [&](std::size_t from, std::size_t len) {
    return std::vector<std::size_t>(perm.begin() + static_cast<std::ptrdiff_t>(from),
                                    perm.begin() + static_cast<std::ptrdiff_t>(from + len));
  };
  const auto f = take(0, nf);
  const auto rc = take(nf, nrc);
  const auto ft = take(nf + nrc, nft);
  const auto r = take(nf + nrc + nft, n - nf - nrc - nft);
  if (r.empty()) throw ParameterError("empty retain");

  RiskPartition p;
  p.forget = subset(d, f, d.id + "/forget", RiskTag::HighRisk);
  p.retain = subset(d, r, d.id + "/retain", RiskTag::LowRisk);
  if (nrc > 0) p.recovery = subset(d, rc, d.id + "/recovery", RiskTag::Recovery);
  if (nft > 0) p.recovery_finetune = subset(d, ft, d.id + "/recovery_finetune", RiskTag::Recovery);
  // D = D_f u D_r; the recovery splits stay outside the training data.
  std::vector<std::size_t> fr_idx = f;
  fr_idx.insert(fr_idx.end(), r.begin(), r.end());
  std::sort(fr_idx.begin(), fr_idx.end());
  p.full = subset(d, fr_idx, d.id, RiskTag::LowRisk);
  const std::set<std::size_t> fset(f.begin(), f.end());
  for (std::size_t i = 0; i < fr_idx.size(); ++i) {
    if (fset.count(fr_idx[i])) p.full.examples[i].tag = RiskTag::HighRisk;
  }
  return p;
}

Batch sample_batch(const LabeledDataset& d, std::size_t size, SeededRng& rng) {
  if (size == 0) throw ParameterError("sample_batch: batch size must be >= 1");
  if (d.empty()) throw ParameterError("sample_batch: dataset '" + d.id + "' is empty");
  Batch b;
  b.reserve(size);
  for (std::size_t i = 0; i < size; ++i) b.push_back(d.examples[rng.next_index(d.size())]);
  return b;
}

Batch full_batch(const LabeledDataset& d) { return d.examples; }

LabeledDataset synth_blobs(std::size_t classes, std::size_t per_class, std::size_t dim,
                           double separation, SeededRng& rng) {
  if (classes < 2) throw ParameterError("synth_blobs: classes must be >= 2");
  if (per_class < 1) throw ParameterError("synth_blobs: per_class must be >= 1");
  if (dim < 1) throw ParameterError("synth_blobs: dim must be >= 1");
  const double radius = separation / std::sqrt(2.0);
  std::vector<Vec64> centers(classes, Vec64(dim, 0.0));
  for (std::size_t c = 0; c < classes; ++c) {
    if (classes <= dim) {
      centers[c][c] = radius;
    } else {
      Vec64 u = gaussian(rng, dim, 1.0);
      const double norm = l2_norm(u);
      for (std::size_t j = 0; j < dim; ++j) centers[c][j] = radius * u[j] / norm;
    }
  }
  std::vector<Example> examples;
  examples.reserve(classes * per_class);
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      Example ex;
      ex.input = gaussian(rng, dim, 1.0);
      for (std::size_t j = 0; j < dim; ++j) ex.input[j] += centers[c][j];
      ex.target = static_cast<std::int32_t>(c);
      examples.push_back(std::move(ex));
    }
  }
  return LabeledDataset::from_examples("blobs", classes, std::move(examples));
}

CharVocab CharVocab::from_text(std::string_view text) {
  std::string symbols;
  std::array<bool, 256> seen{};
  for (char c : text) {
    const auto u = static_cast<unsigned char>(c);
    if (!seen[u]) {
      seen[u] = true;
      symbols.push_back(c);
    }
  }
  return from_symbols(std::move(symbols));
}

CharVocab CharVocab::from_symbols(std::string symbols) {
  CharVocab v;
  v.index_.fill(-1);
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    const auto u = static_cast<unsigned char>(symbols[i]);
    if (v.index_[u] >= 0) throw InputError("vocabulary symbols must be distinct");
    v.index_[u] = static_cast<std::int32_t>(i);
  }
  v.symbols_ = std::move(symbols);
  return v;
}

bool CharVocab::contains(char c) const { return index_[static_cast<unsigned char>(c)] >= 0; }

std::int32_t CharVocab::id(char c) const {
  const auto i = index_[static_cast<unsigned char>(c)];
  if (i < 0) throw InputError(std::string("character not in vocabulary: '") + c + "'");
  return i;
}

char CharVocab::symbol(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= symbols_.size()) {
    throw InputError("token id " + std::to_string(id) + " out of vocabulary");
  }
  return symbols_[static_cast<std::size_t>(id)];
}

std::vector<std::int32_t> CharVocab::encode(std::string_view text) const {
  std::vector<std::int32_t> ids;
  ids.reserve(text.size());
  for (char c : text) ids.push_back(id(c));
  return ids;
}

std::string CharVocab::decode(const std::vector<std::int32_t>& ids) const {
  std::string s;
  s.reserve(ids.size());
  for (auto i : ids) s.push_back(symbol(i));
  return s;
}

CharCorpus build_char_corpus(std::string_view text) {
  if (text.empty()) throw InputError("corpus text is empty");
  return build_char_corpus(text, CharVocab::from_text(text));
}

CharCorpus build_char_corpus(std::string_view text, const CharVocab& vocab) {
  if (text.empty()) throw InputError("corpus text is empty");
  return CharCorpus{vocab.encode(text), vocab};
}

LabeledDataset window_dataset(const CharCorpus& corpus, std::size_t context, std::string id) {
  if (corpus.tokens.size() <= context) {
    throw InputError("text shorter than context + 1 (" + std::to_string(corpus.tokens.size()) +
                     " tokens, context " + std::to_string(context) + ")");
  }
  std::vector<Example> examples;
  examples.reserve(corpus.tokens.size() - context);
  for (std::size_t p = context; p < corpus.tokens.size(); ++p) {
    Example ex;
    ex.context.assign(corpus.tokens.begin() + static_cast<std::ptrdiff_t>(p - context),
                      corpus.tokens.begin() + static_cast<std::ptrdiff_t>(p));
    ex.target = corpus.tokens[p];
    examples.push_back(std::move(ex));
  }
  return LabeledDataset::from_examples(std::move(id), corpus.vocab.size(), std::move(examples));
}

namespace {

constexpr std::string_view kLetters = "abcdefghijklmnopqrstuvwxyz";
constexpr std::string_view kAlnum = "abcdefghijklmnopqrstuvwxyz0123456789";

std::string random_word(SeededRng& rng, std::string_view alphabet, std::size_t min_len,
                        std::size_t max_len) {
  const std::size_t len = min_len + rng.next_index(max_len - min_len + 1);
  std::string w;
  for (std::size_t i = 0; i < len; ++i) w.push_back(alphabet[rng.next_index(alphabet.size())]);
  return w;
}

struct StyledText {
  std::string text;
  std::vector<bool> mask;
  std::vector<std::string> fillers;
};

void append(StyledText& t, std::string_view s, bool filler) {
  t.text.append(s);
  t.mask.insert(t.mask.end(), s.size(), filler);
}

StyledText styled_text(SeededRng& rng, std::size_t lines, std::set<std::string>& used,
                       bool seed_with_paper_line) {
  StyledText t;
  for (std::size_t i = 0; i < lines; ++i) {
    std::string name;
    std::string secret;
    if (seed_with_paper_line && i == 0) {
      name = "pallen";
      secret = "ke9davis";
    } else {
      do {
        name = random_word(rng, kLetters, 5, 7);
      } while (used.count(name));
      do {
        secret = random_word(rng, kLetters, 4, 6) + kAlnum[26 + rng.next_index(10)] +
                 random_word(rng, kLetters, 2, 4);
      } while (used.count(secret));
    }
    used.insert(name);
    used.insert(secret);
    t.fillers.push_back(name);
    t.fillers.push_back(secret);
    append(t, StyledCorpus::kLoginField, false);
    append(t, name, true);
    append(t, StyledCorpus::kPasswordField, false);
    append(t, secret, true);
    append(t, "\n", false);
  }
  return t;
}

}  // namespace

StyledCorpus styled_corpus_pair(SeededRng& rng, std::size_t lines_per_text) {
  if (lines_per_text == 0) throw ParameterError("styled corpus needs at least one line");
  std::set<std::string> used;
  auto forget = styled_text(rng, lines_per_text, used, true);
  auto recovery = styled_text(rng, lines_per_text, used, false);
  auto finetune = styled_text(rng, lines_per_text, used, false);

  StyledCorpus c;
  c.forget = std::move(forget.text);
  c.forget_filler_mask = std::move(forget.mask);
  c.forget_fillers = std::move(forget.fillers);
  c.recovery = std::move(recovery.text);
  c.recovery_filler_mask = std::move(recovery.mask);
  c.recovery_fillers = std::move(recovery.fillers);
  c.recovery_fillers.insert(c.recovery_fillers.end(), finetune.fillers.begin(),
                            finetune.fillers.end());
  c.recovery_finetune = std::move(finetune.text);
  c.recovery_finetune_filler_mask = std::move(finetune.mask);
  return c;
}

RiskPartition partition_styled(const StyledCorpus& corpus, const CharVocab& vocab,
                               std::size_t context) {
  const auto fw = window_dataset(build_char_corpus(corpus.forget, vocab), context);
  const auto rw = window_dataset(build_char_corpus(corpus.recovery, vocab), context);
  auto ft = window_dataset(build_char_corpus(corpus.recovery_finetune, vocab), context,
                           "styled/recovery_finetune");

  std::vector<Example> all = fw.examples;
  all.insert(all.end(), rw.examples.begin(), rw.examples.end());
  const auto full = LabeledDataset::from_examples("styled", vocab.size(), std::move(all));
  std::vector<std::size_t> fi(fw.size());
  std::vector<std::size_t> ri(rw.size());
  for (std::size_t i = 0; i < fi.size(); ++i) fi[i] = i;
  for (std::size_t i = 0; i < ri.size(); ++i) ri[i] = fw.size() + i;

  RiskPartition p;
  p.forget = subset(full, fi, "styled/forget", RiskTag::HighRisk);
  p.retain = subset(full, ri, "styled/retain", RiskTag::LowRisk);
  p.recovery = subset(full, ri, "styled/recovery", RiskTag::Recovery);
  p.full = full;
  for (std::size_t i = 0; i < full.size(); ++i) {
    p.full.examples[i].tag = i < fw.size() ? RiskTag::HighRisk : RiskTag::LowRisk;
  }
  ft = ft.with_tag(RiskTag::Recovery);
  for (std::size_t i = 0; i < ft.size(); ++i) ft.origin[i] = full.size() + i;
  p.recovery_finetune = std::move(ft);
  return p;
}

}  // namespace r2u
