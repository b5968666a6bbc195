#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "r2u/dataset.hpp"
#include "r2u/model.hpp"
#include "r2u/prepare.hpp"
#include "r2u/unlearn.hpp"

namespace r2u {

// ---- parameter snapshots ("R2U1") ----------------------------------------
//
// All integers little-endian.
//   "R2U1"
//   u32 model kind (0 classifier, 1 char_lm, 2 quadratic), u32 role
//   u32 width count, u32 widths..., u32 vocab, u32 context, u32 embed_dim, u32 hidden
//   u32 vocabulary byte count, vocabulary bytes (CharLM symbol table; may be empty)
//   u32 tensor count, per tensor: u32 name length, name bytes, u32 rank, u32 dims...
//   u64 value count, then the values as IEEE-754 binary64

struct Snapshot {
  ParamState params;
  std::optional<CharVocab> vocab;
};

void write_snapshot(const std::filesystem::path& path, const ParamState& params,
                    const CharVocab* vocab = nullptr);
// Throws FormatError for a wrong magic, truncation or inconsistent layout.
Snapshot read_snapshot(const std::filesystem::path& path);

// ---- CSV ------------------------------------------------------------------

// Row of the trajectory CSV. Absent values render as empty cells.
struct CsvRow {
  std::size_t step = 0;
  std::optional<std::size_t> epoch;
  Phase phase = Phase::Learning;
  std::optional<double> forget_loss;
  std::optional<double> forget_acc;
  std::optional<double> retain_acc;
  std::optional<double> recovery_loss;
};

inline constexpr const char* kTrajectoryHeader =
    "step,epoch,phase,forget_loss,forget_acc,retain_acc,recovery_loss";

// Nine significant digits, "%.9g"; empty for nullopt and non-finite values.
std::string format_number(std::optional<double> v);

std::vector<CsvRow> to_csv_rows(const TrainLog& log);
std::vector<CsvRow> to_csv_rows(const Trajectory& traj);

// Header line, then one line per row. `prefix_header`/`prefix_values` add
// leading columns (e.g. the forget class) when non-empty.
std::string render_csv(const std::vector<CsvRow>& rows, const std::string& prefix_header = "",
                       const std::vector<std::string>& prefix_values = {});

void write_text(const std::filesystem::path& path, const std::string& text);

// Writes render_csv(rows) to path.
void emit_csv(const std::filesystem::path& path, const std::vector<CsvRow>& rows);

// ---- token report ------------------------------------------------------------

// Marks the characters of "<name>" and "<secret>" in lines shaped
// "login: <name> pw: <secret>"; everything else is template.
std::vector<bool> credential_filler_mask(const std::string& text);

struct TokenReport {
  std::vector<TokenLoss> tokens;
  std::string text;
  // Present when the text contains credential-style lines.
  std::optional<double> filler_mean_loss;
  std::optional<double> template_mean_loss;
  std::size_t filler_count = 0;
  std::size_t template_count = 0;
};

TokenReport token_report(const ParamState& params, const CharVocab& vocab, const std::string& text);

// {"tokens": [{"position", "token", "loss"}...], "summary": {...}}
std::string render_token_report(const TokenReport& report);
void emit_token_report(const std::filesystem::path& path, const ParamState& params,
                       const CharVocab& vocab, const std::string& text);

}  // namespace r2u
