#include "r2u/report.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <json.hpp>
#include <sstream>

#include "r2u/error.hpp"

namespace r2u {

namespace {

static_assert(std::endian::native == std::endian::little,
              "snapshot I/O assumes a little-endian host");

class ByteWriter {
 public:
  void u32(std::uint32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void f64(double v) { raw(&v, 8); }
  void bytes(std::string_view s) { buf_.append(s); }
  const std::string& data() const { return buf_; }

 private:
  void raw(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string data) : data_(std::move(data)) {}

  std::uint32_t u32(const char* field) { return pod<std::uint32_t>(field); }
  std::uint64_t u64(const char* field) { return pod<std::uint64_t>(field); }
  double f64(const char* field) { return pod<double>(field); }
  std::string bytes(std::size_t n, const char* field) {
    need(n, field);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == data_.size(); }

 private:
  template <typename T>
  T pod(const char* field) {
    need(sizeof(T), field);
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void need(std::size_t n, const char* field) {
    if (data_.size() - pos_ < n) throw FormatError(std::string("truncated snapshot: ") + field);
  }
  std::string data_;
  std::size_t pos_ = 0;
};

std::optional<double> present(double v) {
  if (std::isfinite(v)) return v;
  return std::nullopt;
}

constexpr std::uint32_t kind_code(ModelKind k) {
  switch (k) {
    case ModelKind::Classifier:
      return 0;
    case ModelKind::CharLM:
      return 1;
    case ModelKind::Quadratic:
      return 2;
  }
  return 0;
}

}  // namespace

void write_snapshot(const std::filesystem::path& path, const ParamState& params,
                    const CharVocab* vocab) {
  ByteWriter w;
  w.bytes("R2U1");
  w.u32(kind_code(params.spec.kind));
  w.u32(static_cast<std::uint32_t>(params.role));
  w.u32(static_cast<std::uint32_t>(params.spec.widths.size()));
  for (auto v : params.spec.widths) w.u32(static_cast<std::uint32_t>(v));
  w.u32(static_cast<std::uint32_t>(params.spec.vocab));
  w.u32(static_cast<std::uint32_t>(params.spec.context));
  w.u32(static_cast<std::uint32_t>(params.spec.embed_dim));
  w.u32(static_cast<std::uint32_t>(params.spec.hidden));
  const std::string symbols = vocab ? vocab->symbols() : std::string();
  w.u32(static_cast<std::uint32_t>(symbols.size()));
  w.bytes(symbols);
  w.u32(static_cast<std::uint32_t>(params.layout.size()));
  for (const auto& s : params.layout) {
    w.u32(static_cast<std::uint32_t>(s.name.size()));
    w.bytes(s.name);
    w.u32(static_cast<std::uint32_t>(s.shape.size()));
    for (auto d : s.shape) w.u32(static_cast<std::uint32_t>(d));
  }
  w.u64(params.values.size());
  for (double v : params.values) w.f64(v);
  write_text(path, w.data());
}

Snapshot read_snapshot(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open snapshot '" + path.string() + "'");
  ByteReader r{std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>())};
  if (r.bytes(4, "magic") != "R2U1") throw FormatError("bad snapshot magic");

  ModelSpec spec;
  const auto kind = r.u32("model kind");
  if (kind > 2) throw FormatError("unknown model kind " + std::to_string(kind));
  spec.kind = kind == 0 ? ModelKind::Classifier : kind == 1 ? ModelKind::CharLM : ModelKind::Quadratic;
  const auto role = r.u32("role");
  if (role > static_cast<std::uint32_t>(ParamRole::PostRecovery)) throw FormatError("unknown role");
  const auto widths = r.u32("width count");
  for (std::uint32_t i = 0; i < widths; ++i) spec.widths.push_back(r.u32("width"));
  spec.vocab = r.u32("vocab");
  spec.context = r.u32("context");
  spec.embed_dim = r.u32("embed_dim");
  spec.hidden = r.u32("hidden");
  const std::string symbols = r.bytes(r.u32("vocabulary size"), "vocabulary");

  std::vector<TensorSlot> layout;
  const auto tensors = r.u32("tensor count");
  std::size_t offset = 0;
  for (std::uint32_t t = 0; t < tensors; ++t) {
    TensorSlot s;
    s.name = r.bytes(r.u32("name length"), "tensor name");
    const auto rank = r.u32("rank");
    for (std::uint32_t k = 0; k < rank; ++k) s.shape.push_back(r.u32("dimension"));
    s.offset = offset;
    offset += s.size();
    layout.push_back(std::move(s));
  }
  const auto count = r.u64("value count");
  if (count != offset) throw FormatError("snapshot value count does not match its layout");
  Vec64 values(count);
  for (auto& v : values) v = r.f64("values");
  if (!r.at_end()) throw FormatError("trailing bytes after snapshot values");

  try {
    if (make_layout(spec) != layout) throw FormatError("snapshot layout does not match its model spec");
  } catch (const ParameterError& e) {
    throw FormatError(std::string("invalid model spec in snapshot: ") + e.what());
  }
  Snapshot snap{ParamState{std::move(values), std::move(layout), spec, static_cast<ParamRole>(role)},
                std::nullopt};
  if (!symbols.empty()) snap.vocab = CharVocab::from_symbols(symbols);
  return snap;
}

std::string format_number(std::optional<double> v) {
  if (!v || !std::isfinite(*v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", *v);
  return buf;
}

std::vector<CsvRow> to_csv_rows(const TrainLog& log) {
  std::vector<CsvRow> rows;
  rows.reserve(log.size());
  for (const auto& l : log) {
    CsvRow r;
    r.step = l.step;
    r.epoch = l.epoch;
    r.phase = Phase::Learning;
    r.forget_loss = present(l.forget_loss);
    r.forget_acc = present(l.forget_acc);
    r.retain_acc = present(l.retain_acc);
    rows.push_back(r);
  }
  return rows;
}

std::vector<CsvRow> to_csv_rows(const Trajectory& traj) {
  std::vector<CsvRow> rows;
  rows.reserve(traj.size());
  for (const auto& t : traj) {
    CsvRow r;
    r.step = t.step;
    r.epoch = t.epoch;
    r.phase = t.phase;
    r.forget_loss = present(t.forget_loss);
    r.forget_acc = present(t.forget_acc);
    r.retain_acc = t.retain_acc;
    r.recovery_loss = t.recovery_loss;
    rows.push_back(r);
  }
  return rows;
}

std::string render_csv(const std::vector<CsvRow>& rows, const std::string& prefix_header,
                       const std::vector<std::string>& prefix_values) {
  if (!prefix_values.empty() && prefix_values.size() != rows.size()) {
    throw DimensionError("render_csv: one prefix value per row required");
  }
  std::ostringstream out;
  if (!prefix_header.empty()) out << prefix_header << ',';
  out << kTrajectoryHeader << '\n';
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (!prefix_header.empty()) out << (prefix_values.empty() ? "" : prefix_values[i]) << ',';
    out << r.step << ',' << (r.epoch ? std::to_string(*r.epoch) : "") << ',' << to_string(r.phase)
        << ',' << format_number(r.forget_loss) << ',' << format_number(r.forget_acc) << ','
        << format_number(r.retain_acc) << ',' << format_number(r.recovery_loss) << '\n';
  }
  return out.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw InputError("write failed for '" + path.string() + "'");
}

void emit_csv(const std::filesystem::path& path, const std::vector<CsvRow>& rows) {
  write_text(path, render_csv(rows));
}

std::vector<bool> credential_filler_mask(const std::string& text) {
  std::vector<bool> mask(text.size(), false);
  const std::string login(StyledCorpus::kLoginField);
  const std::string pw(StyledCorpus::kPasswordField);
  std::size_t pos = 0;
  while ((pos = text.find(login, pos)) != std::string::npos) {
    const std::size_t name_begin = pos + login.size();
    const std::size_t pw_at = text.find(pw, name_begin);
    const std::size_t line_end = std::min(text.find('\n', name_begin), text.size());
    if (pw_at == std::string::npos || pw_at > line_end) {
      pos = name_begin;
      continue;
    }
    for (std::size_t i = name_begin; i < pw_at; ++i) mask[i] = true;
    for (std::size_t i = pw_at + pw.size(); i < line_end; ++i) mask[i] = true;
    pos = line_end;
  }
  return mask;
}

TokenReport token_report(const ParamState& params, const CharVocab& vocab, const std::string& text) {
  TokenReport rep;
  rep.text = text;
  rep.tokens = per_token_loss(params, vocab.encode(text));
  const auto mask = credential_filler_mask(text);
  double filler = 0.0;
  double templ = 0.0;
  bool any_filler = false;
  for (bool m : mask) any_filler = any_filler || m;
  if (!any_filler) return rep;
  for (const auto& t : rep.tokens) {
    if (mask[t.position]) {
      filler += t.loss;
      ++rep.filler_count;
    } else {
      templ += t.loss;
      ++rep.template_count;
    }
  }
  if (rep.filler_count) rep.filler_mean_loss = filler / static_cast<double>(rep.filler_count);
  if (rep.template_count) rep.template_mean_loss = templ / static_cast<double>(rep.template_count);
  return rep;
}

std::string render_token_report(const TokenReport& report) {
  nlohmann::ordered_json j;
  j["tokens"] = nlohmann::ordered_json::array();
  for (const auto& t : report.tokens) {
    nlohmann::ordered_json e;
    e["position"] = t.position;
    e["token"] = std::string(1, report.text[t.position]);
    e["loss"] = t.loss;
    j["tokens"].push_back(std::move(e));
  }
  if (report.filler_mean_loss || report.template_mean_loss) {
    nlohmann::ordered_json s;
    s["filler_mean_loss"] = report.filler_mean_loss ? nlohmann::ordered_json(*report.filler_mean_loss)
                                                    : nlohmann::ordered_json(nullptr);
    s["template_mean_loss"] = report.template_mean_loss
                                  ? nlohmann::ordered_json(*report.template_mean_loss)
                                  : nlohmann::ordered_json(nullptr);
    s["filler_count"] = report.filler_count;
    s["template_count"] = report.template_count;
    j["summary"] = std::move(s);
  }
  return j.dump(2) + "\n";
}

void emit_token_report(const std::filesystem::path& path, const ParamState& params,
                       const CharVocab& vocab, const std::string& text) {
  write_text(path, render_token_report(token_report(params, vocab, text)));
}

}  // namespace r2u
