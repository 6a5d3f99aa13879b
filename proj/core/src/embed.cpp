// SPDX-License-Identifier: Apache-2.0
#include "cogtipro/embed.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <fmt/format.h>

#include "cogtipro/error.hpp"
#include "cogtipro/hash.hpp"
#include "cogtipro/json_io.hpp"
#include "cogtipro/text.hpp"

namespace cogtipro::embed {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "sequence files are written in native little-endian order");

std::string_view to_string(Modality m) {
  return m == Modality::Acoustic ? "acoustic" : "linguistic";
}

Modality modality_from_string(std::string_view s) {
  auto t = text::to_lower_ascii(text::trim(s));
  if (t == "acoustic") return Modality::Acoustic;
  if (t == "linguistic") return Modality::Linguistic;
  throw IngestionError(fmt::format("unknown modality '{}'", s));
}

void EmbeddingVector::validate() const {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError(fmt::format("{} embedding from {} has non-finite entry {}",
                                     to_string(modality), source_id, i));
    }
  }
}

// ---------------------------------------------------------------------------

VectorTable::VectorTable(int dim, std::string id) : dim_(dim), id_(std::move(id)) {
  if (dim < 1) throw ConfigError("embedding dimension must be positive");
}

void VectorTable::add(const MonthKey& key, std::vector<double> vector) {
  if (static_cast<int>(vector.size()) != dim_) {
    throw IngestionError(fmt::format(
        "acoustic vector for {} month {} has length {}, expected {}",
        key.participant_id, key.month_index, vector.size(), dim_));
  }
  rows_[key].push_back(std::move(vector));
}

VectorTable VectorTable::from_file(const std::filesystem::path& path, int dim) {
  VectorTable table(dim, "file:" + path.filename().string());
  json_io::for_each_jsonl(path, [&](const json& j, std::size_t line) {
    try {
      if (j.contains("modality") &&
          modality_from_string(j["modality"].get<std::string>()) != Modality::Acoustic) {
        return;
      }
      MonthKey key{j.at("participant_id").get<std::string>(),
                   j.at("month_index").get<int>()};
      table.add(key, j.at("vector").get<std::vector<double>>());
    } catch (const json::exception& e) {
      throw IngestionError(
          fmt::format("{}:{}: bad vector row: {}", path.string(), line, e.what()));
    }
  });
  return table;
}

VectorTable VectorTable::from_synthetic(const std::vector<synth::AcousticRow>& rows,
                                        int dim) {
  VectorTable table(dim, "synthetic");
  for (const auto& r : rows) table.add({r.participant_id, r.month_index}, r.vector);
  return table;
}

std::optional<EmbeddingVector> VectorTable::embed(const MonthKey& key) {
  auto it = rows_.find(key);
  if (it == rows_.end()) return std::nullopt;
  EmbeddingVector out;
  out.modality = Modality::Acoustic;
  out.source_id = id_;
  out.values.assign(static_cast<std::size_t>(dim_), 0.0);
  for (const auto& v : it->second) {
    for (int k = 0; k < dim_; ++k) out.values[k] += v[k];
  }
  const double n = static_cast<double>(it->second.size());
  for (auto& x : out.values) x /= n;
  return out;
}

// ---------------------------------------------------------------------------

std::vector<std::optional<EmbeddingVector>> LinguisticProvider::embed_batch(
    const std::vector<std::string>& texts) {
  std::vector<std::optional<EmbeddingVector>> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(embed(t));
  return out;
}

HashingEmbedder::HashingEmbedder(int dim) : dim_(dim) {
  if (dim < 1) throw ConfigError("embedding dimension must be positive");
}

std::string HashingEmbedder::id() const { return fmt::format("hashing-{}", dim_); }

std::optional<EmbeddingVector> HashingEmbedder::embed(const std::string& s) {
  if (text::trim(s) == prompt::kNoData) return std::nullopt;
  auto tokens = text::tokenize(s);
  if (tokens.empty()) return std::nullopt;
  EmbeddingVector out;
  out.modality = Modality::Linguistic;
  out.source_id = id();
  out.values.assign(static_cast<std::size_t>(dim_), 0.0);
  for (const auto& tok : tokens) {
    const std::uint64_t h = hash::fnv1a64(tok);
    const double sign = (h >> 63) ? -1.0 : 1.0;
    out.values[h % static_cast<std::uint64_t>(dim_)] += sign;
  }
  double norm = 0.0;
  for (double x : out.values) norm += x * x;
  norm = std::sqrt(norm);
  if (norm > 0.0) {
    for (auto& x : out.values) x /= norm;
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::vector<double>> post_texts(const std::string& url,
                                            const std::vector<std::string>& texts,
                                            const http::PostOptions& options) {
  json reply = http::post_json(url, json{{"texts", texts}}, options);
  std::vector<std::vector<double>> vectors;
  try {
    vectors = reply.at("vectors").get<std::vector<std::vector<double>>>();
  } catch (const json::exception& e) {
    throw IngestionError(fmt::format("embedding reply from {} malformed: {}", url, e.what()));
  }
  if (vectors.size() != texts.size()) {
    throw IngestionError(fmt::format("embedding service returned {} vectors for {} texts",
                                     vectors.size(), texts.size()));
  }
  return vectors;
}

void check_dim(const std::vector<double>& v, int dim, std::string_view what) {
  if (static_cast<int>(v.size()) != dim) {
    throw IngestionError(fmt::format("{} vector has length {}, expected {}", what,
                                     v.size(), dim));
  }
}

}  // namespace

RemoteLinguisticProvider::RemoteLinguisticProvider(std::string url, int dim,
                                                   http::PostOptions options)
    : url_(std::move(url)), dim_(dim), options_(std::move(options)) {
  if (dim < 1) throw ConfigError("embedding dimension must be positive");
  http::parse_url(url_);
}

std::optional<EmbeddingVector> RemoteLinguisticProvider::embed(const std::string& s) {
  return embed_batch({s}).front();
}

std::vector<std::optional<EmbeddingVector>> RemoteLinguisticProvider::embed_batch(
    const std::vector<std::string>& texts) {
  std::vector<std::optional<EmbeddingVector>> out(texts.size());
  std::vector<std::string> send;
  std::vector<std::size_t> where;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    if (text::trim(texts[i]) == prompt::kNoData || text::tokenize(texts[i]).empty()) {
      continue;
    }
    send.push_back(texts[i]);
    where.push_back(i);
  }
  if (send.empty()) return out;
  auto vectors = post_texts(url_, send, options_);
  for (std::size_t k = 0; k < vectors.size(); ++k) {
    check_dim(vectors[k], dim_, "linguistic");
    out[where[k]] = EmbeddingVector{std::move(vectors[k]), Modality::Linguistic, id()};
  }
  return out;
}

RemoteAcousticProvider::RemoteAcousticProvider(std::string url, int dim,
                                               http::PostOptions options)
    : url_(std::move(url)), dim_(dim), options_(std::move(options)) {
  if (dim < 1) throw ConfigError("embedding dimension must be positive");
  http::parse_url(url_);
}

std::optional<EmbeddingVector> RemoteAcousticProvider::embed(const MonthKey& key) {
  auto vectors = post_texts(
      url_, {fmt::format("{}:{}", key.participant_id, key.month_index)}, options_);
  if (vectors.front().empty()) return std::nullopt;
  check_dim(vectors.front(), dim_, "acoustic");
  return EmbeddingVector{std::move(vectors.front()), Modality::Acoustic, id()};
}

// ---------------------------------------------------------------------------

std::optional<EmbeddingVector> acoustic_embed(const MonthKey& key,
                                              AcousticProvider& provider) {
  auto v = provider.embed(key);
  if (v) {
    check_dim(v->values, provider.dim(), "acoustic");
    v->validate();
  }
  return v;
}

std::optional<EmbeddingVector> linguistic_embed(const prompt::LinguisticSummary& s,
                                                LinguisticProvider& provider) {
  if (s.no_data()) return std::nullopt;
  auto u = provider.embed(s.text);
  if (u) u->validate();
  return u;
}

std::vector<double> fuse(const EmbeddingVector& v, const EmbeddingVector& u) {
  if (v.modality != Modality::Acoustic || u.modality != Modality::Linguistic) {
    throw ContractError(fmt::format("fuse expects (acoustic, linguistic), got ({}, {})",
                                    to_string(v.modality), to_string(u.modality)));
  }
  std::vector<double> row;
  row.reserve(v.values.size() + u.values.size());
  row.insert(row.end(), v.values.begin(), v.values.end());
  row.insert(row.end(), u.values.begin(), u.values.end());
  return row;
}

MultimodalSequence MultimodalSequence::truncated(int t) const {
  if (t < 1 || t > months()) {
    throw ConfigError(fmt::format("cannot truncate {} months to {}", months(), t));
  }
  MultimodalSequence out = *this;
  out.matrix = matrix.topRows(t);
  out.mask.resize(static_cast<std::size_t>(t));
  return out;
}

MultimodalSequence build_sequence(const std::string& participant_id,
                                  const std::vector<prompt::LinguisticSummary>& summaries,
                                  AcousticProvider& acoustic,
                                  LinguisticProvider& linguistic,
                                  const SequenceOptions& options) {
  const int d = acoustic.dim();
  const int e = linguistic.dim();
  const int T = static_cast<int>(summaries.size());
  MultimodalSequence seq;
  seq.participant_id = participant_id;
  seq.acoustic_dim = d;
  seq.linguistic_dim = e;
  seq.matrix = Eigen::MatrixXd::Zero(T, d + e);
  seq.mask.assign(static_cast<std::size_t>(T), false);

  std::vector<std::string> texts;
  std::vector<int> text_rows;
  for (int t = 0; t < T; ++t) {
    const auto& s = summaries[t];
    if (s.participant_id != participant_id || s.month_index != t + 1) {
      throw ContractError(fmt::format(
          "summary {} month {} placed at row {} of {}", s.participant_id,
          s.month_index, t, participant_id));
    }
    if (!s.no_data()) {
      texts.push_back(s.text);
      text_rows.push_back(t);
    }
  }
  std::vector<std::optional<EmbeddingVector>> us(static_cast<std::size_t>(T));
  auto batch = linguistic.embed_batch(texts);
  for (std::size_t k = 0; k < batch.size(); ++k) {
    if (batch[k]) {
      check_dim(batch[k]->values, e, "linguistic");
      batch[k]->validate();
    }
    us[text_rows[k]] = std::move(batch[k]);
  }

  for (int t = 0; t < T; ++t) {
    if (!us[t]) continue;
    auto v = acoustic_embed({participant_id, t + 1}, acoustic);
    if (!v) continue;
    auto row = fuse(*v, *us[t]);
    if (options.drop_acoustic) std::fill(row.begin(), row.begin() + d, 0.0);
    if (options.drop_linguistic) std::fill(row.begin() + d, row.end(), 0.0);
    seq.matrix.row(t) = Eigen::Map<const Eigen::RowVectorXd>(row.data(), d + e);
    seq.mask[t] = true;
  }
  return seq;
}

namespace {
constexpr char kMagic[8] = {'C', 'T', 'P', 'S', 'E', 'Q', '1', '\0'};
}

void write_sequence(const std::filesystem::path& dir, const MultimodalSequence& s) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  const auto bin = dir / (s.participant_id + ".bin");
  std::ofstream out(bin, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot write {}", bin.string()));
  out.write(kMagic, sizeof kMagic);
  const std::uint32_t rows = static_cast<std::uint32_t>(s.months());
  const std::uint32_t cols = static_cast<std::uint32_t>(s.width());
  out.write(reinterpret_cast<const char*>(&rows), sizeof rows);
  out.write(reinterpret_cast<const char*>(&cols), sizeof cols);
  for (Eigen::Index r = 0; r < s.matrix.rows(); ++r) {
    for (Eigen::Index c = 0; c < s.matrix.cols(); ++c) {
      const double x = s.matrix(r, c);
      out.write(reinterpret_cast<const char*>(&x), sizeof x);
    }
  }
  if (!out) throw IoError(fmt::format("short write to {}", bin.string()));

  json mask = json::array();
  for (bool m : s.mask) mask.push_back(m);
  json side{{"participant_id", s.participant_id},
            {"T", s.months()},
            {"d", s.acoustic_dim},
            {"e", s.linguistic_dim},
            {"mask", mask}};
  json_io::write_text_file(dir / (s.participant_id + ".json"), side.dump(2) + "\n");
}

MultimodalSequence read_sequence(const std::filesystem::path& dir,
                                 const std::string& participant_id) {
  const auto bin = dir / (participant_id + ".bin");
  const json side = json_io::read_json_file(dir / (participant_id + ".json"));
  MultimodalSequence s;
  try {
    s.participant_id = side.at("participant_id").get<std::string>();
    s.acoustic_dim = side.at("d").get<int>();
    s.linguistic_dim = side.at("e").get<int>();
    s.mask = side.at("mask").get<std::vector<bool>>();
  } catch (const json::exception& e) {
    throw IngestionError(fmt::format("bad sequence sidecar for {}: {}", participant_id,
                                     e.what()));
  }
  std::ifstream in(bin, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot read {}", bin.string()));
  char magic[8];
  std::uint32_t rows = 0, cols = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&rows), sizeof rows);
  in.read(reinterpret_cast<char*>(&cols), sizeof cols);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw IngestionError(fmt::format("{} is not a sequence file", bin.string()));
  }
  if (rows != s.mask.size() ||
      static_cast<int>(cols) != s.acoustic_dim + s.linguistic_dim) {
    throw IngestionError(fmt::format("{} shape disagrees with its sidecar", bin.string()));
  }
  s.matrix.resize(rows, cols);
  for (std::uint32_t r = 0; r < rows; ++r) {
    for (std::uint32_t c = 0; c < cols; ++c) {
      double x = 0.0;
      in.read(reinterpret_cast<char*>(&x), sizeof x);
      s.matrix(r, c) = x;
    }
  }
  if (!in) throw IngestionError(fmt::format("{} is truncated", bin.string()));
  return s;
}

}  // namespace cogtipro::embed
