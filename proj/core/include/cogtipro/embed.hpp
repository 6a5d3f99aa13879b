// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "cogtipro/http_client.hpp"
#include "cogtipro/prompt_opt.hpp"
#include "cogtipro/synth.hpp"

namespace cogtipro::embed {

enum class Modality { Acoustic, Linguistic };
std::string_view to_string(Modality m);
Modality modality_from_string(std::string_view s);

inline constexpr int kDefaultAcousticDim = 768;
inline constexpr int kDefaultLinguisticDim = 384;

struct EmbeddingVector {
  std::vector<double> values;
  Modality modality = Modality::Acoustic;
  std::string source_id;

  int dim() const { return static_cast<int>(values.size()); }
  /// Throws NumericError on a non-finite entry.
  void validate() const;
};

struct MonthKey {
  std::string participant_id;
  int month_index = 1;
  auto operator<=>(const MonthKey&) const = default;
};

class AcousticProvider {
 public:
  virtual ~AcousticProvider() = default;
  /// nullopt when the month has no acoustic data.
  virtual std::optional<EmbeddingVector> embed(const MonthKey& key) = 0;
  virtual int dim() const = 0;
  virtual std::string id() const = 0;
};

/// In-memory table of per-command or per-month vectors. Rows sharing a key
/// are averaged. Backs both the precomputed-file and the synthetic lookup.
class VectorTable final : public AcousticProvider {
 public:
  explicit VectorTable(int dim, std::string id = "table");

  /// Throws IngestionError when the vector length differs from dim().
  void add(const MonthKey& key, std::vector<double> vector);

  /// JSON-lines rows {participant_id, month_index, modality?, vector}. Rows
  /// tagged with a modality other than acoustic are skipped.
  static VectorTable from_file(const std::filesystem::path& path, int dim);
  static VectorTable from_synthetic(const std::vector<synth::AcousticRow>& rows,
                                    int dim);

  std::optional<EmbeddingVector> embed(const MonthKey& key) override;
  int dim() const override { return dim_; }
  std::string id() const override { return id_; }
  std::size_t size() const { return rows_.size(); }

 private:
  int dim_;
  std::string id_;
  std::map<MonthKey, std::vector<std::vector<double>>> rows_;
};

class LinguisticProvider {
 public:
  virtual ~LinguisticProvider() = default;
  /// nullopt for the NO DATA sentinel and for text without tokens.
  virtual std::optional<EmbeddingVector> embed(const std::string& text) = 0;
  virtual std::vector<std::optional<EmbeddingVector>> embed_batch(
      const std::vector<std::string>& texts);
  virtual int dim() const = 0;
  virtual std::string id() const = 0;
};

/// Signed feature hashing of tokens into `dim` buckets, L2-normalized.
/// Bucket = fnv1a64(token) mod dim; sign = bit 63 of the hash (set -> -1).
class HashingEmbedder final : public LinguisticProvider {
 public:
  explicit HashingEmbedder(int dim = kDefaultLinguisticDim);
  std::optional<EmbeddingVector> embed(const std::string& text) override;
  int dim() const override { return dim_; }
  std::string id() const override;

 private:
  int dim_;
};

/// Sentence-embedding service: POST {texts:[...]} -> {vectors:[[...]]}.
class RemoteLinguisticProvider final : public LinguisticProvider {
 public:
  RemoteLinguisticProvider(std::string url, int dim, http::PostOptions options = {});
  std::optional<EmbeddingVector> embed(const std::string& text) override;
  std::vector<std::optional<EmbeddingVector>> embed_batch(
      const std::vector<std::string>& texts) override;
  int dim() const override { return dim_; }
  std::string id() const override { return "remote:" + url_; }

 private:
  std::string url_;
  int dim_;
  http::PostOptions options_;
};

/// Acoustic service speaking the same protocol with "pid:month" keys as
/// texts. An empty vector in the reply marks a month without audio.
class RemoteAcousticProvider final : public AcousticProvider {
 public:
  RemoteAcousticProvider(std::string url, int dim, http::PostOptions options = {});
  std::optional<EmbeddingVector> embed(const MonthKey& key) override;
  int dim() const override { return dim_; }
  std::string id() const override { return "remote:" + url_; }

 private:
  std::string url_;
  int dim_;
  http::PostOptions options_;
};

std::optional<EmbeddingVector> acoustic_embed(const MonthKey& key,
                                              AcousticProvider& provider);
std::optional<EmbeddingVector> linguistic_embed(const prompt::LinguisticSummary& s,
                                                LinguisticProvider& provider);

/// [v ; u], acoustic block first. Throws ContractError on swapped modalities.
std::vector<double> fuse(const EmbeddingVector& v, const EmbeddingVector& u);

struct MultimodalSequence {
  std::string participant_id;
  Eigen::MatrixXd matrix;  // T x (d + e)
  std::vector<bool> mask;  // true = month had data
  int acoustic_dim = 0;
  int linguistic_dim = 0;

  int months() const { return static_cast<int>(matrix.rows()); }
  int width() const { return static_cast<int>(matrix.cols()); }
  /// Rows 0..t-1 only.
  MultimodalSequence truncated(int t) const;
};

struct SequenceOptions {
  bool drop_acoustic = false;
  bool drop_linguistic = false;
};

/// One row per month 1..summaries.size(). `summaries[t]` must describe
/// month t+1 of `participant_id`.
MultimodalSequence build_sequence(
    const std::string& participant_id,
    const std::vector<prompt::LinguisticSummary>& summaries,
    AcousticProvider& acoustic, LinguisticProvider& linguistic,
    const SequenceOptions& options = {});

/// `<dir>/<pid>.bin` (magic, T, width, row-major little-endian doubles) and
/// `<dir>/<pid>.json` (participant_id, T, d, e, mask).
void write_sequence(const std::filesystem::path& dir, const MultimodalSequence& s);
MultimodalSequence read_sequence(const std::filesystem::path& dir,
                                 const std::string& participant_id);

}  // namespace cogtipro::embed
