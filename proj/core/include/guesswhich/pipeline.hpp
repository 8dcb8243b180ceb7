#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "guesswhich/config.hpp"
#include "guesswhich/corpus.hpp"
#include "guesswhich/eval.hpp"
#include "guesswhich/training.hpp"

namespace gw {

/// Missing or malformed input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Dataset {
  World world;
  Corpus corpus;
};

/// Writes world.json, corpus/{train,validation,test}.jsonl and config.json.
void run_datagen(const RunConfig& config, const std::filesystem::path& out);
Dataset load_dataset(const std::filesystem::path& data_dir);

inline constexpr const char* kMetricsHeader = "epoch,phase,joint_loss,nll,mse,mean_return,final_pmr,perplexity";
std::string metrics_row(const EpochMetrics& m, double perplexity);

/// checkpoints/<prefix>-eNNN.ckpt
std::filesystem::path epoch_checkpoint(const std::filesystem::path& out, const std::string& prefix, std::size_t epoch);
/// Highest epoch with a checkpoint under `out`, if any.
std::optional<std::size_t> latest_epoch(const std::filesystem::path& out, const std::string& prefix);

/// Supervised pre-training. Writes a checkpoint per epoch (epoch 0 is the
/// initialization), metrics.csv, and sl.ckpt. Returns the final checkpoint.
std::filesystem::path run_pretrain(const RunConfig& config, const Dataset& data, const std::filesystem::path& out,
                                   bool resume, std::ostream* log);

/// Fine-tunes an SL checkpoint under `variant` (alt, na or word). Output
/// files are prefixed with the variant name.
std::filesystem::path run_finetune(const RunConfig& config, Schedule variant,
                                   const std::filesystem::path& sl_checkpoint, const Dataset& data,
                                   const std::filesystem::path& out, bool resume, std::ostream* log);

/// report.csv, curves.csv, games.jsonl and, when `svg` is set, curves.svg.
std::vector<EvalReport> run_eval(const RunConfig& config,
                                 const std::vector<std::pair<std::string, std::filesystem::path>>& models,
                                 const Dataset& data, const std::filesystem::path& out, bool svg,
                                 std::ostream* log);

/// Reads curves.csv back into per-tag reports (pmr and stderr only).
std::vector<EvalReport> read_curves_csv(const std::filesystem::path& path);

QBot load_qbot(const std::filesystem::path& checkpoint);

}  // namespace gw
