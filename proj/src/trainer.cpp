#include "mccl/trainer.hpp"

#include "mccl/error.hpp"
#include "mccl/mcc.hpp"
#include "mccl/pki.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

namespace mccl::harness {

namespace {

// Distinct streams for model init, clustering and shuffling.
constexpr std::uint64_t kKMeansStream = 0x6b6d65616e73ULL;
constexpr std::uint64_t kShuffleStream = 0x73687566666cULL;

long batches_per_epoch(std::size_t n, int batch_size) {
  return std::max(1L, static_cast<long>((n + static_cast<std::size_t>(batch_size) - 1) /
                                        static_cast<std::size_t>(batch_size)));
}

double grad_norm(const nn::ParamList& params) {
  double sq = 0.0;
  for (const auto* p : params) sq += p->grad.squaredNorm();
  return std::sqrt(sq);
}

}  // namespace

Eigen::MatrixXd run_label_embeddings(const RunConfig& config, const data::DatasetManifest& manifest) {
  if (!config.embeddings.empty()) return pki::load_label_embeddings(config.embeddings, manifest.num_classes);
  auto names = manifest.label_names;
  if (names.empty()) names = data::default_label_names(manifest.num_classes);
  return pki::fallback_label_embeddings(names, config.embed_dim);
}

cpi::PrototypeBank initialize_bank(const RunConfig& config, model::Model& model, const data::Dataset& train) {
  cpi::PrototypeBank bank;
  if (!config.mcc_enabled) return bank;
  if (!config.init_bank.empty()) {
    bank = cpi::load_bank(config.init_bank);
  } else {
    const auto plan = cpi::allocate_prototypes(data::class_counts(train), config.k);
    cpi::KMeansOptions opts;
    opts.batch_size = config.kmeans_batch;
    opts.iters = config.kmeans_iters;
    opts.seed = config.seed ^ kKMeansStream;
    bank = cpi::build_prototype_bank(model.stage_features(train), plan, opts);
  }
  bank.momentum = config.lambda;
  bank.epsilon = config.epsilon;
  model.check_bank(bank);
  return bank;
}

metrics::TruthMatrix truth_matrix(const data::Dataset& dataset) {
  const int c = dataset.manifest.num_classes;
  metrics::TruthMatrix truth(static_cast<Eigen::Index>(dataset.samples.size()), c);
  for (std::size_t i = 0; i < dataset.samples.size(); ++i)
    for (int k = 0; k < c; ++k)
      truth(static_cast<Eigen::Index>(i), k) = dataset.samples[i].labels[static_cast<std::size_t>(k)];
  return truth;
}

void write_epoch_line(std::ostream& out, const EpochRecord& record) {
  std::ostringstream line;
  line << std::setprecision(10);
  line << "epoch: " << record.epoch << " loss: " << record.train_loss;
  if (record.eval) {
    const auto& r = *record.eval;
    line << " macro_f1: " << r.macro_f1 << " micro_f1: " << r.micro_f1 << " samples_f1: " << r.samples_f1
         << " mAP: " << r.mean_ap << " accuracy: " << r.accuracy << " macro_auc: " << r.macro_auc;
  }
  out << line.str() << "\n";
}

Trainer::Trainer(RunConfig config, data::DatasetManifest manifest, Eigen::MatrixXd embeddings, long steps_per_epoch)
    : config_(std::move(config)),
      manifest_(std::move(manifest)),
      model_(config_, manifest_, embeddings, config_.seed),
      adam_(config_.weight_decay),
      ema_(model_.parameters(), config_.ema_decay),
      steps_per_epoch_(steps_per_epoch),
      schedule_(config_.max_lr, static_cast<long>(config_.epochs) * steps_per_epoch_, config_.warmup),
      rng_(config_.seed ^ kShuffleStream) {}

Trainer::Trainer(RunConfig config, const data::Dataset& train)
    : Trainer(config, train.manifest, run_label_embeddings(config, train.manifest),
              batches_per_epoch(train.samples.size(), config.batch_size)) {
  if (train.samples.empty()) throw DataError("training set is empty");
  bank_ = initialize_bank(config_, model_, train);
}

double Trainer::train_epoch(const data::Dataset& train, std::ostream* lr_log) {
  model_.check_manifest(train.manifest);
  if (train.samples.empty()) throw DataError("training set is empty");
  std::vector<std::size_t> order(train.samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng_);

  const auto params = model_.parameters();
  const auto batch = static_cast<std::size_t>(config_.batch_size);
  const auto num_stages = model_.selected_stages().size();
  double loss_sum = 0.0;
  long batches = 0;
  for (std::size_t start = 0; start < order.size(); start += batch) {
    const std::size_t end = std::min(order.size(), start + batch);
    for (auto* p : params) p->zero_grad();

    ag::Tape tape;
    ag::Var queries = model_.label_queries(tape);
    std::vector<ag::Var> rows;
    Eigen::MatrixXd targets(static_cast<Eigen::Index>(end - start), model_.num_classes());
    std::vector<std::vector<model::StageTrace>> traces(end - start);
    for (std::size_t b = start; b < end; ++b) {
      const auto& sample = train.samples[order[b]];
      rows.push_back(model_.forward(tape, queries, sample, bank_, &traces[b - start]));
      for (int c = 0; c < model_.num_classes(); ++c)
        targets(static_cast<Eigen::Index>(b - start), c) = sample.labels[static_cast<std::size_t>(c)];
    }
    ag::Var probs = rows.size() == 1 ? rows.front() : ag::concat_rows(rows);
    ag::Var loss = metrics::asymmetric_loss(probs, targets, config_.gamma_pos, config_.gamma_neg);
    tape.backward(loss);

    const double lr = schedule_.lr(step_);
    const double value = loss.value()(0, 0);
    const double gnorm = grad_norm(params);
    if (!std::isfinite(value) || !std::isfinite(gnorm)) {
      std::ostringstream msg;
      msg << "non-finite training loss at step " << step_ << " (epoch " << epoch_ + 1 << "): loss " << value
          << ", lr " << lr << ", gradient norm " << gnorm;
      throw NumericalError(msg.str());
    }
    adam_.step(params, lr);
    ema_.update(params);
    if (lr_log) *lr_log << std::setprecision(17) << step_ << " " << lr << "\n";

    if (config_.mcc_enabled) {
      for (std::size_t j = 0; j < num_stages; ++j) {
        Eigen::Index rows_total = 0;
        for (const auto& t : traces) rows_total += t[j].patches.rows();
        Eigen::MatrixXd patches(rows_total, traces.front()[j].patches.cols());
        Eigen::MatrixXd weights(rows_total, traces.front()[j].weights.cols());
        Eigen::Index at = 0;
        for (const auto& t : traces) {
          patches.middleRows(at, t[j].patches.rows()) = t[j].patches;
          weights.middleRows(at, t[j].weights.rows()) = t[j].weights;
          at += t[j].patches.rows();
        }
        mcc::momentum_update(bank_, static_cast<int>(j), patches, weights, config_.lambda);
      }
    }
    ++step_;
    loss_sum += value;
    ++batches;
  }
  ++epoch_;
  return loss_sum / static_cast<double>(batches);
}

std::vector<EpochRecord> Trainer::fit(const data::Dataset& train, const data::Dataset* eval,
                                      std::ostream* metrics_log, std::ostream* lr_log) {
  std::vector<EpochRecord> records;
  while (epoch_ < config_.epochs) {
    EpochRecord rec;
    rec.train_loss = train_epoch(train, lr_log);
    rec.epoch = epoch_;
    if (eval) rec.eval = evaluate(*eval, config_.threshold);
    if (metrics_log) {
      write_epoch_line(*metrics_log, rec);
      metrics_log->flush();
    }
    spdlog::info("epoch {}/{} loss {:.6f}{}", rec.epoch, config_.epochs, rec.train_loss,
                 rec.eval ? fmt::format(" macro_f1 {:.4f} samples_f1 {:.4f} mAP {:.4f}", rec.eval->macro_f1,
                                        rec.eval->samples_f1, rec.eval->mean_ap)
                          : std::string());
    records.push_back(std::move(rec));
  }
  return records;
}

Eigen::MatrixXd Trainer::predict(const data::Dataset& dataset) {
  model_.check_manifest(dataset.manifest);
  EmaScope ema(*this);
  return model_.predict(dataset.samples, bank_);
}

metrics::MetricsReport Trainer::evaluate(const data::Dataset& dataset, double threshold) {
  if (dataset.samples.empty()) throw DataError("evaluation set is empty");
  const Eigen::MatrixXd scores = predict(dataset);
  if (!scores.allFinite()) throw NumericalError("model produced non-finite scores");
  return metrics::evaluate_scores(scores, truth_matrix(dataset), dataset.manifest.mode, threshold);
}

}  // namespace mccl::harness
