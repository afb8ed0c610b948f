#pragma once

#include <atomic>
#include <cmath>
#include <functional>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>
#include <thread>
#include <vector>

#include "kblm/adadelta.hpp"
#include "kblm/model.hpp"

namespace kblm {

struct EpochLog {
  int epoch = 0;
  double train_nll_per_token = 0;  // running average over the epoch's updates
  std::optional<double> dev_perplexity;
};

struct TrainOptions {
  unsigned threads = 1;   // 0 = hardware concurrency
  bool shuffle = true;    // reshuffle documents every epoch
  std::ostream* log = nullptr;
  std::function<void(const EpochLog&, const LanguageModel&)> on_epoch;
};

struct TrainResult {
  LanguageModel model;
  std::vector<EpochLog> epochs;
};

namespace detail {

/// Runs fn(k) for k in [0, n) on up to `threads` workers.
template <class Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t k = 0; k < n; ++k) fn(k);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mutex;
  for (unsigned t = 0; t < std::min<std::size_t>(threads, n); ++t) {
    pool.emplace_back([&] {
      for (std::size_t k = next++; k < n; k = next++) {
        try {
          fn(k);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace detail

/// Minibatch gradient of the summed cross-entropy. Each document's gradient is
/// computed in its own buffer and the buffers are added in batch order, so the
/// result does not depend on the worker count.
class BatchGradient {
 public:
  BatchGradient(std::size_t n_params, unsigned threads) : n_params_(n_params), threads_(threads), sum_(n_params) {}

  double compute(const LanguageModel& model, const std::vector<const Document*>& batch) {
    std::fill(sum_.begin(), sum_.end(), 0.0);
    double loss = 0;
    if (threads_ <= 1) {
      scratch_.resize(1);
      scratch_[0].resize(n_params_);
      for (const auto* d : batch) {
        std::fill(scratch_[0].begin(), scratch_[0].end(), 0.0);
        loss += check(document_loss(model, *d, scratch_[0]), *d);
        add(scratch_[0]);
      }
      return loss;
    }
    scratch_.resize(batch.size());
    std::vector<double> losses(batch.size());
    detail::parallel_for(batch.size(), threads_, [&](std::size_t k) {
      scratch_[k].assign(n_params_, 0.0);
      losses[k] = document_loss(model, *batch[k], scratch_[k]);
    });
    for (std::size_t k = 0; k < batch.size(); ++k) {
      loss += check(losses[k], *batch[k]);
      add(scratch_[k]);
    }
    return loss;
  }

  std::span<const double> gradient() const { return sum_; }

 private:
  static double check(double loss, const Document& d) {
    if (!std::isfinite(loss)) throw NumericError("non-finite loss on document '" + d.id + "'");
    return loss;
  }
  void add(const std::vector<double>& g) {
    for (std::size_t i = 0; i < n_params_; ++i) sum_[i] += g[i];
  }

  std::size_t n_params_;
  unsigned threads_;
  std::vector<double> sum_;
  std::vector<std::vector<double>> scratch_;
};

/// Trains a freshly initialized model with AdaDelta over shuffled minibatches.
/// Documents must already be encoded against `vocab`.
inline TrainResult train(const ModelConfig& config, const Vocabulary& vocab, const std::vector<Document>& train_docs,
                         const std::vector<Document>& dev_docs = {}, const TrainOptions& opts = {}) {
  config.validate();
  if (train_docs.empty()) throw DataError("empty training corpus");
  for (const auto& d : train_docs)
    if (!d.encoded()) throw DataError("training document '" + d.id + "' is not encoded");

  TrainResult result{LanguageModel(config, vocab), {}};
  auto& model = result.model;
  model.initialize();

  const unsigned threads = opts.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : opts.threads;
  BatchGradient batch_grad(model.params().size(), threads);
  AdaDeltaState opt(model.params().size(), config.rho, config.epsilon);

  std::vector<std::size_t> order(train_docs.size());
  std::iota(order.begin(), order.end(), 0);
  auto rng = make_rng(config.seed, 0x5eed);
  const auto batch_size = static_cast<std::size_t>(config.minibatch);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    if (opts.shuffle) shuffle_in_place(order, rng);
    double epoch_loss = 0;
    std::size_t epoch_tokens = 0;
    std::vector<const Document*> batch;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      batch.clear();
      for (std::size_t k = start; k < std::min(order.size(), start + batch_size); ++k) {
        batch.push_back(&train_docs[order[k]]);
        epoch_tokens += train_docs[order[k]].tokens.size() + 1;
      }
      epoch_loss += batch_grad.compute(model, batch);
      const auto g = batch_grad.gradient();
      for (double v : g) {
        if (!std::isfinite(v)) {
          std::ostringstream msg;
          msg << "non-finite gradient in epoch " << epoch << " at batch starting " << start;
          throw NumericError(msg.str());
        }
      }
      adadelta_update(model.params(), g, opt);
    }
    EpochLog log{epoch, epoch_loss / static_cast<double>(std::max<std::size_t>(epoch_tokens, 1)), std::nullopt};
    if (!dev_docs.empty()) log.dev_perplexity = perplexity(model, dev_docs);
    if (opts.log) {
      *opts.log << "epoch " << epoch << " train_nll/token " << std::setprecision(6) << log.train_nll_per_token;
      if (log.dev_perplexity) *opts.log << " dev_ppl " << *log.dev_perplexity;
      *opts.log << '\n';
    }
    if (opts.on_epoch) opts.on_epoch(log, model);
    result.epochs.push_back(log);
  }
  return result;
}

}  // namespace kblm
