#include "tmaseg/trainer.hpp"

#include <condition_variable>
#include <deque>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <thread>

#include "tmaseg/error.hpp"
#include "tmaseg/ops.hpp"
#include "tmaseg/random.hpp"

namespace tmaseg {

void validate(const TrainConfig& cfg) {
  validate(cfg.model);
  const int align = alignment_of(cfg.model.arch);
  if (cfg.patch < align || cfg.patch % align != 0) {
    throw Error(ErrorCode::InvalidConfig, "patch " + std::to_string(cfg.patch) + " must be a positive multiple of " +
                                              std::to_string(align) + " for " + model_name(cfg.model));
  }
  if (cfg.batch < 1) throw Error(ErrorCode::InvalidConfig, "batch must be at least 1");
  if (cfg.steps < 1) throw Error(ErrorCode::InvalidConfig, "steps must be at least 1");
  if (cfg.val_interval < 1) throw Error(ErrorCode::InvalidConfig, "validation interval must be at least 1");
  if (!(cfg.adam.lr > 0.0)) throw Error(ErrorCode::InvalidConfig, "learning rate must be positive");
  if (!(cfg.adam.beta1 >= 0.0 && cfg.adam.beta1 < 1.0 && cfg.adam.beta2 >= 0.0 && cfg.adam.beta2 < 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "Adam betas must lie in [0, 1)");
  }
  if (!(cfg.adam.eps > 0.0)) throw Error(ErrorCode::InvalidConfig, "Adam epsilon must be positive");
  if (cfg.threads < 1) throw Error(ErrorCode::InvalidConfig, "threads must be at least 1");
}

namespace {

void copy_patch(const Patch& p, Batch& b, std::int64_t index) {
  const std::int64_t pixels = static_cast<std::int64_t>(p.target.size());
  const std::int64_t img_off = index * pixels * 3;
  for (std::int64_t i = 0; i < pixels * 3; ++i) b.images[img_off + i] = p.image[i];
  for (std::int64_t i = 0; i < pixels; ++i) {
    const auto t = p.target[static_cast<std::size_t>(i)];
    b.targets[index * pixels + i] = t == kTargetCancer ? Real(1) : Real(0);
    b.weights[index * pixels + i] = p.weight[i];
  }
}

// Batches for consecutive steps, produced ahead on a worker thread and
// consumed strictly in step order.
class Prefetcher {
 public:
  Prefetcher(std::function<Batch(std::int64_t)> make, std::int64_t first, std::int64_t last, std::size_t depth)
      : make_(std::move(make)), next_(first), last_(last), depth_(depth) {
    worker_ = std::thread([this] { run(); });
  }
  ~Prefetcher() {
    {
      std::lock_guard lock(mutex_);
      stop_ = true;
    }
    cv_.notify_all();
    worker_.join();
  }

  Batch pop() {
    std::unique_lock lock(mutex_);
    cv_.wait(lock, [this] { return !queue_.empty() || error_; });
    if (queue_.empty()) std::rethrow_exception(error_);
    Batch b = std::move(queue_.front());
    queue_.pop_front();
    cv_.notify_all();
    return b;
  }

 private:
  void run() {
    for (std::int64_t step = next_; step <= last_; ++step) {
      {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [this] { return stop_ || queue_.size() < depth_; });
        if (stop_) return;
      }
      try {
        Batch b = make_(step);
        std::lock_guard lock(mutex_);
        queue_.push_back(std::move(b));
      } catch (...) {
        std::lock_guard lock(mutex_);
        error_ = std::current_exception();
        cv_.notify_all();
        return;
      }
      cv_.notify_all();
    }
  }

  std::function<Batch(std::int64_t)> make_;
  std::int64_t next_, last_;
  std::size_t depth_;
  std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<Batch> queue_;
  std::exception_ptr error_;
  bool stop_ = false;
  std::thread worker_;
};

std::ofstream open_log(const std::filesystem::path& path, bool append) {
  std::ofstream out;
  if (path.empty()) return out;
  out.open(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot open log " + path.string());
  out << std::setprecision(9);
  return out;
}

}  // namespace

Batch make_batch(const TrainConfig& cfg, const std::vector<std::string>& train_cores, CoreStore& cores,
                 std::int64_t step) {
  const std::int64_t p = cfg.patch;
  Batch b{Tensor({cfg.batch, p, p, 3}), Tensor({cfg.batch, p, p, 1}), Tensor({cfg.batch, p, p, 1})};
  Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(step)));
  for (int i = 0; i < cfg.batch; ++i) {
    const auto& id = train_cores[rng.below(train_cores.size())];
    const std::uint64_t patch_seed = rng.next_u64();
    auto core = cores.get(id);
    auto patches = sample_patches(*core, 1, cfg.patch, patch_seed, cfg.augment);
    copy_patch(patches.front(), b, i);
  }
  return b;
}

double validate(const Network& net, const SplitManifest& manifest, Split split, CoreStore& cores, int patch) {
  const auto ids = manifest.cores(split);
  if (ids.empty()) throw Error(ErrorCode::EmptySplit, std::string(split_name(split)) + " split has no cores");
  constexpr std::size_t kChunk = 8;
  double loss_sum = 0.0, weight_sum = 0.0;
  for (const auto& id : ids) {
    auto core = cores.get(id);
    const PatchGrid grid = plan_grid(core->image.height(), core->image.width(), patch, patch);
    const auto patches = extract(core->image, core->target, grid);
    for (std::size_t start = 0; start < patches.size(); start += kChunk) {
      const std::size_t n = std::min(kChunk, patches.size() - start);
      Batch b{Tensor({static_cast<std::int64_t>(n), patch, patch, 3}),
              Tensor({static_cast<std::int64_t>(n), patch, patch, 1}),
              Tensor({static_cast<std::int64_t>(n), patch, patch, 1})};
      for (std::size_t i = 0; i < n; ++i) copy_patch(patches[start + i], b, static_cast<std::int64_t>(i));
      const Tensor logits = net.infer(b.images);
      for (std::int64_t i = 0; i < logits.size(); ++i) {
        const double w = b.weights[i];
        if (w == 0.0) continue;
        loss_sum += w * ad::bce_with_logits(logits[i], b.targets[i]);
        weight_sum += w;
      }
    }
  }
  return weight_sum > 0.0 ? loss_sum / weight_sum : 0.0;
}

TrainResult train(const TrainConfig& cfg, const SplitManifest& manifest, CoreStore& cores, const Checkpoint* resume) {
  validate(cfg);
  const auto train_ids = manifest.cores(Split::Train);
  if (train_ids.empty()) throw Error(ErrorCode::EmptySplit, "train split has no cores");
  if (manifest.count(Split::Val) == 0) throw Error(ErrorCode::EmptySplit, "val split has no cores");

  Network net = build_model(cfg.model);
  double best = std::numeric_limits<double>::infinity();
  if (resume != nullptr) {
    if (!(resume->config == cfg.model)) {
      throw Error(ErrorCode::InvalidConfig, "resume checkpoint holds " + model_name(resume->config) +
                                                ", config asks for " + model_name(cfg.model));
    }
    net.load_parameters(resume->params);
    best = resume->best_val_loss;
  }
  const std::int64_t first = static_cast<std::int64_t>(net.params().step()) + 1;

  TrainResult result;
  std::ofstream log = open_log(cfg.log, resume != nullptr);
  auto make = [&](std::int64_t step) { return make_batch(cfg, train_ids, cores, step); };
  std::optional<Prefetcher> prefetch;
  if (cfg.threads > 1 && first <= cfg.steps) prefetch.emplace(make, first, cfg.steps, 2 * static_cast<std::size_t>(cfg.threads));

  auto persist = [&](const Checkpoint& c, const std::filesystem::path& path) {
    if (!path.empty()) save_checkpoint(c, path);
  };

  for (std::int64_t step = first; step <= cfg.steps; ++step) {
    Batch b = prefetch ? prefetch->pop() : make(step);
    net.params().zero_grad();
    ad::Graph graph;
    ad::Var x = graph.input(std::move(b.images), false);
    ad::Var logits = net.forward(graph, x, ad::Mode::Train);
    ad::Var loss = ad::bce_loss(logits, b.targets, b.weights);
    graph.backward(loss);
    ad::adam_step(net.params(), cfg.adam);

    const double value = loss.value()[0];
    result.losses.push_back(value);
    if (log.is_open()) log << step << '\t' << value << '\n';

    // Interval steps only, so where a run stops never changes what it records
    // and k + k resumed steps match 2k straight ones.
    if (step % cfg.val_interval == 0) {
      const double val = validate(net, manifest, Split::Val, cores, cfg.patch);
      result.validation.emplace_back(step, val);
      if (val < best) {
        best = val;
        if (!cfg.checkpoint.empty()) persist(make_checkpoint(net, cfg.seed, best), best_checkpoint_path(cfg.checkpoint));
      }
      persist(make_checkpoint(net, cfg.seed, best), cfg.checkpoint);
      if (log.is_open()) log.flush();
    }
  }
  result.latest = make_checkpoint(net, cfg.seed, best);
  if (first > cfg.steps || cfg.steps % cfg.val_interval != 0) persist(result.latest, cfg.checkpoint);
  if (log.is_open() && !log) throw Error(ErrorCode::IoError, "failed writing log " + cfg.log.string());
  return result;
}

}  // namespace tmaseg
