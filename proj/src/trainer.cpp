#include "wmcir/trainer.hpp"

#include "wmcir/parallel.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace wmcir {

double learning_rate(const TrainConfig& cfg, int step) {
  if (cfg.warmup_steps <= 0) return cfg.lr;
  return cfg.lr * std::min(1.0, static_cast<double>(step) / cfg.warmup_steps);
}

void AdamW::step(ParameterSet& params, double lr, const TrainConfig& cfg) {
  ++updates;
  const double bc1 = 1.0 - std::pow(cfg.beta1, updates);
  const double bc2 = 1.0 - std::pow(cfg.beta2, updates);
  for (auto& p : params) {
    Mat& m = first_moment[p->name];
    Mat& v = second_moment[p->name];
    if (m.size() == 0) {
      m = Mat::Zero(p->value.rows(), p->value.cols());
      v = Mat::Zero(p->value.rows(), p->value.cols());
    }
    if (p->decay) p->value *= (1.0 - lr * cfg.weight_decay);
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * p->grad;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * p->grad.cwiseAbs2();
    p->value.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg.eps);
  }
}

nlohmann::json StepMetrics::to_json() const {
  return {{"step", step}, {"L_pred", l_pred}, {"L_align", l_align}, {"L", l_total},
          {"gate_value", gate_value}, {"lr", lr}, {"grad_norm", grad_norm}};
}

// -------------------------------------------------------------------- trainer

namespace {

ViewConfig view_config(const TrainConfig& cfg) {
  ViewConfig v;
  v.ranges = cfg.crop;
  if (cfg.ablation.no_crop) v.source = SourceMode::identity;
  if (cfg.ablation.mask_source) v.source = SourceMode::random_mask;
  return v;
}

// Keys that may differ between a checkpoint and the run resuming from it.
bool resumable_key(const std::string& k) { return k == "max_steps" || k == "checkpoint_every" || k == "workers"; }

}  // namespace

Trainer::Trainer(const TrainConfig& cfg, std::vector<RawPair> data)
    : cfg_(cfg), data_(std::move(data)), model_(std::make_unique<Model>(cfg)), views_(view_config(cfg)) {
  if (static_cast<int>(data_.size()) < cfg_.batch_size)
    throw std::invalid_argument("dataset has " + std::to_string(data_.size()) + " pairs, fewer than batch_size " +
                                std::to_string(cfg_.batch_size));
  for (const auto& p : data_) validate(p);
  encoder_checksum_ = model_->encoders().checksum();
  const int n = static_cast<int>(data_.size());
  actions_.resize(data_.size());
  targets_.resize(data_.size());
  parallel_for(n, cfg_.workers, [&](int i) {
    const auto& p = data_[static_cast<std::size_t>(i)];
    actions_[static_cast<std::size_t>(i)] = model_->encoders().text->encode_text(p.caption).cls;
    targets_[static_cast<std::size_t>(i)] = model_->encoders().vision->encode_any(p.image);
  });
}

std::vector<PreparedItem> Trainer::prepare_batch(int step) const {
  const int n = static_cast<int>(data_.size());
  const int per_epoch = n / cfg_.batch_size;
  const int epoch = step / per_epoch;
  const int slot = step % per_epoch;
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng shuffle(derive_seed(cfg_.seed, 0xe90c, static_cast<std::uint64_t>(epoch)));
  for (int i = n - 1; i > 0; --i) std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(shuffle.uniform_int(0, i))]);

  std::vector<PreparedItem> batch(static_cast<std::size_t>(cfg_.batch_size));
  const int grid = cfg_.grid;
  parallel_for(cfg_.batch_size, cfg_.workers, [&](int b) {
    const auto idx = static_cast<std::size_t>(order[static_cast<std::size_t>(slot * cfg_.batch_size + b)]);
    Rng rng(derive_seed(cfg_.seed ^ 0x17e4, static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(b)));
    ViewTriplet t = make_triplet(data_[idx], views_, rng);
    PreparedItem& item = batch[static_cast<std::size_t>(b)];
    item.id = data_[idx].id;
    item.action = actions_[idx];
    item.target = targets_[idx];
    item.source = views_.source == SourceMode::identity ? targets_[idx]
                                                        : model_->encoders().vision->encode_any(t.source_image);
    item.block = sample_mask_block(grid, cfg_.crop, cfg_.ablation.predict_entire, rng);
  });
  return batch;
}

StepMetrics Trainer::train_step() { return train_step(prepare_batch(step_)); }

StepMetrics Trainer::train_step(std::span<const PreparedItem> batch) {
  ParameterSet& params = model_->params();
  StepMetrics m;
  m.step = step_;
  m.gate_value = model_->fusion().gate_value();
  Tape tape;
  LossGraph g = build_loss(tape, *model_, batch);
  m.l_pred = g.prediction.scalar();
  m.l_align = g.alignment.scalar();
  m.l_total = g.total.scalar();
  if (!std::isfinite(m.l_total)) {
    std::string ids;
    for (const auto& item : batch) ids += (ids.empty() ? "" : ",") + item.id;
    throw NonFiniteLoss("non-finite loss at step " + std::to_string(step_) + " for batch [" + ids + "]");
  }
  params.zero_grad();
  tape.backward(g.total);
  m.grad_norm = params.grad_norm();
  if (cfg_.grad_clip > 0.0 && m.grad_norm > cfg_.grad_clip) {
    const double s = cfg_.grad_clip / m.grad_norm;
    for (auto& p : params) p->grad *= s;
  }
  m.lr = learning_rate(cfg_, step_);
  opt_.step(params, m.lr, cfg_);
  ++step_;
  return m;
}

Archive model_archive(const Model& model) {
  Archive a;
  a.meta["kind"] = "checkpoint";
  a.meta["config"] = model.config().to_map();
  a.meta["encoder_checksum"] = model.encoders().checksum();
  a.meta["step"] = 0;
  for (const auto& p : model.params()) a.arrays.push_back({"param/" + p->name, p->value});
  return a;
}

Archive Trainer::to_archive() const {
  Archive a = model_archive(*model_);
  a.meta["step"] = step_;
  a.meta["adam_updates"] = opt_.updates;
  a.meta["rng"] = {{"scheme", "derived"}, {"root_seed", cfg_.seed}, {"next_step", step_}};
  for (const auto& p : model_->params()) {
    const auto m = opt_.first_moment.find(p->name);
    if (m == opt_.first_moment.end()) continue;
    a.arrays.push_back({"adam.m/" + p->name, m->second});
    a.arrays.push_back({"adam.v/" + p->name, opt_.second_moment.at(p->name)});
  }
  return a;
}

void Trainer::save(const std::filesystem::path& path) const {
  if (model_->encoders().checksum() != encoder_checksum_)
    throw std::logic_error("frozen encoder weights changed during training");
  write_archive(to_archive(), path);
}

TrainConfig checkpoint_config(const Archive& archive) {
  if (archive.meta.value("kind", "") != "checkpoint") throw std::runtime_error("archive is not a checkpoint");
  return parse_config(archive.meta.at("config").get<std::map<std::string, std::string>>());
}

void load_parameters(ParameterSet& params, const Archive& archive) {
  for (auto& p : params) {
    const std::string key = "param/" + p->name;
    if (!archive.has(key)) throw std::runtime_error("checkpoint is missing parameter '" + p->name + "'");
    const Mat& v = archive.array(key);
    if (v.rows() != p->value.rows() || v.cols() != p->value.cols())
      throw std::runtime_error("checkpoint parameter '" + p->name + "' has shape " + std::to_string(v.rows()) + "x" +
                               std::to_string(v.cols()) + ", model expects " + std::to_string(p->value.rows()) + "x" +
                               std::to_string(p->value.cols()));
    p->value = v;
  }
}

void Trainer::restore(const Archive& archive) {
  const TrainConfig saved = checkpoint_config(archive);
  const auto a = saved.to_map(), b = cfg_.to_map();
  for (const auto& [k, v] : a)
    if (!resumable_key(k) && b.at(k) != v)
      throw std::invalid_argument("cannot resume: config key '" + k + "' is '" + b.at(k) + "', checkpoint has '" + v +
                                  "'");
  if (archive.meta.at("encoder_checksum").get<std::uint64_t>() != encoder_checksum_)
    throw std::runtime_error("cannot resume: encoder weights differ from the checkpoint");
  load_parameters(model_->params(), archive);
  opt_ = AdamW{};
  opt_.updates = archive.meta.value("adam_updates", 0);
  for (const auto& p : model_->params()) {
    if (!archive.has("adam.m/" + p->name)) continue;
    opt_.first_moment[p->name] = archive.array("adam.m/" + p->name);
    opt_.second_moment[p->name] = archive.array("adam.v/" + p->name);
  }
  step_ = archive.meta.at("step").get<int>();
}

std::unique_ptr<Model> load_model(const std::filesystem::path& checkpoint) {
  const Archive a = read_archive(checkpoint);
  auto model = std::make_unique<Model>(checkpoint_config(a));
  if (a.meta.at("encoder_checksum").get<std::uint64_t>() != model->encoders().checksum())
    throw std::runtime_error("encoder weights rebuilt from " + checkpoint.string() + " do not match its checksum");
  load_parameters(model->params(), a);
  return model;
}

// ------------------------------------------------------------------------ run

namespace {

void truncate_log(const std::filesystem::path& log, int keep_below) {
  std::vector<std::string> kept;
  {
    std::ifstream is(log);
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      if (nlohmann::json::parse(line).at("step").get<int>() < keep_below) kept.push_back(line);
    }
  }
  std::ofstream os(log, std::ios::trunc);
  for (const auto& l : kept) os << l << "\n";
}

// Forward outputs of a fixed probe batch, for the save/load round-trip check.
Mat probe_outputs(const Model& model, std::span<const PreparedItem> batch) {
  Tape tape;
  LossGraph g = build_loss(tape, model, batch);
  Mat out = Mat::Zero(static_cast<Eigen::Index>(batch.size()) + 1, model.config().embed_dim);
  out(0, 0) = g.prediction.scalar();
  out(0, 1) = g.alignment.scalar();
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Tape t2;
    out.row(static_cast<Eigen::Index>(i) + 1) =
        model.pseudo_token(t2, batch[i].action, batch[i].source, batch[i].block).value().row(0);
  }
  return out;
}

}  // namespace

RunResult run_training(const TrainConfig& cfg, const std::vector<RawPair>& data, const std::filesystem::path& out_dir,
                       const std::optional<std::filesystem::path>& resume,
                       const std::function<void(const StepMetrics&)>& on_step) {
  std::filesystem::create_directories(out_dir);
  Trainer trainer(cfg, data);
  const auto log_path = out_dir / "metrics.jsonl";
  if (resume) {
    trainer.restore(read_archive(*resume));
    if (std::filesystem::exists(log_path)) truncate_log(log_path, trainer.step());
  } else {
    std::ofstream(log_path, std::ios::trunc);
  }
  {
    std::ofstream os(out_dir / "config.cfg");
    os << cfg.to_text();
  }
  const std::uint64_t checksum = trainer.model().encoders().checksum();

  RunResult result;
  std::ofstream log(log_path, std::ios::app);
  if (!log) throw std::runtime_error("cannot open metrics log: " + log_path.string());
  while (trainer.step() < cfg.max_steps) {
    const StepMetrics m = trainer.train_step();
    log << m.to_json().dump() << "\n";
    log.flush();
    result.metrics.push_back(m);
    if (on_step) on_step(m);
    if (cfg.checkpoint_every > 0 && trainer.step() % cfg.checkpoint_every == 0)
      trainer.save(out_dir / ("checkpoint_step" + std::to_string(trainer.step()) + ".ckpt"));
  }
  if (trainer.model().encoders().checksum() != checksum)
    throw std::logic_error("frozen encoder weights changed during training");

  result.checkpoint = out_dir / "checkpoint.ckpt";
  trainer.save(result.checkpoint);

  const auto probe = trainer.prepare_batch(0);
  const Mat before = probe_outputs(trainer.model(), probe);
  const auto reloaded = load_model(result.checkpoint);
  const Mat after = probe_outputs(*reloaded, probe);
  if (before.rows() != after.rows() || before.cols() != after.cols() || before != after)
    throw std::runtime_error("checkpoint round-trip changed forward outputs: " + result.checkpoint.string());
  return result;
}

}  // namespace wmcir
