#include "sbir/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "sbir/retrieval.hpp"
#include "sbir/rng.hpp"

namespace sbir {

namespace {

enum : std::uint64_t { kSaltShuffle = 11 };

std::vector<Tensor> vars_params(const EncoderVars& vars) {
  std::vector<Tensor> out;
  for (std::size_t l = 0; l < vars.weights.size(); ++l) {
    out.push_back(vars.weights[l]);
    out.push_back(vars.biases[l]);
  }
  if (vars.gamma.size() > 0) {
    out.push_back(vars.gamma);
    out.push_back(vars.beta);
  }
  return out;
}

void apply_grads(Encoder& enc, const EncoderVars& vars, const Gradients& grads,
                 OptimizerState& state, double lr) {
  if (!vars.watched) return;  // frozen: nothing to update
  std::vector<Tensor> params = vars_params(vars);
  std::vector<Tensor> grad_list;
  grad_list.reserve(params.size());
  for (const Tensor& p : params) grad_list.push_back(grads.at(p));
  std::vector<Tensor> updated = optimizer_step(params, grad_list, lr, state);
  // Re-detach: optimizer outputs are plain values for the next step's tape.
  for (Tensor& t : updated) t = t.detached();
  set_encoder_params(enc, updated);
}

double lr_for_epoch(const TrainSchedule& sched, std::size_t epoch_index) {
  return epoch_index < sched.stage_boundary_epoch ? sched.lr_stage1
                                                  : sched.lr_stage2;
}

bool eval_epoch(const TrainSchedule& sched, std::size_t epoch_index) {
  std::size_t done = epoch_index + 1;
  return done % sched.eval_interval == 0 || done == sched.epochs_total;
}

std::string recall_column(std::size_t k) {
  return "recall@" + std::to_string(k);
}

struct SplitViews {
  std::vector<std::size_t> train_sketches;
  std::vector<std::size_t> test_sketch_ids;
  std::vector<std::size_t> test_photo_ids;
};

SplitViews split_views(const CrossDomainDataset& ds) {
  SplitViews v;
  v.train_sketches = ds.train_sketches();
  v.test_sketch_ids = ds.test_sketches();
  v.test_photo_ids = ds.test_photos();
  if (v.train_sketches.empty() || v.test_sketch_ids.empty() ||
      v.test_photo_ids.empty()) {
    throw std::invalid_argument("pipeline: dataset split has an empty side");
  }
  return v;
}

void check_batch_size(const TrainSchedule& sched, std::size_t n_train) {
  if (sched.batch_size > n_train) {
    throw std::invalid_argument(
        "pipeline: batch_size " + std::to_string(sched.batch_size) +
        " exceeds the training set size " + std::to_string(n_train));
  }
}

void check_finite_loss(const char* pipeline, double loss, std::size_t epoch,
                       std::size_t step) {
  if (!std::isfinite(loss)) {
    throw std::runtime_error(std::string(pipeline) +
                             ": non-finite loss at epoch " +
                             std::to_string(epoch) + ", step " +
                             std::to_string(step));
  }
}

}  // namespace

std::vector<Tensor> optimizer_step(const std::vector<Tensor>& params,
                                   const std::vector<Tensor>& grads, double lr,
                                   OptimizerState& state) {
  if (params.size() != grads.size()) {
    throw std::invalid_argument("optimizer: parameter/gradient count mismatch");
  }
  if (!(lr > 0.0) || !std::isfinite(lr)) {
    throw std::invalid_argument("optimizer: learning rate must be positive");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != grads[i].shape()) {
      throw std::invalid_argument("optimizer: shape mismatch at tensor " +
                                  std::to_string(i));
    }
    for (double g : grads[i].values()) {
      if (!std::isfinite(g)) {
        throw std::domain_error("optimizer: non-finite gradient at tensor " +
                                std::to_string(i));
      }
    }
  }

  if (state.kind == OptimizerKind::kSgd) {
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      std::vector<double> p = params[i].values();
      const auto& g = grads[i].values();
      for (std::size_t j = 0; j < p.size(); ++j) p[j] -= lr * g[j];
      out.emplace_back(params[i].shape(), std::move(p));
    }
    ++state.step_count;
    return out;
  }

  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].size(), 0.0);
      state.v[i].assign(params[i].size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw std::invalid_argument(
        "optimizer: state was initialized for a different parameter list");
  }
  ++state.step_count;
  double t = static_cast<double>(state.step_count);
  double corr1 = 1.0 - std::pow(state.beta1, t);
  double corr2 = 1.0 - std::pow(state.beta2, t);

  std::vector<Tensor> out;
  out.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::vector<double> p = params[i].values();
    const auto& g = grads[i].values();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      double mhat = m[j] / corr1;
      double vhat = v[j] / corr2;
      p[j] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
    out.emplace_back(params[i].shape(), std::move(p));
  }
  return out;
}

Tensor encode_eval(const Encoder& enc, const Tensor& x) {
  // Eval mode touches no encoder state, so the const_cast stays honest.
  return encode_batch(const_cast<Encoder&>(enc), x, Mode::kEval);
}

double evaluate_split(const Encoder& photo_enc, const Encoder& sketch_enc,
                      const CrossDomainDataset& ds, std::size_t k) {
  std::vector<std::size_t> test_photos = ds.test_photos();
  std::vector<std::size_t> test_sketches = ds.test_sketches();
  Tensor gallery_embs =
      encode_eval(photo_enc, gather_rows(ds.photos, test_photos));
  std::vector<std::int64_t> ids(test_photos.begin(), test_photos.end());
  GalleryIndex index = make_gallery(std::move(gallery_embs), std::move(ids));

  Tensor query_embs =
      encode_eval(sketch_enc, gather_rows(ds.sketches, test_sketches));
  std::vector<std::int64_t> targets;
  targets.reserve(test_sketches.size());
  for (std::size_t s : test_sketches) {
    targets.push_back(static_cast<std::int64_t>(ds.sketch_photo_index[s]));
  }
  return recall_at_k(index, query_embs, targets, k);
}

RunArtifacts train_rtl(const CrossDomainDataset& ds, Encoder& photo_enc,
                       Encoder& sketch_enc, const TrainRtlOptions& opt,
                       const std::filesystem::path& out_dir) {
  validate(opt.sched);
  if (photo_enc.frozen || sketch_enc.frozen) {
    throw std::invalid_argument("train_rtl: encoders must be unfrozen");
  }
  SplitViews views = split_views(ds);
  check_batch_size(opt.sched, views.train_sketches.size());

  RunArtifacts art;
  art.dir = out_dir;
  art.config_echo = nlohmann::json{
      {"pipeline", "train-rtl"},
      {"loss_kind", opt.kind == TripletKind::kRtl ? "rtl" : "triplet"},
      {"loss", to_json(opt.loss)},
      {"optimizer", opt.optimizer == OptimizerKind::kAdam ? "adam" : "sgd"},
      {"recall_k", opt.recall_k},
      {"schedule", to_json(opt.sched)},
      {"dataset", to_json(ds.spec)},
      {"photo_encoder", to_json(photo_enc.cfg)},
      {"sketch_encoder", to_json(sketch_enc.cfg)},
      {"shuffle_seed", derive_seed(opt.sched.seed, kSaltShuffle)},
  };
  if (!opt.invocation.is_null()) art.config_echo["invocation"] = opt.invocation;
  art.metrics.columns = {"epoch", "loss", recall_column(opt.recall_k), "lr"};

  std::filesystem::create_directories(out_dir / "checkpoints");
  auto ckpt = [&](const std::string& name, const Encoder& e) {
    std::filesystem::path p = out_dir / "checkpoints" / (name + ".bin");
    save_encoder(e, p);
    art.checkpoints[name] = p;
  };

  double recall0 = evaluate_split(photo_enc, sketch_enc, ds, opt.recall_k);
  art.initial_recall = art.best_recall = art.final_recall = recall0;
  art.best_epoch = 0;
  ckpt("best_photo", photo_enc);
  ckpt("best_sketch", sketch_enc);
  if (opt.sched.epochs_total > 0) {
    art.metrics.add_row({0.0, std::nullopt, recall0, std::nullopt});
  }

  OptimizerState photo_state;
  photo_state.kind = opt.optimizer;
  OptimizerState sketch_state;
  sketch_state.kind = opt.optimizer;
  Rng shuffle_rng(derive_seed(opt.sched.seed, kSaltShuffle));
  std::vector<std::size_t> order = views.train_sketches;
  std::size_t bs = opt.sched.batch_size;

  for (std::size_t epoch = 0; epoch < opt.sched.epochs_total; ++epoch) {
    double lr = lr_for_epoch(opt.sched, epoch);
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start + bs <= order.size(); start += bs) {
      std::vector<std::size_t> sk_idx(order.begin() + start,
                                      order.begin() + start + bs);
      std::vector<std::size_t> ph_idx;
      ph_idx.reserve(bs);
      for (std::size_t s : sk_idx) ph_idx.push_back(ds.sketch_photo_index[s]);

      Tape tape;
      EncoderVars pv = watch_encoder(tape, photo_enc);
      EncoderVars sv = watch_encoder(tape, sketch_enc);
      Tensor photos = gather_rows(ds.photos, ph_idx);
      Tensor sketches = gather_rows(ds.sketches, sk_idx);
      Tensor pe = encode_on_tape(photo_enc, pv, photos, Mode::kTrain);
      Tensor se = encode_on_tape(sketch_enc, sv, sketches, Mode::kTrain);
      LossReport rep = opt.kind == TripletKind::kRtl
                           ? rtl_loss(pe, se, opt.loss)
                           : triplet_loss_matrix(pe, se, opt.loss);
      double loss = rep.loss.item();
      check_finite_loss("train_rtl", loss, epoch, steps);
      Gradients grads = tape.backward(rep.loss);
      apply_grads(photo_enc, pv, grads, photo_state, lr);
      apply_grads(sketch_enc, sv, grads, sketch_state, lr);
      loss_sum += loss;
      ++steps;
    }
    double mean_loss = loss_sum / static_cast<double>(steps);

    std::optional<double> recall;
    if (eval_epoch(opt.sched, epoch)) {
      double r = evaluate_split(photo_enc, sketch_enc, ds, opt.recall_k);
      recall = r;
      art.final_recall = r;
      if (r > art.best_recall) {
        art.best_recall = r;
        art.best_epoch = epoch + 1;
        ckpt("best_photo", photo_enc);
        ckpt("best_sketch", sketch_enc);
      }
    }
    art.metrics.add_row(
        {static_cast<double>(epoch + 1), mean_loss, recall, lr});
    if (epoch + 1 == opt.sched.stage_boundary_epoch &&
        opt.sched.stage_boundary_epoch < opt.sched.epochs_total) {
      ckpt("stage1_photo", photo_enc);
      ckpt("stage1_sketch", sketch_enc);
    }
  }

  ckpt("final_photo", photo_enc);
  ckpt("final_sketch", sketch_enc);
  write_run_artifacts(art);
  return art;
}

RunArtifacts distill(const CrossDomainDataset& ds, DomainSide domain,
                     const Encoder& teacher, Encoder& student,
                     const Encoder& counterpart, const DistillOptions& opt,
                     const std::filesystem::path& out_dir) {
  validate(opt.sched);
  if (!teacher.frozen) {
    throw std::invalid_argument("distill: the teacher must be frozen");
  }
  if (student.frozen) {
    throw std::invalid_argument("distill: the student must be unfrozen");
  }
  if (teacher.cfg.embedding_dim != student.cfg.embedding_dim) {
    throw std::invalid_argument(
        "distill: teacher and student embedding_dim differ (" +
        std::to_string(teacher.cfg.embedding_dim) + " vs " +
        std::to_string(student.cfg.embedding_dim) + ")");
  }
  if (teacher.cfg.input_dim != student.cfg.input_dim) {
    throw std::invalid_argument(
        "distill: teacher and student must share the input domain");
  }

  const Tensor& inputs = domain == DomainSide::kSketch ? ds.sketches : ds.photos;
  std::vector<std::size_t> train_idx = domain == DomainSide::kSketch
                                           ? ds.train_sketches()
                                           : ds.train_photos();
  std::vector<std::size_t> eval_idx = domain == DomainSide::kSketch
                                          ? ds.test_sketches()
                                          : ds.test_photos();
  if (train_idx.empty() || eval_idx.empty()) {
    throw std::invalid_argument("distill: dataset split has an empty side");
  }
  check_batch_size(opt.sched, train_idx.size());

  // The teacher is frozen, so its targets are fixed for the whole run.
  Tensor teacher_all = encode_eval(teacher, inputs);
  Tensor eval_inputs = gather_rows(inputs, eval_idx);
  Tensor teacher_eval = gather_rows(teacher_all, eval_idx);

  auto downstream_recall = [&](Encoder& stu) {
    if (domain == DomainSide::kSketch) {
      return evaluate_split(counterpart, stu, ds, opt.recall_k);
    }
    return evaluate_split(stu, counterpart, ds, opt.recall_k);
  };
  auto teacher_mse = [&](Encoder& stu) {
    Tensor se = encode_eval(stu, eval_inputs);
    return mean_all(square(sub(se, teacher_eval))).item();
  };

  RunArtifacts art;
  art.dir = out_dir;
  art.config_echo = nlohmann::json{
      {"pipeline", "distill"},
      {"domain", domain == DomainSide::kSketch ? "sketch" : "photo"},
      {"loss", to_json(opt.loss)},
      {"optimizer", opt.optimizer == OptimizerKind::kAdam ? "adam" : "sgd"},
      {"recall_k", opt.recall_k},
      {"schedule", to_json(opt.sched)},
      {"dataset", to_json(ds.spec)},
      {"teacher", to_json(teacher.cfg)},
      {"student", to_json(student.cfg)},
      {"counterpart", to_json(counterpart.cfg)},
      {"shuffle_seed", derive_seed(opt.sched.seed, kSaltShuffle)},
  };
  if (!opt.invocation.is_null()) art.config_echo["invocation"] = opt.invocation;
  art.metrics.columns = {"epoch", "loss", recall_column(opt.recall_k), "lr",
                         "teacher_mse"};

  std::filesystem::create_directories(out_dir / "checkpoints");
  auto ckpt = [&](const std::string& name, const Encoder& e) {
    std::filesystem::path p = out_dir / "checkpoints" / (name + ".bin");
    save_encoder(e, p);
    art.checkpoints[name] = p;
  };

  double recall0 = downstream_recall(student);
  art.initial_recall = art.best_recall = art.final_recall = recall0;
  art.best_epoch = 0;
  ckpt("best_student", student);
  if (opt.sched.epochs_total > 0) {
    art.metrics.add_row(
        {0.0, std::nullopt, recall0, std::nullopt, teacher_mse(student)});
  }

  OptimizerState state;
  state.kind = opt.optimizer;
  Rng shuffle_rng(derive_seed(opt.sched.seed, kSaltShuffle));
  std::vector<std::size_t> order = train_idx;
  std::size_t bs = opt.sched.batch_size;

  for (std::size_t epoch = 0; epoch < opt.sched.epochs_total; ++epoch) {
    double lr = lr_for_epoch(opt.sched, epoch);
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start + bs <= order.size(); start += bs) {
      std::vector<std::size_t> idx(order.begin() + start,
                                   order.begin() + start + bs);
      Tape tape;
      EncoderVars vars = watch_encoder(tape, student);
      Tensor batch = gather_rows(inputs, idx);
      Tensor targets = gather_rows(teacher_all, idx);
      Tensor se = encode_on_tape(student, vars, batch, Mode::kTrain);
      Tensor loss_t = distill_loss(se, targets, opt.loss);
      double loss = loss_t.item();
      check_finite_loss("distill", loss, epoch, steps);
      Gradients grads = tape.backward(loss_t);
      apply_grads(student, vars, grads, state, lr);
      loss_sum += loss;
      ++steps;
    }
    double mean_loss = loss_sum / static_cast<double>(steps);

    std::optional<double> recall;
    if (eval_epoch(opt.sched, epoch)) {
      double r = downstream_recall(student);
      recall = r;
      art.final_recall = r;
      if (r > art.best_recall) {
        art.best_recall = r;
        art.best_epoch = epoch + 1;
        ckpt("best_student", student);
      }
    }
    art.metrics.add_row({static_cast<double>(epoch + 1), mean_loss, recall, lr,
                         teacher_mse(student)});
    if (epoch + 1 == opt.sched.stage_boundary_epoch &&
        opt.sched.stage_boundary_epoch < opt.sched.epochs_total) {
      ckpt("stage1_student", student);
    }
  }

  ckpt("final_student", student);
  write_run_artifacts(art);
  return art;
}

RunArtifacts finetune_double_guidance(const CrossDomainDataset& ds,
                                      const Encoder& frozen_photo,
                                      const Encoder& frozen_sketch_teacher,
                                      Encoder& student,
                                      const DoubleGuidanceOptions& opt,
                                      const std::filesystem::path& out_dir) {
  validate(opt.sched);
  if (!frozen_photo.frozen || !frozen_sketch_teacher.frozen) {
    throw std::invalid_argument(
        "finetune_double_guidance: both guides must be frozen");
  }
  if (student.frozen) {
    throw std::invalid_argument(
        "finetune_double_guidance: the student must be unfrozen");
  }
  if (opt.lambda < 0.0) {
    throw std::invalid_argument("finetune_double_guidance: lambda must be >= 0");
  }
  if (frozen_sketch_teacher.cfg.embedding_dim != student.cfg.embedding_dim ||
      frozen_photo.cfg.embedding_dim != student.cfg.embedding_dim) {
    throw std::invalid_argument(
        "finetune_double_guidance: embedding dims must agree");
  }
  SplitViews views = split_views(ds);
  check_batch_size(opt.sched, views.train_sketches.size());

  // Both guides are frozen: their embeddings are computed once.
  Tensor photo_all = encode_eval(frozen_photo, ds.photos);
  Tensor teacher_all = encode_eval(frozen_sketch_teacher, ds.sketches);

  RunArtifacts art;
  art.dir = out_dir;
  art.config_echo = nlohmann::json{
      {"pipeline", "finetune-dg"},
      {"loss", to_json(opt.loss)},
      {"lambda", opt.lambda},
      {"huber_delta", opt.huber_delta},
      {"optimizer", opt.optimizer == OptimizerKind::kAdam ? "adam" : "sgd"},
      {"recall_k", opt.recall_k},
      {"schedule", to_json(opt.sched)},
      {"dataset", to_json(ds.spec)},
      {"photo_guide", to_json(frozen_photo.cfg)},
      {"sketch_teacher", to_json(frozen_sketch_teacher.cfg)},
      {"student", to_json(student.cfg)},
      {"shuffle_seed", derive_seed(opt.sched.seed, kSaltShuffle)},
  };
  if (!opt.invocation.is_null()) art.config_echo["invocation"] = opt.invocation;
  art.metrics.columns = {"epoch",       "loss", recall_column(opt.recall_k),
                         "lr",          "rtl_term", "huber_term"};

  std::filesystem::create_directories(out_dir / "checkpoints");
  auto ckpt = [&](const std::string& name, const Encoder& e) {
    std::filesystem::path p = out_dir / "checkpoints" / (name + ".bin");
    save_encoder(e, p);
    art.checkpoints[name] = p;
  };

  double recall0 = evaluate_split(frozen_photo, student, ds, opt.recall_k);
  art.initial_recall = art.best_recall = art.final_recall = recall0;
  art.best_epoch = 0;
  ckpt("best_student", student);
  if (opt.sched.epochs_total > 0) {
    art.metrics.add_row({0.0, std::nullopt, recall0, std::nullopt,
                         std::nullopt, std::nullopt});
  }

  OptimizerState state;
  state.kind = opt.optimizer;
  Rng shuffle_rng(derive_seed(opt.sched.seed, kSaltShuffle));
  std::vector<std::size_t> order = views.train_sketches;
  std::size_t bs = opt.sched.batch_size;

  for (std::size_t epoch = 0; epoch < opt.sched.epochs_total; ++epoch) {
    double lr = lr_for_epoch(opt.sched, epoch);
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0, rtl_sum = 0.0, huber_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start + bs <= order.size(); start += bs) {
      std::vector<std::size_t> sk_idx(order.begin() + start,
                                      order.begin() + start + bs);
      std::vector<std::size_t> ph_idx;
      ph_idx.reserve(bs);
      for (std::size_t s : sk_idx) ph_idx.push_back(ds.sketch_photo_index[s]);

      Tape tape;
      EncoderVars vars = watch_encoder(tape, student);
      Tensor sketches = gather_rows(ds.sketches, sk_idx);
      Tensor pe = gather_rows(photo_all, ph_idx);
      Tensor te = gather_rows(teacher_all, sk_idx);
      Tensor se = encode_on_tape(student, vars, sketches, Mode::kTrain);
      DoubleGuidanceReport rep =
          double_guidance_loss(se, pe, te, opt.loss, opt.lambda,
                               opt.huber_delta);
      double loss = rep.loss.item();
      check_finite_loss("finetune_double_guidance", loss, epoch, steps);
      Gradients grads = tape.backward(rep.loss);
      apply_grads(student, vars, grads, state, lr);
      loss_sum += loss;
      rtl_sum += rep.rtl_term.item();
      huber_sum += rep.distill_term.item();
      ++steps;
    }
    double n = static_cast<double>(steps);

    std::optional<double> recall;
    if (eval_epoch(opt.sched, epoch)) {
      double r = evaluate_split(frozen_photo, student, ds, opt.recall_k);
      recall = r;
      art.final_recall = r;
      if (r > art.best_recall) {
        art.best_recall = r;
        art.best_epoch = epoch + 1;
        ckpt("best_student", student);
      }
    }
    art.metrics.add_row({static_cast<double>(epoch + 1), loss_sum / n, recall,
                         lr, rtl_sum / n, huber_sum / n});
    if (epoch + 1 == opt.sched.stage_boundary_epoch &&
        opt.sched.stage_boundary_epoch < opt.sched.epochs_total) {
      ckpt("stage1_student", student);
    }
  }

  ckpt("final_student", student);
  write_run_artifacts(art);
  return art;
}

nlohmann::json evaluate_checkpoint(const std::filesystem::path& photo_ckpt,
                                   const std::filesystem::path& sketch_ckpt,
                                   const CrossDomainDataset& ds, std::size_t k,
                                   const std::string& run_id,
                                   std::uint64_t seed) {
  Encoder photo_enc = load_encoder(photo_ckpt);
  Encoder sketch_enc = load_encoder(sketch_ckpt);
  if (photo_enc.cfg.input_dim != ds.spec.photo_dim) {
    throw std::invalid_argument(
        "evaluate: photo checkpoint input_dim " +
        std::to_string(photo_enc.cfg.input_dim) + " does not match photo_dim " +
        std::to_string(ds.spec.photo_dim));
  }
  if (sketch_enc.cfg.input_dim != ds.spec.sketch_dim) {
    throw std::invalid_argument(
        "evaluate: sketch checkpoint input_dim " +
        std::to_string(sketch_enc.cfg.input_dim) +
        " does not match sketch_dim " + std::to_string(ds.spec.sketch_dim));
  }
  double recall = evaluate_split(photo_enc, sketch_enc, ds, k);
  return nlohmann::json{
      {"run_id", run_id},
      {"k", k},
      {"recall", recall},
      {"n_gallery", ds.test_photos().size()},
      {"n_queries", ds.test_sketches().size()},
      {"seed", seed},
  };
}

}  // namespace sbir
