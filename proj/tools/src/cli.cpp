// Copyright 2026 The FSVG Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "fsvg/checkpoint.hpp"
#include "fsvg/errors.hpp"
#include "fsvg/flops.hpp"
#include "fsvg/model.hpp"
#include "fsvg/synth_data.hpp"
#include "fsvg/trainer.hpp"
#include "fsvg/viz.hpp"

namespace fsvg::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::vector<std::size_t> parse_layers(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(std::remove_if(item.begin(), item.end(), ::isspace), item.end());
    if (item.empty()) continue;
    if (!std::all_of(item.begin(), item.end(), ::isdigit)) {
      throw ConfigError("bad layer index '" + item + "' in '" + text + "'");
    }
    out.push_back(std::stoul(item));
  }
  return out;
}

// "dim=64,depth=4,fs=2:3" applied on top of `c`.
void apply_dims(ModelConfig& c, const std::string& text) {
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("--dims entry '" + item + "' is not key=value");
    const std::string key = item.substr(0, eq), value = item.substr(eq + 1);
    if (key == "fs") {
      std::string v = value;
      std::replace(v.begin(), v.end(), ':', ',');
      c.fs_layers = parse_layers(v);
      continue;
    }
    std::size_t n = 0;
    try {
      std::size_t used = 0;
      n = std::stoul(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
    } catch (const std::exception&) {
      throw ConfigError("--dims value for '" + key + "' is not a non-negative integer: '" + value + "'");
    }
    if (key == "image") c.image_size = n;
    else if (key == "patch") c.patch_size = n;
    else if (key == "dim") c.embed_dim = n;
    else if (key == "depth") c.depth = n;
    else if (key == "heads") c.heads = n;
    else if (key == "ffn") c.ffn_mult = n;
    else if (key == "text") c.max_text_len = n;
    else throw ConfigError("unknown --dims key '" + key + "' (image, patch, dim, depth, heads, ffn, text, fs)");
  }
}

void ensure_parent_exists(const fs::path& path) {
  const fs::path parent = path.parent_path();
  if (!parent.empty() && !fs::is_directory(parent)) {
    throw IoError("output directory " + parent.string() + " does not exist");
  }
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

data::Split parse_split(const std::string& s) {
  if (s == "train") return data::Split::kTrain;
  if (s == "val") return data::Split::kVal;
  throw ConfigError("split must be 'train' or 'val', got '" + s + "'");
}

// --- subcommands --------------------------------------------------------------

struct GenDataArgs {
  std::string out;
  std::size_t train = 2000, val = 200, image_size = 64, patch = 8;
  std::uint64_t seed = 0;
};

int gen_data(const GenDataArgs& a, std::ostream& out) {
  data::DatasetSpec spec = data::DatasetSpec::for_geometry(a.image_size, a.patch);
  spec.train_count = a.train;
  spec.val_count = a.val;
  spec.seed = a.seed;
  spec.validate();
  const auto vocab = data::Vocabulary::shapes();
  const auto tr = data::generate_dataset(spec, data::Split::kTrain);
  const auto va = data::generate_dataset(spec, data::Split::kVal);
  data::save_dataset(a.out, vocab, tr, data::Split::kTrain);
  data::save_dataset(a.out, vocab, va, data::Split::kVal);
  out << "wrote " << tr.size() << " train and " << va.size() << " val examples to " << a.out << "\n";
  return 0;
}

struct TrainArgs {
  std::string data, ckpt_out, resume;
  double rho = 0.7;
  std::string fs_layers = "2,3";
  std::size_t epochs = 30, batch = 32, lr_decay_epoch = 20;
  double lr = 3e-4, lr_decay_factor = 0.1, weight_decay = 1e-4, grad_clip = 0.0;
  std::uint64_t seed = 0;
  std::size_t patch = 8, dim = 64, depth = 4, heads = 4, ffn_mult = 4, text_len = 8, head_hidden = 256;
  std::size_t max_steps = 0;
  bool log_steps = false;
};

int train_cmd(const TrainArgs& a, std::ostream& out) {
  validate_rho(a.rho);
  ensure_parent_exists(a.ckpt_out);
  auto train_set = data::load_dataset(a.data, data::Split::kTrain);
  if (train_set.examples.empty()) throw ContractError(a.data + ": training split is empty");
  std::optional<data::Dataset> val_set;
  if (fs::exists(fs::path(a.data) / "val.jsonl")) val_set = data::load_dataset(a.data, data::Split::kVal);

  TrainConfig c;
  c.model.image_size = train_set.examples.front().image.height;
  c.model.patch_size = a.patch;
  c.model.embed_dim = a.dim;
  c.model.depth = a.depth;
  c.model.heads = a.heads;
  c.model.ffn_mult = a.ffn_mult;
  c.model.fs_layers = parse_layers(a.fs_layers);
  c.model.rho = a.rho;
  c.model.vocab_size = train_set.vocab.size();
  c.model.max_text_len = a.text_len;
  c.model.head_hidden = a.head_hidden;
  c.model.seed = a.seed;
  c.epochs = a.epochs;
  c.batch_size = a.batch;
  c.lr = a.lr;
  c.lr_decay_epoch = a.lr_decay_epoch;
  c.lr_decay_factor = a.lr_decay_factor;
  c.weight_decay = a.weight_decay;
  c.grad_clip = a.grad_clip;
  c.seed = a.seed;
  c.validate();

  std::optional<Checkpoint<float>> resume;
  if (!a.resume.empty()) {
    LoadOptions lo;
    lo.expected = &c.model;
    lo.require_optimizer = true;
    resume = load_checkpoint<float>(a.resume, lo);
  }

  {
    json start;
    start["event"] = "start";
    start["train_examples"] = train_set.examples.size();
    start["val_examples"] = val_set ? val_set->examples.size() : 0;
    start["config"] = json::parse(c.to_json());
    out << start.dump() << std::endl;
  }
  TrainCallbacks cb;
  cb.on_epoch = [&](const EpochStats& s) { out << epoch_log_line(c, s) << std::endl; };
  if (a.log_steps) {
    cb.on_step = [&](std::uint64_t step, double loss) {
      json j;
      j["event"] = "step";
      j["step"] = step;
      j["loss"] = loss;
      out << j.dump() << std::endl;
    };
  }
  if (a.max_steps > 0) cb.keep_going = [&](std::uint64_t step) { return step < a.max_steps; };

  TrainResult r = train(c, train_set.examples, val_set ? &val_set->examples : nullptr, cb,
                        resume ? &*resume : nullptr);
  save_checkpoint(a.ckpt_out, c.model, r.params, &r.optimizer, r.epochs_done);
  json done;
  done["event"] = "done";
  done["steps"] = r.optimizer.step;
  done["epochs"] = r.epochs_done;
  done["checkpoint"] = a.ckpt_out;
  out << done.dump() << std::endl;
  return 0;
}

struct EvalArgs {
  std::string data, ckpt, split = "val";
  std::optional<double> rho;
};

int eval_cmd(const EvalArgs& a, std::ostream& out) {
  auto ck = load_checkpoint<float>(a.ckpt);
  if (a.rho) {
    validate_rho(*a.rho);
    ck.config.rho = *a.rho;
  }
  const auto ds = data::load_dataset(a.data, parse_split(a.split));
  if (ds.vocab.size() != ck.config.vocab_size) {
    throw ConfigError("dataset vocabulary has " + std::to_string(ds.vocab.size()) +
                      " words, checkpoint expects " + std::to_string(ck.config.vocab_size));
  }
  const EvalResult r = evaluate(ck.params, ck.config, ds.examples);
  out << "Acc@0.5 " << fmt("%.4f", r.acc) << " over " << r.count << " examples (rho "
      << fmt("%g", ck.config.rho) << ", mean IoU " << fmt("%.4f", r.mean_iou) << ")\n";
  return 0;
}

struct FlopsArgs {
  std::string preset = "vitb", dims, rho_list = "1.0,0.9,0.8,0.7,0.6,0.5";
  bool json_out = false, count_flops = false, include_embedding = false;
};

int flops_cmd(const FlopsArgs& a, std::ostream& out) {
  ModelConfig c;
  if (a.preset == "vitb") c = ModelConfig::vitb();
  else if (a.preset == "toy") c = ModelConfig::toy();
  else if (a.preset == "tiny") c = ModelConfig::tiny();
  else throw ConfigError("unknown preset '" + a.preset + "' (vitb, toy, tiny)");
  apply_dims(c, a.dims);
  c.validate();
  const auto rhos = flops::parse_rho_list(a.rho_list);
  flops::CostOptions o;
  o.count_flops = a.count_flops;
  o.include_embedding = a.include_embedding;
  const auto rows = flops::flops_table(c, rhos, o);
  out << (a.json_out ? flops::format_json_lines(rows, o) : flops::format_table(rows, o));
  return 0;
}

struct VizArgs {
  std::string ckpt, data, out, split = "val";
  std::size_t index = 0;
  std::optional<double> rho;
};

int viz_cmd(const VizArgs& a, std::ostream& out) {
  auto ck = load_checkpoint<float>(a.ckpt);
  if (a.rho) {
    validate_rho(*a.rho);
    ck.config.rho = *a.rho;
  }
  const auto ds = data::load_dataset(a.data, parse_split(a.split));
  if (a.index >= ds.examples.size()) {
    throw IndexError("index " + std::to_string(a.index) + " out of range for " +
                     std::to_string(ds.examples.size()) + " examples");
  }
  const auto& ex = ds.examples[a.index];
  const auto [pred, trace] = predict(ex.image, ex.text_ids, ck.params, ck.config);
  const auto r = viz::render(ex.image, trace, ck.config.patch_size, pred, ex.bbox);
  const auto paths = viz::write_rendering(r, a.out);
  for (std::size_t s = 0; s < r.stages.size(); ++s) {
    out << paths[s].string() << "  layer " << r.layers[s] << "  kept " << trace.stages[s].kept_original.size()
        << "/" << ck.config.num_patches() << "  black "
        << viz::count_black_patches(r.stages[s], ck.config.patch_size) << "\n";
  }
  out << paths.back().string() << "  iou " << fmt("%.4f", iou(pred, ex.bbox)) << "\n";
  return 0;
}

struct GradCheckArgs {
  std::uint64_t seed = 0;
  double h = 1e-5;
  double tol = 1e-4;
  double init_std = 0.1;
};

int grad_check_cmd(const GradCheckArgs& a, std::ostream& out) {
  const GradCheckResult r = tiny_grad_check(a.seed, a.h, a.init_std);
  const bool pass = r.report.max_rel_error < a.tol;
  out << "max relative error " << fmt("%.17g", r.report.max_rel_error) << " at " << r.worst_name << "["
      << r.report.worst_element << "] over " << r.report.checked << " entries in " << r.parameter_count
      << " tensors: " << (pass ? "PASS" : "FAIL") << " (tol " << fmt("%g", a.tol) << ")\n";
  return pass ? 0 : 1;
}

}  // namespace

GradCheckResult tiny_grad_check(std::uint64_t seed, double h, double init_std) {
  const ModelConfig config = ModelConfig::tiny();
  data::DatasetSpec spec = data::DatasetSpec::for_geometry(config.image_size, config.patch_size);
  spec.min_shapes = spec.max_shapes = 1;
  spec.train_count = 1;
  spec.seed = seed;
  const auto ex = data::generate_dataset(spec, data::Split::kTrain).front();

  auto params = init_params<double>(config, seed, init_std);
  auto reference = params.cast<long double>();
  auto tensors = params.tensors();
  auto reference_tensors = reference.tensors();
  const std::function<ad::Var<double>(ad::Tape<double>&)> loss = [&](ad::Tape<double>& tape) {
    return box_loss(model_forward(tape, ex.image, ex.text_ids, params, config).box, ex.bbox, config.loss);
  };
  const std::function<ad::Var<long double>(ad::Tape<long double>&)> reference_loss =
      [&](ad::Tape<long double>& tape) {
        return box_loss(model_forward(tape, ex.image, ex.text_ids, reference, config).box, ex.bbox,
                        config.loss);
      };
  GradCheckResult r;
  r.report = ad::finite_diff_check(loss, std::span<Tensor<double>* const>(tensors), reference_loss,
                                   std::span<Tensor<long double>* const>(reference_tensors),
                                   static_cast<long double>(h));
  r.worst_name = params.names().at(r.report.worst_param);
  r.parameter_count = tensors.size();
  return r;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"fsvg: language-guided visual token selection for grounding"};
  app.require_subcommand(1);

  GenDataArgs gd;
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic shapes grounding dataset");
  gen->add_option("--out", gd.out, "Output directory")->required();
  gen->add_option("--train", gd.train, "Training examples")->capture_default_str();
  gen->add_option("--val", gd.val, "Validation examples")->capture_default_str();
  gen->add_option("--image-size", gd.image_size, "Image side in pixels")->capture_default_str();
  gen->add_option("--patch", gd.patch, "Patch side; shapes span 2 to 3 patches")->capture_default_str();
  gen->add_option("--seed", gd.seed, "Generator seed")->capture_default_str();

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train a grounding model; logs JSON lines to stdout");
  tr->add_option("--data", ta.data, "Dataset directory")->required();
  tr->add_option("--ckpt-out", ta.ckpt_out, "Checkpoint written at the end")->required();
  tr->add_option("--rho", ta.rho, "Visual keep ratio per selection layer, in (0, 1]")->capture_default_str();
  tr->add_option("--fs-layers", ta.fs_layers, "Comma-separated 1-based selection blocks")->capture_default_str();
  tr->add_option("--epochs", ta.epochs)->capture_default_str();
  tr->add_option("--batch", ta.batch)->capture_default_str();
  tr->add_option("--lr", ta.lr)->capture_default_str();
  tr->add_option("--lr-decay-epoch", ta.lr_decay_epoch, "First epoch run at the decayed lr")->capture_default_str();
  tr->add_option("--lr-decay-factor", ta.lr_decay_factor)->capture_default_str();
  tr->add_option("--weight-decay", ta.weight_decay)->capture_default_str();
  tr->add_option("--grad-clip", ta.grad_clip, "Global gradient norm limit, 0 disables")->capture_default_str();
  tr->add_option("--seed", ta.seed, "Initialization and shuffling seed")->capture_default_str();
  tr->add_option("--patch", ta.patch)->capture_default_str();
  tr->add_option("--dim", ta.dim)->capture_default_str();
  tr->add_option("--depth", ta.depth)->capture_default_str();
  tr->add_option("--heads", ta.heads)->capture_default_str();
  tr->add_option("--ffn-mult", ta.ffn_mult)->capture_default_str();
  tr->add_option("--text-len", ta.text_len)->capture_default_str();
  tr->add_option("--head-hidden", ta.head_hidden)->capture_default_str();
  tr->add_option("--resume", ta.resume, "Continue from a checkpoint with optimizer state");
  tr->add_option("--max-steps", ta.max_steps, "Stop after this many optimizer steps (0: no limit)");
  tr->add_flag("--log-steps", ta.log_steps, "Also log every step's loss");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Acc@0.5 of a checkpoint on a dataset split");
  ev->add_option("--data", ea.data)->required();
  ev->add_option("--ckpt", ea.ckpt)->required();
  ev->add_option("--split", ea.split)->capture_default_str();
  ev->add_option("--rho", ea.rho, "Override the checkpoint's keep ratio");

  FlopsArgs fa;
  auto* fl = app.add_subcommand("flops", "Analytic backbone cost per keep ratio");
  fl->add_option("--preset", fa.preset, "vitb, toy or tiny")->capture_default_str();
  fl->add_option("--dims", fa.dims, "Overrides, e.g. image=64,patch=8,dim=64,depth=4,heads=4,ffn=4,text=8,fs=2:3");
  fl->add_option("--rho-list", fa.rho_list)->capture_default_str();
  fl->add_flag("--json", fa.json_out, "One JSON object per row");
  fl->add_flag("--flops", fa.count_flops, "Report FLOPs (2 x MACs)");
  fl->add_flag("--include-embedding", fa.include_embedding, "Add the patch projection cost");

  VizArgs va;
  auto* vz = app.add_subcommand("viz", "Write per-selection-stage images and a box overlay");
  vz->add_option("--ckpt", va.ckpt)->required();
  vz->add_option("--data", va.data)->required();
  vz->add_option("--index", va.index)->capture_default_str();
  vz->add_option("--out", va.out, "Output path prefix")->required();
  vz->add_option("--split", va.split)->capture_default_str();
  vz->add_option("--rho", va.rho, "Override the checkpoint's keep ratio");

  GradCheckArgs ga;
  auto* gc = app.add_subcommand("grad-check", "Finite-difference check on the tiny double preset");
  gc->add_option("--seed", ga.seed)->capture_default_str();
  gc->add_option("--step", ga.h, "Central difference step")->capture_default_str();
  gc->add_option("--tol", ga.tol, "Pass threshold")->capture_default_str();
  gc->add_option("--init-std", ga.init_std, "Weight init std at the check point")->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (gen->parsed()) return gen_data(gd, out);
    if (tr->parsed()) return train_cmd(ta, out);
    if (ev->parsed()) return eval_cmd(ea, out);
    if (fl->parsed()) return flops_cmd(fa, out);
    if (vz->parsed()) return viz_cmd(va, out);
    if (gc->parsed()) return grad_check_cmd(ga, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace fsvg::cli
