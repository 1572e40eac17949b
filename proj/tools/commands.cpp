#include "commands.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>

#include "tribert/dsp/io.hpp"
#include "tribert/evaluation/classification.hpp"
#include "tribert/evaluation/separation.hpp"
#include "tribert/model/train.hpp"
#include "tribert/retrieval/retrieval.hpp"

namespace tribert::cli {
namespace fs = std::filesystem;
namespace {

fs::path require_out(const RunConfig& cfg) {
  if (cfg.out.empty()) throw CommandError("no output directory: pass --out or set run.out");
  fs::create_directories(cfg.out);
  return cfg.out;
}

synth::Dataset require_dataset(const RunConfig& cfg) {
  if (cfg.dataset.empty()) throw CommandError("no dataset: pass --dataset or set run.dataset");
  if (!fs::exists(fs::path(cfg.dataset) / "manifest.jsonl"))
    throw CommandError("dataset " + cfg.dataset + " not found (run `synth` first)");
  return synth::load_dataset(cfg.dataset);
}

model::Model load_model(const fs::path& ckpt, const synth::Dataset& ds) {
  if (ckpt.empty()) throw CommandError("no checkpoint: pass --checkpoint");
  if (!fs::exists(ckpt)) throw CommandError("checkpoint " + ckpt.string() + " not found");
  model::Model m = model::model_from_checkpoint(read_checkpoint(ckpt));
  const auto& p = ds.config.profile;
  if (p.rows != m.profile.rows || p.cols != m.profile.cols || p.window_len != m.profile.window_len ||
      p.hop != m.profile.hop || p.num_samples != m.profile.num_samples)
    throw CommandError("checkpoint audio profile does not match the dataset's");
  if (m.cfg.classes != ds.config.classes)
    throw CommandError("checkpoint has " + std::to_string(m.cfg.classes) + " classes, dataset has " +
                       std::to_string(ds.config.classes));
  if (m.pose_frames != synth::pose_frames(ds.config)) throw CommandError("checkpoint pose length does not match");
  return m;
}

std::size_t scene_index(const synth::Dataset& ds, const std::string& id) {
  for (std::size_t i = 0; i < ds.scenes.size(); ++i)
    if (ds.scenes[i].id == id) return i;
  throw CommandError("scene '" + id + "' is not in the dataset");
}

// Each bin goes to the source with the largest mask value (first on ties).
std::vector<Tensor> binarized(std::vector<Tensor> masks) {
  if (masks.empty()) return masks;
  for (std::size_t i = 0; i < masks[0].size(); ++i) {
    std::size_t best = 0;
    for (std::size_t s = 1; s < masks.size(); ++s)
      if (masks[s][i] > masks[best][i]) best = s;
    for (std::size_t s = 0; s < masks.size(); ++s) masks[s][i] = s == best ? 1.0 : 0.0;
  }
  return masks;
}

dsp::GrayImage mask_image(const Tensor& mask) {
  const std::size_t R = mask.dim(0), C = mask.dim(1);
  dsp::GrayImage img{C, R, std::vector<std::uint8_t>(R * C)};
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c)
      img.pixels[(R - 1 - r) * C + c] =
          static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(mask.at(r, c), 0.0, 1.0)));
  return img;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream f(path);
  if (!f) throw CommandError("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s + ",") {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (c != ' ') {
      cur += c;
    }
  }
  return out;
}

std::vector<std::string> ids_of(const synth::Dataset& ds, const std::string& split) {
  std::vector<std::string> ids;
  for (auto i : ds.split_indices(split)) ids.push_back(ds.scenes[i].id);
  return ids;
}

}  // namespace

void cmd_synth(const RunConfig& cfg, bool force) {
  if (cfg.out.empty()) throw CommandError("no output directory: pass --out or set run.out");
  const fs::path root = cfg.out;
  if (fs::exists(root) && !fs::is_empty(root)) {
    if (!force) throw CommandError(root.string() + " exists and is not empty (use --force to overwrite)");
    fs::remove_all(root);
  }
  synth::SynthConfig sc = cfg.synth;
  sc.seed = cfg.seed;
  const synth::Dataset ds = synth::generate_dataset(sc);
  synth::save_dataset(ds, root);
  write_snapshot(cfg, root);
  std::cout << "synth: " << ds.scenes.size() << " scenes (" << ds.split_indices("train").size() << " train, "
            << ds.split_indices("test").size() << " test) -> " << root.string() << '\n';
}

void cmd_train(const RunConfig& cfg, const TrainArgs& args) {
  if (!args.resume.empty() && !args.fine_tune.empty()) throw CommandError("--resume and --fine-tune are exclusive");
  const synth::Dataset ds = require_dataset(cfg);
  const fs::path out = require_out(cfg);

  model::TrainState st;
  if (!args.resume.empty()) {
    if (!fs::exists(args.resume)) throw CommandError("checkpoint " + args.resume.string() + " not found");
    st = model::resume_from(read_checkpoint(args.resume));
    load_model(args.resume, ds);  // validates against the dataset
  } else if (!args.fine_tune.empty()) {
    if (!fs::exists(args.fine_tune)) throw CommandError("checkpoint " + args.fine_tune.string() + " not found");
    st.model = model::model_from_checkpoint(read_checkpoint(args.fine_tune));
    model::rebuild_class_heads(st.model, args.classes ? args.classes : ds.config.classes, cfg.seed);
  } else {
    ModelConfig mc = cfg.model;
    mc.classes = ds.config.classes;
    st.model = model::create_model(mc, ds.config.profile, synth::pose_frames(ds.config), cfg.seed);
  }
  if (st.model.cfg.classes != ds.config.classes)
    throw CommandError("model has " + std::to_string(st.model.cfg.classes) + " classes, dataset has " +
                       std::to_string(ds.config.classes) + " (set --classes)");
  write_snapshot(cfg, out);
  const auto inputs = model::dataset_inputs(ds, st.model.cfg);

  model::TrainOptions opts;
  opts.steps = cfg.train.steps;
  opts.batch = cfg.train.batch;
  opts.lr = cfg.train.lr;
  opts.multi_source_fraction = cfg.train.multi_source_fraction;
  opts.seed = cfg.seed;

  std::ofstream csv(out / "loss.csv");
  if (!csv) throw CommandError("cannot write " + (out / "loss.csv").string());
  csv.precision(10);
  csv << "step,mask_bce,cls_v,cls_p,cls_a,total\n";

  auto save = [&](const fs::path& p, std::size_t step) {
    Checkpoint ck = model::training_checkpoint(st);
    ck.config["train.step"] = std::to_string(step);
    ck.config["run.config_hash"] = cfg.hash();
    write_checkpoint(p, ck);
  };
  const auto t0 = std::chrono::steady_clock::now();
  try {
    model::train(st, ds, inputs, opts, opts.steps, [&](std::size_t step, const model::LossBundle& l) {
      csv << step << ',' << l.mask_bce << ',' << l.cls_vision << ',' << l.cls_pose << ',' << l.cls_audio << ','
          << l.total << '\n';
      csv.flush();
      if (cfg.train.checkpoint_every > 0 && step % cfg.train.checkpoint_every == 0)
        save(out / ("ckpt_" + std::to_string(step) + ".trib"), step);
      if (step % 100 == 0 || step == opts.steps) {
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::cout << "step " << step << "  total " << l.total << "  (" << s << " s)\n" << std::flush;
      }
    });
  } catch (const std::runtime_error& e) {
    std::cerr << "train: aborted: " << e.what() << '\n';
    throw CommandError(std::string("training aborted: ") + e.what());
  }
  save(out / "latest.trib", st.step);
  std::cout << "train: " << st.step << " steps -> " << (out / "latest.trib").string() << '\n';
}

void cmd_separate(const RunConfig& cfg, const SeparateArgs& args) {
  const synth::Dataset ds = require_dataset(cfg);
  model::Model m = load_model(args.checkpoint, ds);
  const fs::path out = require_out(cfg);
  write_snapshot(cfg, out);

  synth::MixPair pair;
  if (!args.pair.empty()) {
    if (!args.mixture.empty()) throw CommandError("--pair and --mixture are exclusive");
    const auto plus = args.pair.find('+');
    if (plus == std::string::npos) throw CommandError("--pair expects <scene>+<scene>");
    const std::size_t a = scene_index(ds, args.pair.substr(0, plus));
    const std::size_t b = scene_index(ds, args.pair.substr(plus + 1));
    try {
      pair = synth::make_mix_pair(ds, a, b, ds.scenes[a].scene.duet());
    } catch (const std::invalid_argument& e) {
      throw CommandError(e.what());
    }
  } else if (!args.mixture.empty()) {
    if (args.scenes.size() != 2) throw CommandError("--mixture needs --scenes <a>,<b> for the visual/pose side");
    if (!fs::exists(args.mixture)) throw CommandError("mixture " + args.mixture.string() + " not found");
    pair.mixture = dsp::read_wav(args.mixture);
    if (pair.mixture.size() != m.profile.num_samples)
      throw CommandError("mixture has " + std::to_string(pair.mixture.size()) + " samples, the model expects " +
                         std::to_string(m.profile.num_samples));
    pair.scene_a = scene_index(ds, args.scenes[0]);
    pair.scene_b = scene_index(ds, args.scenes[1]);
    for (std::size_t s : {pair.scene_a, pair.scene_b})
      for (std::size_t c : ds.scenes[s].scene.classes) {
        pair.source_class.push_back(c);
        pair.source_scene.push_back(s);
        pair.sources.emplace_back();
        pair.gt_masks.emplace_back(Shape{m.cfg.spec_rows, m.cfg.spec_cols});  // unused by inference
      }
  } else {
    throw CommandError("pass --pair <a>+<b> or --mixture <wav> --scenes <a>,<b>");
  }

  std::vector<model::SceneInputs> inputs(ds.scenes.size());
  for (std::size_t s : {pair.scene_a, pair.scene_b}) inputs[s] = model::scene_inputs(ds.scenes[s].scene, m.cfg);
  auto masks = model::predict_masks(m, pair, inputs);
  if (args.binary) masks = binarized(std::move(masks));
  const auto est = eval::reconstruct_sources(pair, masks, m.profile);
  for (std::size_t i = 0; i < est.size(); ++i) {
    dsp::write_wav(out / ("source_" + std::to_string(i) + ".wav"), est[i]);
    dsp::write_pgm(out / ("mask_" + std::to_string(i) + ".pgm"), mask_image(masks[i]));
  }
  dsp::write_wav(out / "mixture.wav", pair.mixture);
  dsp::write_pgm(out / "mixture_spec.pgm", dsp::grid_to_image(dsp::network_input(pair.mixture, m.profile)));
  std::cout << "separate: " << est.size() << " sources -> " << out.string() << '\n';
}

void cmd_eval(const RunConfig& cfg, const fs::path& checkpoint) {
  const synth::Dataset ds = require_dataset(cfg);
  model::Model m = load_model(checkpoint, ds);
  const fs::path out = require_out(cfg);
  write_snapshot(cfg, out);
  const auto inputs = model::dataset_inputs(ds, m.cfg);

  const auto pairs = eval::evaluation_pairs(ds, cfg.eval.pairs, cfg.seed, cfg.eval.multi_source_fraction);
  const bool binary = cfg.eval.binary;
  const auto report = eval::evaluate_separation(
      ds, pairs, m.profile,
      [&](const synth::MixPair& p) {
        auto masks = model::predict_masks(m, p, inputs);
        return binary ? binarized(std::move(masks)) : masks;
      },
      cfg.eval.jobs);
  eval::write_report_csv(out / "eval.csv", report);
  eval::write_report_json(out / "eval_summary.json", report, cfg.hash());

  const auto cls = eval::evaluate_classification(m, ds, inputs, ds.split_indices("test"));
  write_json(out / "classification.json", {{"scenes", cls.scenes},
                                           {"average_precision", {{"vision", cls.vision}, {"pose", cls.pose},
                                                                  {"audio", cls.audio}}},
                                           {"config_hash", cfg.hash()}});
  std::cout << "eval: " << report.pairs << " pairs, SDR " << report.sdr.mean << " dB (baseline "
            << report.baseline_sdr.mean << " dB), AP v/p/a " << cls.vision << '/' << cls.pose << '/' << cls.audio
            << '\n';
}

void cmd_retrieve(const RunConfig& cfg, const fs::path& checkpoint) {
  using namespace retrieval;
  const synth::Dataset ds = require_dataset(cfg);
  model::Model m = load_model(checkpoint, ds);
  const fs::path out = require_out(cfg);
  write_snapshot(cfg, out);
  const auto inputs = model::dataset_inputs(ds, m.cfg);

  std::vector<Source> sources;
  for (const auto& s : split_list(cfg.retrieve.sources)) sources.push_back(parse_source(s));
  if (sources.empty()) throw CommandError("retrieve.sources is empty");
  std::vector<Variant> vars;
  for (const auto& v : split_list(cfg.retrieve.variants)) vars.push_back(variant_by_name(v));
  if (vars.empty()) throw CommandError("retrieve.variants is empty");

  const EmbeddingStore raw = extract_embeddings(m, ds, inputs, sources);
  write_store(out / "embeddings.bin", raw);
  const auto train_ids = ids_of(ds, "train"), test_ids = ids_of(ds, "test");
  const EmbeddingStore store = standardized(raw, train_ids);

  NwayOptions opts;
  opts.epochs = cfg.retrieve.epochs;
  opts.batch = cfg.retrieve.batch;
  opts.lr = cfg.retrieve.lr;
  opts.d_r = cfg.retrieve.d_r;
  opts.seed = cfg.seed;
  nlohmann::json summary{{"pool", test_ids.size()}, {"config_hash", cfg.hash()}};
  for (Source s : sources) {
    std::vector<VariantResult> results;
    for (const auto& v : vars) {
      Scorer sc = nway_train(store, train_ids, v, s, opts);
      results.push_back({v.name, evaluate_topk(sc, store, test_ids, {1, 5, 10}, cfg.retrieve.jobs)});
      for (const auto& t : results.back().topk)
        summary[to_string(s)][v.name]["top" + std::to_string(t.k)] = t.accuracy;
      std::cout << "retrieve: " << to_string(s) << ' ' << v.name << " top-1 " << results.back().topk[0].accuracy
                << " (random " << results.back().topk[0].random_baseline << ")\n";
    }
    write_results_csv(out / ("retrieval_" + to_string(s) + ".csv"), results);
  }
  write_json(out / "retrieval_summary.json", summary);
}

}  // namespace tribert::cli
