// SPDX-License-Identifier: Apache-2.0
#include "wjepa/commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "wjepa/errors.hpp"

namespace wjepa {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

void write_text_file(const fs::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::trunc);
  if (!f) throw IoError("cannot write " + p.string());
  f << s;
}

void write_config(const fs::path& dir, const json& cfg) {
  write_text_file(dir / "config.json", cfg.dump(2) + "\n");
}

json load_config_json(const std::string& path, const char* command) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config: " + path);
  json j;
  try {
    j = json::parse(f);
  } catch (const std::exception& e) {
    throw ConfigError("invalid config JSON: " + std::string(e.what()));
  }
  if (j.value("command", command) != std::string(command))
    throw ConfigError("config file is for command '" +
                      j.value("command", "?") + "', expected '" + command + "'");
  return j;
}

// Applies `fn(key, value)` to every parameter key; unknown keys are an error.
void apply_keys(const json& j,
                const std::vector<std::pair<std::string, std::function<void(const json&)>>>& setters) {
  for (const auto& [key, value] : j.items()) {
    if (key == "schema_version" || key == "command") continue;
    bool known = false;
    for (const auto& [name, fn] : setters) {
      if (name == key) {
        fn(value);
        known = true;
        break;
      }
    }
    if (!known) throw ConfigError("unknown config key: " + key);
  }
}

json mask_to_json(const MaskSpec& m) {
  json j;
  j["geometry"] = to_string(m.geometry);
  j["patch_rows"] = m.patch_rows;
  j["patch_cols"] = m.patch_cols;
  j["target_fraction"] = m.target_fraction;
  j["time_scattered"] = m.time_scattered;
  return j;
}

void mask_from_json(const json& j, MaskSpec& m) {
  apply_keys(j, {
    {"geometry", [&](const json& v) { m.geometry = mask_geometry_from_string(v.get<std::string>()); }},
    {"patch_rows", [&](const json& v) { m.patch_rows = v.get<int>(); }},
    {"patch_cols", [&](const json& v) { m.patch_cols = v.get<int>(); }},
    {"target_fraction", [&](const json& v) { m.target_fraction = v.get<double>(); }},
    {"time_scattered", [&](const json& v) { m.time_scattered = v.get<bool>(); }},
  });
}

}  // namespace

// ---- synth -----------------------------------------------------------------

namespace {

json synth_to_json(const SynthArgs& a) {
  json j;
  j["schema_version"] = kConfigSchemaVersion;
  j["command"] = "synth";
  j["waveforms"] = a.spec.waveforms;
  j["aoa_classes"] = a.spec.aoa_classes;
  j["replicas"] = a.spec.replicas;
  j["window"] = a.spec.window;
  j["antennas"] = a.spec.antennas;
  j["sps"] = a.spec.sps;
  j["rolloff"] = a.spec.rolloff;
  j["snr_db_min"] = a.spec.channel.snr_db_min;
  j["snr_db_max"] = a.spec.channel.snr_db_max;
  j["cfo_max"] = a.spec.channel.cfo_max;
  j["noise"] = a.spec.channel.noise;
  j["train_fraction"] = a.spec.train_fraction;
  j["seed"] = a.spec.seed;
  j["out"] = a.out;
  return j;
}

}  // namespace

SynthArgs synth_args_from_json(const std::string& path) {
  const json j = load_config_json(path, "synth");
  SynthArgs a;
  apply_keys(j, {
    {"waveforms", [&](const json& v) { a.spec.waveforms = v.get<int>(); }},
    {"aoa_classes", [&](const json& v) { a.spec.aoa_classes = v.get<int>(); }},
    {"replicas", [&](const json& v) { a.spec.replicas = v.get<int>(); }},
    {"window", [&](const json& v) { a.spec.window = v.get<int>(); }},
    {"antennas", [&](const json& v) { a.spec.antennas = v.get<int>(); }},
    {"sps", [&](const json& v) { a.spec.sps = v.get<int>(); }},
    {"rolloff", [&](const json& v) { a.spec.rolloff = v.get<double>(); }},
    {"snr_db_min", [&](const json& v) { a.spec.channel.snr_db_min = v.get<double>(); }},
    {"snr_db_max", [&](const json& v) { a.spec.channel.snr_db_max = v.get<double>(); }},
    {"cfo_max", [&](const json& v) { a.spec.channel.cfo_max = v.get<double>(); }},
    {"noise", [&](const json& v) { a.spec.channel.noise = v.get<bool>(); }},
    {"train_fraction", [&](const json& v) { a.spec.train_fraction = v.get<double>(); }},
    {"seed", [&](const json& v) { a.spec.seed = v.get<uint64_t>(); }},
    {"out", [&](const json& v) { a.out = v.get<std::string>(); }},
  });
  return a;
}

int cmd_synth(const SynthArgs& args) {
  if (args.out.empty()) throw ConfigError("synth: --out is required");
  const fs::path out(args.out);
  fs::create_directories(out);
  DirLock lock(out);

  const DatasetPair pair = build_dataset(args.spec);
  save_dataset(out / "train", pair.train);
  save_dataset(out / "test", pair.test);

  json manifest;
  manifest["total"] = pair.train.size() + pair.test.size();
  manifest["train"] = pair.train.size();
  manifest["test"] = pair.test.size();
  json counts;
  auto tally = [](const Dataset& d, bool mod) {
    std::vector<int> c(mod ? d.mod_names.size() : d.aoa_names.size(), 0);
    for (const auto& s : d.samples) {
      const int y = mod ? s.mod_label : s.aoa_label;
      if (y >= 0 && y < static_cast<int>(c.size())) ++c[y];
    }
    return c;
  };
  counts["train_modulation"] = tally(pair.train, true);
  counts["train_aoa"] = tally(pair.train, false);
  counts["test_modulation"] = tally(pair.test, true);
  counts["test_aoa"] = tally(pair.test, false);
  manifest["class_counts"] = counts;
  write_text_file(out / "manifest.json", manifest.dump(2) + "\n");
  write_config(out, synth_to_json(args));

  std::cout << "synth: wrote " << pair.train.size() << " train + "
            << pair.test.size() << " test samples to " << out.string() << "\n";
  return kOk;
}

// ---- pretrain ----------------------------------------------------------------

namespace {

json pretrain_to_json(const PretrainArgs& a) {
  json j;
  j["schema_version"] = kConfigSchemaVersion;
  j["command"] = "pretrain";
  j["dataset"] = a.dataset;
  j["out"] = a.out;
  j["epochs"] = a.cfg.epochs;
  j["batch_size"] = a.cfg.batch_size;
  j["base_lr"] = a.cfg.base_lr;
  j["weight_decay"] = a.cfg.weight_decay;
  j["tau0"] = a.cfg.tau0;
  j["tau1"] = a.cfg.tau1;
  j["clip_norm"] = a.cfg.clip_norm;
  j["mask"] = mask_to_json(a.cfg.mask);
  j["seed"] = a.cfg.seed;
  j["arch"] = a.cfg.arch;
  j["upsample_factor"] = a.cfg.upsample_factor;
  j["precision"] = a.cfg.precision;
  return j;
}

// A dataset path may be a dataset directory itself or a parent holding train/.
fs::path resolve_train_dir(const std::string& dataset) {
  const fs::path p(dataset);
  if (fs::exists(p / "header.json")) return p;
  if (fs::exists(p / "train" / "header.json")) return p / "train";
  throw IoError("no dataset found at " + dataset);
}

}  // namespace

PretrainArgs pretrain_args_from_json(const std::string& path) {
  const json j = load_config_json(path, "pretrain");
  PretrainArgs a;
  apply_keys(j, {
    {"dataset", [&](const json& v) { a.dataset = v.get<std::string>(); }},
    {"out", [&](const json& v) { a.out = v.get<std::string>(); }},
    {"epochs", [&](const json& v) { a.cfg.epochs = v.get<int>(); }},
    {"batch_size", [&](const json& v) { a.cfg.batch_size = v.get<int>(); }},
    {"base_lr", [&](const json& v) { a.cfg.base_lr = v.get<double>(); }},
    {"weight_decay", [&](const json& v) { a.cfg.weight_decay = v.get<double>(); }},
    {"tau0", [&](const json& v) { a.cfg.tau0 = v.get<double>(); }},
    {"tau1", [&](const json& v) { a.cfg.tau1 = v.get<double>(); }},
    {"clip_norm", [&](const json& v) { a.cfg.clip_norm = v.get<double>(); }},
    {"mask", [&](const json& v) { mask_from_json(v, a.cfg.mask); }},
    {"seed", [&](const json& v) { a.cfg.seed = v.get<uint64_t>(); }},
    {"arch", [&](const json& v) { a.cfg.arch = v.get<std::string>(); }},
    {"upsample_factor", [&](const json& v) { a.cfg.upsample_factor = v.get<int>(); }},
    {"precision", [&](const json& v) { a.cfg.precision = v.get<std::string>(); }},
  });
  return a;
}

int cmd_pretrain(const PretrainArgs& args) {
  if (args.out.empty()) throw ConfigError("pretrain: --out is required");
  if (args.dataset.empty()) throw ConfigError("pretrain: --dataset is required");
  args.cfg.validate();

  const Dataset data = load_dataset(resolve_train_dir(args.dataset));
  const fs::path out(args.out);
  fs::create_directories(out);
  DirLock lock(out);
  write_config(out, pretrain_to_json(args));

  const PretrainResult r =
      pretrain(args.cfg, data, (out / "checkpoint").string(),
               (out / "metrics.csv").string());
  std::cout << "pretrain: " << r.steps << " steps, loss " << r.first_loss
            << " -> " << r.last_loss << "; checkpoint at "
            << (out / "checkpoint").string() << "\n";
  return kOk;
}

// ---- eval --------------------------------------------------------------------

namespace {

json eval_to_json(const EvalArgs& a) {
  json j;
  j["schema_version"] = kConfigSchemaVersion;
  j["command"] = "eval";
  j["checkpoint"] = a.checkpoint;
  j["dataset"] = a.dataset;
  j["out"] = a.out;
  j["init"] = a.init;
  j["arch"] = a.arch;
  j["seed"] = a.seed;
  j["shots"] = a.protocol.shots;
  j["eval_seeds"] = a.protocol.seeds;
  j["methods"] = a.methods;
  j["knn_k"] = a.knn_k;
  return j;
}

}  // namespace

EvalArgs eval_args_from_json(const std::string& path) {
  const json j = load_config_json(path, "eval");
  EvalArgs a;
  apply_keys(j, {
    {"checkpoint", [&](const json& v) { a.checkpoint = v.get<std::string>(); }},
    {"dataset", [&](const json& v) { a.dataset = v.get<std::string>(); }},
    {"out", [&](const json& v) { a.out = v.get<std::string>(); }},
    {"init", [&](const json& v) { a.init = v.get<std::string>(); }},
    {"arch", [&](const json& v) { a.arch = v.get<std::string>(); }},
    {"seed", [&](const json& v) { a.seed = v.get<uint64_t>(); }},
    {"shots", [&](const json& v) { a.protocol.shots = v.get<std::vector<int>>(); }},
    {"eval_seeds", [&](const json& v) { a.protocol.seeds = v.get<int>(); }},
    {"methods", [&](const json& v) { a.methods = v.get<std::vector<std::string>>(); }},
    {"knn_k", [&](const json& v) { a.knn_k = v.get<int>(); }},
  });
  return a;
}

int cmd_eval(const EvalArgs& args) {
  if (args.out.empty()) throw ConfigError("eval: --out is required");
  if (args.dataset.empty()) throw ConfigError("eval: --dataset is required");
  if (args.init != "checkpoint" && args.init != "random")
    throw ConfigError("eval: --init must be 'checkpoint' or 'random'");
  if (args.init == "checkpoint" && args.checkpoint.empty())
    throw ConfigError("eval: --checkpoint is required unless --init random");
  for (const auto& m : args.methods)
    if (m != "linear" && m != "knn")
      throw ConfigError("eval: unknown method '" + m + "'");

  const fs::path droot(args.dataset);
  if (!fs::exists(droot / "train" / "header.json") ||
      !fs::exists(droot / "test" / "header.json"))
    throw IoError("eval: dataset must contain train/ and test/ splits");
  const Dataset train = load_dataset(droot / "train");
  const Dataset test = load_dataset(droot / "test");

  Net<float> encoder;
  std::string ckpt_id;
  if (args.init == "random") {
    Rng rng(derive_seed(args.seed, 0));
    encoder = make_encoder<float>(args.arch, rng);
    ckpt_id = "random-" + args.arch + "-" + std::to_string(args.seed);
  } else {
    encoder = load_checkpoint(args.checkpoint);
    ckpt_id = checkpoint_id(args.checkpoint);
  }

  const fs::path out(args.out);
  fs::create_directories(out);
  DirLock lock(out);
  write_config(out, eval_to_json(args));

  EmbeddingCache emb_train = extract_embeddings(encoder, train);
  EmbeddingCache emb_test = extract_embeddings(encoder, test);
  emb_train.checkpoint_id = ckpt_id;
  emb_test.checkpoint_id = ckpt_id;
  save_embeddings(out / "embeddings_train", emb_train);
  save_embeddings(out / "embeddings_test", emb_test);

  std::ofstream csv(out / "results.csv", std::ios::trunc);
  if (!csv) throw IoError("cannot write results.csv");
  csv << "task,method,shots,seed,accuracy\n";
  for (EvalTask task : {EvalTask::kModulation, EvalTask::kAoA}) {
    const EmbeddingSet tr = select_task(emb_train, task);
    const EmbeddingSet te = select_task(emb_test, task);
    for (const auto& mname : args.methods) {
      const EvalMethod method =
          mname == "linear" ? EvalMethod::kLinear : EvalMethod::kKnn;
      ShotProtocol protocol = args.protocol;
      protocol.seed_base = derive_seed(args.seed, 7);
      const auto results = few_shot_eval(tr, te, protocol, method, args.knn_k);
      for (const auto& r : results) {
        for (size_t s = 0; s < r.per_seed.size(); ++s) {
          char line[160];
          std::snprintf(line, sizeof(line), "%s,%s,%d,%zu,%.17g\n",
                        to_string(task).c_str(), mname.c_str(), r.shots, s,
                        r.per_seed[s]);
          csv << line;
        }
        std::cout << to_string(task) << " " << mname << " " << r.shots
                  << "-shot: " << r.mean * 100.0 << "% +- " << r.stddev * 100.0
                  << "%\n";
      }
    }
  }
  if (!csv) throw IoError("write failed: results.csv");
  return kOk;
}

// ---- mask-viz ------------------------------------------------------------------

namespace {

json mask_viz_to_json(const MaskVizArgs& a) {
  json j;
  j["schema_version"] = kConfigSchemaVersion;
  j["command"] = "mask-viz";
  j["out"] = a.out;
  j["fraction"] = a.fraction;
  j["seed"] = a.seed;
  j["latent_h"] = a.latent_h;
  j["latent_w"] = a.latent_w;
  j["stride"] = a.stride;
  return j;
}

}  // namespace

MaskVizArgs mask_viz_args_from_json(const std::string& path) {
  const json j = load_config_json(path, "mask-viz");
  MaskVizArgs a;
  apply_keys(j, {
    {"out", [&](const json& v) { a.out = v.get<std::string>(); }},
    {"fraction", [&](const json& v) { a.fraction = v.get<double>(); }},
    {"seed", [&](const json& v) { a.seed = v.get<uint64_t>(); }},
    {"latent_h", [&](const json& v) { a.latent_h = v.get<int>(); }},
    {"latent_w", [&](const json& v) { a.latent_w = v.get<int>(); }},
    {"stride", [&](const json& v) { a.stride = v.get<int>(); }},
  });
  return a;
}

int cmd_mask_viz(const MaskVizArgs& args) {
  if (args.out.empty()) throw ConfigError("mask-viz: --out is required");
  const fs::path out(args.out);
  fs::create_directories(out);
  DirLock lock(out);
  write_config(out, mask_viz_to_json(args));

  for (MaskGeometry g : {MaskGeometry::kRandom, MaskGeometry::kAntenna,
                         MaskGeometry::kTime, MaskGeometry::kMultiblock}) {
    MaskSpec spec;
    spec.geometry = g;
    spec.target_fraction = args.fraction;
    spec.seed = args.seed;
    const LatentMask latent = gen_mask(spec, args.latent_h, args.latent_w);
    const LatentMask full = upsample_mask(latent, args.stride);
    write_pgm(out / ("mask_" + to_string(g) + ".pgm"), full);
  }
  std::cout << "mask-viz: wrote 4 masks to " << out.string() << "\n";
  return kOk;
}

// ---- ingest ---------------------------------------------------------------------

namespace {

json ingest_to_json(const IngestArgs& a, bool tiled) {
  json j;
  j["schema_version"] = kConfigSchemaVersion;
  j["command"] = "ingest";
  j["input"] = a.input;
  j["meta"] = a.meta;
  j["out"] = a.out;
  j["window"] = a.window;
  j["stride"] = a.stride;
  j["tile_antennas"] = a.tile_antennas;
  j["train_fraction"] = a.train_fraction;
  j["tiled_antennas"] = tiled;  // provenance: 1-antenna input replicated
  return j;
}

}  // namespace

IngestArgs ingest_args_from_json(const std::string& path) {
  const json j = load_config_json(path, "ingest");
  IngestArgs a;
  apply_keys(j, {
    {"input", [&](const json& v) { a.input = v.get<std::string>(); }},
    {"meta", [&](const json& v) { a.meta = v.get<std::string>(); }},
    {"out", [&](const json& v) { a.out = v.get<std::string>(); }},
    {"window", [&](const json& v) { a.window = v.get<int>(); }},
    {"stride", [&](const json& v) { a.stride = v.get<int>(); }},
    {"tile_antennas", [&](const json& v) { a.tile_antennas = v.get<int>(); }},
    {"train_fraction", [&](const json& v) { a.train_fraction = v.get<double>(); }},
    {"tiled_antennas", [](const json&) {}},  // provenance echo, ignored on load
  });
  return a;
}

int cmd_ingest(const IngestArgs& args) {
  if (args.input.empty()) throw ConfigError("ingest: --input is required");
  if (args.out.empty()) throw ConfigError("ingest: --out is required");
  if (args.window < 1) throw ConfigError("ingest: window must be >= 1");
  const int stride = args.stride > 0 ? args.stride : args.window;

  const std::string meta_path =
      args.meta.empty() ? args.input + ".json" : args.meta;
  std::ifstream mf(meta_path);
  if (!mf) throw IoError("ingest: cannot open sidecar " + meta_path);
  json meta;
  try {
    meta = json::parse(mf);
  } catch (const std::exception& e) {
    throw IoError("ingest: corrupt sidecar JSON (" + meta_path + "): " + e.what());
  }

  int antennas = 0;
  double sample_rate = 0.0;
  int mod_label = -1, aoa_label = -1;
  try {
    antennas = meta.at("antennas").get<int>();
    sample_rate = meta.value("sample_rate", 0.0);
    if (meta.contains("labels")) {
      mod_label = meta["labels"].value("modulation", -1);
      aoa_label = meta["labels"].value("aoa", -1);
    }
  } catch (const json::exception& e) {
    throw IoError("ingest: malformed sidecar: " + std::string(e.what()));
  }
  if (antennas < 1) throw IoError("ingest: sidecar antennas must be >= 1");

  const auto raw = read_file_bytes(args.input);
  if (raw.size() % sizeof(float) != 0)
    throw IoError("ingest: input is not a float32 stream");
  const size_t nfloats = raw.size() / sizeof(float);
  if (nfloats == 0 || nfloats % (2 * static_cast<size_t>(antennas)) != 0)
    throw IoError("ingest: inconsistent antenna lengths (" +
                  std::to_string(nfloats) + " floats across " +
                  std::to_string(antennas) + " antennas)");
  const int64_t samples = static_cast<int64_t>(nfloats / (2 * antennas));
  const float* fp = reinterpret_cast<const float*>(raw.data());

  bool tiled = false;
  int out_antennas = antennas;
  if (args.tile_antennas > 0) {
    if (antennas != 1)
      throw ConfigError("ingest: --tile-antennas requires 1-antenna input");
    out_antennas = args.tile_antennas;
    tiled = true;
  }

  IQRecording rec;
  rec.antennas = out_antennas;
  rec.samples_per_antenna = samples;
  rec.sample_rate = sample_rate;
  rec.mod_label = mod_label;
  rec.aoa_label = aoa_label;
  rec.data.resize(static_cast<size_t>(2) * out_antennas * samples);
  for (int a = 0; a < out_antennas; ++a) {
    const int src = tiled ? 0 : a;
    const float* block = fp + static_cast<size_t>(src) * 2 * samples;
    for (int64_t t = 0; t < samples; ++t) {
      rec.at(0, a, t) = block[2 * t];
      rec.at(1, a, t) = block[2 * t + 1];
    }
  }
  rec.validate();

  auto windows = segment_recording(rec, args.window, stride);
  int dropped = 0;
  std::vector<IQSample> kept;
  for (auto& s : windows) {
    bool all_zero = true;
    for (float v : s.x.v)
      if (v != 0.0f) {
        all_zero = false;
        break;
      }
    if (all_zero) {
      ++dropped;  // normalization is undefined on all-zero windows
      continue;
    }
    kept.push_back(unit_max_normalize(s));
  }
  if (dropped > 0)
    std::cerr << "ingest: dropped " << dropped << " all-zero window(s)\n";
  if (kept.empty()) throw IoError("ingest: no usable windows in input");

  auto make_names = [](int label, const char* prefix) {
    std::vector<std::string> names;
    for (int i = 0; i <= label; ++i)
      names.push_back(std::string(prefix) + std::to_string(i));
    return names;
  };

  const fs::path out(args.out);
  fs::create_directories(out);
  DirLock lock(out);

  const int ntrain =
      static_cast<int>(std::lround(args.train_fraction * kept.size()));
  Dataset train, test;
  for (Dataset* d : {&train, &test}) {
    d->antennas = out_antennas;
    d->window = args.window;
    d->mod_names = make_names(mod_label, "mod");
    d->aoa_names = make_names(aoa_label, "aoa");
  }
  for (size_t i = 0; i < kept.size(); ++i)
    (static_cast<int>(i) < ntrain ? train : test).samples.push_back(std::move(kept[i]));
  save_dataset(out / "train", train);
  save_dataset(out / "test", test);
  write_config(out, ingest_to_json(args, tiled));

  std::cout << "ingest: " << train.size() << " train + " << test.size()
            << " test samples (window " << args.window << ", stride " << stride
            << ")\n";
  return kOk;
}

}  // namespace wjepa
