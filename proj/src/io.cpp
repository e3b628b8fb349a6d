// SPDX-License-Identifier: Apache-2.0
#include "wjepa/io.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cstring>
#include <fstream>
#include <json.hpp>

#include "wjepa/errors.hpp"

namespace wjepa {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

void write_bytes(const fs::path& p, const void* data, size_t len) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + p.string());
  f.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
  if (!f) throw IoError("write failed: " + p.string());
}

void write_text(const fs::path& p, const std::string& s) {
  write_bytes(p, s.data(), s.size());
}

json read_json(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw IoError("cannot open: " + p.string());
  json j;
  try {
    j = json::parse(f);
  } catch (const std::exception& e) {
    throw IoError("invalid JSON in " + p.string() + ": " + e.what());
  }
  return j;
}

std::string dump_json(const json& j) { return j.dump(2) + "\n"; }

uint16_t label_to_u16(int v) {
  return v < 0 ? 0xFFFF : static_cast<uint16_t>(v);
}
int label_from_u16(uint16_t v) { return v == 0xFFFF ? -1 : static_cast<int>(v); }

const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::kConv: return "conv";
    case LayerKind::kDepthwiseConv: return "depthwise_conv";
    case LayerKind::kPointwiseConv: return "pointwise_conv";
    case LayerKind::kMaxPool: return "maxpool";
    case LayerKind::kBatchNorm: return "batchnorm";
    case LayerKind::kReLU: return "relu";
  }
  return "?";
}

LayerKind layer_kind_from_name(const std::string& s) {
  if (s == "conv") return LayerKind::kConv;
  if (s == "depthwise_conv") return LayerKind::kDepthwiseConv;
  if (s == "pointwise_conv") return LayerKind::kPointwiseConv;
  if (s == "maxpool") return LayerKind::kMaxPool;
  if (s == "batchnorm") return LayerKind::kBatchNorm;
  if (s == "relu") return LayerKind::kReLU;
  throw IoError("unknown layer kind: " + s);
}

}  // namespace

std::vector<char> read_file_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary | std::ios::ate);
  if (!f) throw IoError("cannot open: " + p.string());
  const std::streamsize len = f.tellg();
  f.seekg(0);
  std::vector<char> buf(static_cast<size_t>(len));
  if (len > 0) f.read(buf.data(), len);
  if (!f) throw IoError("read failed: " + p.string());
  return buf;
}

// ---- dataset ---------------------------------------------------------------

void save_dataset(const fs::path& dir, const Dataset& ds) {
  fs::create_directories(dir);
  json header;
  header["version"] = kDatasetFormatVersion;
  header["count"] = ds.samples.size();
  header["channels"] = kIQChannels;
  header["antennas"] = ds.antennas;
  header["window"] = ds.window;
  header["label_names"] = {{"modulation", ds.mod_names}, {"aoa", ds.aoa_names}};
  write_text(dir / "header.json", dump_json(header));

  const size_t per = static_cast<size_t>(kIQChannels) * ds.antennas * ds.window;
  std::vector<float> data;
  data.reserve(per * ds.samples.size());
  std::vector<uint16_t> labels;
  labels.reserve(2 * ds.samples.size());
  for (const auto& s : ds.samples) {
    if (s.x.v.size() != per)
      throw IoError("dataset sample shape does not match header");
    data.insert(data.end(), s.x.v.begin(), s.x.v.end());
    labels.push_back(label_to_u16(s.mod_label));
    labels.push_back(label_to_u16(s.aoa_label));
  }
  write_bytes(dir / "data.bin", data.data(), data.size() * sizeof(float));
  write_bytes(dir / "labels.bin", labels.data(), labels.size() * sizeof(uint16_t));
}

Dataset load_dataset(const fs::path& dir) {
  const json header = read_json(dir / "header.json");
  Dataset ds;
  try {
    if (header.at("version").get<int>() != kDatasetFormatVersion)
      throw IoError("unsupported dataset version");
    if (header.at("channels").get<int>() != kIQChannels)
      throw IoError("unsupported channel count");
    ds.antennas = header.at("antennas").get<int>();
    ds.window = header.at("window").get<int>();
    const auto& names = header.at("label_names");
    ds.mod_names = names.at("modulation").get<std::vector<std::string>>();
    ds.aoa_names = names.at("aoa").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw IoError("malformed dataset header: " + std::string(e.what()));
  }
  const size_t count = header.at("count").get<size_t>();

  const auto raw = read_file_bytes(dir / "data.bin");
  const size_t per = static_cast<size_t>(kIQChannels) * ds.antennas * ds.window;
  if (raw.size() != count * per * sizeof(float))
    throw IoError("data.bin size does not match header of " + dir.string());
  const auto lab = read_file_bytes(dir / "labels.bin");
  if (lab.size() != count * 2 * sizeof(uint16_t))
    throw IoError("labels.bin size does not match header of " + dir.string());

  ds.samples.resize(count);
  const float* fp = reinterpret_cast<const float*>(raw.data());
  const uint16_t* lp = reinterpret_cast<const uint16_t*>(lab.data());
  for (size_t i = 0; i < count; ++i) {
    IQSample& s = ds.samples[i];
    s.x = Tensor4<float>(1, kIQChannels, ds.antennas, ds.window);
    std::memcpy(s.x.v.data(), fp + i * per, per * sizeof(float));
    s.mod_label = label_from_u16(lp[2 * i]);
    s.aoa_label = label_from_u16(lp[2 * i + 1]);
  }
  return ds;
}

// ---- checkpoint ------------------------------------------------------------

namespace {

struct NamedTensor {
  std::string name;
  std::vector<int64_t> shape;
  const std::vector<float>* data;
};

std::vector<NamedTensor> checkpoint_tensors(const Net<float>& net) {
  std::vector<NamedTensor> out;
  char buf[64];
  for (size_t i = 0; i < net.specs.size(); ++i) {
    const LayerSpec& sp = net.specs[i];
    std::snprintf(buf, sizeof(buf), "layer%02zu", i);
    const std::string prefix(buf);
    if (sp.has_weights()) {
      std::vector<int64_t> shape;
      if (sp.kind == LayerKind::kConv)
        shape = {sp.out_ch, sp.in_ch, sp.kh, sp.kw};
      else if (sp.kind == LayerKind::kDepthwiseConv)
        shape = {sp.in_ch, 1, sp.kh, sp.kw};
      else
        shape = {sp.out_ch, sp.in_ch};
      out.push_back({prefix + ".w", shape, &net.params[i].w});
    } else if (sp.kind == LayerKind::kBatchNorm) {
      out.push_back({prefix + ".gamma", {sp.in_ch}, &net.params[i].gamma});
      out.push_back({prefix + ".beta", {sp.in_ch}, &net.params[i].beta});
      out.push_back({prefix + ".running_mean", {sp.in_ch}, &net.norm[i].mean});
      out.push_back({prefix + ".running_var", {sp.in_ch}, &net.norm[i].var});
    }
  }
  return out;
}

}  // namespace

void save_checkpoint(const fs::path& dir, const Net<float>& net) {
  fs::create_directories(dir);
  const auto tensors = checkpoint_tensors(net);

  std::vector<float> blob;
  json tens = json::array();
  for (const auto& t : tensors) {
    json e;
    e["name"] = t.name;
    e["shape"] = t.shape;
    e["dtype"] = "float32";
    e["offset"] = blob.size() * sizeof(float);
    tens.push_back(e);
    blob.insert(blob.end(), t.data->begin(), t.data->end());
  }

  json manifest;
  manifest["version"] = kCheckpointFormatVersion;
  manifest["architecture"] = net.arch;
  manifest["id"] = hex64(fnv1a64(blob.data(), blob.size() * sizeof(float)));
  manifest["total_stride"] = net.total_stride();
  manifest["latent_channels"] = net.out_channels();
  json layers = json::array();
  for (const auto& sp : net.specs) {
    json l;
    l["kind"] = layer_kind_name(sp.kind);
    l["kernel"] = {sp.kh, sp.kw};
    l["stride"] = sp.stride;
    l["padding"] = sp.pad;
    l["in_channels"] = sp.in_ch;
    l["out_channels"] = sp.out_ch;
    layers.push_back(l);
  }
  manifest["layers"] = layers;
  manifest["tensors"] = tens;

  write_text(dir / "manifest.json", dump_json(manifest));
  write_bytes(dir / "params.bin", blob.data(), blob.size() * sizeof(float));
}

Net<float> load_checkpoint(const fs::path& dir) {
  const json manifest = read_json(dir / "manifest.json");
  Net<float> net;
  try {
    if (manifest.at("version").get<int>() != kCheckpointFormatVersion)
      throw IoError("unsupported checkpoint version");
    net.arch = manifest.at("architecture").get<std::string>();
    for (const auto& l : manifest.at("layers")) {
      LayerSpec sp;
      sp.kind = layer_kind_from_name(l.at("kind").get<std::string>());
      sp.kh = l.at("kernel")[0].get<int>();
      sp.kw = l.at("kernel")[1].get<int>();
      sp.stride = l.at("stride").get<int>();
      sp.pad = l.at("padding").get<int>();
      sp.in_ch = l.at("in_channels").get<int>();
      sp.out_ch = l.at("out_channels").get<int>();
      net.specs.push_back(sp);
    }
  } catch (const json::exception& e) {
    throw IoError("malformed checkpoint manifest: " + std::string(e.what()));
  }
  net.allocate();

  const auto raw = read_file_bytes(dir / "params.bin");
  const float* fp = reinterpret_cast<const float*>(raw.data());
  const size_t nfloats = raw.size() / sizeof(float);

  auto tensors = checkpoint_tensors(net);
  const json& tens = manifest.at("tensors");
  if (tens.size() != tensors.size())
    throw IoError("checkpoint tensor list does not match architecture");
  for (size_t i = 0; i < tensors.size(); ++i) {
    const json& e = tens[i];
    if (e.at("name").get<std::string>() != tensors[i].name)
      throw IoError("checkpoint tensor order mismatch at " + tensors[i].name);
    if (e.at("dtype").get<std::string>() != "float32")
      throw IoError("unsupported tensor dtype");
    const size_t offset = e.at("offset").get<size_t>() / sizeof(float);
    int64_t numel = 1;
    for (const auto& d : e.at("shape")) numel *= d.get<int64_t>();
    auto* dst = const_cast<std::vector<float>*>(tensors[i].data);
    if (static_cast<size_t>(numel) != dst->size())
      throw IoError("checkpoint tensor shape mismatch at " + tensors[i].name);
    if (offset + numel > nfloats) throw IoError("params.bin truncated");
    std::memcpy(dst->data(), fp + offset, numel * sizeof(float));
  }
  return net;
}

std::string checkpoint_id(const fs::path& dir) {
  const json manifest = read_json(dir / "manifest.json");
  return manifest.at("id").get<std::string>();
}

// ---- embeddings ------------------------------------------------------------

void save_embeddings(const fs::path& dir, const EmbeddingCache& e) {
  fs::create_directories(dir);
  json header;
  header["checkpoint_id"] = e.checkpoint_id;
  header["dim"] = e.dim;
  header["count"] = e.count();
  header["label_names"] = {{"modulation", e.mod_names}, {"aoa", e.aoa_names}};
  write_text(dir / "header.json", dump_json(header));
  write_bytes(dir / "embeddings.bin", e.feats.data(), e.feats.size() * sizeof(float));
  std::vector<uint16_t> labels;
  labels.reserve(2 * e.mod_labels.size());
  for (size_t i = 0; i < e.mod_labels.size(); ++i) {
    labels.push_back(label_to_u16(e.mod_labels[i]));
    labels.push_back(label_to_u16(e.aoa_labels[i]));
  }
  write_bytes(dir / "labels.bin", labels.data(), labels.size() * sizeof(uint16_t));
}

EmbeddingCache load_embeddings(const fs::path& dir) {
  const json header = read_json(dir / "header.json");
  EmbeddingCache e;
  int count = 0;
  try {
    e.checkpoint_id = header.at("checkpoint_id").get<std::string>();
    e.dim = header.at("dim").get<int>();
    count = header.at("count").get<int>();
    const auto& names = header.at("label_names");
    e.mod_names = names.at("modulation").get<std::vector<std::string>>();
    e.aoa_names = names.at("aoa").get<std::vector<std::string>>();
  } catch (const json::exception& ex) {
    throw IoError("malformed embeddings header: " + std::string(ex.what()));
  }
  const auto raw = read_file_bytes(dir / "embeddings.bin");
  if (raw.size() != static_cast<size_t>(count) * e.dim * sizeof(float))
    throw IoError("embeddings.bin size mismatch");
  e.feats.resize(static_cast<size_t>(count) * e.dim);
  std::memcpy(e.feats.data(), raw.data(), raw.size());
  const auto lab = read_file_bytes(dir / "labels.bin");
  if (lab.size() != static_cast<size_t>(count) * 2 * sizeof(uint16_t))
    throw IoError("labels.bin size mismatch");
  const uint16_t* lp = reinterpret_cast<const uint16_t*>(lab.data());
  for (int i = 0; i < count; ++i) {
    e.mod_labels.push_back(label_from_u16(lp[2 * i]));
    e.aoa_labels.push_back(label_from_u16(lp[2 * i + 1]));
  }
  return e;
}

// ---- misc ------------------------------------------------------------------

void write_pgm(const fs::path& file, const LatentMask& m) {
  std::string s = "P2\n" + std::to_string(m.w) + " " + std::to_string(m.h) + "\n255\n";
  for (int i = 0; i < m.h; ++i) {
    for (int j = 0; j < m.w; ++j) {
      s += m.at(i, j) ? "255" : "0";
      s += (j + 1 == m.w) ? '\n' : ' ';
    }
  }
  write_text(file, s);
}

uint64_t fnv1a64(const void* data, size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = 0xcbf29ce484222325ull;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hex64(uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

DirLock::DirLock(const fs::path& dir) {
  std::filesystem::create_directories(dir);
  path_ = dir / ".lock";
  fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd_ < 0)
    throw IoError("output directory is locked by another process (" +
                  path_.string() + " exists)");
}

DirLock::~DirLock() {
  if (fd_ >= 0) {
    ::close(fd_);
    std::error_code ec;
    fs::remove(path_, ec);
  }
}

}  // namespace wjepa
