#include "daclora/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <vector>

#include <json.hpp>

namespace dac {

namespace {

using nlohmann::json;

constexpr char kCheckpointMagic[8] = {'D', 'A', 'C', 'L', 'C', 'K', 'P', 'T'};
constexpr char kSnapshotMagic[8] = {'D', 'A', 'C', 'L', 'D', 'A', 'T', 'A'};

struct NamedArray {
  std::vector<std::size_t> dims;
  bool frozen = false;
  std::vector<double> f64;
  std::vector<std::int64_t> i64;  // used when dtype is integer
  bool is_int = false;
};

void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

void write_container(const std::string& path, const char magic[8], std::uint32_t version,
                     const json& meta, const std::map<std::string, NamedArray>& arrays) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(magic, 8);
  write_u32(out, version);
  const std::string meta_text = meta.dump();
  write_u64(out, meta_text.size());
  out.write(meta_text.data(), static_cast<std::streamsize>(meta_text.size()));
  write_u64(out, arrays.size());
  for (const auto& [name, arr] : arrays) {
    write_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    out.put(arr.frozen ? 1 : 0);
    out.put(arr.is_int ? 1 : 0);
    write_u32(out, static_cast<std::uint32_t>(arr.dims.size()));
    for (std::size_t d : arr.dims) write_u64(out, d);
    if (arr.is_int)
      out.write(reinterpret_cast<const char*>(arr.i64.data()),
                static_cast<std::streamsize>(arr.i64.size() * sizeof(std::int64_t)));
    else
      out.write(reinterpret_cast<const char*>(arr.f64.data()),
                static_cast<std::streamsize>(arr.f64.size() * sizeof(double)));
  }
  if (!out) throw IoError("write to '" + path + "' failed");
}

void read_container(const std::string& path, const char magic[8],
                    std::uint32_t supported_version, const char* kind, json& meta,
                    std::map<std::string, NamedArray>& arrays) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(std::string("cannot open '") + path + "' for reading");
  char file_magic[8];
  in.read(file_magic, 8);
  if (!in || std::memcmp(file_magic, magic, 8) != 0)
    throw IoError("'" + path + "' is not a " + kind + " file");
  const std::uint32_t version = read_u32(in);
  if (version != supported_version)
    throw IoError("'" + path + "': unsupported " + kind + " version " +
                  std::to_string(version) + ", this build reads version " +
                  std::to_string(supported_version));
  const std::uint64_t meta_len = read_u64(in);
  std::string meta_text(meta_len, '\0');
  in.read(meta_text.data(), static_cast<std::streamsize>(meta_len));
  try {
    meta = json::parse(meta_text);
  } catch (const json::exception& e) {
    throw IoError("'" + path + "': corrupt metadata: " + e.what());
  }
  const std::uint64_t count = read_u64(in);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = read_u32(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    NamedArray arr;
    arr.frozen = in.get() == 1;
    arr.is_int = in.get() == 1;
    const std::uint32_t ndim = read_u32(in);
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      arr.dims.push_back(read_u64(in));
      numel *= arr.dims.back();
    }
    if (arr.is_int) {
      arr.i64.resize(numel);
      in.read(reinterpret_cast<char*>(arr.i64.data()),
              static_cast<std::streamsize>(numel * sizeof(std::int64_t)));
    } else {
      arr.f64.resize(numel);
      in.read(reinterpret_cast<char*>(arr.f64.data()),
              static_cast<std::streamsize>(numel * sizeof(double)));
    }
    if (!in) throw IoError("'" + path + "': truncated " + kind + " file");
    arrays.emplace(std::move(name), std::move(arr));
  }
}

NamedArray tensor_array(const Tensor& t, bool frozen) {
  NamedArray arr;
  arr.dims = t.shape();
  arr.frozen = frozen;
  arr.f64 = t.values();
  return arr;
}

Tensor array_tensor(const std::map<std::string, NamedArray>& arrays,
                    const std::string& name, const std::string& path) {
  auto it = arrays.find(name);
  if (it == arrays.end())
    throw IoError("'" + path + "': missing tensor '" + name + "'");
  return Tensor(it->second.dims, it->second.f64);
}

void put_layer(std::map<std::string, NamedArray>& arrays, const std::string& prefix,
               const LoraLinear& layer) {
  arrays[prefix + ".W"] = tensor_array(layer.W, true);
  if (layer.has_bias()) arrays[prefix + ".bias"] = tensor_array(layer.bias, true);
  arrays[prefix + ".A"] = tensor_array(layer.A, false);
  arrays[prefix + ".B"] = tensor_array(layer.B, false);
}

LoraLinear get_layer(const std::map<std::string, NamedArray>& arrays,
                     const std::string& prefix, double gamma, std::size_t rank,
                     const std::string& path) {
  LoraLinear layer;
  layer.W = array_tensor(arrays, prefix + ".W", path);
  if (arrays.count(prefix + ".bias")) layer.bias = array_tensor(arrays, prefix + ".bias", path);
  layer.A = array_tensor(arrays, prefix + ".A", path);
  layer.B = array_tensor(arrays, prefix + ".B", path);
  layer.gamma = gamma;
  layer.rank = rank;
  return layer;
}

}  // namespace

void save_checkpoint(const DualEncoderModel& model, const std::string& path) {
  json meta;
  meta["kind"] = "model";
  meta["d_pixels"] = model.cfg.d_pixels;
  meta["hidden"] = model.cfg.hidden;
  meta["embed_dim"] = model.cfg.embed_dim;
  meta["num_classes"] = model.cfg.num_classes;
  meta["rank"] = model.cfg.rank;
  meta["gamma"] = model.cfg.gamma;
  meta["tau"] = model.cfg.tau;
  meta["use_bias"] = model.cfg.use_bias;
  meta["adapt_class_projection"] = model.cfg.adapt_class_projection;
  meta["num_layers"] = model.layers.size();

  std::map<std::string, NamedArray> arrays;
  for (std::size_t l = 0; l < model.layers.size(); ++l)
    put_layer(arrays, "layers." + std::to_string(l), model.layers[l]);
  arrays["class_embeddings"] = tensor_array(model.class_embeddings, true);
  if (model.class_projection) put_layer(arrays, "class_projection", *model.class_projection);
  write_container(path, kCheckpointMagic, kCheckpointVersion, meta, arrays);
}

DualEncoderModel load_checkpoint(const std::string& path) {
  json meta;
  std::map<std::string, NamedArray> arrays;
  read_container(path, kCheckpointMagic, kCheckpointVersion, "checkpoint", meta, arrays);

  DualEncoderModel model;
  try {
    model.cfg.d_pixels = meta.at("d_pixels").get<std::size_t>();
    model.cfg.hidden = meta.at("hidden").get<std::vector<std::size_t>>();
    model.cfg.embed_dim = meta.at("embed_dim").get<std::size_t>();
    model.cfg.num_classes = meta.at("num_classes").get<std::size_t>();
    model.cfg.rank = meta.at("rank").get<std::size_t>();
    model.cfg.gamma = meta.at("gamma").get<double>();
    model.cfg.tau = meta.at("tau").get<double>();
    model.cfg.use_bias = meta.at("use_bias").get<bool>();
    model.cfg.adapt_class_projection = meta.at("adapt_class_projection").get<bool>();
  } catch (const json::exception& e) {
    throw IoError("'" + path + "': bad checkpoint metadata: " + e.what());
  }
  const auto num_layers = meta.at("num_layers").get<std::size_t>();
  for (std::size_t l = 0; l < num_layers; ++l)
    model.layers.push_back(get_layer(arrays, "layers." + std::to_string(l),
                                     model.cfg.gamma, model.cfg.rank, path));
  model.class_embeddings = array_tensor(arrays, "class_embeddings", path);
  if (model.cfg.adapt_class_projection)
    model.class_projection =
        get_layer(arrays, "class_projection", model.cfg.gamma, model.cfg.rank, path);
  return model;
}

void save_dataset_snapshot(const FewShotDataset& dataset, const std::string& path) {
  json meta;
  meta["kind"] = "dataset";
  meta["num_classes"] = dataset.cfg.num_classes;
  meta["shots"] = dataset.cfg.shots;
  meta["image_size"] = dataset.cfg.image_size;
  meta["test_per_class"] = dataset.cfg.test_per_class;
  meta["pretrain_per_class"] = dataset.cfg.pretrain_per_class;
  meta["difficulty"] = dataset.cfg.difficulty;
  meta["seed"] = dataset.cfg.seed;

  std::map<std::string, NamedArray> arrays;
  auto put_split = [&arrays](const std::string& name, const Split& split) {
    arrays[name + ".images"] = tensor_array(split.images, false);
    NamedArray labels;
    labels.is_int = true;
    labels.dims = {split.labels.size()};
    for (int y : split.labels) labels.i64.push_back(y);
    arrays[name + ".labels"] = std::move(labels);
  };
  put_split("train", dataset.train);
  put_split("test", dataset.test);
  put_split("pretrain", dataset.pretrain);
  write_container(path, kSnapshotMagic, kSnapshotVersion, meta, arrays);
}

FewShotDataset load_dataset_snapshot(const std::string& path) {
  json meta;
  std::map<std::string, NamedArray> arrays;
  read_container(path, kSnapshotMagic, kSnapshotVersion, "dataset snapshot", meta, arrays);

  FewShotDataset ds;
  try {
    ds.cfg.num_classes = meta.at("num_classes").get<int>();
    ds.cfg.shots = meta.at("shots").get<int>();
    ds.cfg.image_size = meta.at("image_size").get<int>();
    ds.cfg.test_per_class = meta.at("test_per_class").get<int>();
    ds.cfg.pretrain_per_class = meta.at("pretrain_per_class").get<int>();
    ds.cfg.difficulty = meta.at("difficulty").get<double>();
    ds.cfg.seed = meta.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw IoError("'" + path + "': bad snapshot metadata: " + e.what());
  }
  auto get_split = [&arrays, &path](const std::string& name) {
    Split split;
    split.images = array_tensor(arrays, name + ".images", path);
    auto it = arrays.find(name + ".labels");
    if (it == arrays.end()) throw IoError("'" + path + "': missing labels for " + name);
    for (std::int64_t y : it->second.i64) split.labels.push_back(static_cast<int>(y));
    return split;
  };
  ds.train = get_split("train");
  ds.test = get_split("test");
  ds.pretrain = get_split("pretrain");
  return ds;
}

}  // namespace dac
