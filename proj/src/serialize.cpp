#include "spm/serialize.hpp"

#include <cstring>
#include <fstream>
#include <json.hpp>
#include <stdexcept>

#include "spm/errors.hpp"

namespace spm {

namespace {

using json = nlohmann::ordered_json;

constexpr char kMagic[4] = {'S', 'P', 'M', 'G'};
constexpr std::uint32_t kVersion = 1;

struct WeightRef {
  const char* name;
  const Tensor* tensor;
};

std::vector<WeightRef> weight_entries(const LayerSpec& layer) {
  if (const auto* c = std::get_if<Conv2D>(&layer))
    return {{"weights", &c->weights}, {"bias", &c->bias}};
  if (const auto* b = std::get_if<BatchNorm>(&layer))
    return {{"gamma", &b->gamma},
            {"beta", &b->beta},
            {"moving_mean", &b->moving_mean},
            {"moving_var", &b->moving_var}};
  if (const auto* d = std::get_if<Dense>(&layer))
    return {{"weights", &d->weights}, {"bias", &d->bias}};
  return {};
}

json hyper_json(const LayerSpec& layer) {
  json h = json::object();
  if (const auto* c = std::get_if<Conv2D>(&layer)) {
    h["in_channels"] = c->in_channels;
    h["out_channels"] = c->out_channels;
    h["kernel_h"] = c->kernel_h;
    h["kernel_w"] = c->kernel_w;
    h["stride"] = c->stride;
  } else if (const auto* b = std::get_if<BatchNorm>(&layer)) {
    h["channels"] = b->channels;
    h["eps"] = b->eps;
  } else if (const auto* p = std::get_if<MaxPool>(&layer)) {
    h["pool"] = p->pool;
    h["stride"] = p->stride;
  } else if (const auto* d = std::get_if<Dense>(&layer)) {
    h["in_features"] = d->in_features;
    h["out_features"] = d->out_features;
  }
  return h;
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& buf, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[off + i])) << (8 * i);
  return v;
}

Tensor read_blob(const std::string& blob, const json& entry, std::uint64_t blob_base) {
  std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
  std::uint64_t length = entry.at("length").get<std::uint64_t>();
  std::vector<std::int64_t> shape = entry.at("shape").get<std::vector<std::int64_t>>();
  if (entry.at("dtype").get<std::string>() != "f32")
    throw FormatError("unsupported dtype '" + entry.at("dtype").get<std::string>() + "'",
                      blob_base + offset);
  std::int64_t n = shape_product(shape);
  if (length != static_cast<std::uint64_t>(n) * 4)
    throw FormatError("blob length disagrees with shape", blob_base + offset);
  if (offset + length > blob.size())
    throw FormatError("header declares more blob bytes than the file contains",
                      blob_base + offset);
  Tensor t;
  t.shape = std::move(shape);
  t.data.resize(static_cast<std::size_t>(n));
  std::memcpy(t.data.data(), blob.data() + offset, static_cast<std::size_t>(length));
  return t;
}

}  // namespace

void save_model(const ModelGraph& graph, const std::string& path) {
  json header;
  header["input_shape"] = graph.input_shape;
  header["num_classes"] = graph.num_classes;
  header["layers"] = json::array();
  std::uint64_t offset = 0;
  for (const auto& layer : graph.layers) {
    json jl;
    jl["kind"] = layer_kind(layer);
    jl["id"] = layer_id(layer);
    jl["hyper"] = hyper_json(layer);
    jl["weights"] = json::array();
    for (const auto& w : weight_entries(layer)) {
      std::uint64_t length = static_cast<std::uint64_t>(w.tensor->size()) * 4;
      jl["weights"].push_back({{"name", w.name},
                               {"shape", w.tensor->shape},
                               {"dtype", "f32"},
                               {"offset", offset},
                               {"length", length}});
      offset += length;
    }
    header["layers"].push_back(std::move(jl));
  }
  std::string hdr = header.dump();

  std::string out;
  out.reserve(12 + hdr.size() + offset);
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(hdr.size()));
  out += hdr;
  for (const auto& layer : graph.layers) {
    for (const auto& w : weight_entries(layer)) {
      const char* p = reinterpret_cast<const char*>(w.tensor->data.data());
      out.append(p, w.tensor->data.size() * 4);
    }
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("write failed for '" + path + "'");
}

ModelGraph load_model(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "'");
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  if (buf.size() < 4 || std::memcmp(buf.data(), kMagic, 4) != 0)
    throw FormatError("bad magic", 0);
  if (buf.size() < 8) throw FormatError("truncated before version field", 4);
  if (get_u32(buf, 4) != kVersion)
    throw FormatError("unsupported version " + std::to_string(get_u32(buf, 4)), 4);
  if (buf.size() < 12) throw FormatError("truncated before header length field", 8);
  std::uint64_t hdr_len = get_u32(buf, 8);
  if (12 + hdr_len > buf.size())
    throw FormatError("header length exceeds file size", 8);

  json header;
  try {
    header = json::parse(buf.substr(12, hdr_len));
  } catch (const json::exception& e) {
    throw FormatError(std::string("header JSON parse failure: ") + e.what(), 12);
  }

  std::uint64_t blob_base = 12 + hdr_len;
  std::string blob = buf.substr(static_cast<std::size_t>(blob_base));

  ModelGraph g;
  try {
    auto is = header.at("input_shape").get<std::vector<std::int64_t>>();
    if (is.size() != 3) throw FormatError("input_shape must have 3 entries", 12);
    g.input_shape = {is[0], is[1], is[2]};
    g.num_classes = header.at("num_classes").get<int>();
    for (const auto& jl : header.at("layers")) {
      std::string kind = jl.at("kind").get<std::string>();
      std::string id = jl.at("id").get<std::string>();
      const json& h = jl.at("hyper");
      auto blob_of = [&](const char* name) -> Tensor {
        for (const auto& e : jl.at("weights"))
          if (e.at("name").get<std::string>() == name) return read_blob(blob, e, blob_base);
        throw FormatError("missing weight entry '" + std::string(name) + "' for layer '" + id + "'", 12);
      };
      if (kind == "Conv2D") {
        Conv2D c;
        c.id = id;
        c.in_channels = h.at("in_channels").get<int>();
        c.out_channels = h.at("out_channels").get<int>();
        c.kernel_h = h.at("kernel_h").get<int>();
        c.kernel_w = h.at("kernel_w").get<int>();
        c.stride = h.at("stride").get<int>();
        c.weights = blob_of("weights");
        c.bias = blob_of("bias");
        g.layers.emplace_back(std::move(c));
      } else if (kind == "BatchNorm") {
        BatchNorm b;
        b.id = id;
        b.channels = h.at("channels").get<int>();
        b.eps = h.at("eps").get<float>();
        b.gamma = blob_of("gamma");
        b.beta = blob_of("beta");
        b.moving_mean = blob_of("moving_mean");
        b.moving_var = blob_of("moving_var");
        g.layers.emplace_back(std::move(b));
      } else if (kind == "ReLU") {
        g.layers.emplace_back(ReLU{id});
      } else if (kind == "MaxPool") {
        g.layers.emplace_back(MaxPool{id, h.at("pool").get<int>(), h.at("stride").get<int>()});
      } else if (kind == "Flatten") {
        g.layers.emplace_back(Flatten{id});
      } else if (kind == "Dense") {
        Dense d;
        d.id = id;
        d.in_features = h.at("in_features").get<int>();
        d.out_features = h.at("out_features").get<int>();
        d.weights = blob_of("weights");
        d.bias = blob_of("bias");
        g.layers.emplace_back(std::move(d));
      } else {
        throw FormatError("unknown layer kind '" + kind + "'", 12);
      }
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed header: ") + e.what(), 12);
  }
  validate(g);
  return g;
}

}  // namespace spm
