#include "kaprompt/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "kaprompt/errors.hpp"

namespace kaprompt {

namespace {

constexpr std::array<char, 8> kMagic = {'K', 'A', 'P', 'C', 'K', 'P', 'T', '\n'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_uint(const std::string& in, std::size_t offset, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
  }
  return v;
}

void put_tensor(std::string& out, const Tensor& t) {
  for (double d : t.values()) put_u64(out, std::bit_cast<std::uint64_t>(d));
}

nlohmann::json backbone_json(const BackboneConfig& c) {
  return {{"dim", c.dim},           {"num_patches", c.num_patches},
          {"patch_dim", c.patch_dim}, {"num_blocks", c.num_blocks},
          {"num_heads", c.num_heads}, {"ffn_dim", c.ffn_dim},
          {"seed", c.seed}};
}

BackboneConfig backbone_from_json(const nlohmann::json& j) {
  BackboneConfig c;
  c.dim = j.at("dim").get<std::size_t>();
  c.num_patches = j.at("num_patches").get<std::size_t>();
  c.patch_dim = j.at("patch_dim").get<std::size_t>();
  c.num_blocks = j.at("num_blocks").get<std::size_t>();
  c.num_heads = j.at("num_heads").get<std::size_t>();
  c.ffn_dim = j.at("ffn_dim").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

void expect_equal(const char* what, std::optional<std::size_t> wanted, std::size_t found) {
  if (wanted && *wanted != found) {
    throw CheckpointShapeError(std::string("checkpoint: ") + what + " is " +
                               std::to_string(found) + ", expected " + std::to_string(*wanted));
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const PromptPool& pool,
                     const FrozenBackbone& backbone, const ClassifierHead& head,
                     const nlohmann::json& meta) {
  std::vector<std::pair<std::string, const Tensor*>> tensors = backbone.parameters();
  tensors.emplace_back("head.weight", &head.weight);
  tensors.emplace_back("head.bias", &head.bias);
  std::vector<std::string> names;
  for (std::size_t d = 0; d < pool.num_domains(); ++d) {
    for (const PromptEntry& e : pool.domain(d)) {
      const std::string prefix =
          "pool." + std::to_string(d) + "." + std::to_string(e.id.slot) + ".";
      tensors.emplace_back(prefix + "prompt", &e.prompt);
      tensors.emplace_back(prefix + "key", &e.key);
    }
  }

  nlohmann::json directory = nlohmann::json::array();
  for (const auto& [name, t] : tensors) directory.push_back({{"name", name}, {"shape", t->shape()}});
  const nlohmann::json header = {
      {"format_version", kCheckpointVersion},
      {"backbone", backbone_json(backbone.config())},
      {"head", {{"dim", head.weight.rows()}, {"classes", head.classes()}}},
      {"pool",
       {{"prompts_per_domain", pool.prompts_per_domain()},
        {"prompt_length", pool.prompt_length()},
        {"dim", pool.dim()},
        {"num_domains", pool.num_domains()}}},
      {"tensors", directory},
      {"meta", meta}};
  const std::string header_text = header.dump();

  std::string bytes(kMagic.begin(), kMagic.end());
  put_u32(bytes, kCheckpointVersion);
  put_u64(bytes, header_text.size());
  bytes += header_text;
  for (const auto& [name, t] : tensors) put_tensor(bytes, *t);

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("checkpoint: cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("checkpoint: write to " + tmp.string() + " failed");
  }
  std::filesystem::rename(tmp, path);
}

CheckpointData load_checkpoint(const std::filesystem::path& path,
                               const CheckpointExpectation& expect) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  constexpr std::size_t kPrelude = kMagic.size() + 4 + 8;
  if (bytes.size() < kMagic.size() ||
      std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0) {
    throw CheckpointVersionError("checkpoint: " + path.string() +
                                 " does not start with the checkpoint magic");
  }
  if (bytes.size() < kPrelude) throw CheckpointTruncatedError("checkpoint: truncated prelude");
  const auto version = static_cast<std::uint32_t>(get_uint(bytes, kMagic.size(), 4));
  if (version != kCheckpointVersion) {
    throw CheckpointVersionError("checkpoint: format version " + std::to_string(version) +
                                 ", this build reads version " +
                                 std::to_string(kCheckpointVersion));
  }
  const std::uint64_t header_len = get_uint(bytes, kMagic.size() + 4, 8);
  if (header_len > bytes.size() - kPrelude) {
    throw CheckpointTruncatedError("checkpoint: header extends past end of file");
  }

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(kPrelude, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint: malformed header: ") + e.what());
  }

  try {
    const BackboneConfig bb = backbone_from_json(header.at("backbone"));
    const auto& pool_json = header.at("pool");
    const auto n_p = pool_json.at("prompts_per_domain").get<std::size_t>();
    const auto l_p = pool_json.at("prompt_length").get<std::size_t>();
    const auto dim = pool_json.at("dim").get<std::size_t>();
    const auto domains = pool_json.at("num_domains").get<std::size_t>();
    const auto classes = header.at("head").at("classes").get<std::size_t>();

    expect_equal("prompts per domain", expect.prompts_per_domain, n_p);
    expect_equal("prompt length", expect.prompt_length, l_p);
    expect_equal("embedding dim", expect.dim, dim);
    expect_equal("class count", expect.classes, classes);
    if (dim != bb.dim) {
      throw CheckpointShapeError("checkpoint: pool dim " + std::to_string(dim) +
                                 " differs from backbone dim " + std::to_string(bb.dim));
    }

    // Expected directory, derived from the structural fields.
    FrozenBackbone reference(bb);
    std::vector<Shape> shapes;
    for (const auto& [name, t] : reference.parameters()) shapes.push_back(t->shape());
    const std::size_t backbone_count = shapes.size();
    shapes.push_back({bb.dim, classes});
    shapes.push_back({classes});
    for (std::size_t i = 0; i < domains * n_p; ++i) {
      shapes.push_back({l_p, dim});
      shapes.push_back({dim});
    }

    const auto& directory = header.at("tensors");
    if (directory.size() != shapes.size()) {
      throw CheckpointShapeError("checkpoint: directory lists " +
                                 std::to_string(directory.size()) + " tensors, expected " +
                                 std::to_string(shapes.size()));
    }
    std::size_t total = 0;
    for (std::size_t i = 0; i < shapes.size(); ++i) {
      const auto shape = directory[i].at("shape").get<Shape>();
      if (shape != shapes[i]) {
        throw CheckpointShapeError("checkpoint: tensor " +
                                   directory[i].at("name").get<std::string>() + " has shape " +
                                   shape_string(shape) + ", expected " +
                                   shape_string(shapes[i]));
      }
      total += shape_size(shape);
    }
    const std::size_t payload_offset = kPrelude + header_len;
    const std::size_t payload_bytes = bytes.size() - payload_offset;
    if (payload_bytes < total * 8) {
      throw CheckpointTruncatedError("checkpoint: payload holds " +
                                     std::to_string(payload_bytes) + " bytes, expected " +
                                     std::to_string(total * 8));
    }
    if (payload_bytes > total * 8) {
      throw CheckpointError("checkpoint: trailing bytes after payload");
    }

    std::size_t cursor = payload_offset;
    auto read_tensor = [&](const Shape& shape) {
      std::vector<double> values(shape_size(shape));
      for (double& v : values) {
        v = std::bit_cast<double>(get_uint(bytes, cursor, 8));
        cursor += 8;
      }
      return Tensor(shape, std::move(values));
    };

    std::vector<Tensor> backbone_values;
    for (std::size_t i = 0; i < backbone_count; ++i) backbone_values.push_back(read_tensor(shapes[i]));
    ClassifierHead head;
    head.weight = read_tensor(shapes[backbone_count]);
    head.bias = read_tensor(shapes[backbone_count + 1]);

    PromptPool pool(n_p, l_p, dim);
    for (std::size_t d = 0; d < domains; ++d) {
      PromptSet set;
      for (std::size_t s = 0; s < n_p; ++s) {
        PromptEntry e;
        e.prompt = read_tensor({l_p, dim});
        e.key = read_tensor({dim});
        e.id = {d, s};
        set.push_back(std::move(e));
      }
      pool.add_domain(std::move(set));
    }

    return CheckpointData{std::move(pool),
                          FrozenBackbone::from_parameters(bb, std::move(backbone_values)),
                          std::move(head), header.value("meta", nlohmann::json::object())};
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint: malformed header: ") + e.what());
  }
}

}  // namespace kaprompt
