#include "feds2t/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

namespace feds2t {

namespace {

constexpr std::uint16_t kFormatVersion = 1;

void put_u16(Bytes& out, std::uint16_t v) {
  out.push_back(v & 0xff);
  out.push_back((v >> 8) & 0xff);
}

void put_u32(Bytes& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back((v >> (8 * i)) & 0xff);
}

void put_u64(Bytes& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back((v >> (8 * i)) & 0xff);
}

void put_f32(Bytes& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

void put_magic(Bytes& out, const char magic[4]) {
  out.insert(out.end(), magic, magic + 4);
  put_u16(out, kFormatVersion);
}

template <typename Derived>
void put_matrix(Bytes& out, const Eigen::MatrixBase<Derived>& m) {
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c)
      put_f32(out, static_cast<float>(m(r, c)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void expect_magic(const char magic[4]) {
    if (bytes_.size() < 6 || std::memcmp(bytes_.data(), magic, 4) != 0)
      throw std::runtime_error(std::string("bad magic, expected ") +
                               std::string(magic, 4));
    at_ = 4;
    const std::uint16_t version = u16();
    if (version != kFormatVersion)
      throw std::runtime_error("unsupported format version " +
                               std::to_string(version));
  }

  std::uint8_t u8() {
    need(1);
    return bytes_[at_++];
  }

  std::uint16_t u16() {
    need(2);
    std::uint16_t v = bytes_[at_] | (std::uint16_t(bytes_[at_ + 1]) << 8);
    at_ += 2;
    return v;
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes_[at_ + i]) << (8 * i);
    at_ += 4;
    return v;
  }

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(bytes_[at_ + i]) << (8 * i);
    at_ += 8;
    return v;
  }

  float f32() { return std::bit_cast<float>(u32()); }

  template <typename Dest>
  void read_matrix(Dest&& m) {
    for (Index r = 0; r < m.rows(); ++r)
      for (Index c = 0; c < m.cols(); ++c)
        m(r, c) = static_cast<double>(f32());
  }

  void expect_end() const {
    if (at_ != bytes_.size()) throw std::runtime_error("trailing bytes in payload");
  }

 private:
  void need(std::size_t n) const {
    if (at_ + n > bytes_.size()) throw std::runtime_error("truncated payload");
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t at_ = 0;
};

void put_config(Bytes& out, const ModelConfig& config) {
  put_u32(out, static_cast<std::uint32_t>(config.feature_dim));
  put_u32(out, static_cast<std::uint32_t>(config.hidden_dim));
  put_u32(out, static_cast<std::uint32_t>(config.vocab_size));
  put_u32(out, config.lora_targets);
  put_u32(out, static_cast<std::uint32_t>(config.lora_rank));
  put_f32(out, static_cast<float>(config.lora_alpha));
}

ModelConfig read_config(Reader& r) {
  ModelConfig config;
  config.feature_dim = static_cast<int>(r.u32());
  config.hidden_dim = static_cast<int>(r.u32());
  config.vocab_size = static_cast<int>(r.u32());
  config.lora_targets = r.u32();
  config.lora_rank = static_cast<int>(r.u32());
  config.lora_alpha = static_cast<double>(r.f32());
  return config;
}

}  // namespace

Bytes serialize_parameters(const ModelConfig& config, const ParameterSet& params) {
  Bytes out;
  put_magic(out, "FS2T");
  put_config(out, config);
  params.visit([&](const char*, const auto& m) { put_matrix(out, m); });
  return out;
}

std::pair<ModelConfig, ParameterSet> deserialize_parameters(
    std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.expect_magic("FS2T");
  const ModelConfig config = read_config(r);
  ParameterSet params = zero_parameters(config);
  params.visit([&](const char*, auto& m) { r.read_matrix(m); });
  r.expect_end();
  return {config, std::move(params)};
}

Bytes serialize_adapter(const ModelConfig& config, const LoraAdapter& adapter) {
  Bytes out;
  put_magic(out, "FLRA");
  put_config(out, config);
  for (const auto& f : adapter.factors) {
    put_matrix(out, f.a);
    put_matrix(out, f.b);
  }
  return out;
}

std::pair<ModelConfig, LoraAdapter> deserialize_adapter(
    std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.expect_magic("FLRA");
  const ModelConfig config = read_config(r);
  LoraAdapter adapter = zero_adapter(config);
  for (auto& f : adapter.factors) {
    r.read_matrix(f.a);
    r.read_matrix(f.b);
  }
  r.expect_end();
  return {config, std::move(adapter)};
}

Bytes serialize_datastore(const Datastore& store) {
  Bytes out;
  put_magic(out, "FMEM");
  put_u32(out, static_cast<std::uint32_t>(store.dim()));
  put_u64(out, static_cast<std::uint64_t>(store.size()));
  put_matrix(out, store.keys);
  for (TokenId v : store.values) put_u32(out, static_cast<std::uint32_t>(v));
  return out;
}

Datastore deserialize_datastore(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.expect_magic("FMEM");
  const Index dim = static_cast<Index>(r.u32());
  const Index count = static_cast<Index>(r.u64());
  Datastore store;
  store.keys.resize(count, dim);
  r.read_matrix(store.keys);
  store.values.resize(static_cast<std::size_t>(count));
  for (auto& v : store.values) v = static_cast<TokenId>(r.u32());
  r.expect_end();
  return store;
}

Bytes serialize_index(const IvfPqIndex& index) {
  Bytes out;
  put_magic(out, "FIVF");
  put_u32(out, static_cast<std::uint32_t>(index.dim));
  put_u32(out, static_cast<std::uint32_t>(index.ncluster));
  put_u32(out, static_cast<std::uint32_t>(index.pq_subspaces));
  put_u32(out, static_cast<std::uint32_t>(index.pq_centroids));
  put_matrix(out, index.centroids);
  for (const Matrix& cb : index.codebooks) put_matrix(out, cb);
  for (const auto& list : index.lists) {
    put_u64(out, list.rows.size());
    for (std::int64_t row : list.rows) put_u64(out, static_cast<std::uint64_t>(row));
    for (TokenId v : list.values) put_u32(out, static_cast<std::uint32_t>(v));
    if (index.pq_subspaces > 0)
      out.insert(out.end(), list.codes.begin(), list.codes.end());
    else
      put_matrix(out, list.raw);
  }
  return out;
}

IvfPqIndex deserialize_index(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.expect_magic("FIVF");
  IvfPqIndex index;
  index.dim = static_cast<Index>(r.u32());
  index.ncluster = static_cast<int>(r.u32());
  index.pq_subspaces = static_cast<int>(r.u32());
  index.pq_centroids = static_cast<int>(r.u32());
  index.centroids.resize(index.ncluster, index.dim);
  r.read_matrix(index.centroids);
  if (index.pq_subspaces > 0) {
    const Index dsub = index.dim / index.pq_subspaces;
    index.codebooks.assign(index.pq_subspaces, Matrix::Zero(256, dsub));
    for (Matrix& cb : index.codebooks) r.read_matrix(cb);
  }
  index.lists.resize(index.ncluster);
  for (auto& list : index.lists) {
    const std::size_t count = r.u64();
    list.rows.resize(count);
    for (auto& row : list.rows) row = static_cast<std::int64_t>(r.u64());
    list.values.resize(count);
    for (auto& v : list.values) v = static_cast<TokenId>(r.u32());
    if (index.pq_subspaces > 0) {
      list.codes.resize(count * static_cast<std::size_t>(index.pq_subspaces));
      for (auto& code : list.codes) code = r.u8();
    } else {
      list.raw.resize(static_cast<Index>(count), index.dim);
      r.read_matrix(list.raw);
    }
  }
  r.expect_end();
  return index;
}

void write_bytes(const std::filesystem::path& path, const Bytes& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Bytes read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw std::runtime_error("cannot open for reading: " + path.string());
  const std::streamsize size = in.tellg();
  in.seekg(0);
  Bytes bytes(static_cast<std::size_t>(size));
  in.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!in) throw std::runtime_error("read failed: " + path.string());
  return bytes;
}

namespace {

const char* split_name(int split) {
  switch (split) {
    case 0: return "train";
    case 1: return "dev";
    case 2: return "test";
  }
  return "?";
}

void append_examples(std::ostringstream& records, Bytes& blob, int client_id,
                     int split, std::span<const Example> examples) {
  for (const Example& ex : examples) {
    records << "client=" << client_id << " split=" << split_name(split)
            << " tokens=";
    for (std::size_t i = 0; i < ex.tokens.size(); ++i) {
      if (i) records << ',';
      records << ex.tokens[i];
    }
    records << " frames_offset=" << blob.size()
            << " frames_count=" << ex.frames.size() << "\n";
    // Frame-major: column s holds frame s; columns are contiguous.
    for (Index s = 0; s < ex.frames.cols(); ++s)
      for (Index d = 0; d < ex.frames.rows(); ++d)
        put_f32(blob, static_cast<float>(ex.frames(d, s)));
  }
}

}  // namespace

void save_world(const std::filesystem::path& records_path,
                const std::filesystem::path& blob_path, const WorldFile& world) {
  std::ostringstream records;
  records << "feds2t-dataset 1 vocab=" << world.vocab_size
          << " feature_dim=" << world.feature_dim << "\n";
  Bytes blob;
  auto emit = [&](const ClientDataset& c) {
    append_examples(records, blob, c.client_id, 0, c.train);
    append_examples(records, blob, c.client_id, 1, c.dev);
    append_examples(records, blob, c.client_id, 2, c.test);
  };
  if (world.public_set) emit(*world.public_set);
  for (const ClientDataset& c : world.clients) emit(c);

  std::ofstream out(records_path, std::ios::trunc);
  if (!out)
    throw std::runtime_error("cannot open for writing: " + records_path.string());
  out << records.str();
  if (!out) throw std::runtime_error("write failed: " + records_path.string());
  write_bytes(blob_path, blob);
}

WorldFile load_world(const std::filesystem::path& records_path,
                     const std::filesystem::path& blob_path) {
  std::ifstream in(records_path);
  if (!in)
    throw std::runtime_error("cannot open for reading: " + records_path.string());
  const Bytes blob = read_bytes(blob_path);

  WorldFile world;
  std::string header;
  std::getline(in, header);
  std::istringstream hs(header);
  std::string tag;
  int version = 0;
  hs >> tag >> version;
  if (tag != "feds2t-dataset" || version != 1)
    throw std::runtime_error("not a feds2t dataset records file");
  std::string field;
  while (hs >> field) {
    if (field.rfind("vocab=", 0) == 0) world.vocab_size = std::stoi(field.substr(6));
    if (field.rfind("feature_dim=", 0) == 0)
      world.feature_dim = std::stoi(field.substr(12));
  }
  if (world.vocab_size < 4 || world.feature_dim < 1)
    throw std::runtime_error("dataset header missing vocab/feature_dim");

  std::map<int, ClientDataset> by_id;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    int client_id = 0, split = -1;
    Example ex;
    std::size_t offset = 0, count = 0;
    while (ls >> field) {
      if (field.rfind("client=", 0) == 0) {
        client_id = std::stoi(field.substr(7));
      } else if (field.rfind("split=", 0) == 0) {
        const std::string s = field.substr(6);
        split = s == "train" ? 0 : s == "dev" ? 1 : s == "test" ? 2 : -1;
      } else if (field.rfind("tokens=", 0) == 0) {
        std::istringstream ts(field.substr(7));
        std::string tok;
        while (std::getline(ts, tok, ',')) ex.tokens.push_back(std::stoi(tok));
      } else if (field.rfind("frames_offset=", 0) == 0) {
        offset = std::stoull(field.substr(14));
      } else if (field.rfind("frames_count=", 0) == 0) {
        count = std::stoull(field.substr(13));
      }
    }
    if (split < 0) throw std::runtime_error("bad split in record: " + line);
    if (count % world.feature_dim != 0 || offset + count * 4 > blob.size())
      throw std::runtime_error("bad frame reference in record: " + line);
    const Index frames = static_cast<Index>(count) / world.feature_dim;
    ex.frames.resize(world.feature_dim, frames);
    Reader fr(std::span<const std::uint8_t>(blob.data() + offset, count * 4));
    for (Index s = 0; s < frames; ++s)
      for (Index d = 0; d < world.feature_dim; ++d) ex.frames(d, s) = fr.f32();

    auto [it, inserted] = by_id.try_emplace(client_id);
    if (inserted) it->second.client_id = client_id;
    (split == 0 ? it->second.train : split == 1 ? it->second.dev : it->second.test)
        .push_back(std::move(ex));
  }

  for (auto& [id, client] : by_id) {
    if (id == -1)
      world.public_set = std::move(client);
    else
      world.clients.push_back(std::move(client));
  }
  return world;
}

}  // namespace feds2t
