#include "qf/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "qf/error.hpp"
#include "qf/io.hpp"

namespace qf {

namespace {

constexpr char kMagic[] = "QFCKPT1\n";
constexpr std::size_t kMagicLen = 8;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void put_u64(std::string& out, std::uint64_t v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.append(buf, 8);
}

class Reader {
 public:
  Reader(const std::string& data, const std::filesystem::path& path) : data_(data), path_(path) {}

  std::uint64_t u64() {
    std::uint64_t v = 0;
    std::memcpy(&v, take(8), 8);
    return v;
  }
  const char* take(std::size_t n) {
    require(pos_ + n <= data_.size(), ErrorKind::kIo, "truncated checkpoint " + path_.string());
    const char* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  const std::string& data_;
  const std::filesystem::path& path_;
  std::size_t pos_ = 0;
};

}  // namespace

nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"model_dim", c.model_dim}, {"n_layers", c.n_layers},       {"n_heads", c.n_heads},
          {"vocab_size", c.vocab_size}, {"max_seq_len", c.max_seq_len}, {"rope_base", c.rope_base},
          {"ffn_hidden", c.hidden()},   {"seed", c.seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.model_dim = j.value("model_dim", c.model_dim);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
  c.rope_base = j.value("rope_base", c.rope_base);
  c.ffn_hidden = j.value("ffn_hidden", c.ffn_hidden);
  c.seed = j.value("seed", c.seed);
  return c;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto& st = ckpt.state;
  nlohmann::json header;
  header["format"] = "qf-checkpoint/1";
  header["config"] = model_config_to_json(st.config);
  header["step"] = ckpt.step;
  header["rng_state"] = ckpt.rng_state;
  header["provenance"] = ckpt.provenance;
  header["tensors"] = nlohmann::json::array();
  for (const auto& t : st.layout.tensors) header["tensors"].push_back(t.name);
  const std::string text = header.dump();

  std::string out(kMagic, kMagicLen);
  put_u64(out, text.size());
  out += text;
  for (const auto& t : st.layout.tensors) {
    put_u64(out, static_cast<std::uint64_t>(t.rows));
    put_u64(out, static_cast<std::uint64_t>(t.cols));
    out.append(reinterpret_cast<const char*>(st.params.data() + t.offset), t.size() * sizeof(float));
  }
  atomic_write_file(path, out);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  const std::string data = read_file(path);
  Reader in(data, path);
  require(std::memcmp(in.take(kMagicLen), kMagic, kMagicLen) == 0, ErrorKind::kIo, "not a checkpoint: " + path.string());
  const std::uint64_t len = in.u64();
  const auto header = nlohmann::json::parse(std::string(in.take(len), len));

  Checkpoint ckpt;
  ckpt.state.config = model_config_from_json(header.at("config"));
  ckpt.state.layout = ParamLayout::build(ckpt.state.config);
  ckpt.state.params.assign(ckpt.state.layout.total, 0.0f);
  ckpt.step = header.at("step").get<std::uint64_t>();
  ckpt.rng_state = header.value("rng_state", "");
  ckpt.provenance = header.value("provenance", "");

  const auto names = header.at("tensors").get<std::vector<std::string>>();
  require(names.size() == ckpt.state.layout.tensors.size(), ErrorKind::kIo, "checkpoint tensor count mismatch");
  for (const auto& name : names) {
    const auto& info = ckpt.state.layout.find(name);
    const auto rows = in.u64();
    const auto cols = in.u64();
    require(rows == static_cast<std::uint64_t>(info.rows) && cols == static_cast<std::uint64_t>(info.cols),
            ErrorKind::kIo, "checkpoint shape mismatch for " + name);
    std::memcpy(ckpt.state.params.data() + info.offset, in.take(info.size() * sizeof(float)), info.size() * sizeof(float));
  }
  require(in.done(), ErrorKind::kIo, "trailing bytes in checkpoint " + path.string());
  return ckpt;
}

}  // namespace qf
