#include "ppgn/pipeline/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "ppgn/errors.hpp"

PPGN_NAMESPACE_BEGIN

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

class Writer {
 public:
  template <typename T>
  void pod(T v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
  void str(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    bytes.insert(bytes.end(), s.begin(), s.end());
  }
  std::vector<char> bytes;
};

class Reader {
 public:
  explicit Reader(const std::vector<char>& b) : bytes_(b) {}
  template <typename T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    need(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  void raw(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw IoError("truncated checkpoint");
  }
  const std::vector<char>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

Checkpoint capture_checkpoint(const PpgnModel& model, std::uint64_t fingerprint, long step,
                              std::string config_text, std::vector<AnchorWh> priors,
                              std::vector<std::string> vocabulary) {
  Checkpoint ckpt;
  ckpt.config_fingerprint = fingerprint;
  ckpt.step = step;
  ckpt.config_text = std::move(config_text);
  ckpt.anchor_priors = std::move(priors);
  ckpt.vocabulary = std::move(vocabulary);
  for (const auto* list : {&model.parameters(), &model.buffers()}) {
    for (const auto& nt : *list) {
      TensorRecord rec;
      rec.name = nt.name;
      rec.shape = nt.tensor.shape();
      rec.values.assign(nt.tensor.data().begin(), nt.tensor.data().end());
      ckpt.tensors.push_back(std::move(rec));
    }
  }
  return ckpt;
}

void restore_checkpoint(PpgnModel& model, const Checkpoint& ckpt) {
  const std::size_t expected = model.parameters().size() + model.buffers().size();
  if (ckpt.tensors.size() != expected) {
    throw InvalidInputError("checkpoint holds " + std::to_string(ckpt.tensors.size()) +
                            " tensors, model expects " + std::to_string(expected));
  }
  for (const auto& rec : ckpt.tensors) {
    nn::Tensor& t = model.tensor(rec.name);
    if (t.shape() != rec.shape) {
      throw InvalidInputError("checkpoint tensor '" + rec.name + "' has shape " +
                              nn::shape_str(rec.shape) + ", model expects " +
                              nn::shape_str(t.shape()));
    }
    auto dst = t.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<Scalar>(rec.values[i]);
  }
}

std::vector<char> serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes.insert(w.bytes.end(), std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  w.pod(ckpt.config_fingerprint);
  w.pod(static_cast<std::int64_t>(ckpt.step));
  w.str(ckpt.config_text);
  w.pod(static_cast<std::uint32_t>(ckpt.anchor_priors.size()));
  for (const auto& p : ckpt.anchor_priors) {
    w.pod(p.w);
    w.pod(p.h);
  }
  w.pod(static_cast<std::uint32_t>(ckpt.vocabulary.size()));
  for (const auto& word : ckpt.vocabulary) w.str(word);
  w.pod(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& rec : ckpt.tensors) {
    w.str(rec.name);
    w.pod(static_cast<std::uint32_t>(rec.shape.size()));
    for (auto d : rec.shape) w.pod(static_cast<std::uint32_t>(d));
    const auto* p = reinterpret_cast<const char*>(rec.values.data());
    w.bytes.insert(w.bytes.end(), p, p + rec.values.size() * sizeof(float));
  }
  return std::move(w.bytes);
}

Checkpoint deserialize_checkpoint(const std::vector<char>& bytes) {
  if (bytes.size() < sizeof(kCheckpointMagic) ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw IoError("not a PPGN checkpoint (bad magic)");
  }
  const std::vector<char> body(bytes.begin() + sizeof(kCheckpointMagic), bytes.end());
  Reader r(body);
  Checkpoint ckpt;
  ckpt.config_fingerprint = r.pod<std::uint64_t>();
  ckpt.step = static_cast<long>(r.pod<std::int64_t>());
  ckpt.config_text = r.str();
  const auto n_priors = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_priors; ++i) {
    const double pw = r.pod<double>();
    const double ph = r.pod<double>();
    ckpt.anchor_priors.push_back({pw, ph});
  }
  const auto n_words = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_words; ++i) ckpt.vocabulary.push_back(r.str());
  const auto n_tensors = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    TensorRecord rec;
    rec.name = r.str();
    const auto rank = r.pod<std::uint32_t>();
    for (std::uint32_t d = 0; d < rank; ++d) rec.shape.push_back(r.pod<std::uint32_t>());
    rec.values.resize(nn::numel(rec.shape));
    r.raw(rec.values.data(), rec.values.size() * sizeof(float));
    ckpt.tensors.push_back(std::move(rec));
  }
  if (!r.done()) throw IoError("trailing bytes in checkpoint");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

PPGN_NAMESPACE_END
