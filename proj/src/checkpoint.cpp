#include "t4c/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "t4c/error.hpp"
#include "t4c/text.hpp"

namespace t4c {

using json = nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint encoding assumes a little-endian host");

constexpr char kMagic[8] = {'T', '4', 'C', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

std::vector<double> flatten(const NormStats& n) {
  std::vector<double> v;
  v.insert(v.end(), n.cont_mean.begin(), n.cont_mean.end());
  v.insert(v.end(), n.cont_std.begin(), n.cont_std.end());
  v.insert(v.end(), n.counter_mean.begin(), n.counter_mean.end());
  v.insert(v.end(), n.counter_std.begin(), n.counter_std.end());
  v.push_back(n.log_volume_mean);
  v.push_back(n.log_volume_std);
  v.push_back(n.speed_mean);
  v.push_back(n.speed_std);
  return v;
}

NormStats unflatten(const std::vector<double>& v) {
  NormStats n;
  if (v.size() != 2 * kNumContinuous + 2 * kCounterSlice + 4) throw ValidationError("checkpoint: bad norm block");
  auto it = v.begin();
  auto take = [&](auto& arr) {
    std::copy_n(it, arr.size(), arr.begin());
    it += static_cast<std::ptrdiff_t>(arr.size());
  };
  take(n.cont_mean);
  take(n.cont_std);
  take(n.counter_mean);
  take(n.counter_std);
  n.log_volume_mean = *it++;
  n.log_volume_std = *it++;
  n.speed_mean = *it++;
  n.speed_std = *it++;
  return n;
}

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

void put_tensor(std::string& out, const std::string& name, const nd::Tensor& t) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out += name;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
  for (auto d : t.shape) put<std::uint64_t>(out, d);
  out.append(reinterpret_cast<const char*>(t.values.data()), t.values.size() * sizeof(double));
}

class Reader {
 public:
  Reader(std::string_view bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string str(std::size_t n) {
    need(n);
    std::string s(bytes_.substr(pos_, n));
    pos_ += n;
    return s;
  }

  std::pair<std::string, nd::Tensor> tensor() {
    const auto name = str(get<std::uint32_t>());
    const auto ndim = get<std::uint32_t>();
    if (ndim > 8) fail("implausible tensor rank");
    nd::Shape shape(ndim);
    for (auto& d : shape) d = get<std::uint64_t>();
    const auto n = nd::numel(shape);
    need(n * sizeof(double));
    std::vector<double> values(n);
    std::memcpy(values.data(), bytes_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
    return {name, nd::Tensor(std::move(shape), std::move(values))};
  }

  bool done() const { return pos_ == bytes_.size(); }
  [[noreturn]] void fail(const std::string& what) const {
    throw ValidationError("checkpoint " + source_ + ": " + what + " at byte " + std::to_string(pos_));
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) fail("truncated file");
  }

  std::string_view bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  json header = {{"config", to_json(ckpt.config)},
                 {"config_hash", config_hash(ckpt.config)},
                 {"adam_step", ckpt.params.step()},
                 {"num_tensors", ckpt.params.entries().size()}};
  const std::string h = header.dump();
  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, h.size());
  out += h;
  const auto norm = flatten(ckpt.norm);
  put_tensor(out, "norm", nd::Tensor({norm.size()}, norm));
  for (const auto& e : ckpt.params.entries()) {
    put_tensor(out, e.name, e.param.value());
    put_tensor(out, e.name + "#m", e.m);
    put_tensor(out, e.name + "#v", e.v);
  }
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes, const std::string& source) {
  Reader r(bytes, source);
  if (r.str(sizeof kMagic) != std::string(kMagic, sizeof kMagic)) r.fail("not a checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) r.fail("unsupported version " + std::to_string(version));
  json header;
  try {
    header = json::parse(r.str(r.get<std::uint64_t>()));
  } catch (const json::parse_error& e) {
    r.fail(std::string("bad header: ") + e.what());
  }
  Checkpoint ck;
  ck.config = model_config_from_json(header.at("config"));
  if (header.at("config_hash").get<std::string>() != config_hash(ck.config)) {
    r.fail("config hash mismatch; header was edited or written by an incompatible build");
  }
  auto [norm_name, norm] = r.tensor();
  if (norm_name != "norm") r.fail("expected norm block");
  ck.norm = unflatten(norm.values);
  const auto count = header.at("num_tensors").get<std::size_t>();
  for (std::size_t i = 0; i < count; ++i) {
    auto [name, value] = r.tensor();
    auto [mname, m] = r.tensor();
    auto [vname, v] = r.tensor();
    if (mname != name + "#m" || vname != name + "#v") r.fail("moment tensors out of order for " + name);
    if (m.shape != value.shape || v.shape != value.shape) r.fail("moment shape mismatch for " + name);
    ck.params.add(name, std::move(value));
    ck.params.entries().back().m = std::move(m);
    ck.params.entries().back().v = std::move(v);
  }
  ck.params.set_step(header.at("adam_step").get<std::int64_t>());
  if (!r.done()) r.fail("trailing bytes");
  // Validates names and shapes against the architecture.
  TrafficModel probe(ck.config, ck.params.clone());
  return ck;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  text::write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(text::read_file(path), path.string());
}

bool bitwise_equal(const Checkpoint& a, const Checkpoint& b) {
  return encode_checkpoint(a) == encode_checkpoint(b);
}

}  // namespace t4c
