#include "one/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace one {

namespace {

constexpr char kMagic[8] = {'O', 'N', 'E', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.append(s);
}

void put_f32s(std::string& out, const std::vector<float>& v) {
  for (const float f : v) put_u32(out, std::bit_cast<std::uint32_t>(f));
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;
  const std::string& path;

  void need(std::size_t n, const char* what) {
    if (pos + n > buf.size()) {
      throw DataError("checkpoint " + path + ": truncated reading " + what + " at byte " +
                      std::to_string(pos) + " (need " + std::to_string(n) + ", have " +
                      std::to_string(buf.size() - pos) + ")");
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<std::uint8_t>(buf[pos++]);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  std::string str(const char* what) {
    const std::uint32_t n = u32(what);
    need(n, what);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
  std::vector<float> f32s(std::uint64_t count, const char* what) {
    if (count > buf.size() / 4) {
      throw DataError("checkpoint " + path + ": implausible tensor size " + std::to_string(count) +
                      " reading " + what);
    }
    need(count * 4, what);
    std::vector<float> v(count);
    for (std::uint64_t i = 0; i < count; ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b)
        bits |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[pos + i * 4 + b]))
                << (8 * b);
      v[i] = std::bit_cast<float>(bits);
    }
    pos += count * 4;
    return v;
  }
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint " + path + ": cannot open");
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return buf;
}

void write_file(const std::string& path, const std::string& buf) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("checkpoint " + path + ": cannot open for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw DataError("checkpoint " + path + ": write failed");
}

void put_header(std::string& out, const CheckpointMeta& meta) {
  out.append(kMagic, sizeof(kMagic));
  put_u32(out, kVersion);
  out.push_back(static_cast<char>(meta.kind));
  out.push_back(static_cast<char>(meta.options.no_gating ? 1 : 0));
  out.push_back(static_cast<char>(meta.options.no_sharing ? 1 : 0));
  out.push_back(static_cast<char>(meta.has_trainer_state ? 1 : 0));
  put_u64(out, meta.arch_hash);
  put_u32(out, static_cast<std::uint32_t>(meta.m));
  put_u32(out, static_cast<std::uint32_t>(meta.classes));
  put_u32(out, static_cast<std::uint32_t>(meta.input_dims.size()));
  for (const int d : meta.input_dims) put_u32(out, static_cast<std::uint32_t>(d));
  put_str(out, meta.trunk_spec);
  put_str(out, meta.branch_spec);
}

CheckpointMeta read_header(Reader& r) {
  r.need(sizeof(kMagic), "magic");
  if (std::memcmp(r.buf.data(), kMagic, sizeof(kMagic)) != 0) {
    throw DataError("checkpoint " + r.path + ": bad magic, not a checkpoint file");
  }
  r.pos = sizeof(kMagic);
  const std::uint32_t version = r.u32("version");
  if (version != kVersion) {
    throw DataError("checkpoint " + r.path + ": unsupported format version " +
                    std::to_string(version));
  }
  CheckpointMeta meta;
  const std::uint8_t kind = r.u8("kind");
  if (kind > 1) throw DataError("checkpoint " + r.path + ": unknown kind " + std::to_string(kind));
  meta.kind = static_cast<CheckpointKind>(kind);
  meta.options.no_gating = r.u8("no_gating flag") != 0;
  meta.options.no_sharing = r.u8("no_sharing flag") != 0;
  meta.has_trainer_state = r.u8("trainer state flag") != 0;
  meta.arch_hash = r.u64("arch hash");
  meta.m = static_cast<int>(r.u32("m"));
  meta.classes = static_cast<int>(r.u32("class count"));
  const std::uint32_t nd = r.u32("input dim count");
  if (nd == 0 || nd > 4) {
    throw DataError("checkpoint " + r.path + ": implausible input dim count " +
                    std::to_string(nd));
  }
  for (std::uint32_t i = 0; i < nd; ++i)
    meta.input_dims.push_back(static_cast<int>(r.u32("input dim")));
  meta.trunk_spec = r.str("trunk spec");
  meta.branch_spec = r.str("branch spec");

  const std::uint64_t expect =
      arch_hash(meta.kind, meta.trunk_spec, meta.branch_spec, meta.m, meta.classes,
                meta.input_dims, meta.options);
  if (expect != meta.arch_hash) {
    throw DataError("checkpoint " + r.path + ": architecture hash mismatch, header corrupt");
  }
  return meta;
}

void put_blobs(std::string& out, std::vector<ParamRef>& params, std::vector<BufferRef>& buffers) {
  put_u32(out, static_cast<std::uint32_t>(params.size() + buffers.size()));
  for (auto& p : params) {
    put_str(out, p.name);
    put_u64(out, static_cast<std::uint64_t>(p.tensor.size()));
    put_f32s(out, p.tensor.data());
  }
  for (auto& b : buffers) {
    put_str(out, b.name);
    put_u64(out, static_cast<std::uint64_t>(b.data->size()));
    put_f32s(out, *b.data);
  }
}

void put_trainer_state(std::string& out, const TrainerState& state) {
  put_u32(out, static_cast<std::uint32_t>(state.next_epoch));
  put_u32(out, static_cast<std::uint32_t>(state.velocities.size()));
  for (const auto& [name, vel] : state.velocities) {
    put_str(out, name);
    put_u64(out, vel.size());
    put_f32s(out, vel);
  }
}

// Reads all named blobs and moves them into the model's tensors by name.
void fill_from_blobs(Reader& r, std::vector<ParamRef>& params, std::vector<BufferRef>& buffers) {
  const std::uint32_t count = r.u32("blob count");
  std::map<std::string, std::vector<float>> blobs;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str("blob name");
    const std::uint64_t n = r.u64("blob size");
    if (!blobs.emplace(std::move(name), r.f32s(n, "blob data")).second) {
      throw DataError("checkpoint " + r.path + ": duplicate tensor name");
    }
  }

  auto take = [&](const std::string& name, std::size_t want) {
    auto it = blobs.find(name);
    if (it == blobs.end()) {
      throw DataError("checkpoint " + r.path + ": missing tensor '" + name + "'");
    }
    if (it->second.size() != want) {
      throw DataError("checkpoint " + r.path + ": tensor '" + name + "' has " +
                      std::to_string(it->second.size()) + " values, model expects " +
                      std::to_string(want));
    }
    std::vector<float> v = std::move(it->second);
    blobs.erase(it);
    return v;
  };

  for (auto& p : params) p.tensor.data() = take(p.name, static_cast<std::size_t>(p.tensor.size()));
  for (auto& b : buffers) *b.data = take(b.name, b.data->size());
  if (!blobs.empty()) {
    throw DataError("checkpoint " + r.path + ": unknown tensor '" + blobs.begin()->first + "'");
  }
}

TrainerState read_trainer_state(Reader& r) {
  TrainerState state;
  state.next_epoch = static_cast<int>(r.u32("next epoch"));
  const std::uint32_t count = r.u32("velocity count");
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str("velocity name");
    const std::uint64_t n = r.u64("velocity size");
    state.velocities.emplace_back(std::move(name), r.f32s(n, "velocity data"));
  }
  return state;
}

}  // namespace

std::uint64_t arch_hash(CheckpointKind kind, const std::string& trunk_spec,
                        const std::string& branch_spec, int m, int classes,
                        const FeatDims& input_dims, const ModelOptions& opts) {
  std::string desc;
  desc += kind == CheckpointKind::Multi ? "multi;" : "single;";
  desc += trunk_spec + ";" + branch_spec + ";m=" + std::to_string(m) +
          ";C=" + std::to_string(classes) + ";in=";
  for (const int d : input_dims) desc += std::to_string(d) + ",";
  if (opts.no_gating) desc += ";no_gating";
  if (opts.no_sharing) desc += ";no_sharing";

  std::uint64_t h = 14695981039346656037ULL;
  for (const char c : desc) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

void save_checkpoint(const std::string& path, MultiBranchModel& model, const TrainerState* state) {
  CheckpointMeta meta;
  meta.kind = CheckpointKind::Multi;
  meta.options = model.options();
  meta.has_trainer_state = state != nullptr;
  meta.m = model.aux_count();
  meta.classes = model.num_classes();
  meta.input_dims = model.input_dims();
  meta.trunk_spec = model.trunk_spec().to_string();
  meta.branch_spec = model.branch_spec().to_string();
  meta.arch_hash = arch_hash(meta.kind, meta.trunk_spec, meta.branch_spec, meta.m, meta.classes,
                             meta.input_dims, meta.options);

  std::string out;
  put_header(out, meta);
  std::vector<ParamRef> params;
  std::vector<BufferRef> buffers;
  model.params(params);
  model.buffers(buffers);
  put_blobs(out, params, buffers);
  if (state) put_trainer_state(out, *state);
  write_file(path, out);
}

void save_checkpoint(const std::string& path, SingleNet& net, const TrainerState* state) {
  CheckpointMeta meta;
  meta.kind = CheckpointKind::Single;
  meta.has_trainer_state = state != nullptr;
  meta.m = 0;
  meta.classes = net.num_classes();
  meta.input_dims = net.input_dims();
  meta.trunk_spec = net.trunk_spec().to_string();
  meta.branch_spec = net.branch_spec().to_string();
  meta.arch_hash = arch_hash(meta.kind, meta.trunk_spec, meta.branch_spec, meta.m, meta.classes,
                             meta.input_dims, meta.options);

  std::string out;
  put_header(out, meta);
  std::vector<ParamRef> params;
  std::vector<BufferRef> buffers;
  net.params(params);
  net.buffers(buffers);
  put_blobs(out, params, buffers);
  if (state) put_trainer_state(out, *state);
  write_file(path, out);
}

CheckpointMeta peek_checkpoint(const std::string& path) {
  const std::string buf = read_file(path);
  Reader r{buf, 0, path};
  return read_header(r);
}

MultiBranchModel load_multi_checkpoint(const std::string& path, TrainerState* state) {
  const std::string buf = read_file(path);
  Reader r{buf, 0, path};
  const CheckpointMeta meta = read_header(r);
  if (meta.kind != CheckpointKind::Multi) {
    throw DataError("checkpoint " + path + ": holds a single net, expected a multi-branch model");
  }

  Rng rng(0);  // placeholder init, every tensor is overwritten below
  MultiBranchModel model(BlockSpec::parse(meta.trunk_spec), BlockSpec::parse(meta.branch_spec),
                         meta.m, meta.classes, meta.input_dims, rng, meta.options);
  std::vector<ParamRef> params;
  std::vector<BufferRef> buffers;
  model.params(params);
  model.buffers(buffers);
  fill_from_blobs(r, params, buffers);

  if (meta.has_trainer_state) {
    TrainerState loaded = read_trainer_state(r);
    if (state) *state = std::move(loaded);
  } else if (state) {
    throw DataError("checkpoint " + path + ": no trainer state, cannot resume from it");
  }
  return model;
}

SingleNet load_single_checkpoint(const std::string& path, TrainerState* state) {
  const std::string buf = read_file(path);
  Reader r{buf, 0, path};
  const CheckpointMeta meta = read_header(r);
  if (meta.kind != CheckpointKind::Single) {
    throw DataError("checkpoint " + path + ": holds a multi-branch model, expected a single net");
  }

  Rng rng(0);
  SingleNet net(BlockSpec::parse(meta.trunk_spec), BlockSpec::parse(meta.branch_spec),
                meta.classes, meta.input_dims, rng);
  std::vector<ParamRef> params;
  std::vector<BufferRef> buffers;
  net.params(params);
  net.buffers(buffers);
  fill_from_blobs(r, params, buffers);

  if (meta.has_trainer_state) {
    TrainerState loaded = read_trainer_state(r);
    if (state) *state = std::move(loaded);
  } else if (state) {
    throw DataError("checkpoint " + path + ": no trainer state, cannot resume from it");
  }
  return net;
}

}  // namespace one
