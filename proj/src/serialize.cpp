#include "respiro/serialize.hpp"

#include <unistd.h>

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "respiro/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

namespace respiro::core {

namespace {

class Writer {
 public:
  explicit Writer(const std::string& path) : final_path_(path) {
    tmp_path_ = path + ".tmp." + std::to_string(::getpid());
    out_.open(tmp_path_, std::ios::binary | std::ios::trunc);
    if (!out_) throw IoError("cannot open " + tmp_path_ + " for writing");
  }

  ~Writer() {
    if (!committed_) {
      out_.close();
      std::error_code ec;
      std::filesystem::remove(tmp_path_, ec);
    }
  }

  void bytes(const void* p, std::size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u16(std::uint16_t v) { bytes(&v, 2); }
  void u32(std::uint32_t v) { bytes(&v, 4); }

  void commit() {
    out_.flush();
    if (!out_) throw IoError("write failed for " + tmp_path_);
    out_.close();
    std::error_code ec;
    std::filesystem::rename(tmp_path_, final_path_, ec);
    if (ec) throw IoError("cannot rename " + tmp_path_ + " to " + final_path_ + ": " + ec.message());
    committed_ = true;
  }

 private:
  std::string final_path_, tmp_path_;
  std::ofstream out_;
  bool committed_ = false;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : path_(path) {
    in_.open(path, std::ios::binary);
    if (!in_) throw IoError("cannot open " + path + " for reading");
  }

  void bytes(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (in_.gcount() != static_cast<std::streamsize>(n)) {
      throw FormatError(path_ + ": truncated at byte offset " + std::to_string(offset_));
    }
    offset_ += n;
  }
  std::uint8_t u8() {
    std::uint8_t v;
    bytes(&v, 1);
    return v;
  }
  std::uint16_t u16() {
    std::uint16_t v;
    bytes(&v, 2);
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, 4);
    return v;
  }

  std::size_t offset() const { return offset_; }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::ifstream in_;
  std::size_t offset_ = 0;
};

void write_shape_and_data(Writer& w, const Tensor& t) {
  w.u8(static_cast<std::uint8_t>(t.rank()));
  for (int i = 0; i < t.rank(); ++i) w.u32(static_cast<std::uint32_t>(t.dim(i)));
  w.bytes(t.data(), sizeof(float) * static_cast<std::size_t>(t.size()));
}

Tensor read_shape_and_data(Reader& r) {
  const int rank = r.u8();
  Shape shape(static_cast<std::size_t>(rank));
  std::int64_t n = 1;
  for (int i = 0; i < rank; ++i) {
    const std::uint32_t e = r.u32();
    if (e == 0 || e > (1u << 30)) {
      throw FormatError(r.path() + ": bad extent " + std::to_string(e) + " at byte offset " +
                        std::to_string(r.offset() - 4));
    }
    shape[static_cast<std::size_t>(i)] = static_cast<int>(e);
    n *= e;
  }
  std::vector<float> data(static_cast<std::size_t>(n));
  r.bytes(data.data(), sizeof(float) * data.size());
  return Tensor(std::move(shape), std::move(data));
}

void check_magic(Reader& r, const char expect[4]) {
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, expect, 4) != 0) {
    throw FormatError(r.path() + ": bad magic at byte offset 0, expected \"" +
                      std::string(expect, 4) + "\"");
  }
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<Parameter>& params) {
  Writer w(path);
  w.bytes("RCK1", 4);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    if (p.name.size() > 0xffff) throw ArgumentError("parameter name too long: " + p.name);
    w.u16(static_cast<std::uint16_t>(p.name.size()));
    w.bytes(p.name.data(), p.name.size());
    write_shape_and_data(w, p.tensor);
  }
  w.commit();
}

std::vector<Parameter> load_checkpoint(const std::string& path) {
  Reader r(path);
  check_magic(r, "RCK1");
  const std::uint32_t count = r.u32();
  std::vector<Parameter> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t len = r.u16();
    std::string name(len, '\0');
    r.bytes(name.data(), len);
    out.push_back({std::move(name), read_shape_and_data(r)});
  }
  return out;
}

void load_checkpoint_into(const std::string& path, ParamRegistry& registry) {
  auto stored = load_checkpoint(path);
  std::size_t matched = 0;
  for (auto& s : stored) {
    Tensor* dst = registry.find(s.name);
    if (!dst) throw IntegrityError(path + ": stored parameter " + s.name + " has no destination");
    if (dst->shape() != s.tensor.shape()) {
      throw IntegrityError(path + ": parameter " + s.name + " has shape " + shape_str(s.tensor.shape()) +
                           ", expected " + shape_str(dst->shape()));
    }
    std::memcpy(dst->data(), s.tensor.data(), sizeof(float) * static_cast<std::size_t>(dst->size()));
    ++matched;
  }
  if (matched != registry.params().size()) {
    throw IntegrityError(path + ": covers " + std::to_string(matched) + " of " +
                         std::to_string(registry.params().size()) + " parameters");
  }
}

void save_tensors(const std::string& path, const std::vector<Tensor>& tensors) {
  Writer w(path);
  w.bytes("RSF1", 4);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) write_shape_and_data(w, t);
  w.commit();
}

std::vector<Tensor> load_tensors(const std::string& path) {
  Reader r(path);
  check_magic(r, "RSF1");
  const std::uint32_t count = r.u32();
  std::vector<Tensor> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) out.push_back(read_shape_and_data(r));
  return out;
}

}  // namespace respiro::core
