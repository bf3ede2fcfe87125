#include "any2point/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>
#include <openssl/sha.h>
#include <zlib.h>

#include "any2point/error.hpp"

namespace a2p {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are written as native little-endian float32");

namespace fs = std::filesystem;
using nlohmann::json;

std::uint32_t crc32_of(const void* data, std::size_t bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, static_cast<const Bytef*>(data), static_cast<uInt>(bytes));
  return static_cast<std::uint32_t>(crc);
}

std::string sha256_hex(const void* data, std::size_t bytes) {
  unsigned char digest[SHA256_DIGEST_LENGTH];
  SHA256(static_cast<const unsigned char*>(data), bytes, digest);
  std::ostringstream os;
  for (unsigned char c : digest) os << std::hex << std::setw(2) << std::setfill('0') << int(c);
  return os.str();
}

Sha256::Sha256() : ctx_(EVP_MD_CTX_new()) {
  EVP_DigestInit_ex(static_cast<EVP_MD_CTX*>(ctx_), EVP_sha256(), nullptr);
}

Sha256::~Sha256() { EVP_MD_CTX_free(static_cast<EVP_MD_CTX*>(ctx_)); }

void Sha256::update(const void* data, std::size_t bytes) {
  EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), data, bytes);
}

std::string Sha256::hex_digest() {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(static_cast<EVP_MD_CTX*>(ctx_), digest, &len);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) {
    os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  }
  return os.str();
}

const NamedTensor& Checkpoint::get(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t;
  }
  throw ManifestError("tensor '" + name + "' missing from checkpoint");
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return true;
  }
  return false;
}

namespace {

std::int64_t element_count(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::vector<char> read_all(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

json read_manifest(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.json";
  std::ifstream in(mpath);
  if (!in) throw ManifestError("cannot open " + mpath.string());
  json m;
  try {
    in >> m;
  } catch (const json::exception& e) {
    throw ManifestError(std::string("malformed manifest: ") + e.what());
  }
  if (m.value("format", "") != kCheckpointFormat) {
    throw ManifestError("manifest format is not '" + std::string(kCheckpointFormat) + "'");
  }
  if (!m.contains("tensors") || !m["tensors"].is_array()) {
    throw ManifestError("manifest has no tensor registry");
  }
  return m;
}

struct Entry {
  std::string name;
  std::vector<std::int64_t> shape;
  std::uint64_t offset = 0;
  std::uint64_t nbytes = 0;
  std::uint32_t crc = 0;
};

Entry parse_entry(const json& t) {
  Entry e;
  try {
    e.name = t.at("name").get<std::string>();
    e.shape = t.at("shape").get<std::vector<std::int64_t>>();
    e.offset = t.at("offset").get<std::uint64_t>();
    e.nbytes = t.at("nbytes").get<std::uint64_t>();
    e.crc = t.at("crc32").get<std::uint32_t>();
    if (t.at("dtype").get<std::string>() != "float32") {
      throw ManifestError("tensor '" + e.name + "' has unsupported dtype");
    }
  } catch (const json::exception& ex) {
    throw ManifestError("bad tensor entry " + t.dump() + ": " + ex.what());
  }
  return e;
}

// Checks one entry against the blob; returns an empty string when valid.
std::string check_entry(const Entry& e, const std::vector<char>& blob, std::string* kind) {
  for (auto d : e.shape) {
    if (d < 0) {
      *kind = "ShapeError";
      return "negative dimension";
    }
  }
  if (static_cast<std::uint64_t>(element_count(e.shape)) * 4 != e.nbytes) {
    *kind = "ShapeError";
    return "shape implies " + std::to_string(element_count(e.shape) * 4) +
           " bytes but manifest records " + std::to_string(e.nbytes);
  }
  if (e.offset + e.nbytes > blob.size()) {
    *kind = "ChecksumError";
    return "payload extends past end of tensors.bin (truncated file)";
  }
  if (crc32_of(blob.data() + e.offset, e.nbytes) != e.crc) {
    *kind = "ChecksumError";
    return "CRC32 mismatch";
  }
  return {};
}

}  // namespace

void save_checkpoint(const fs::path& dir, const Checkpoint& ckpt) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  std::vector<char> blob;
  json entries = json::array();
  for (const auto& t : ckpt.tensors) {
    if (element_count(t.shape) != t.value.size()) {
      throw ShapeError("tensor '" + t.name + "' shape does not match its value");
    }
    while (blob.size() % kTensorAlignment != 0) blob.push_back(0);
    const std::uint64_t offset = blob.size();
    std::vector<float> f(static_cast<std::size_t>(t.value.size()));
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = static_cast<float>(t.value.data()[i]);
    const std::size_t nbytes = f.size() * sizeof(float);
    blob.resize(offset + nbytes);
    std::memcpy(blob.data() + offset, f.data(), nbytes);
    entries.push_back({{"name", t.name},
                       {"shape", t.shape},
                       {"dtype", "float32"},
                       {"offset", offset},
                       {"nbytes", nbytes},
                       {"crc32", crc32_of(blob.data() + offset, nbytes)}});
  }

  json manifest = {{"format", kCheckpointFormat},
                   {"version", 1},
                   {"kind", ckpt.kind},
                   {"alignment", kTensorAlignment},
                   {"config", ckpt.config},
                   {"flags", ckpt.flags},
                   {"tensors", entries}};
  {
    std::ofstream out(dir / "tensors.bin", std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + (dir / "tensors.bin").string());
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  }
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << "\n";
}

Checkpoint load_checkpoint_file(const fs::path& dir) {
  const json m = read_manifest(dir);
  const std::vector<char> blob = read_all(dir / "tensors.bin");
  Checkpoint ckpt;
  ckpt.kind = m.value("kind", "");
  ckpt.config = m.value("config", json::object());
  ckpt.flags = m.value("flags", json::object());
  for (const auto& jt : m["tensors"]) {
    const Entry e = parse_entry(jt);
    std::string kind;
    const std::string problem = check_entry(e, blob, &kind);
    if (!problem.empty()) {
      if (kind == "ShapeError") throw ShapeError("tensor '" + e.name + "': " + problem);
      throw ChecksumError("tensor '" + e.name + "': " + problem);
    }
    NamedTensor t;
    t.name = e.name;
    t.shape = e.shape;
    const std::int64_t cols = e.shape.empty() ? 1 : e.shape.back();
    const std::int64_t rows = cols == 0 ? 0 : element_count(e.shape) / cols;
    t.value.resize(rows, cols);
    std::vector<float> f(static_cast<std::size_t>(element_count(e.shape)));
    std::memcpy(f.data(), blob.data() + e.offset, e.nbytes);
    for (std::size_t i = 0; i < f.size(); ++i) t.value.data()[i] = f[i];
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

std::vector<ValidationLine> validate_checkpoint(const fs::path& dir) {
  std::vector<ValidationLine> report;
  json m;
  std::vector<char> blob;
  try {
    m = read_manifest(dir);
    blob = read_all(dir / "tensors.bin");
  } catch (const Error& e) {
    report.push_back({"<manifest>", false, e.what()});
    return report;
  }
  for (const auto& jt : m["tensors"]) {
    try {
      const Entry e = parse_entry(jt);
      std::string kind;
      const std::string problem = check_entry(e, blob, &kind);
      report.push_back({e.name, problem.empty(), problem.empty() ? "ok" : kind + ": " + problem});
    } catch (const Error& e) {
      report.push_back({"<entry>", false, e.what()});
    }
  }
  return report;
}

}  // namespace a2p
