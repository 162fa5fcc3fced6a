#pragma once

// Persistent cache of calibrated embeddings.
//
// Each matrix lives in its own file: "LEGOEMB1", u32 N, u32 d, row-major f64
// payload, then an 8-byte FNV-1a checksum of everything before it. The
// directory's manifest.json maps keys to files. Files and manifest are
// written to a temporary name and renamed into place, so a killed writer
// leaves the previous state intact.

#include "lego/common.hpp"

#include <nlohmann/json.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <shared_mutex>

namespace lego {

struct StoreKey {
  std::string source;       // hash of U_0 and the dataset labels
  std::string attribute;
  std::string config;       // CalibrationConfig hash

  [[nodiscard]] std::string str() const { return source + "/" + attribute + "/" + config; }
  [[nodiscard]] bool valid() const {
    auto ok = [](const std::string& s) {
      return !s.empty() && s.find('/') == std::string::npos && s.find('\\') == std::string::npos;
    };
    return ok(source) && ok(attribute) && ok(config);
  }
};

class ChecksumError : public Error {
 public:
  using Error::Error;
};

class MissingKeyError : public Error {
 public:
  using Error::Error;
};

inline void write_embedding_file(const Matrix& m, const std::filesystem::path& path) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("store: cannot write " + tmp.string());
    Fnv1a sum;
    auto put = [&](const void* data, std::size_t size) {
      out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
      sum.update(data, size);
    };
    put("LEGOEMB1", 8);
    const std::uint32_t dims[2] = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
    put(dims, sizeof(dims));
    put(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
    const std::uint64_t digest = sum.digest();
    out.write(reinterpret_cast<const char*>(&digest), sizeof(digest));
    out.flush();
    if (!out) throw Error("store: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Matrix read_embedding_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("store: cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  constexpr std::size_t kHeader = 8 + 2 * sizeof(std::uint32_t);
  if (bytes.size() < kHeader + sizeof(std::uint64_t) || bytes.compare(0, 8, "LEGOEMB1") != 0)
    throw ChecksumError("store: bad header in " + path.string());
  std::uint32_t dims[2];
  std::memcpy(dims, bytes.data() + 8, sizeof(dims));
  const std::size_t payload = sizeof(double) * static_cast<std::size_t>(dims[0]) * dims[1];
  if (bytes.size() != kHeader + payload + sizeof(std::uint64_t))
    throw ChecksumError("store: size mismatch in " + path.string());
  std::uint64_t stored = 0;
  std::memcpy(&stored, bytes.data() + kHeader + payload, sizeof(stored));
  if (Fnv1a().update(bytes.data(), kHeader + payload).digest() != stored)
    throw ChecksumError("store: checksum mismatch in " + path.string());
  Matrix m(dims[0], dims[1]);
  std::memcpy(m.data(), bytes.data() + kHeader, payload);
  return m;
}

class EmbeddingStore {
 public:
  explicit EmbeddingStore(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
    load_manifest();
  }

  [[nodiscard]] const std::filesystem::path& directory() const { return dir_; }

  [[nodiscard]] bool contains(const StoreKey& key) const {
    std::shared_lock lock(mu_);
    return entries_.count(key.str()) > 0;
  }

  [[nodiscard]] std::size_t size() const {
    std::shared_lock lock(mu_);
    return entries_.size();
  }

  void put(const StoreKey& key, const Matrix& m) {
    if (!key.valid()) throw Error("store: invalid key '" + key.str() + "'");
    const std::string file = hex64(Fnv1a().update(key.str()).digest()) + ".emb";
    std::unique_lock lock(mu_);
    write_embedding_file(m, dir_ / file);
    entries_[key.str()] = file;
    save_manifest();
  }

  [[nodiscard]] Matrix get(const StoreKey& key) const {
    std::shared_lock lock(mu_);
    auto it = entries_.find(key.str());
    if (it == entries_.end()) throw MissingKeyError("store: no entry for key '" + key.str() + "'");
    return read_embedding_file(dir_ / it->second);
  }

  // Drops the entry and its file, e.g. after a checksum failure.
  void erase(const StoreKey& key) {
    std::unique_lock lock(mu_);
    auto it = entries_.find(key.str());
    if (it == entries_.end()) return;
    std::error_code ec;
    std::filesystem::remove(dir_ / it->second, ec);
    entries_.erase(it);
    save_manifest();
  }

 private:
  void load_manifest() {
    const auto path = dir_ / "manifest.json";
    if (!std::filesystem::exists(path)) return;
    std::ifstream in(path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw Error("store: unreadable manifest " + path.string() + ": " + e.what());
    }
    if (j.value("schema_version", 0) != 1) throw Error("store: unsupported manifest schema in " + path.string());
    for (const auto& [key, file] : j.at("entries").items()) {
      const std::string name = file.get<std::string>();
      if (std::filesystem::exists(dir_ / name))
        entries_[key] = name;
      else
        warn("store: manifest entry '" + key + "' has no file, dropping it");
    }
  }

  void save_manifest() const {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["entries"] = nlohmann::json::object();
    for (const auto& [key, file] : entries_) j["entries"][key] = file;
    const auto path = dir_ / "manifest.json";
    const auto tmp = dir_ / "manifest.json.tmp";
    {
      std::ofstream out(tmp, std::ios::trunc);
      out << j.dump(2) << '\n';
      if (!out) throw Error("store: cannot write manifest " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
  }

  std::filesystem::path dir_;
  mutable std::shared_mutex mu_;
  std::map<std::string, std::string> entries_;
};

}  // namespace lego
