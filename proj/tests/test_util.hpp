#pragma once

#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>

#include "weaklab/corpus.hpp"
#include "weaklab/schema.hpp"

namespace testutil {

inline std::filesystem::path fixture_dir() { return WEAKLAB_FIXTURE_DIR; }
inline std::filesystem::path golden_dir() { return WEAKLAB_GOLDEN_DIR; }

/// Temporary directory removed on scope exit.
class TempDir {
public:
  TempDir() {
    auto pattern = (std::filesystem::temp_directory_path() / "weaklab_test_XXXXXX").string();
    if (!mkdtemp(pattern.data())) throw std::runtime_error("mkdtemp failed");
    path_ = pattern;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

private:
  std::filesystem::path path_;
};

inline weaklab::Corpus load_fixture_corpus(bool segment = true) {
  const auto schema = weaklab::builtin_schema("2018");
  weaklab::Corpus corpus;
  for (auto& note : weaklab::load_corpus(fixture_dir() / "corpus", schema)) {
    corpus.push_back(segment ? weaklab::segment_sentences(std::move(note))
                             : std::move(note));
  }
  return corpus;
}

/// Bounded draw with the same rejection scheme everywhere in the tests.
inline std::uint32_t draw(std::mt19937& rng, std::uint32_t n) {
  const std::uint64_t span = 0x100000000ull;
  const std::uint64_t limit = span - span % n;
  std::uint64_t v;
  do {
    v = rng();
  } while (v >= limit);
  return static_cast<std::uint32_t>(v % n);
}

}  // namespace testutil
