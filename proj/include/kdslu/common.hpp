// Copyright (c) kdslu authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef KDSLU_COMMON_HPP
#define KDSLU_COMMON_HPP

#include <cmath>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace kdslu {

enum class ErrorKind {
  EmptyInput,
  DegenerateCorpus,
  ShapeError,
  VocabError,
  LengthError,
  NoMaskedPositions,
  MaskError,
  InfeasibleAlignment,
  PairingError,
  TeacherQualityError,
  ConfigError,
  LabelError,
  ParseError,
  MissingDependency,
  IoError,
  Internal,
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::DegenerateCorpus: return "DegenerateCorpus";
    case ErrorKind::ShapeError: return "ShapeError";
    case ErrorKind::VocabError: return "VocabError";
    case ErrorKind::LengthError: return "LengthError";
    case ErrorKind::NoMaskedPositions: return "NoMaskedPositions";
    case ErrorKind::MaskError: return "MaskError";
    case ErrorKind::InfeasibleAlignment: return "InfeasibleAlignment";
    case ErrorKind::PairingError: return "PairingError";
    case ErrorKind::TeacherQualityError: return "TeacherQualityError";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::LabelError: return "LabelError";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::MissingDependency: return "MissingDependency";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::Internal: return "Internal";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(std::string(to_string(kind)) + ": " + msg), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) {
  throw Error(kind, msg);
}

#define KDSLU_CHECK(cond, kind, msg)            \
  do {                                          \
    if (!(cond)) ::kdslu::fail((kind), (msg));  \
  } while (0)

// Deterministic PRNG. splitmix64 core so that streams are identical across
// platforms and standard libraries; std::* distributions are not portable.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n), unbiased enough for n << 2^64
  int uniform_int(int n) {
    return static_cast<int>(next_u64() % static_cast<uint64_t>(n));
  }

  // Box-Muller, two fresh uniforms per draw
  double gaussian() {
    double u1 = 0.0;
    do { u1 = uniform(); } while (u1 <= 0.0);
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = next_u64() % i;
      std::swap(v[i - 1], v[j]);
    }
  }

  // k distinct values from [0, n), order unspecified but deterministic
  std::vector<int> sample_without_replacement(int n, int k) {
    std::vector<int> pool(n);
    for (int i = 0; i < n; ++i) pool[i] = i;
    for (int i = 0; i < k; ++i) {
      int j = i + uniform_int(n - i);
      std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    return pool;
  }

 private:
  uint64_t state_;
};

// Derives an independent stream seed from a base seed and a stream tag.
inline uint64_t derive_seed(uint64_t base, uint64_t stream) {
  Rng r(base ^ (0x517cc1b727220a95ULL * (stream + 1)));
  return r.next_u64();
}

// FNV-1a over raw bytes; used for parameter checksums and corpus fingerprints.
inline uint64_t fnv1a(const void* bytes, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
  const unsigned char* p = static_cast<const unsigned char*>(bytes);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline uint64_t fnv1a(const std::string& s, uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a(s.data(), s.size(), h);
}

inline uint64_t fnv1a(const std::vector<double>& v, uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a(v.data(), v.size() * sizeof(double), h);
}

inline std::string hex64(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[i] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

}  // namespace kdslu

#endif  // KDSLU_COMMON_HPP
