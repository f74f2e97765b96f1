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

#ifndef KDSLU_TYPES_HPP
#define KDSLU_TYPES_HPP

#include <string>
#include <vector>

#include "kdslu/tensor.hpp"

namespace kdslu {

// Fixed-rate feature frames extracted from a signal. frames is (T, F).
struct FrameSequence {
  Tensor frames;
  double frame_ms = 10.0;

  int length() const { return frames.dim(0); }
  int feature_dim() const { return frames.dim(1); }

  void validate() const {
    KDSLU_CHECK(frames.rank() == 2 && frames.dim(0) >= 1 && frames.dim(1) >= 1,
                ErrorKind::ShapeError, "frame sequence must be (T>=1, F>=1)");
    KDSLU_CHECK(frame_ms > 0.0, ErrorKind::ShapeError, "frame_ms must be positive");
    KDSLU_CHECK(frames.all_finite(), ErrorKind::ShapeError, "frames must be finite");
  }
};

// Discrete audio codes over a codebook of size K. Real codes live in [0, K);
// the three specials sit directly above so one embedding table covers all of
// them. CLS, when present, is only ever at position 0.
struct TokenSequence {
  std::vector<int> tokens;
  int codebook_size = 0;

  int cls_id() const { return codebook_size; }
  int mask_id() const { return codebook_size + 1; }
  int pad_id() const { return codebook_size + 2; }
  int vocab_size() const { return codebook_size + 3; }

  int length() const { return static_cast<int>(tokens.size()); }
  bool is_special(int id) const { return id >= codebook_size; }

  void validate() const {
    KDSLU_CHECK(!tokens.empty(), ErrorKind::ShapeError, "token sequence must be non-empty");
    for (size_t i = 0; i < tokens.size(); ++i) {
      const int t = tokens[i];
      KDSLU_CHECK(t >= 0 && t < vocab_size(), ErrorKind::VocabError,
                  "token id out of vocabulary");
      KDSLU_CHECK(t != cls_id() || i == 0, ErrorKind::VocabError,
                  "CLS only allowed at position 0");
    }
  }
};

// Contextualized encoder output: a CLS summary (1, D) plus per-token states
// (T, D), CLS excluded from states.
struct HiddenSequence {
  Tensor cls;
  Tensor states;

  int length() const { return states.dim(0); }
  int dim() const { return states.dim(1); }

  void validate() const {
    KDSLU_CHECK(cls.rank() == 2 && cls.dim(0) == 1, ErrorKind::ShapeError, "cls must be (1,D)");
    KDSLU_CHECK(states.rank() == 2 && states.dim(1) == cls.dim(1), ErrorKind::ShapeError,
                "states must be (T,D) with D matching cls");
    KDSLU_CHECK(cls.all_finite() && states.all_finite(), ErrorKind::ShapeError,
                "hidden sequence must be finite");
  }
};

}  // namespace kdslu

#endif  // KDSLU_TYPES_HPP
