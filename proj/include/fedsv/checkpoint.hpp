// Copyright 2026 The fedsv Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef FEDSV_CHECKPOINT_HPP_
#define FEDSV_CHECKPOINT_HPP_

#include <iosfwd>
#include <string>

#include "fedsv/nn.hpp"

namespace fedsv {

// Binary checkpoint of a network: architecture plus every parameter block,
// including batch-norm running statistics. Parameters are stored as raw
// little-endian doubles so a save/load cycle reproduces the network
// bit for bit.
void save_checkpoint(const Network& net, std::ostream& out);
void save_checkpoint(const Network& net, const std::string& path);

Network load_checkpoint(std::istream& in);
Network load_checkpoint(const std::string& path);

}  // namespace fedsv

#endif  // FEDSV_CHECKPOINT_HPP_
