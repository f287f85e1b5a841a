#pragma once

#include <string>
#include <vector>

#include "layerprobe/common.hpp"

namespace layerprobe {

/// Hidden states of transformer layers 1..X for one utterance. layers[0] is layer 1.
template <typename Real>
struct BasicLayerStack {
  std::vector<Matrix<Real>> layers;
  std::string utt_id;

  std::size_t depth() const { return layers.size(); }
  std::size_t frame_count() const { return layers.empty() ? 0 : layers.front().rows(); }
  std::size_t hidden_dim() const { return layers.empty() ? 0 : layers.front().cols(); }

  /// First `count` layers; valid because layer l never depends on layers above it.
  BasicLayerStack prefix(std::size_t count) const {
    require(count >= 1 && count <= layers.size(), "layer prefix out of range");
    return {std::vector<Matrix<Real>>(layers.begin(), layers.begin() + count), utt_id};
  }
};

using LayerFeatureStack = BasicLayerStack<float>;

template <typename Real>
void check_stack_shapes(const BasicLayerStack<Real>& stack) {
  require(!stack.layers.empty(), "empty layer feature stack");
  for (const auto& m : stack.layers) {
    require(m.same_shape(stack.layers.front()), "layers of a feature stack differ in shape");
  }
}

}  // namespace layerprobe
