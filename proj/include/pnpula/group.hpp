#pragma once

#include <string>
#include <vector>

#include "pnpula/errors.hpp"
#include "pnpula/rng.hpp"
#include "pnpula/tensor.hpp"

namespace pnpula {

// The dihedral group D4 acting on square images. Every element is a pixel
// permutation (orthogonal linear map), so transforms preserve the pixel
// multiset exactly. Flips also act on non-square images; anything that
// swaps axes requires height == width.
enum class GroupElement {
  identity,
  horizontal_flip,
  vertical_flip,
  rotate_90,   // clockwise
  rotate_180,
  rotate_270,
  transpose,
  anti_transpose,
};

enum class TransformDirection { forward, inverse };

inline const std::vector<GroupElement>& dihedral_group() {
  static const std::vector<GroupElement> g = {
      GroupElement::identity,     GroupElement::horizontal_flip,
      GroupElement::vertical_flip, GroupElement::rotate_90,
      GroupElement::rotate_180,   GroupElement::rotate_270,
      GroupElement::transpose,    GroupElement::anti_transpose,
  };
  return g;
}

inline GroupElement inverse_of(GroupElement g) {
  switch (g) {
    case GroupElement::rotate_90:
      return GroupElement::rotate_270;
    case GroupElement::rotate_270:
      return GroupElement::rotate_90;
    default:
      return g;  // all other elements are involutions
  }
}

inline bool swaps_axes(GroupElement g) {
  switch (g) {
    case GroupElement::rotate_90:
    case GroupElement::rotate_270:
    case GroupElement::transpose:
    case GroupElement::anti_transpose:
      return true;
    default:
      return false;
  }
}

inline const char* to_string(GroupElement g) {
  switch (g) {
    case GroupElement::identity: return "identity";
    case GroupElement::horizontal_flip: return "horizontal-flip";
    case GroupElement::vertical_flip: return "vertical-flip";
    case GroupElement::rotate_90: return "rotate-90";
    case GroupElement::rotate_180: return "rotate-180";
    case GroupElement::rotate_270: return "rotate-270";
    case GroupElement::transpose: return "transpose";
    case GroupElement::anti_transpose: return "anti-transpose";
  }
  return "?";
}

inline GroupElement group_element_from_string(const std::string& name) {
  for (GroupElement g : dihedral_group())
    if (name == to_string(g)) return g;
  throw ConfigError("unknown group element: " + name);
}

inline ImageTensor transform(const ImageTensor& image, GroupElement g,
                             TransformDirection direction) {
  if (direction == TransformDirection::inverse) g = inverse_of(g);
  const int h = image.height(), w = image.width();
  // Rotations in D4 are only defined on squares; rectangular inputs would
  // change shape and break the permutation property.
  if (swaps_axes(g) && h != w)
    throw ShapeError("group element requires a square image");
  ImageTensor out = ImageTensor::zeros_like(image);
  for (int c = 0; c < image.channels(); ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        int sy = y, sx = x;
        switch (g) {
          case GroupElement::identity: break;
          case GroupElement::horizontal_flip: sx = w - 1 - x; break;
          case GroupElement::vertical_flip: sy = h - 1 - y; break;
          case GroupElement::rotate_90: sy = h - 1 - x; sx = y; break;
          case GroupElement::rotate_180: sy = h - 1 - y; sx = w - 1 - x; break;
          case GroupElement::rotate_270: sy = x; sx = w - 1 - y; break;
          case GroupElement::transpose: sy = x; sx = y; break;
          case GroupElement::anti_transpose: sy = w - 1 - x; sx = h - 1 - y; break;
        }
        out(c, y, x) = image(c, sy, sx);
      }
    }
  }
  return out;
}

inline GroupElement sample_group(RngStream& rng,
                                 const std::vector<GroupElement>& group) {
  if (group.empty()) throw ConfigError("cannot sample from an empty group");
  return group[rng.uniform_below(group.size())];
}

}  // namespace pnpula
