#include "protoseg/tensor.hpp"

#include <string>

namespace protoseg {

Tensor::Tensor(int channels, Dims dims, double fill) : channels_(channels), dims_(dims) {
  if (channels < 1 || dims.x < 1 || dims.y < 1 || dims.z < 1) {
    fail(ErrorCode::kInvalidArgument, "tensor needs >= 1 channel and positive dims");
  }
  data_.assign(static_cast<std::size_t>(channels) * voxels(), fill);
}

Tensor::Tensor(int channels, Dims dims, std::vector<double> data)
    : channels_(channels), dims_(dims), data_(std::move(data)) {
  if (channels < 1 || dims.x < 1 || dims.y < 1 || dims.z < 1) {
    fail(ErrorCode::kInvalidArgument, "tensor needs >= 1 channel and positive dims");
  }
  if (data_.size() != static_cast<std::size_t>(channels) * voxels()) {
    fail(ErrorCode::kInvalidArgument, "tensor data length mismatch");
  }
}

Tensor Tensor::from_image(const Volume3D& vol) {
  Tensor t(1, vol.dims());
  for (std::size_t i = 0; i < vol.size(); ++i) t.data_[i] = vol[i];
  return t;
}

}  // namespace protoseg
