#pragma once

// Differentiable tensor operations. Every function records a backward closure
// when grad mode is on and any input requires a gradient.

#include <optional>
#include <span>
#include <vector>

#include "lpr/tensor.hpp"

namespace lpr::ops {

/// Output extent of a convolution/pool window sweep.
int conv_out_size(int in, int kernel, int stride, int padding);

/// input N x C x H x W, weight OutC x C x k x k, optional bias OutC.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                      const Tensor<Scalar>& bias, int stride, int padding);

/// Per-channel normalisation. In training mode batch statistics are used and
/// the running buffers are updated in place (no gradient flows into them).
template <typename Scalar>
Tensor<Scalar> batch_norm(const Tensor<Scalar>& input, const Tensor<Scalar>& gamma,
                          const Tensor<Scalar>& beta, Tensor<Scalar>& running_mean,
                          Tensor<Scalar>& running_var, bool training, double momentum = 0.1,
                          double eps = 1e-5);

template <typename Scalar>
Tensor<Scalar> leaky_relu(const Tensor<Scalar>& x, double slope = 0.1);
template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x);
template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x);

template <typename Scalar>
Tensor<Scalar> max_pool2d(const Tensor<Scalar>& x, int kernel, int stride, int padding);
/// N x C x H x W -> N x C x 1 x 1
template <typename Scalar>
Tensor<Scalar> global_avg_pool(const Tensor<Scalar>& x);
/// Nearest-neighbour, doubles H and W.
template <typename Scalar>
Tensor<Scalar> upsample2x(const Tensor<Scalar>& x);

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& x, double factor);
/// Sum of all elements, returned as a rank-0 tensor.
template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x);
/// Sum of a list of scalar tensors.
template <typename Scalar>
Tensor<Scalar> add_scalars(const std::vector<Tensor<Scalar>>& terms);

/// Concatenate N x Ci x H x W tensors along the channel axis.
template <typename Scalar>
Tensor<Scalar> concat_channels(const std::vector<Tensor<Scalar>>& parts);

/// Copy with a new shape of equal element count.
template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& x, Shape shape);

/// Item `index` of the leading axis, keeping it as a size-1 axis.
template <typename Scalar>
Tensor<Scalar> select_batch(const Tensor<Scalar>& x, int index);

/// x N x K (higher ranks are flattened after dim 0), weight Out x K, bias Out.
template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const Tensor<Scalar>& weight,
                      const Tensor<Scalar>& bias);

/// Softmax over the last axis.
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x);

/// Region in input-image pixels, corner form.
struct RoiBox {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
};

/// Quantised max-pool of each region of a 1 x C x H x W feature map into a
/// fixed pooled_h x pooled_w grid. Output N x C x pooled_h x pooled_w.
template <typename Scalar>
Tensor<Scalar> roi_pool(const Tensor<Scalar>& feature, std::span<const RoiBox> rois,
                        int pooled_h, int pooled_w, double spatial_scale);

}  // namespace lpr::ops
