#pragma once

// IDX (MNIST) ingestion: parsing, bilinear downsampling, global
// standardization.

#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Dense>

#include "tdlab/rfcore.hpp"

namespace tdlab::orchestrator {

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Unsigned-byte IDX tensor.
struct IdxTensor {
  std::uint32_t magic = 0;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> data;
};

/// Throws FormatError on a wrong magic, a non-ubyte element type or a
/// truncated payload.
IdxTensor read_idx(const std::filesystem::path& path, std::uint32_t expected_magic);
void write_idx(const std::filesystem::path& path, const IdxTensor& t);

/// Bilinear resampling of a row-major side_in x side_in image with
/// half-pixel centers: source coordinate (i + 0.5) side_in / side_out - 0.5,
/// clamped to the image.
Eigen::VectorXd bilinear_resize(const double* image, int side_in, int side_out);

/// Subtracts the global mean and divides by the global standard deviation
/// (population) over all entries. Throws ZeroVarianceError when the
/// variance is below 1e-24.
void standardize(Eigen::MatrixXd& m);

/// Images downsampled to target_side^2 features, flattened row-major and
/// standardized; labels kept alongside. limit > 0 keeps the first `limit`
/// samples. Throws ConsistencyError when image and label counts differ.
Dataset ingest_mnist(const std::filesystem::path& images, const std::filesystem::path& labels,
                     int target_side, int limit = 0);

}  // namespace tdlab::orchestrator
