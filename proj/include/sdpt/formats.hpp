#ifndef SDPT_FORMATS_HPP
#define SDPT_FORMATS_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "sdpt/flow.hpp"
#include "sdpt/tensor.hpp"

namespace sdpt {

// IEEE CRC-32 (reflected, poly 0xEDB88320), as used by zip/png.
std::uint32_t crc32(const unsigned char* data, std::size_t n);

// Binary PPM (P6, maxval 255). Expects/returns a (3, h, w) tensor in [0, 1];
// writing rounds to 8 bits.
void write_ppm(const std::string& path, const Tensor& rgb);
Tensor read_ppm(const std::string& path);

// Grayscale PFM ("Pf", negative scale = little-endian, rows bottom-up).
// Values pass through f32. Non-finite samples are rejected both ways.
void write_pfm(const std::string& path, const Tensor& plane);  // (1, h, w) or (h, w)
Tensor read_pfm(const std::string& path);                      // (1, h, w)

// Dense flow with validity: "FLO5" magic, u32 height, u32 width, then per
// pixel f32 u, f32 v, and finally one u8 validity flag per pixel.
void write_flo5(const std::string& path, const FlowField& flow);
FlowField read_flo5(const std::string& path);

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

// Self-verifying training snapshot: a JSON header plus named f64 tensors,
// closed by a CRC-32 over everything before it.
struct Checkpoint {
  nlohmann::json meta;
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
};

void write_checkpoint(const std::string& path, const Checkpoint& cp);
Checkpoint read_checkpoint(const std::string& path);

}  // namespace sdpt

#endif
