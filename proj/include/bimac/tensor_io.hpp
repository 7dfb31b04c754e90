#ifndef BIMAC_TENSOR_IO_HPP
#define BIMAC_TENSOR_IO_HPP

#include <iosfwd>
#include <string>

#include "bimac/tensor.hpp"

namespace bimac {

// Tensor binary format: magic "BMT1", u32 little-endian rank, rank u32
// extents, then f32 little-endian payload in row-major order.
void write_bmt(std::ostream& os, const Tensor& t);
void write_bmt(const std::string& path, const Tensor& t);
Tensor read_bmt(std::istream& is, const std::string& what = "stream");
Tensor read_bmt(const std::string& path);

// Binary PGM (P5, maxval 255) of a 2-D slice. `lo == hi` maps everything to 0.
void write_pgm(const std::string& path, const Tensor& slice2d, double lo, double hi);
// Linear scaling between the slice's own min and max.
void write_pgm_autoscale(const std::string& path, const Tensor& slice2d);
// Reads a P5 PGM into an (h,w) tensor with values in [0,1].
Tensor read_pgm(const std::string& path);

} // namespace bimac

#endif
